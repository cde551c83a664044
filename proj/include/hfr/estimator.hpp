#pragma once

#include <cmath>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include <boost/math/distributions/students_t.hpp>

#include "hfr/hierarchy.hpp"
#include "hfr/kernels.hpp"
#include "hfr/qp.hpp"
#include "hfr/types.hpp"

namespace hfr {

struct FitOptions {
    bool intercept = true;
    bool sign_invariant = false;
    WardVariant ward = WardVariant::ward_d2;
    Matrix extra_deterministic;   // N x M_extra, appended after the intercept column
};

/// One unconditional level regression of y on [D z_l], mapped back to
/// predictor space. Predictors sharing a cluster share |w_hat|.
struct LevelFit {
    int level = 0;
    Vector w_hat;     // K, standardized predictor scale
    Vector m_hat;     // M deterministic coefficients
    Vector se_w;      // K, standardized scale
    Vector fitted;    // N, the level's projection of y
    bool jittered = false;
};

struct HfrFit {
    Vector beta;             // original predictor scale
    Vector beta_std;         // standardized scale
    Vector deterministic;    // length M
    ShrinkagePath path;
    Vector se;               // original scale
    Vector p_values;         // NaN when residual df <= 0 or se degenerate
    Vector r2_levels;
    double r2_total = 0.0;
    double nu_eff_total = 0.0;   // path.nu_eff + M
    Hierarchy hierarchy;
    StandardizationInfo standardization;
    bool intercept = true;
    int n = 0, k = 0, m = 0;
    std::vector<std::string> warnings;
};

/// Everything that does not depend on kappa: standardized data, estimated
/// hierarchy, per-level regressions and the deterministic-only base fit.
/// Sharing it across a kappa grid (CV, tuning, trace plots) reduces the
/// per-kappa cost to one QP solve.
struct HfrProblem {
    Matrix xs;
    Vector y;
    Matrix dets;                     // N x M
    StandardizationInfo info;
    Matrix rho;
    Hierarchy hierarchy;             // signed and pruned
    std::vector<LevelFit> level_fits;
    Vector base_coef;                // deterministic-only regression
    Vector base_fitted;              // P0 y, zero when M = 0
    Matrix gap_fits;                 // N x L, fitted_l - base_fitted
    int rhs_scale = 0;               // equals L: K unpruned, N-M-1 pruned
    bool intercept = true;
    int n = 0, k = 0, m = 0;
    std::vector<std::string> warnings;
};

inline std::vector<LevelFit> fit_level_regressions(const Matrix& xs, const Vector& y,
                                                   const Hierarchy& h, const Matrix& dets,
                                                   std::vector<std::string>* warnings = nullptr) {
    const Index n = xs.rows();
    const Index m = dets.cols();
    detail::require(dets.rows() == n || m == 0, "fit_level_regressions: deterministic rows mismatch");
    detail::require(y.size() == n, "fit_level_regressions: response length mismatch");

    const int deepest = static_cast<int>(h.levels.back().clusters.size());
    detail::require(n > m + deepest,
                    "fit_level_regressions: need N > M + clusters at the deepest level");

    std::vector<LevelFit> fits;
    fits.reserve(static_cast<std::size_t>(h.level_count()));
    for (int ell = 1; ell <= h.level_count(); ++ell) {
        const auto& level = h.level(ell);
        const Index c = static_cast<Index>(level.clusters.size());
        Matrix design(n, m + c);
        if (m > 0) design.leftCols(m) = dets;
        design.rightCols(c) = level_features(xs, h, ell);

        LevelFit fit;
        fit.level = ell;
        double jitter = 0.0;
        Vector coef;
        try {
            coef = solve_least_squares(design, y);
        } catch (const NumericError&) {
            jitter = 1e-10 * (design.transpose() * design).trace() / static_cast<double>(m + c);
            coef = solve_least_squares(design, y, jitter);
            fit.jittered = true;
            if (warnings)
                warnings->push_back("level " + std::to_string(ell) +
                                    ": rank-deficient design, solved with jitter");
        }
        fit.fitted = design * coef;
        fit.m_hat = coef.head(m);

        // classical coefficient covariance with the level's own residual df
        const double rss = (y - fit.fitted).squaredNorm();
        const double dof = static_cast<double>(n - m - c);
        const double sigma2 = rss / dof;
        Matrix gram = design.transpose() * design;
        if (jitter > 0.0) gram.diagonal().array() += jitter;
        const Matrix cov = sigma2 * Eigen::LDLT<Matrix>(gram)
                                        .solve(Matrix::Identity(m + c, m + c));

        fit.w_hat = Vector::Zero(h.k);
        fit.se_w = Vector::Zero(h.k);
        for (Index ci = 0; ci < c; ++ci) {
            const auto& cluster = level.clusters[static_cast<std::size_t>(ci)];
            const double se = std::sqrt(std::max(0.0, cov(m + ci, m + ci)));
            for (std::size_t mi = 0; mi < cluster.members.size(); ++mi) {
                fit.w_hat(cluster.members[mi]) =
                    static_cast<double>(cluster.signs[mi]) * coef(m + ci);
                fit.se_w(cluster.members[mi]) = se;
            }
        }
        fits.push_back(std::move(fit));
    }
    return fits;
}

/// Weighted average of the unconditional level estimates. This is the
/// literal model-average form; the deterministic part is completed by the
/// caller with the base-regression slack weight.
inline std::pair<Vector, Vector> assemble_estimates(const std::vector<LevelFit>& level_fits,
                                                    const ShrinkagePath& path) {
    detail::require(static_cast<Index>(level_fits.size()) == path.phi.size(),
                    "assemble_estimates: phi length does not match level count");
    const Index k = level_fits.front().w_hat.size();
    const Index m = level_fits.front().m_hat.size();
    Vector beta = Vector::Zero(k);
    Vector det = Vector::Zero(m);
    for (std::size_t ell = 0; ell < level_fits.size(); ++ell) {
        const double w = path.phi(static_cast<Index>(ell));
        beta += w * level_fits[ell].w_hat;
        det += w * level_fits[ell].m_hat;
    }
    return {std::move(beta), std::move(det)};
}

/// Top-down conditional estimates: each level regresses the previous
/// level's residual on its own features, which by nestedness reproduces the
/// branch-conditional decomposition. Used for verification and plots.
inline std::vector<Vector> conditional_decomposition(const Matrix& xs, const Vector& y,
                                                     const Hierarchy& h, const Matrix& dets) {
    const Index n = xs.rows();
    const Index m = dets.cols();
    std::vector<Vector> result;
    Vector residual = y;
    for (int ell = 1; ell <= h.level_count(); ++ell) {
        const auto& level = h.level(ell);
        const Index c = static_cast<Index>(level.clusters.size());
        Matrix design(n, m + c);
        if (m > 0) design.leftCols(m) = dets;
        design.rightCols(c) = level_features(xs, h, ell);
        Vector coef;
        try {
            coef = solve_least_squares(design, residual);
        } catch (const NumericError&) {
            const double jitter =
                1e-10 * (design.transpose() * design).trace() / static_cast<double>(m + c);
            coef = solve_least_squares(design, residual, jitter);
        }
        Vector b = Vector::Zero(h.k);
        for (Index ci = 0; ci < c; ++ci) {
            const auto& cluster = level.clusters[static_cast<std::size_t>(ci)];
            for (std::size_t mi = 0; mi < cluster.members.size(); ++mi)
                b(cluster.members[mi]) = static_cast<double>(cluster.signs[mi]) * coef(m + ci);
        }
        residual -= design * coef;
        result.push_back(std::move(b));
    }
    return result;
}

/// Model-average standard errors (level dispersion plus within-level se),
/// with two-sided p-values from a Student t on N - nu_eff - M degrees of
/// freedom. Returns se on the standardized scale.
inline std::pair<Vector, Vector> standard_errors(const std::vector<LevelFit>& level_fits,
                                                 const ShrinkagePath& path, const Vector& beta_std,
                                                 std::vector<std::string>* warnings = nullptr) {
    const Index k = beta_std.size();
    const Index n = level_fits.front().fitted.size();
    const Index m = level_fits.front().m_hat.size();

    Vector se = Vector::Zero(k);
    for (std::size_t ell = 0; ell < level_fits.size(); ++ell) {
        const double w = path.phi(static_cast<Index>(ell));
        if (w == 0.0) continue;
        const auto& fit = level_fits[ell];
        for (Index j = 0; j < k; ++j) {
            const double disp = fit.w_hat(j) - beta_std(j);
            se(j) += w * std::sqrt(fit.se_w(j) * fit.se_w(j) + disp * disp);
        }
    }

    Vector p = Vector::Constant(k, std::numeric_limits<double>::quiet_NaN());
    const double dof = static_cast<double>(n) - (path.nu_eff + static_cast<double>(m));
    if (dof <= 0.0) {
        if (warnings)
            warnings->push_back("p-values unavailable: residual degrees of freedom " +
                                std::to_string(dof) + " <= 0");
        return {std::move(se), std::move(p)};
    }
    const boost::math::students_t dist(dof);
    for (Index j = 0; j < k; ++j) {
        if (se(j) > 0.0)
            p(j) = 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(beta_std(j) / se(j))));
    }
    return {std::move(se), std::move(p)};
}

/// Level-wise decomposition of the coefficient of determination. deltas is
/// the N x L matrix of conditional level contributions (fitted_l minus
/// fitted_{l-1}), base_fitted the deterministic-only fit. Additivity
/// sum(r2_levels) = r2_total holds by construction.
inline std::pair<Vector, double> r2_decomposition(const Matrix& deltas, const Vector& theta,
                                                  const Vector& y, const Vector& base_fitted) {
    const Index l = deltas.cols();
    detail::require(theta.size() == l, "r2_decomposition: theta length mismatch");
    const double tss = (y.array() - y.mean()).square().sum();
    if (tss <= 0.0) throw ValidationError("r2_decomposition: response has zero variance");

    Vector r2(l);
    Vector cum = base_fitted;
    double prev = 1.0 - (cum - y).squaredNorm() / tss;
    double total = 0.0;
    for (Index ell = 0; ell < l; ++ell) {
        cum += theta(ell) * deltas.col(ell);
        const double current = 1.0 - (cum - y).squaredNorm() / tss;
        r2(ell) = current - prev;
        total += r2(ell);
        prev = current;
    }
    return {std::move(r2), total};
}

/// Test-only: materialize the HFR projection matrix from the level
/// projections and return its trace (equals sum(theta) on a full L = K
/// hierarchy). Memory-guarded.
inline double effective_df_check(const Matrix& xs, const Hierarchy& h, const ShrinkagePath& path,
                                 const Matrix& dets) {
    const Index n = xs.rows();
    detail::require(n <= 2000, "effective_df_check: N too large to materialize projections");
    const Index m = dets.cols();

    auto projection = [&](const Matrix& design) {
        Eigen::HouseholderQR<Matrix> qr(design);
        Matrix q = qr.householderQ() * Matrix::Identity(n, design.cols());
        return Matrix(q * q.transpose());
    };

    Matrix prev = (m > 0) ? projection(dets) : Matrix::Zero(n, n);
    Matrix p_hfr = Matrix::Zero(n, n);
    for (int ell = 1; ell <= h.level_count(); ++ell) {
        const Index c = static_cast<Index>(h.level(ell).clusters.size());
        Matrix design(n, m + c);
        if (m > 0) design.leftCols(m) = dets;
        design.rightCols(c) = level_features(xs, h, ell);
        Matrix current = projection(design);
        p_hfr += path.theta(ell - 1) * (current - prev);
        prev = std::move(current);
    }
    return p_hfr.trace();
}

inline HfrProblem prepare(const Matrix& x_raw, const Vector& y, const FitOptions& options = {}) {
    const Index n = x_raw.rows();
    const Index k = x_raw.cols();
    detail::require(n >= 4, "fit: need N >= 4");
    detail::require(k >= 2, "fit: need K >= 2");
    detail::require(y.size() == n, "fit: response length mismatch");
    detail::require(x_raw.allFinite() && y.allFinite(), "fit: non-finite input");
    detail::require(options.extra_deterministic.size() == 0 ||
                        options.extra_deterministic.rows() == n,
                    "fit: extra deterministic rows mismatch");

    HfrProblem prob;
    prob.intercept = options.intercept;
    prob.n = static_cast<int>(n);
    prob.k = static_cast<int>(k);

    if (options.intercept) {
        auto [xs, info] = standardize(x_raw);
        prob.xs = std::move(xs);
        prob.info = std::move(info);
    } else {
        // without an intercept there is no column to absorb centering, so
        // only scale; correlations below are unaffected
        prob.info.centers = Vector::Zero(k);
        prob.info.scales = detail::column_sds(x_raw);
        for (Index j = 0; j < k; ++j)
            if (prob.info.scales(j) == 0.0)
                throw ValidationError("fit: column " + std::to_string(j) + " has zero variance");
        prob.xs = x_raw.array().rowwise() / prob.info.scales.transpose().array();
    }

    const Index m_extra = options.extra_deterministic.cols();
    const Index m = (options.intercept ? 1 : 0) + m_extra;
    prob.m = static_cast<int>(m);
    prob.dets.resize(n, m);
    if (options.intercept) prob.dets.col(0).setOnes();
    if (m_extra > 0) prob.dets.rightCols(m_extra) = options.extra_deterministic;

    prob.rho = correlation_matrix(prob.xs);
    DissimilarityRows d = partial_correlation_matrix(prob.xs, y);
    if (options.sign_invariant) d = d.absolute();
    const MergeSequence merges = ward_linkage(d, options.ward);
    Hierarchy h = build_hierarchy(merges, static_cast<int>(k));
    h = apply_sign_adjustment(h, prob.rho);
    prob.hierarchy = prune_levels(h, static_cast<int>(n), static_cast<int>(m));
    prob.rhs_scale = prob.hierarchy.level_count();   // K unpruned, N-M-1 pruned

    prob.y = y;
    prob.level_fits = fit_level_regressions(prob.xs, y, prob.hierarchy, prob.dets, &prob.warnings);

    if (m > 0) {
        prob.base_coef = solve_least_squares(prob.dets, y);
        prob.base_fitted = prob.dets * prob.base_coef;
    } else {
        prob.base_coef = Vector::Zero(0);
        prob.base_fitted = Vector::Zero(n);
    }
    prob.gap_fits.resize(n, prob.hierarchy.level_count());
    for (int ell = 0; ell < prob.hierarchy.level_count(); ++ell)
        prob.gap_fits.col(ell) = prob.level_fits[static_cast<std::size_t>(ell)].fitted -
                                 prob.base_fitted;
    return prob;
}

/// Solve the shrinkage problem for one kappa on a prepared pipeline state.
inline HfrFit solve_prepared(const HfrProblem& prob, double kappa) {
    detail::require(kappa >= 0.0 && kappa <= 1.0, "fit: kappa outside [0, 1]");

    const QpProblem qp = build_qp(prob.gap_fits, prob.y - prob.base_fitted, kappa, prob.rhs_scale);
    HfrFit fit;
    fit.path = solve_qp(qp);

    auto [beta_std, det_avg] = assemble_estimates(prob.level_fits, fit.path);
    fit.beta_std = std::move(beta_std);
    // the weight not assigned to any level falls back on the deterministic
    // base regression, so kappa = 0 is the intercept-only model
    const double slack = 1.0 - fit.path.phi.sum();
    fit.deterministic = det_avg + slack * prob.base_coef;

    fit.beta = fit.beta_std.array() / prob.info.scales.array();
    if (prob.intercept)
        fit.deterministic(0) -= (fit.beta_std.array() * prob.info.centers.array() /
                                 prob.info.scales.array())
                                    .sum();

    fit.warnings = prob.warnings;
    auto [se_std, p] = standard_errors(prob.level_fits, fit.path, fit.beta_std, &fit.warnings);
    fit.se = se_std.array() / prob.info.scales.array();
    fit.p_values = std::move(p);

    Matrix deltas(prob.xs.rows(), prob.hierarchy.level_count());
    for (int ell = 0; ell < prob.hierarchy.level_count(); ++ell) {
        const Vector& current = prob.level_fits[static_cast<std::size_t>(ell)].fitted;
        deltas.col(ell) = (ell == 0)
                              ? Vector(current - prob.base_fitted)
                              : Vector(current - prob.level_fits[static_cast<std::size_t>(ell - 1)].fitted);
    }
    auto [r2_levels, r2_total] = r2_decomposition(deltas, fit.path.theta, prob.y, prob.base_fitted);
    fit.r2_levels = std::move(r2_levels);
    fit.r2_total = r2_total;

    fit.nu_eff_total = fit.path.nu_eff + prob.m;
    fit.hierarchy = prob.hierarchy;
    fit.standardization = prob.info;
    fit.intercept = prob.intercept;
    fit.n = prob.n;
    fit.k = prob.k;
    fit.m = prob.m;
    return fit;
}

/// Full HFR pipeline: standardize, cluster, decompose, shrink, assemble.
inline HfrFit fit(const Matrix& x_raw, const Vector& y, double kappa,
                  const FitOptions& options = {}) {
    detail::require(kappa >= 0.0 && kappa <= 1.0, "fit: kappa outside [0, 1]");
    return solve_prepared(prepare(x_raw, y, options), kappa);
}

/// Predictions on new raw data: D_new * deterministic + X_new * beta.
inline Vector predict(const HfrFit& fit, const Matrix& x_new,
                      const Matrix& extra_deterministic = {}) {
    detail::require(static_cast<int>(x_new.cols()) == fit.k,
                    "predict: expected " + std::to_string(fit.k) + " predictor columns, got " +
                        std::to_string(x_new.cols()));
    const Index n = x_new.rows();
    const Index m_extra = extra_deterministic.cols();
    detail::require(static_cast<int>(m_extra) + (fit.intercept ? 1 : 0) == fit.m,
                    "predict: deterministic column count mismatch");

    Vector yhat = x_new * fit.beta;
    if (fit.intercept) yhat.array() += fit.deterministic(0);
    if (m_extra > 0) {
        detail::require(extra_deterministic.rows() == n, "predict: deterministic rows mismatch");
        yhat += extra_deterministic * fit.deterministic.tail(m_extra);
    }
    return yhat;
}

} // namespace hfr
