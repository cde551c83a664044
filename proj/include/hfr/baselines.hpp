#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "hfr/kernels.hpp"
#include "hfr/types.hpp"

namespace hfr {

enum class BaselineMethod { ols, ridge, lasso, elasticnet, adalasso, pcr, plsr };

inline const char* baseline_name(BaselineMethod m) {
    switch (m) {
        case BaselineMethod::ols: return "OLS";
        case BaselineMethod::ridge: return "Ridge";
        case BaselineMethod::lasso: return "Lasso";
        case BaselineMethod::elasticnet: return "ElasticNet";
        case BaselineMethod::adalasso: return "AdaLasso";
        case BaselineMethod::pcr: return "PCR";
        case BaselineMethod::plsr: return "PLSR";
    }
    return "?";
}

/// Reference estimator fit; coefficients are reported on the original
/// predictor scale with an unpenalized intercept.
struct BaselineFit {
    BaselineMethod method = BaselineMethod::ols;
    Vector beta;
    double intercept = 0.0;
    double lambda = 0.0;
    double alpha = 0.0;
    int components = 0;

    Vector predict(const Matrix& x) const { return (x * beta).array() + intercept; }
};

namespace detail {

struct StandardizedProblem {
    Matrix xs;
    Vector yc;
    double y_mean = 0.0;
    StandardizationInfo info;
};

inline StandardizedProblem standardized_problem(const Matrix& x, const Vector& y) {
    StandardizedProblem p;
    auto [xs, info] = standardize(x);
    p.xs = std::move(xs);
    p.info = std::move(info);
    p.y_mean = y.mean();
    p.yc = y.array() - p.y_mean;
    return p;
}

inline BaselineFit to_original_scale(const StandardizedProblem& p, const Vector& b_std,
                                     BaselineMethod method) {
    BaselineFit fit;
    fit.method = method;
    fit.beta = b_std.array() / p.info.scales.array();
    fit.intercept = p.y_mean - fit.beta.dot(p.info.centers);
    return fit;
}

inline double soft_threshold(double x, double t) {
    if (x > t) return x - t;
    if (x < -t) return x + t;
    return 0.0;
}

/// Moment cache shared across a penalty path on fixed data.
struct CdMoments {
    Matrix gram;     // X'X / N
    Vector xty;      // X'y / N
    double yty = 0.0;

    CdMoments(const Matrix& xs, const Vector& yc)
        : gram(xs.transpose() * xs / static_cast<double>(xs.rows())),
          xty(xs.transpose() * yc / static_cast<double>(xs.rows())),
          yty(yc.squaredNorm()) {}
};

/// Cyclic coordinate descent for (1/2N)||y - Xb||^2 +
/// lambda * sum_j pf_j * (alpha |b_j| + (1-alpha)/2 b_j^2), in covariance
/// form: the residual correlations q = X'r/N are maintained through the
/// Gram matrix, so a sweep costs O(K^2) regardless of N. A warm start can
/// be supplied; the lambda grids below walk top-down and reuse solutions.
inline Vector coordinate_descent(const CdMoments& mom, Index n, double lambda, double alpha,
                                 const Vector& penalty_factors,
                                 const Vector& warm_start = Vector()) {
    const Index k = mom.gram.cols();
    const double dn = static_cast<double>(n);

    Vector b = (warm_start.size() == k) ? warm_start : Vector(Vector::Zero(k));
    Vector q = mom.xty - mom.gram * b;
    auto objective = [&]() {
        // ||r||^2 = y'y - N b'(X'y/N) - N b'q  since Gram b = X'y/N - q
        const double rss = mom.yty - dn * (b.dot(mom.xty) + b.dot(q));
        double pen = 0.0;
        for (Index j = 0; j < k; ++j)
            pen += penalty_factors(j) *
                   (alpha * std::abs(b(j)) + 0.5 * (1.0 - alpha) * b(j) * b(j));
        return rss / (2.0 * dn) + lambda * pen;
    };

    double prev_obj = objective();
    const int max_sweeps = 100000;
    for (int sweep = 0; sweep < max_sweeps; ++sweep) {
        double max_delta = 0.0;
        for (Index j = 0; j < k; ++j) {
            const double pf = penalty_factors(j);
            const double rho = q(j) + mom.gram(j, j) * b(j);
            const double bn = soft_threshold(rho, lambda * alpha * pf) /
                              (mom.gram(j, j) + lambda * (1.0 - alpha) * pf);
            const double delta = bn - b(j);
            if (delta != 0.0) {
                q -= delta * mom.gram.col(j);
                b(j) = bn;
                max_delta = std::max(max_delta, std::abs(delta));
            }
        }
        if (sweep % 128 == 127) q = mom.xty - mom.gram * b;   // drift refresh
        const double obj = objective();
        if (obj > prev_obj + 1e-12 * (1.0 + std::abs(prev_obj)))
            throw NumericError("coordinate descent: objective increased within a sweep");
        prev_obj = obj;
        if (max_delta <= 1e-7) return b;
    }
    throw NumericError("coordinate descent: no convergence within 1e5 sweeps");
}

inline Vector coordinate_descent(const Matrix& xs, const Vector& yc, double lambda, double alpha,
                                 const Vector& penalty_factors,
                                 const Vector& warm_start = Vector()) {
    return coordinate_descent(CdMoments(xs, yc), xs.rows(), lambda, alpha, penalty_factors,
                              warm_start);
}

inline Vector ridge_closed_form(const Matrix& xs, const Vector& yc, double lambda_l2) {
    const double dn = static_cast<double>(xs.rows());
    Matrix gram = xs.transpose() * xs / dn;
    gram.diagonal().array() += lambda_l2;
    return Eigen::LDLT<Matrix>(gram).solve(xs.transpose() * yc / dn);
}

/// Standardized-scale solutions over a descending lambda grid, warm-started
/// from the previous penalty. One column per lambda.
inline Matrix penalized_path(const Matrix& xs, const Vector& yc,
                             const std::vector<double>& lambdas_desc, double alpha,
                             const Vector& penalty_factors) {
    const Index k = xs.cols();
    const CdMoments mom(xs, yc);
    Matrix path(k, static_cast<Index>(lambdas_desc.size()));
    Vector warm = Vector::Zero(k);
    for (std::size_t i = 0; i < lambdas_desc.size(); ++i) {
        const double lambda = lambdas_desc[i];
        warm = (lambda * alpha == 0.0)
                   ? ridge_closed_form(xs, yc, lambda * (1.0 - alpha))
                   : coordinate_descent(mom, xs.rows(), lambda, alpha, penalty_factors, warm);
        path.col(static_cast<Index>(i)) = warm;
    }
    return path;
}

} // namespace detail

inline BaselineFit fit_ols(const Matrix& x, const Vector& y) {
    detail::require(x.rows() > x.cols() + 1, "fit_ols: need N > K + 1");
    Matrix design(x.rows(), x.cols() + 1);
    design.col(0).setOnes();
    design.rightCols(x.cols()) = x;
    Vector coef = solve_least_squares(design, y);
    BaselineFit fit;
    fit.method = BaselineMethod::ols;
    fit.intercept = coef(0);
    fit.beta = coef.tail(x.cols());
    return fit;
}

/// Penalized regressions per the harness conventions. For adalasso, lambda
/// is the weighted-lasso penalty and pilot_lambda the ridge pilot penalty;
/// pilot weights are |b_ridge|^-1.
inline BaselineFit fit_penalized(const Matrix& x, const Vector& y, BaselineMethod method,
                                 double lambda, double alpha = 1.0, double pilot_lambda = 0.1) {
    detail::require(lambda >= 0.0, "fit_penalized: negative lambda");
    detail::require(alpha >= 0.0 && alpha <= 1.0, "fit_penalized: alpha outside [0, 1]");
    auto p = detail::standardized_problem(x, y);
    const Index k = x.cols();
    Vector ones = Vector::Ones(k);

    Vector b_std;
    double eff_alpha = alpha;
    switch (method) {
        case BaselineMethod::ridge:
            eff_alpha = 0.0;
            b_std = detail::ridge_closed_form(p.xs, p.yc, lambda);
            break;
        case BaselineMethod::lasso:
            eff_alpha = 1.0;
            b_std = (lambda == 0.0)
                        ? detail::ridge_closed_form(p.xs, p.yc, 0.0)
                        : detail::coordinate_descent(p.xs, p.yc, lambda, 1.0, ones);
            break;
        case BaselineMethod::elasticnet:
            // no L1 part means the problem is quadratic: solve it exactly
            if (lambda * alpha == 0.0)
                b_std = detail::ridge_closed_form(p.xs, p.yc, lambda * (1.0 - alpha));
            else
                b_std = detail::coordinate_descent(p.xs, p.yc, lambda, alpha, ones);
            break;
        case BaselineMethod::adalasso: {
            eff_alpha = 1.0;
            if (lambda == 0.0) {
                b_std = detail::ridge_closed_form(p.xs, p.yc, 0.0);
                break;
            }
            Vector pilot = detail::ridge_closed_form(p.xs, p.yc, pilot_lambda);
            Vector weights(k);
            for (Index j = 0; j < k; ++j) weights(j) = 1.0 / std::max(std::abs(pilot(j)), 1e-12);
            b_std = detail::coordinate_descent(p.xs, p.yc, lambda, 1.0, weights);
            break;
        }
        default:
            throw ValidationError("fit_penalized: method is not a penalized regression");
    }

    BaselineFit fit = detail::to_original_scale(p, b_std, method);
    fit.lambda = lambda;
    fit.alpha = eff_alpha;
    return fit;
}

namespace detail {

/// Standardized-scale coefficient paths for PCR / PLSR, one column per
/// component count. Returns fewer columns than requested when the data runs
/// out of usable directions first (PLS exhausts the residual covariance,
/// PCR the numerical rank); callers that demand an exact count must check.
inline Matrix latent_coefficient_path(const StandardizedProblem& p, BaselineMethod method,
                                      int max_components) {
    const Index n = p.xs.rows();
    const Index k = p.xs.cols();
    detail::require(max_components >= 1 &&
                        max_components <= std::min<Index>(n - 1, k),
                    "fit_latent: component count outside 1..min(N-1, K)");
    Matrix path(k, max_components);

    if (method == BaselineMethod::pcr) {
        Eigen::BDCSVD<Matrix> svd(p.xs, Eigen::ComputeThinU | Eigen::ComputeThinV);
        const auto& sv = svd.singularValues();
        Vector b = Vector::Zero(k);
        int achieved = 0;
        for (int r = 0; r < max_components; ++r) {
            if (sv(r) <= 1e-10 * sv(0)) break;
            const double gamma = svd.matrixU().col(r).dot(p.yc) / sv(r);
            b += gamma * svd.matrixV().col(r);
            path.col(r) = b;
            ++achieved;
        }
        return path.leftCols(achieved);
    }

    // PLS1 with NIPALS-style score deflation; sign convention: the largest
    // magnitude weight entry is made positive
    Matrix x_work = p.xs;
    Vector resid = p.yc;
    Matrix w_mat(k, max_components), p_mat(k, max_components);
    Vector q(max_components);
    double w0 = 0.0;
    int achieved = 0;
    for (int h = 0; h < max_components; ++h) {
        Vector w = x_work.transpose() * resid;
        const double wn = w.norm();
        if (h == 0) w0 = wn;
        if (wn <= 1e-10 * std::max(w0, 1e-300)) break;   // covariance exhausted
        w /= wn;
        Index imax;
        w.array().abs().maxCoeff(&imax);
        if (w(imax) < 0.0) w = -w;
        Vector t = x_work * w;
        const double tt = t.squaredNorm();
        if (tt <= 1e-16 * static_cast<double>(n)) break;
        const double qh = resid.dot(t) / tt;
        Vector pl = x_work.transpose() * t / tt;
        x_work -= t * pl.transpose();
        resid -= qh * t;
        w_mat.col(h) = w;
        p_mat.col(h) = pl;
        q(h) = qh;
        ++achieved;
    }
    detail::require(achieved >= 1, "fit_latent: no usable direction in X");
    for (int r = 1; r <= achieved; ++r) {
        const Matrix pw = p_mat.leftCols(r).transpose() * w_mat.leftCols(r);
        path.col(r - 1) =
            w_mat.leftCols(r) * Eigen::PartialPivLU<Matrix>(pw).solve(q.head(r));
    }
    return path.leftCols(achieved);
}

} // namespace detail

inline BaselineFit fit_latent(const Matrix& x, const Vector& y, BaselineMethod method,
                              int n_components) {
    detail::require(method == BaselineMethod::pcr || method == BaselineMethod::plsr,
                    "fit_latent: method is not a latent-variable regression");
    auto p = detail::standardized_problem(x, y);
    Matrix path = detail::latent_coefficient_path(p, method, n_components);
    if (path.cols() < n_components)
        throw NumericError("fit_latent: components exceed the numerical rank of X");
    BaselineFit fit = detail::to_original_scale(p, path.col(n_components - 1), method);
    fit.components = n_components;
    return fit;
}

/// Critical lasso penalty: above it the standardized-scale solution is 0.
inline double lasso_lambda_max(const Matrix& x, const Vector& y) {
    auto p = detail::standardized_problem(x, y);
    return (p.xs.transpose() * p.yc).lpNorm<Eigen::Infinity>() / static_cast<double>(x.rows());
}

/// Harness grid: 50 log-spaced penalties spanning [1e-4, lambda_max].
inline std::vector<double> lambda_grid(const Matrix& x, const Vector& y, int points = 50) {
    const double lo = 1e-4;
    const double hi = std::max(lasso_lambda_max(x, y), 2.0 * lo);
    std::vector<double> grid(static_cast<std::size_t>(points));
    for (int i = 0; i < points; ++i) {
        const double f = static_cast<double>(i) / static_cast<double>(points - 1);
        grid[static_cast<std::size_t>(i)] = lo * std::pow(hi / lo, f);
    }
    return grid;
}

} // namespace hfr
