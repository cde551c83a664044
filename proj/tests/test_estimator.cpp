#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "hfr/estimator.hpp"
#include "hfr/rng.hpp"
#include "helpers.hpp"

using namespace hfr;

namespace {

Vector ols_with_intercept(const Matrix& x, const Vector& y) {
    Matrix design(x.rows(), x.cols() + 1);
    design.col(0).setOnes();
    design.rightCols(x.cols()) = x;
    return solve_least_squares(design, y);   // (intercept, slopes)
}

struct TestData {
    Matrix x;
    Vector y;
};

TestData random_regression(Rng& rng, int n, int k, double noise = 1.0) {
    TestData d;
    d.x = testutil::random_correlated(rng, n, k);
    Vector beta(k);
    for (int j = 0; j < k; ++j) beta(j) = rng.gaussian(0.0, 1.5);
    d.y = d.x * beta + noise * testutil::random_vector(rng, n);
    return d;
}

Hierarchy unsigned_ladder4() {
    MergeSequence seq;
    seq.k = 4;
    seq.steps = {{1, 2, 1.0}, {3, 4, 2.0}, {5, 6, 3.0}};
    return build_hierarchy(seq, 4);
}

} // namespace

TEST_CASE("kappa = 1 reproduces OLS exactly (Prop. 1 corner)") {
    Rng rng(201);
    for (int rep = 0; rep < 10; ++rep) {
        const int k = 2 + static_cast<int>(rng.below(9));
        auto d = random_regression(rng, 60, k);
        HfrFit f = fit(d.x, d.y, 1.0);
        Vector ols = ols_with_intercept(d.x, d.y);
        REQUIRE((f.beta - ols.tail(k)).lpNorm<Eigen::Infinity>() < 1e-8);
        REQUIRE(f.deterministic(0) == Catch::Approx(ols(0)).margin(1e-8));
        REQUIRE(f.path.theta.isApprox(Vector::Ones(k)));
    }
}

TEST_CASE("kappa = 0 is the intercept-only null model") {
    Rng rng(203);
    auto d = random_regression(rng, 40, 5);
    HfrFit f = fit(d.x, d.y, 0.0);
    REQUIRE(f.beta.isZero());
    REQUIRE(f.deterministic(0) == Catch::Approx(d.y.mean()).margin(1e-12));
    REQUIRE(f.r2_total == Catch::Approx(0.0).margin(1e-12));
    REQUIRE(f.path.nu_eff == 0.0);
}

TEST_CASE("root-level regression shares one coefficient across all predictors") {
    Rng rng(205);
    auto d = random_regression(rng, 50, 4);
    auto [xs, info] = standardize(d.x);
    Hierarchy h = unsigned_ladder4();
    Matrix dets = Matrix::Ones(50, 1);
    auto fits = fit_level_regressions(xs, d.y, h, dets);

    const auto& root = fits[0];
    for (int j = 1; j < 4; ++j) REQUIRE(root.w_hat(j) == Catch::Approx(root.w_hat(0)));
    // fitted = intercept + slope * row-sums
    Vector rowsum = xs.rowwise().sum();
    Vector expect = root.m_hat(0) + root.w_hat(0) * rowsum.array();
    REQUIRE((root.fitted - expect).lpNorm<Eigen::Infinity>() < 1e-10);
}

TEST_CASE("leaf-level regression equals OLS slopes") {
    Rng rng(207);
    auto d = random_regression(rng, 50, 4);
    auto [xs, info] = standardize(d.x);
    Hierarchy h = unsigned_ladder4();
    Matrix dets = Matrix::Ones(50, 1);
    auto fits = fit_level_regressions(xs, d.y, h, dets);
    Vector ols = ols_with_intercept(xs, d.y);
    REQUIRE((fits[3].w_hat - ols.tail(4)).lpNorm<Eigen::Infinity>() < 1e-10);
}

TEST_CASE("mid-level coefficients follow the two-feature regression oracle") {
    Rng rng(209);
    auto d = random_regression(rng, 50, 4);
    auto [xs, info] = standardize(d.x);
    Hierarchy h = unsigned_ladder4();
    Matrix dets = Matrix::Ones(50, 1);
    auto fits = fit_level_regressions(xs, d.y, h, dets);

    // level 2 clusters {0,1} and {2,3}: regress y on the two summed features
    Matrix design(50, 3);
    design.col(0).setOnes();
    design.col(1) = xs.col(0) + xs.col(1);
    design.col(2) = xs.col(2) + xs.col(3);
    Vector coef = solve_least_squares(design, d.y);
    Vector expect(4);
    expect << coef(1), coef(1), coef(2), coef(2);
    REQUIRE((fits[1].w_hat - expect).lpNorm<Eigen::Infinity>() < 1e-10);
}

TEST_CASE("assemble_estimates corners and direct accumulation") {
    Rng rng(211);
    auto d = random_regression(rng, 50, 4);
    auto [xs, info] = standardize(d.x);
    Hierarchy h = unsigned_ladder4();
    Matrix dets = Matrix::Ones(50, 1);
    auto fits = fit_level_regressions(xs, d.y, h, dets);

    ShrinkagePath path;
    path.phi = Vector::Zero(4);
    path.phi(3) = 1.0;
    path.theta = phi_to_theta(path.phi);
    auto [beta_ols, det_ols] = assemble_estimates(fits, path);
    REQUIRE((beta_ols - fits[3].w_hat).lpNorm<Eigen::Infinity>() < 1e-14);

    path.phi.setZero();
    path.phi(0) = 1.0;
    auto [beta_root, det_root] = assemble_estimates(fits, path);
    for (int j = 1; j < 4; ++j)
        REQUIRE(std::abs(beta_root(j)) == Catch::Approx(std::abs(beta_root(0))));

    path.phi.resize(4);
    path.phi << 0.2, 0.3, 0.1, 0.25;
    auto [beta_mix, det_mix] = assemble_estimates(fits, path);
    Vector manual = Vector::Zero(4);
    for (int ell = 0; ell < 4; ++ell) manual += path.phi(ell) * fits[static_cast<std::size_t>(ell)].w_hat;
    REQUIRE((beta_mix - manual).lpNorm<Eigen::Infinity>() < 1e-14);
}

TEST_CASE("conditional decomposition telescopes to OLS (Prop. 1)") {
    Rng rng(213);
    for (int rep = 0; rep < 5; ++rep) {
        auto d = random_regression(rng, 60, 6);
        HfrProblem prob = prepare(d.x, d.y);
        auto cond = conditional_decomposition(prob.xs, prob.y, prob.hierarchy, prob.dets);

        Vector total = Vector::Zero(6);
        for (const auto& b : cond) total += b;
        Vector ols = ols_with_intercept(prob.xs, d.y);
        REQUIRE((total - ols.tail(6)).lpNorm<Eigen::Infinity>() < 1e-8);

        // first level has nothing to condition on
        REQUIRE((cond[0] - prob.level_fits[0].w_hat).lpNorm<Eigen::Infinity>() < 1e-12);
    }
}

TEST_CASE("path-independent equivalence of conditional and unconditional forms") {
    Rng rng(215);
    for (int rep = 0; rep < 5; ++rep) {
        auto d = random_regression(rng, 70, 5);
        HfrProblem prob = prepare(d.x, d.y);
        auto cond = conditional_decomposition(prob.xs, prob.y, prob.hierarchy, prob.dets);

        // random feasible theta (nonincreasing in [0,1])
        Vector theta(5);
        double level = 1.0;
        for (int i = 0; i < 5; ++i) {
            level *= 0.3 + 0.7 * rng.uniform();
            theta(i) = level;
        }
        Vector phi = theta_to_phi(theta);

        Vector lhs = Vector::Zero(5);
        for (int ell = 0; ell < 5; ++ell) lhs += theta(ell) * cond[static_cast<std::size_t>(ell)];
        Vector rhs = Vector::Zero(5);
        for (int ell = 0; ell < 5; ++ell)
            rhs += phi(ell) * prob.level_fits[static_cast<std::size_t>(ell)].w_hat;
        REQUIRE((lhs - rhs).lpNorm<Eigen::Infinity>() < 1e-8);
    }
}

TEST_CASE("nestedness: applying a level regression to the previous fit is idempotent") {
    Rng rng(217);
    auto d = random_regression(rng, 50, 6);
    HfrProblem prob = prepare(d.x, d.y);
    for (int ell = 2; ell <= prob.hierarchy.level_count(); ++ell) {
        const Vector& prev = prob.level_fits[static_cast<std::size_t>(ell - 2)].fitted;
        Matrix design(50, 1 + prob.hierarchy.level(ell).clusters.size());
        design.col(0).setOnes();
        design.rightCols(design.cols() - 1) = level_features(prob.xs, prob.hierarchy, ell);
        Vector coef = solve_least_squares(design, prev);
        REQUIRE((design * coef - prev).norm() <= 1e-8 * d.y.norm());
    }
}

TEST_CASE("standard errors collapse to the single-model case") {
    Rng rng(219);
    auto d = random_regression(rng, 50, 4);
    HfrFit f = fit(d.x, d.y, 1.0);

    // at kappa = 1 the fit is the leaf regression, so se must match OLS se
    Matrix design(50, 5);
    design.col(0).setOnes();
    design.rightCols(4) = d.x;
    Vector coef = solve_least_squares(design, d.y);
    const double sigma2 = (d.y - design * coef).squaredNorm() / (50.0 - 5.0);
    Matrix cov = sigma2 * Eigen::LDLT<Matrix>(design.transpose() * design)
                              .solve(Matrix::Identity(5, 5));
    for (int j = 0; j < 4; ++j)
        REQUIRE(f.se(j) == Catch::Approx(std::sqrt(cov(j + 1, j + 1))).epsilon(1e-7));
}

TEST_CASE("standard errors follow the scalar averaging formula") {
    Rng rng(221);
    auto d = random_regression(rng, 40, 2);
    HfrProblem prob = prepare(d.x, d.y);
    ShrinkagePath path;
    path.phi.resize(2);
    path.phi << 0.5, 0.5;
    path.theta = phi_to_theta(path.phi);
    path.nu_eff = path.theta.sum();

    auto [beta_std, det] = assemble_estimates(prob.level_fits, path);
    auto [se, p] = standard_errors(prob.level_fits, path, beta_std);
    for (int j = 0; j < 2; ++j) {
        double expect = 0.0;
        for (int ell = 0; ell < 2; ++ell) {
            const auto& lf = prob.level_fits[static_cast<std::size_t>(ell)];
            const double disp = lf.w_hat(j) - beta_std(j);
            expect += 0.5 * std::sqrt(lf.se_w(j) * lf.se_w(j) + disp * disp);
        }
        REQUIRE(se(j) == Catch::Approx(expect).margin(1e-14));
    }
    REQUIRE(p.allFinite());
}

TEST_CASE("r2 decomposition is additive and hits the OLS corner") {
    Rng rng(223);
    auto d = random_regression(rng, 45, 5);
    HfrFit full = fit(d.x, d.y, 1.0);

    Matrix design(45, 6);
    design.col(0).setOnes();
    design.rightCols(5) = d.x;
    Vector coef = solve_least_squares(design, d.y);
    const double tss = (d.y.array() - d.y.mean()).square().sum();
    const double ols_r2 = 1.0 - (d.y - design * coef).squaredNorm() / tss;
    REQUIRE(full.r2_total == Catch::Approx(ols_r2).margin(1e-10));
    REQUIRE(full.r2_levels.sum() == Catch::Approx(full.r2_total).margin(1e-10));

    HfrFit mid = fit(d.x, d.y, 0.5);
    REQUIRE(mid.r2_levels.sum() == Catch::Approx(mid.r2_total).margin(1e-10));
    REQUIRE(mid.r2_total <= ols_r2 + 1e-10);
}

TEST_CASE("effective degrees of freedom equal the theta sum (Prop. 2)") {
    Rng rng(225);
    for (int rep = 0; rep < 5; ++rep) {
        auto d = random_regression(rng, 35, 5);
        HfrProblem prob = prepare(d.x, d.y);

        ShrinkagePath ones;
        ones.theta = Vector::Ones(5);
        REQUIRE(effective_df_check(prob.xs, prob.hierarchy, ones, prob.dets) ==
                Catch::Approx(5.0).margin(1e-8));

        ShrinkagePath zero;
        zero.theta = Vector::Zero(5);
        REQUIRE(effective_df_check(prob.xs, prob.hierarchy, zero, prob.dets) ==
                Catch::Approx(0.0).margin(1e-10));

        ShrinkagePath random_path;
        random_path.theta.resize(5);
        double level = 1.0;
        for (int i = 0; i < 5; ++i) {
            level *= rng.uniform();
            random_path.theta(i) = level;
        }
        REQUIRE(effective_df_check(prob.xs, prob.hierarchy, random_path, prob.dets) ==
                Catch::Approx(random_path.theta.sum()).margin(1e-8));
    }
}

TEST_CASE("predict agrees with in-sample fits, the OLS corner, and linearity") {
    Rng rng(227);
    auto d = random_regression(rng, 50, 4);
    HfrProblem prob = prepare(d.x, d.y);
    HfrFit f = solve_prepared(prob, 0.6);

    // in-sample reproduction of the assembled fitted values
    Vector fitted = prob.base_fitted * (1.0 - f.path.phi.sum());
    for (int ell = 0; ell < 4; ++ell)
        fitted += f.path.phi(ell) * prob.level_fits[static_cast<std::size_t>(ell)].fitted;
    REQUIRE((predict(f, d.x) - fitted).lpNorm<Eigen::Infinity>() < 1e-10);

    HfrFit f1 = solve_prepared(prob, 1.0);
    Vector ols = ols_with_intercept(d.x, d.y);
    Matrix x_new = testutil::random_matrix(rng, 10, 4);
    Vector expect = (x_new * ols.tail(4)).array() + ols(0);
    REQUIRE((predict(f1, x_new) - expect).lpNorm<Eigen::Infinity>() < 1e-8);

    // shifting one column shifts predictions by c * beta_j exactly
    Matrix shifted = x_new;
    shifted.col(2).array() += 3.5;
    Vector delta = predict(f, shifted) - predict(f, x_new);
    REQUIRE((delta.array() - 3.5 * f.beta(2)).abs().maxCoeff() < 1e-10);
}

TEST_CASE("standardized-path and original-scale predictions agree") {
    Rng rng(229);
    auto d = random_regression(rng, 40, 3);
    HfrFit f = fit(d.x, d.y, 0.4);
    Matrix x_new = testutil::random_matrix(rng, 15, 3);
    x_new.array() += 2.0;

    Matrix xs_new = apply_standardization(x_new, f.standardization);
    Vector via_std = (xs_new * f.beta_std).array() +
                     (f.deterministic(0) +
                      (f.beta_std.array() * f.standardization.centers.array() /
                       f.standardization.scales.array())
                          .sum());
    REQUIRE((predict(f, x_new) - via_std).lpNorm<Eigen::Infinity>() < 1e-10);
}

TEST_CASE("rank-deficient level designs fall back to the jittered solve with a warning") {
    Rng rng(231);
    auto d = random_regression(rng, 30, 3);
    FitOptions options;
    options.extra_deterministic = d.x.col(0);   // duplicates a predictor in every design
    HfrFit f = fit(d.x, d.y, 0.5, options);
    REQUIRE_FALSE(f.warnings.empty());
}

TEST_CASE("fit validates inputs") {
    Rng rng(233);
    auto d = random_regression(rng, 20, 3);
    REQUIRE_THROWS_AS(fit(d.x, d.y, 1.5), ValidationError);
    REQUIRE_THROWS_AS(fit(d.x, d.y.head(10), 0.5), ValidationError);
    Matrix tiny = d.x.topRows(3);
    REQUIRE_THROWS_AS(fit(tiny, d.y.head(3), 0.5), ValidationError);
}

TEST_CASE("pruning kicks in when K >= N - M and the QP target rescales") {
    Rng rng(235);
    const int n = 12, k = 14;
    Matrix x = testutil::random_matrix(rng, n, k);
    Vector y = testutil::random_vector(rng, n);
    HfrProblem prob = prepare(x, y);
    REQUIRE(prob.hierarchy.level_count() == n - 1 - 1);   // N - M - 1 with intercept
    REQUIRE(prob.rhs_scale == n - 2);
    HfrFit f = solve_prepared(prob, 0.5);
    REQUIRE(f.path.theta.sum() == Catch::Approx(0.5 * (n - 2)).margin(1e-8));
}

TEST_CASE("no-intercept mode keeps the original-scale formula exact") {
    Rng rng(237);
    auto d = random_regression(rng, 40, 3);
    FitOptions options;
    options.intercept = false;
    HfrFit f = fit(d.x, d.y, 1.0, options);
    REQUIRE(f.m == 0);
    Vector ols = solve_least_squares(d.x, d.y);
    REQUIRE((f.beta - ols).lpNorm<Eigen::Infinity>() < 1e-8);
    REQUIRE((predict(f, d.x) - d.x * ols).lpNorm<Eigen::Infinity>() < 1e-8);
}
