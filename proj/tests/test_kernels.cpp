#include <catch2/catch_amalgamated.hpp>

#include "hfr/kernels.hpp"
#include "hfr/rng.hpp"
#include "helpers.hpp"

using namespace hfr;

TEST_CASE("solve_least_squares on an identity design returns y") {
    Matrix z = Matrix::Identity(3, 3);
    Vector y(3);
    y << 1, 2, 3;
    Vector c = solve_least_squares(z, y);
    REQUIRE(c.isApprox(y, 1e-14));
}

TEST_CASE("solve_least_squares intercept-only returns the mean") {
    Matrix z = Matrix::Ones(4, 1);
    Vector y(4);
    y << 1, 1, 3, 3;
    Vector c = solve_least_squares(z, y);
    REQUIRE(c(0) == Catch::Approx(2.0).margin(1e-14));
}

TEST_CASE("solve_least_squares matches hand-solved normal equations") {
    // Z'Z = [[3,3],[3,5]], Z'y = (3,5) -> c = (0,1)
    Matrix z(3, 2);
    z << 1, 0, 1, 1, 1, 2;
    Vector y(3);
    y << 0, 1, 2;
    Vector c = solve_least_squares(z, y);
    REQUIRE(c(0) == Catch::Approx(0.0).margin(1e-12));
    REQUIRE(c(1) == Catch::Approx(1.0).margin(1e-12));
}

TEST_CASE("solve_least_squares rejects rank deficiency without jitter") {
    Matrix z(4, 2);
    z << 1, 2, 1, 2, 1, 2, 1, 2;
    Vector y(4);
    y << 1, 2, 3, 4;
    REQUIRE_THROWS_AS(solve_least_squares(z, y), NumericError);
    REQUIRE_NOTHROW(solve_least_squares(z, y, 1e-8));
}

TEST_CASE("least squares normal equations hold on random full-rank designs") {
    Rng rng(11);
    for (int rep = 0; rep < 20; ++rep) {
        Matrix z = testutil::random_matrix(rng, 30, 5);
        Vector y = testutil::random_vector(rng, 30);
        Vector c = solve_least_squares(z, y);
        Vector grad = z.transpose() * (z * c - y);
        REQUIRE(grad.lpNorm<Eigen::Infinity>() <=
                1e-8 * (1.0 + (z.transpose() * y).lpNorm<Eigen::Infinity>()));
    }
}

TEST_CASE("correlation_matrix detects perfect and inverted duplicates") {
    Rng rng(7);
    Vector base = testutil::random_vector(rng, 12);
    Matrix x(12, 2);
    x.col(0) = base;
    x.col(1) = base;
    REQUIRE(correlation_matrix(x)(0, 1) == Catch::Approx(1.0).margin(1e-14));
    x.col(1) = -base;
    REQUIRE(correlation_matrix(x)(0, 1) == Catch::Approx(-1.0).margin(1e-14));
}

TEST_CASE("correlation_matrix matches the scalar Pearson formula") {
    Rng rng(13);
    Matrix x = testutil::random_matrix(rng, 10, 3);
    Matrix rho = correlation_matrix(x);
    for (int i = 0; i < 3; ++i) {
        REQUIRE(rho(i, i) == 1.0);
        for (int j = 0; j < 3; ++j) {
            REQUIRE(rho(i, j) == rho(j, i));
            if (i != j)
                REQUIRE(rho(i, j) ==
                        Catch::Approx(testutil::pearson(x.col(i), x.col(j))).margin(1e-12));
        }
    }
}

TEST_CASE("correlation_matrix is positive semidefinite up to rounding") {
    Rng rng(17);
    for (int rep = 0; rep < 10; ++rep) {
        Matrix x = testutil::random_matrix(rng, 25, 6);
        Matrix rho = correlation_matrix(x);
        Eigen::SelfAdjointEigenSolver<Matrix> es(rho, Eigen::EigenvaluesOnly);
        REQUIRE(es.eigenvalues().minCoeff() >= -1e-10);
    }
}

TEST_CASE("correlation_matrix names the degenerate column") {
    Matrix x = Matrix::Ones(5, 2);
    x.col(0) = Vector::LinSpaced(5, 0, 4);
    REQUIRE_THROWS_WITH(correlation_matrix(x), Catch::Matchers::ContainsSubstring("column 1"));
}

TEST_CASE("standardize rejects constant columns") {
    Matrix x(4, 1);
    x.setConstant(3.0);
    REQUIRE_THROWS_AS(standardize(x), ValidationError);
}

TEST_CASE("standardize maps a symmetric pair to +-s with exact zero mean") {
    Matrix x(2, 1);
    x << 0, 2;
    auto [xs, info] = standardize(x);
    REQUIRE(xs(0, 0) == -xs(1, 0));
    REQUIRE(xs.col(0).mean() == Catch::Approx(0.0).margin(1e-15));
    REQUIRE(info.centers(0) == Catch::Approx(1.0));
    REQUIRE(info.scales(0) == Catch::Approx(std::sqrt(2.0)));   // sample sd of (0,2)
}

TEST_CASE("standardize yields unit sample scale and round-trips") {
    Rng rng(23);
    Matrix x = testutil::random_matrix(rng, 5, 3);
    x.array() += 4.0;
    x.col(1) *= 10.0;
    auto [xs, info] = standardize(x);
    for (int j = 0; j < 3; ++j) {
        REQUIRE(std::abs(xs.col(j).mean()) < 1e-12);
        const double sd = std::sqrt(xs.col(j).squaredNorm() / 4.0);
        REQUIRE(sd == Catch::Approx(1.0).margin(1e-12));
    }
    Matrix back = unstandardize(xs, info);
    REQUIRE((back - x).lpNorm<Eigen::Infinity>() <= 1e-12 * x.lpNorm<Eigen::Infinity>());
}
