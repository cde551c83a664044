#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <utility>

#include "hfr/types.hpp"

namespace hfr {

/// Per-column centering/scaling factors. Scales use the sample standard
/// deviation (divisor N-1); keeping both vectors makes the transform
/// reversible and lets coefficients be mapped back to the original scale.
struct StandardizationInfo {
    Vector centers;
    Vector scales;
};

namespace detail {

inline Vector column_means(const Matrix& x) {
    return x.colwise().mean();
}

inline Vector column_sds(const Matrix& x) {
    const Index n = x.rows();
    const Vector mu = column_means(x);
    Vector sd(x.cols());
    for (Index j = 0; j < x.cols(); ++j) {
        const double ss = (x.col(j).array() - mu(j)).square().sum();
        sd(j) = std::sqrt(ss / static_cast<double>(n - 1));
    }
    return sd;
}

} // namespace detail

/// Least squares via column-pivoted QR. With jitter > 0 the regularized
/// normal equations (Z'Z + jitter*I) c = Z'y are solved instead, which is
/// the retry path the estimator uses on rank-deficient level designs.
inline Vector solve_least_squares(const Matrix& z, const Vector& y, double jitter = 0.0) {
    detail::require(z.rows() >= 1 && z.cols() >= 1, "solve_least_squares: empty design");
    detail::require(z.rows() == y.size(), "solve_least_squares: row count mismatch");
    detail::require(jitter >= 0.0, "solve_least_squares: negative jitter");
    detail::require(z.allFinite() && y.allFinite(), "solve_least_squares: non-finite input");

    if (jitter > 0.0) {
        Matrix gram = z.transpose() * z;
        gram.diagonal().array() += jitter;
        return Eigen::LDLT<Matrix>(gram).solve(z.transpose() * y);
    }

    Eigen::ColPivHouseholderQR<Matrix> qr(z);
    if (qr.rank() < z.cols()) {
        throw NumericError("solve_least_squares: rank-deficient design, rank " +
                           std::to_string(qr.rank()) + " of " + std::to_string(z.cols()) +
                           " columns (jitter = 0)");
    }
    return qr.solve(y);
}

/// Pearson correlation matrix of the columns of x. Symmetric, unit diagonal,
/// entries clamped to [-1, 1] against rounding.
inline Matrix correlation_matrix(const Matrix& x) {
    const Index n = x.rows();
    const Index k = x.cols();
    detail::require(n >= 2, "correlation_matrix: need at least 2 rows");
    detail::require(x.allFinite(), "correlation_matrix: non-finite input");

    Matrix centered = x.rowwise() - x.colwise().mean();
    Vector norms(k);
    for (Index j = 0; j < k; ++j) {
        norms(j) = centered.col(j).norm();
        if (norms(j) == 0.0) {
            throw ValidationError("correlation_matrix: column " + std::to_string(j) +
                                  " has zero variance");
        }
    }

    Matrix rho(k, k);
    for (Index i = 0; i < k; ++i) {
        rho(i, i) = 1.0;
        for (Index j = i + 1; j < k; ++j) {
            double r = centered.col(i).dot(centered.col(j)) / (norms(i) * norms(j));
            r = std::clamp(r, -1.0, 1.0);
            rho(i, j) = r;
            rho(j, i) = r;
        }
    }
    return rho;
}

/// Center each column to mean 0 and scale to unit sample standard deviation.
inline std::pair<Matrix, StandardizationInfo> standardize(const Matrix& x) {
    detail::require(x.rows() >= 2, "standardize: need at least 2 rows");
    detail::require(x.allFinite(), "standardize: non-finite input");

    StandardizationInfo info;
    info.centers = detail::column_means(x);
    info.scales = detail::column_sds(x);
    for (Index j = 0; j < x.cols(); ++j) {
        if (info.scales(j) == 0.0) {
            throw ValidationError("standardize: column " + std::to_string(j) +
                                  " has zero variance");
        }
    }
    Matrix xs = (x.rowwise() - info.centers.transpose()).array().rowwise() /
                info.scales.transpose().array();
    return {std::move(xs), std::move(info)};
}

/// Inverse of standardize.
inline Matrix unstandardize(const Matrix& xs, const StandardizationInfo& info) {
    detail::require(xs.cols() == info.centers.size() && xs.cols() == info.scales.size(),
                    "unstandardize: column count mismatch");
    return (xs.array().rowwise() * info.scales.transpose().array()).rowwise() +
           info.centers.transpose().array();
}

/// Apply stored standardization to new data (used by predict).
inline Matrix apply_standardization(const Matrix& x, const StandardizationInfo& info) {
    detail::require(x.cols() == info.centers.size(), "apply_standardization: column count mismatch");
    return (x.rowwise() - info.centers.transpose()).array().rowwise() /
           info.scales.transpose().array();
}

} // namespace hfr
