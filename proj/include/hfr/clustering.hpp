#pragma once

#include <algorithm>
#include <cassert>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "hfr/kernels.hpp"
#include "hfr/types.hpp"

namespace hfr {

/// Supervised dissimilarity rows: entry (i,j) is the bivariate partial
/// correlation between x_i and y conditioning on x_j. NOT symmetric.
/// The diagonal is undefined and stored as NaN; read it through at(),
/// which asserts, never as a plain matrix element.
struct DissimilarityRows {
    int k = 0;
    Matrix rows;

    double at(int i, int j) const {
        assert(i != j && "diagonal of DissimilarityRows is undefined");
        return rows(i, j);
    }

    /// Elementwise absolute value (sign-invariant clustering option).
    DissimilarityRows absolute() const {
        DissimilarityRows out{k, rows.array().abs().matrix()};
        for (int i = 0; i < k; ++i)
            out.rows(i, i) = std::numeric_limits<double>::quiet_NaN();
        return out;
    }
};

/// One agglomeration step. Cluster ids follow the convention: leaves are
/// 1..K and the merge at step t creates cluster K+t.
struct MergeStep {
    int left = 0;
    int right = 0;
    double cost = 0.0;
};

struct MergeSequence {
    int k = 0;
    std::vector<MergeStep> steps;
};

/// Ward recurrence variant. ward_d2 (default) seeds the Lance-Williams
/// recurrence with squared row distances, matching the usual dissimilarity
/// based Ward implementations; ward_d seeds it with the raw distances.
/// Merge order can differ between the two on some inputs.
enum class WardVariant { ward_d2, ward_d };

inline DissimilarityRows partial_correlation_matrix(const Matrix& xs, const Vector& y) {
    const Index k = xs.cols();
    detail::require(k >= 2, "partial_correlation_matrix: need at least 2 predictors");
    detail::require(xs.rows() == y.size(), "partial_correlation_matrix: row count mismatch");

    Matrix joint(xs.rows(), k + 1);
    joint.leftCols(k) = xs;
    joint.col(k) = y;
    const Matrix rho = correlation_matrix(joint);   // throws on zero-variance columns

    const double limit = 1.0 - 1e-12;
    DissimilarityRows d;
    d.k = static_cast<int>(k);
    d.rows.setConstant(k, k, std::numeric_limits<double>::quiet_NaN());
    for (Index i = 0; i < k; ++i) {
        for (Index j = 0; j < k; ++j) {
            if (i == j) continue;
            const double r_yi = rho(k, i);
            const double r_yj = rho(k, j);
            const double r_ij = rho(i, j);
            if (std::abs(r_yj) >= limit) {
                throw NumericError("partial_correlation_matrix: response collinear with predictor " +
                                   std::to_string(j) + " (entry " + std::to_string(i) + "," +
                                   std::to_string(j) + ")");
            }
            if (std::abs(r_ij) >= limit) {
                throw NumericError("partial_correlation_matrix: predictors " + std::to_string(i) +
                                   " and " + std::to_string(j) + " are collinear");
            }
            d.rows(i, j) = (r_yi - r_yj * r_ij) /
                           std::sqrt((1.0 - r_yj * r_yj) * (1.0 - r_ij * r_ij));
        }
    }
    return d;
}

/// Euclidean distance between rows i and j over the coordinates where both
/// are defined, i.e. excluding positions i and j. For K = 2 the surviving
/// coordinate set is empty and the distance is 0 by convention.
inline double row_distance(const DissimilarityRows& d, int i, int j) {
    detail::require(i != j, "row_distance: i == j");
    detail::require(i >= 0 && j >= 0 && i < d.k && j < d.k, "row_distance: index out of range");
    double ss = 0.0;
    for (int c = 0; c < d.k; ++c) {
        if (c == i || c == j) continue;
        const double diff = d.at(i, c) - d.at(j, c);
        ss += diff * diff;
    }
    return std::sqrt(ss);
}

/// Agglomerative Ward clustering of the dissimilarity rows. The merge cost
/// under ward_d2 is the increase in total within-cluster variance implied by
/// the initial row distances; costs are nondecreasing up to ties. Ties
/// within 1e-12 are broken toward the lexicographically smallest (min id,
/// max id) pair so results are platform independent.
inline MergeSequence ward_linkage(const DissimilarityRows& d,
                                  WardVariant variant = WardVariant::ward_d2) {
    const int k = d.k;
    detail::require(k >= 2, "ward_linkage: need at least 2 rows");

    const int total = 2 * k - 1;
    // cost(a,b) between active cluster ids (1-based); seeded so that the
    // value IS the Ward merge cost for the pair
    Matrix cost = Matrix::Constant(total + 1, total + 1,
                                   std::numeric_limits<double>::quiet_NaN());
    for (int i = 0; i < k; ++i) {
        for (int j = i + 1; j < k; ++j) {
            const double dist = row_distance(d, i, j);
            if (!std::isfinite(dist))
                throw ValidationError("ward_linkage: non-finite distance between rows " +
                                      std::to_string(i) + " and " + std::to_string(j));
            const double seed = (variant == WardVariant::ward_d2) ? 0.5 * dist * dist : dist;
            cost(i + 1, j + 1) = seed;
            cost(j + 1, i + 1) = seed;
        }
    }

    std::vector<int> active;
    std::vector<double> size(static_cast<std::size_t>(total + 1), 0.0);
    for (int i = 1; i <= k; ++i) {
        active.push_back(i);
        size[static_cast<std::size_t>(i)] = 1.0;
    }

    MergeSequence seq;
    seq.k = k;
    for (int t = 1; t < k; ++t) {
        double cmin = std::numeric_limits<double>::infinity();
        for (std::size_t a = 0; a < active.size(); ++a)
            for (std::size_t b = a + 1; b < active.size(); ++b)
                cmin = std::min(cmin, cost(active[a], active[b]));

        int pa = -1, pb = -1;
        for (std::size_t a = 0; a < active.size() && pa < 0; ++a) {
            for (std::size_t b = a + 1; b < active.size(); ++b) {
                if (cost(active[a], active[b]) <= cmin + 1e-12) {
                    pa = active[a];
                    pb = active[b];
                    break;
                }
            }
        }

        const int merged = k + t;
        const double na = size[static_cast<std::size_t>(pa)];
        const double nb = size[static_cast<std::size_t>(pb)];
        size[static_cast<std::size_t>(merged)] = na + nb;
        for (int other : active) {
            if (other == pa || other == pb) continue;
            const double nc = size[static_cast<std::size_t>(other)];
            const double lw = ((na + nc) * cost(pa, other) + (nb + nc) * cost(pb, other) -
                               nc * cost(pa, pb)) /
                              (na + nb + nc);
            cost(merged, other) = lw;
            cost(other, merged) = lw;
        }
        seq.steps.push_back({pa, pb, cost(pa, pb)});
        std::erase(active, pa);
        std::erase(active, pb);
        active.push_back(merged);
        std::sort(active.begin(), active.end());
    }
    return seq;
}

} // namespace hfr
