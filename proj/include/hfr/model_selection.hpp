#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "hfr/estimator.hpp"
#include "hfr/rng.hpp"
#include "hfr/types.hpp"

namespace hfr {

struct CvResult {
    std::vector<double> kappa_grid;
    std::vector<double> cv_mse;     // mean held-out MSE per kappa
    std::vector<double> cv_se;      // standard error across folds
    double kappa_star = 1.0;
    std::vector<int> fold_assignments;
};

/// 21 evenly spaced kappa values on [0, 1].
inline std::vector<double> default_kappa_grid() {
    std::vector<double> grid(21);
    for (int i = 0; i < 21; ++i) grid[static_cast<std::size_t>(i)] = static_cast<double>(i) / 20.0;
    return grid;
}

/// Random balanced fold assignment: sizes differ by at most one,
/// deterministic in the seed.
inline std::vector<int> make_folds(int n, int k, std::uint64_t seed) {
    detail::require(k >= 2, "make_folds: need at least 2 folds");
    if (k > n) throw ValidationError("make_folds: more folds than observations");
    Rng rng(detail::mix_seed(seed, 0xf01d5ULL));
    const std::vector<int> perm = rng.permutation(n);
    std::vector<int> fold(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) fold[static_cast<std::size_t>(perm[static_cast<std::size_t>(i)])] = i % k;
    return fold;
}

/// k-fold cross-validation over a kappa grid. The hierarchy is re-estimated
/// inside every training fold: the supervised dissimilarity depends on y,
/// so reusing a global hierarchy would leak response information into the
/// validation scores. Ties in cv_mse resolve toward the smaller kappa.
inline CvResult cross_validate(const Matrix& x, const Vector& y, std::vector<double> kappa_grid,
                               int folds, std::uint64_t seed, const FitOptions& options = {},
                               bool one_se_rule = false) {
    detail::require(!kappa_grid.empty(), "cross_validate: empty kappa grid");
    for (double kappa : kappa_grid)
        detail::require(kappa >= 0.0 && kappa <= 1.0, "cross_validate: kappa outside [0, 1]");

    const int n = static_cast<int>(x.rows());
    const Index m_extra = options.extra_deterministic.cols();
    const int m = (options.intercept ? 1 : 0) + static_cast<int>(m_extra);

    CvResult result;
    result.kappa_grid = std::move(kappa_grid);
    result.fold_assignments = make_folds(n, folds, seed);

    // every fold must remain fittable before any work starts
    std::vector<int> fold_sizes(static_cast<std::size_t>(folds), 0);
    for (int f : result.fold_assignments) ++fold_sizes[static_cast<std::size_t>(f)];
    for (int f = 0; f < folds; ++f) {
        const int n_train = n - fold_sizes[static_cast<std::size_t>(f)];
        if (n_train < std::max(4, m + 2))
            throw ValidationError("cross_validate: fold " + std::to_string(f) +
                                  " leaves only " + std::to_string(n_train) +
                                  " training observations");
    }

    const std::size_t g = result.kappa_grid.size();
    Matrix fold_mse(folds, static_cast<Index>(g));
    for (int f = 0; f < folds; ++f) {
        std::vector<int> train_rows, valid_rows;
        for (int i = 0; i < n; ++i) {
            if (result.fold_assignments[static_cast<std::size_t>(i)] == f)
                valid_rows.push_back(i);
            else
                train_rows.push_back(i);
        }
        Matrix xtr(static_cast<Index>(train_rows.size()), x.cols());
        Vector ytr(static_cast<Index>(train_rows.size()));
        Matrix xv(static_cast<Index>(valid_rows.size()), x.cols());
        Vector yv(static_cast<Index>(valid_rows.size()));
        FitOptions fold_options = options;
        if (m_extra > 0)
            fold_options.extra_deterministic.resize(static_cast<Index>(train_rows.size()), m_extra);
        Matrix dv(static_cast<Index>(valid_rows.size()), m_extra);
        for (std::size_t i = 0; i < train_rows.size(); ++i) {
            xtr.row(static_cast<Index>(i)) = x.row(train_rows[i]);
            ytr(static_cast<Index>(i)) = y(train_rows[i]);
            if (m_extra > 0)
                fold_options.extra_deterministic.row(static_cast<Index>(i)) =
                    options.extra_deterministic.row(train_rows[i]);
        }
        for (std::size_t i = 0; i < valid_rows.size(); ++i) {
            xv.row(static_cast<Index>(i)) = x.row(valid_rows[i]);
            yv(static_cast<Index>(i)) = y(valid_rows[i]);
            if (m_extra > 0)
                dv.row(static_cast<Index>(i)) = options.extra_deterministic.row(valid_rows[i]);
        }

        const HfrProblem prob = prepare(xtr, ytr, fold_options);
        for (std::size_t gi = 0; gi < g; ++gi) {
            const HfrFit fit = solve_prepared(prob, result.kappa_grid[gi]);
            const Vector pred = predict(fit, xv, m_extra > 0 ? dv : Matrix());
            fold_mse(f, static_cast<Index>(gi)) =
                (pred - yv).squaredNorm() / static_cast<double>(yv.size());
        }
    }

    result.cv_mse.resize(g);
    result.cv_se.resize(g);
    for (std::size_t gi = 0; gi < g; ++gi) {
        const double mean = fold_mse.col(static_cast<Index>(gi)).mean();
        double var = 0.0;
        for (int f = 0; f < folds; ++f) {
            const double d = fold_mse(f, static_cast<Index>(gi)) - mean;
            var += d * d;
        }
        var /= static_cast<double>(folds - 1);
        result.cv_mse[gi] = mean;
        result.cv_se[gi] = std::sqrt(var / static_cast<double>(folds));
    }

    // argmin with smaller-kappa tie-breaking; grid-order independent
    std::size_t best = 0;
    for (std::size_t gi = 1; gi < g; ++gi) {
        const bool better = result.cv_mse[gi] < result.cv_mse[best];
        const bool tie_smaller = result.cv_mse[gi] == result.cv_mse[best] &&
                                 result.kappa_grid[gi] < result.kappa_grid[best];
        if (better || tie_smaller) best = gi;
    }
    if (one_se_rule) {
        const double cutoff = result.cv_mse[best] + result.cv_se[best];
        for (std::size_t gi = 0; gi < g; ++gi) {
            if (result.cv_mse[gi] <= cutoff &&
                result.kappa_grid[gi] < result.kappa_grid[best])
                best = gi;
        }
    }
    result.kappa_star = result.kappa_grid[best];
    return result;
}

} // namespace hfr
