#pragma once

// Shared test utilities: random data generation and the independent oracles
// (scalar Pearson, brute-force Ward, QP grid search) used by both the unit
// and the acceptance suites. Everything here is deliberately written from
// first principles and must stay independent of the library implementation
// paths it checks.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <vector>

#include "hfr/clustering.hpp"
#include "hfr/rng.hpp"
#include "hfr/types.hpp"

namespace testutil {

using hfr::Matrix;
using hfr::Vector;

inline Matrix random_matrix(hfr::Rng& rng, int n, int k) {
    Matrix x(n, k);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < k; ++j) x(i, j) = rng.gaussian();
    return x;
}

inline Vector random_vector(hfr::Rng& rng, int n) {
    Vector v(n);
    for (int i = 0; i < n; ++i) v(i) = rng.gaussian();
    return v;
}

/// Random correlated predictors: x = g * chol(R)' with R from a random
/// Gram construction, plus a linear response with noise.
inline Matrix random_correlated(hfr::Rng& rng, int n, int k) {
    Matrix basis = random_matrix(rng, k, k + 2);
    Matrix gram = basis * basis.transpose() / static_cast<double>(k + 2);
    Vector d = gram.diagonal().cwiseSqrt();
    Matrix corr = gram.array() / (d * d.transpose()).array();
    Eigen::LLT<Matrix> llt(corr + 1e-10 * Matrix::Identity(k, k));
    return random_matrix(rng, n, k) * llt.matrixL().transpose();
}

/// Plain scalar Pearson correlation, written out longhand.
inline double pearson(const Vector& a, const Vector& b) {
    const double ma = a.mean(), mb = b.mean();
    double sab = 0.0, saa = 0.0, sbb = 0.0;
    for (int i = 0; i < a.size(); ++i) {
        sab += (a(i) - ma) * (b(i) - mb);
        saa += (a(i) - ma) * (a(i) - ma);
        sbb += (b(i) - mb) * (b(i) - mb);
    }
    return sab / std::sqrt(saa * sbb);
}

/// Exhaustive Ward oracle: re-evaluates the within-cluster variance increase
/// of every candidate merge at every step, using only the initial pairwise
/// row distances. SSE of a cluster is sum of squared pairwise distances over
/// the cluster size.
inline hfr::MergeSequence ward_bruteforce(const hfr::DissimilarityRows& d) {
    const int k = d.k;
    Matrix d2(k, k);
    for (int i = 0; i < k; ++i) {
        d2(i, i) = 0.0;
        for (int j = i + 1; j < k; ++j) {
            const double dist = hfr::row_distance(d, i, j);
            d2(i, j) = dist * dist;
            d2(j, i) = dist * dist;
        }
    }

    struct Node {
        int id;
        std::vector<int> members;
    };
    std::vector<Node> active;
    for (int i = 0; i < k; ++i) active.push_back({i + 1, {i}});

    auto sse = [&](const std::vector<int>& members) {
        double s = 0.0;
        for (std::size_t a = 0; a < members.size(); ++a)
            for (std::size_t b = a + 1; b < members.size(); ++b) s += d2(members[a], members[b]);
        return s / static_cast<double>(members.size());
    };

    hfr::MergeSequence seq;
    seq.k = k;
    for (int t = 1; t < k; ++t) {
        double cmin = std::numeric_limits<double>::infinity();
        for (std::size_t a = 0; a < active.size(); ++a) {
            for (std::size_t b = a + 1; b < active.size(); ++b) {
                std::vector<int> merged = active[a].members;
                merged.insert(merged.end(), active[b].members.begin(), active[b].members.end());
                const double cost = sse(merged) - sse(active[a].members) - sse(active[b].members);
                cmin = std::min(cmin, cost);
            }
        }
        std::size_t pa = 0, pb = 0;
        bool found = false;
        // active stays sorted by id, so this scan is in lexicographic
        // (min id, max id) order: first hit within the tie window wins
        for (std::size_t a = 0; a < active.size() && !found; ++a) {
            for (std::size_t b = a + 1; b < active.size(); ++b) {
                std::vector<int> merged = active[a].members;
                merged.insert(merged.end(), active[b].members.begin(), active[b].members.end());
                const double cost = sse(merged) - sse(active[a].members) - sse(active[b].members);
                if (cost <= cmin + 1e-12) {
                    pa = a;
                    pb = b;
                    found = true;
                    break;
                }
            }
        }
        Node merged;
        merged.id = k + t;
        merged.members = active[pa].members;
        merged.members.insert(merged.members.end(), active[pb].members.begin(),
                              active[pb].members.end());
        std::vector<int> m2 = merged.members;
        const double cost = sse(m2) - sse(active[pa].members) - sse(active[pb].members);
        seq.steps.push_back({active[pa].id, active[pb].id, cost});
        active.erase(active.begin() + static_cast<std::ptrdiff_t>(pb));
        active.erase(active.begin() + static_cast<std::ptrdiff_t>(pa));
        active.push_back(merged);
        std::sort(active.begin(), active.end(), [](const Node& x, const Node& y) { return x.id < y.id; });
    }
    return seq;
}

/// Grid-search oracle for the level-weight QP: minimizes phi'U phi - V'phi
/// over {phi >= 0, sum(phi) <= 1, sum_l l*phi_l = b} on a regular grid of
/// the free coordinates (phi_1 is pinned by the equality). The innermost
/// axis of the convex quadratic is minimized exactly by checking the vertex
/// snapped to the grid and the interval ends, which returns the identical
/// grid optimum without full enumeration.
inline double qp_grid_oracle(const Matrix& u, const Vector& v, double b, double step) {
    const int l = static_cast<int>(v.size());
    double best = std::numeric_limits<double>::infinity();

    auto objective = [&](const Vector& phi) { return phi.dot(u * phi) - v.dot(phi); };

    // recurse over phi_l, ..., phi_3; then phi_2 on a grid with phi_1 pinned
    Vector phi = Vector::Zero(l);
    auto eval_last_axis = [&](double budget_eq, double budget_sum) {
        // phi restricted to phi_1 = budget_eq - 2*phi_2 over the grid of phi_2
        // (for l == 1 there is no free axis at all)
        if (l == 1) {
            phi(0) = budget_eq;
            if (phi(0) >= -1e-12 && phi(0) <= budget_sum + 1e-12)
                best = std::min(best, objective(phi));
            return;
        }
        Vector base = phi;
        base(0) = budget_eq;
        base(1) = 0.0;
        Vector dir = Vector::Zero(l);
        dir(0) = -2.0;
        dir(1) = 1.0;
        // feasibility range of phi_2: phi_1 >= 0, phi_2 >= 0, sum <= 1
        double hi = budget_eq / 2.0;
        const double sum_base = base.sum();
        const double sum_dir = dir.sum();   // = -1: raising phi_2 lowers the sum
        if (sum_dir > 0.0) hi = std::min(hi, (1.0 - sum_base) / sum_dir);
        double lo = 0.0;
        if (sum_dir < 0.0) lo = std::max(lo, (sum_base - 1.0) / (-sum_dir));
        if (base(0) < -1e-12) return;       // pinned coordinate infeasible for any phi_2 <= hi
        if (lo > hi + 1e-12) return;

        const double qa = dir.dot(u * dir);
        const double qb = 2.0 * base.dot(u * dir) - v.dot(dir);
        auto eval_at = [&](double t) {
            if (t < lo - 1e-12 || t > hi + 1e-12) return;
            Vector p = base + t * dir;
            if (p(0) < 0.0) p(0) = 0.0;
            best = std::min(best, objective(p));
        };
        const long n_lo = static_cast<long>(std::ceil(lo / step - 1e-9));
        const long n_hi = static_cast<long>(std::floor(hi / step + 1e-9));
        if (n_lo > n_hi) {
            eval_at(lo);
            return;
        }
        eval_at(static_cast<double>(n_lo) * step);
        eval_at(static_cast<double>(n_hi) * step);
        if (qa > 0.0) {
            const double vertex = -qb / (2.0 * qa);
            const long nv = static_cast<long>(std::llround(vertex / step));
            for (long n = nv - 1; n <= nv + 1; ++n)
                if (n >= n_lo && n <= n_hi) eval_at(static_cast<double>(n) * step);
        }
    };

    // enumerate the outer axes phi_l .. phi_3 on the plain grid
    std::vector<int> outer;
    for (int i = l - 1; i >= 2; --i) outer.push_back(i);

    std::function<void(std::size_t, double, double)> recurse =
        [&](std::size_t depth, double eq_left, double sum_left) {
            if (depth == outer.size()) {
                eval_last_axis(eq_left, sum_left);
                return;
            }
            const int axis = outer[depth];
            const double coef = static_cast<double>(axis + 1);
            const double max_axis = std::min(sum_left, eq_left / coef);
            const long n_max = static_cast<long>(std::floor(max_axis / step + 1e-9));
            for (long n = 0; n <= n_max; ++n) {
                const double val = static_cast<double>(n) * step;
                phi(axis) = val;
                recurse(depth + 1, eq_left - coef * val, sum_left - val);
            }
            phi(axis) = 0.0;
        };
    recurse(0, b, 1.0);
    return best;
}

} // namespace testutil
