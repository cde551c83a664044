#pragma once

#include <algorithm>
#include <numeric>
#include <string>
#include <vector>

#include "hfr/clustering.hpp"
#include "hfr/types.hpp"

namespace hfr {

/// A signed cluster: member predictor indices (0-based, ascending) with a
/// +1/-1 sign per member.
struct Cluster {
    std::vector<int> members;
    std::vector<int> signs;
};

struct HierarchyLevel {
    std::vector<Cluster> clusters;
};

/// Nested partitions of the predictors, root level first. An unpruned
/// hierarchy built from K-1 merges has L = K levels with 1, 2, ..., K
/// clusters. merge_heights carries the cumulative Ward cost per level for
/// rendering; it never enters estimation.
struct Hierarchy {
    int k = 0;
    std::vector<HierarchyLevel> levels;
    std::vector<double> merge_heights;

    int level_count() const { return static_cast<int>(levels.size()); }

    const HierarchyLevel& level(int ell) const {       // 1-based, root = 1
        return levels[static_cast<std::size_t>(ell - 1)];
    }
};

namespace detail {

inline void sort_cluster(Cluster& c) {
    std::vector<std::size_t> order(c.members.size());
    std::iota(order.begin(), order.end(), 0u);
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return c.members[a] < c.members[b]; });
    Cluster sorted;
    sorted.members.reserve(c.members.size());
    sorted.signs.reserve(c.signs.size());
    for (auto idx : order) {
        sorted.members.push_back(c.members[idx]);
        sorted.signs.push_back(c.signs[idx]);
    }
    c = std::move(sorted);
}

inline void sort_level(HierarchyLevel& level) {
    for (auto& c : level.clusters) sort_cluster(c);
    std::sort(level.clusters.begin(), level.clusters.end(),
              [](const Cluster& a, const Cluster& b) { return a.members.front() < b.members.front(); });
}

} // namespace detail

/// Expand a merge sequence into the full family of levels. Level K holds the
/// singletons, level K-t is the partition after t merges, level 1 the root.
/// All signs start at +1.
inline Hierarchy build_hierarchy(const MergeSequence& merges, int k) {
    detail::require(k >= 2, "build_hierarchy: need K >= 2");
    detail::require(static_cast<int>(merges.steps.size()) == k - 1,
                    "build_hierarchy: expected " + std::to_string(k - 1) + " merge steps, got " +
                        std::to_string(merges.steps.size()));

    // cluster id -> member list; ids 1..K leaves, K+t for step t
    std::vector<std::vector<int>> members(static_cast<std::size_t>(2 * k));
    std::vector<bool> alive(static_cast<std::size_t>(2 * k), false);
    for (int i = 0; i < k; ++i) {
        members[static_cast<std::size_t>(i + 1)] = {i};
        alive[static_cast<std::size_t>(i + 1)] = true;
    }

    Hierarchy h;
    h.k = k;
    h.levels.resize(static_cast<std::size_t>(k));
    h.merge_heights.assign(static_cast<std::size_t>(k), 0.0);

    auto snapshot = [&](int level_index_1based) {
        HierarchyLevel level;
        for (int id = 1; id < 2 * k; ++id) {
            if (!alive[static_cast<std::size_t>(id)]) continue;
            Cluster c;
            c.members = members[static_cast<std::size_t>(id)];
            c.signs.assign(c.members.size(), 1);
            level.clusters.push_back(std::move(c));
        }
        detail::sort_level(level);
        h.levels[static_cast<std::size_t>(level_index_1based - 1)] = std::move(level);
    };

    snapshot(k);   // leaves
    double height = 0.0;
    for (int t = 1; t < k; ++t) {
        const auto& step = merges.steps[static_cast<std::size_t>(t - 1)];
        const int lo = std::min(step.left, step.right);
        const int hi = std::max(step.left, step.right);
        detail::require(lo >= 1 && hi < k + t && lo != hi, "build_hierarchy: bad cluster id at step " +
                                                               std::to_string(t));
        detail::require(alive[static_cast<std::size_t>(lo)] && alive[static_cast<std::size_t>(hi)],
                        "build_hierarchy: cluster id reused at step " + std::to_string(t));
        const int merged = k + t;
        auto& dst = members[static_cast<std::size_t>(merged)];
        dst = members[static_cast<std::size_t>(lo)];
        dst.insert(dst.end(), members[static_cast<std::size_t>(hi)].begin(),
                   members[static_cast<std::size_t>(hi)].end());
        alive[static_cast<std::size_t>(lo)] = false;
        alive[static_cast<std::size_t>(hi)] = false;
        alive[static_cast<std::size_t>(merged)] = true;
        height += step.cost;
        h.merge_heights[static_cast<std::size_t>(k - t - 1)] = height;
        snapshot(k - t);
    }
    return h;
}

/// Choose per-member signs so opposite-sign members of a cluster are
/// mirrored rather than averaged, with sign(0) = +1 throughout (this keeps
/// singleton leaves alive, where the correlation sum is exactly 0).
///
/// Signs are built bottom-up: the deepest level gets the per-member rule
/// (sign of the summed correlation with the other members), and every
/// coarser cluster concatenates its children's patterns, flipping a whole
/// child when its signed correlation with the already-accumulated members
/// is negative. The per-child orientation keeps each parent pattern a
/// +-1 multiple of every child pattern, which is what makes the level
/// feature spans nested — the property the conditional decomposition and
/// the degrees-of-freedom identity rest on. Whenever the plain per-member
/// rule is self-consistent across levels the two constructions coincide.
inline Hierarchy apply_sign_adjustment(const Hierarchy& h, const Matrix& rho) {
    detail::require(rho.rows() == h.k && rho.cols() == h.k,
                    "apply_sign_adjustment: correlation matrix shape mismatch");
    Hierarchy out = h;
    const int levels = out.level_count();

    // deepest level: per-member rule; if every member flips the pattern is a
    // plain negation (mirrors nothing), so re-orient against the first member
    auto& deepest = out.levels.back();
    for (auto& cluster : deepest.clusters) {
        bool all_flipped = true;
        for (std::size_t m = 0; m < cluster.members.size(); ++m) {
            const int j = cluster.members[m];
            double s = -1.0;
            for (int other : cluster.members) s += rho(j, other);
            cluster.signs[m] = (s < 0.0) ? -1 : 1;
            all_flipped = all_flipped && cluster.signs[m] == -1;
        }
        if (all_flipped) {
            const int ref = cluster.members.front();
            for (std::size_t m = 0; m < cluster.members.size(); ++m)
                cluster.signs[m] = (cluster.members[m] == ref || rho(cluster.members[m], ref) >= 0.0)
                                       ? 1
                                       : -1;
        }
    }

    // ascend: per-predictor sign lookup of the finer level just below
    for (int li = levels - 2; li >= 0; --li) {
        const auto& finer = out.levels[static_cast<std::size_t>(li + 1)];
        std::vector<int> child_of(static_cast<std::size_t>(out.k), -1);
        for (std::size_t c = 0; c < finer.clusters.size(); ++c)
            for (int j : finer.clusters[c].members) child_of[static_cast<std::size_t>(j)] = static_cast<int>(c);

        for (auto& cluster : out.levels[static_cast<std::size_t>(li)].clusters) {
            // children in order of first appearance among the members
            std::vector<int> children;
            for (int j : cluster.members) {
                const int c = child_of[static_cast<std::size_t>(j)];
                if (std::find(children.begin(), children.end(), c) == children.end())
                    children.push_back(c);
            }
            std::vector<int> accumulated;        // members already signed
            std::vector<int> acc_signs;
            for (std::size_t ci = 0; ci < children.size(); ++ci) {
                const auto& child = finer.clusters[static_cast<std::size_t>(children[ci])];
                int orient = 1;
                if (ci > 0) {
                    double cross = 0.0;
                    for (std::size_t a = 0; a < accumulated.size(); ++a)
                        for (std::size_t b = 0; b < child.members.size(); ++b)
                            cross += static_cast<double>(acc_signs[a] * child.signs[b]) *
                                     rho(accumulated[a], child.members[b]);
                    orient = (cross < 0.0) ? -1 : 1;
                }
                for (std::size_t b = 0; b < child.members.size(); ++b) {
                    accumulated.push_back(child.members[b]);
                    acc_signs.push_back(orient * child.signs[b]);
                }
            }
            for (std::size_t m = 0; m < cluster.members.size(); ++m) {
                const auto pos = std::find(accumulated.begin(), accumulated.end(), cluster.members[m]);
                cluster.signs[m] = acc_signs[static_cast<std::size_t>(pos - accumulated.begin())];
            }
        }
    }
    return out;
}

/// Hierarchical features for one level: one column per cluster, each the
/// signed sum of its member predictor columns.
inline Matrix level_features(const Matrix& xs, const Hierarchy& h, int ell) {
    detail::require(ell >= 1 && ell <= h.level_count(), "level_features: level out of range");
    detail::require(xs.cols() == h.k, "level_features: column count mismatch");
    const auto& level = h.level(ell);
    Matrix z = Matrix::Zero(xs.rows(), static_cast<Index>(level.clusters.size()));
    for (std::size_t c = 0; c < level.clusters.size(); ++c) {
        const auto& cluster = level.clusters[c];
        for (std::size_t m = 0; m < cluster.members.size(); ++m) {
            z.col(static_cast<Index>(c)) +=
                static_cast<double>(cluster.signs[m]) * xs.col(cluster.members[m]);
        }
    }
    return z;
}

/// Signed level summing matrix S_ell (clusters x K), used by tests and the
/// projection-based degrees-of-freedom check.
inline Matrix level_summing_matrix(const Hierarchy& h, int ell) {
    const auto& level = h.level(ell);
    Matrix s = Matrix::Zero(static_cast<Index>(level.clusters.size()), h.k);
    for (std::size_t c = 0; c < level.clusters.size(); ++c) {
        const auto& cluster = level.clusters[c];
        for (std::size_t m = 0; m < cluster.members.size(); ++m)
            s(static_cast<Index>(c), cluster.members[m]) = static_cast<double>(cluster.signs[m]);
    }
    return s;
}

/// Drop levels that cannot be estimated when K >= N - M: only levels with at
/// most N - M - 1 clusters survive.
inline Hierarchy prune_levels(const Hierarchy& h, int n, int m) {
    if (n - m < 2) throw ValidationError("prune_levels: insufficient sample, N - M < 2");
    const int max_clusters = n - m - 1;
    Hierarchy out;
    out.k = h.k;
    for (std::size_t i = 0; i < h.levels.size(); ++i) {
        if (static_cast<int>(h.levels[i].clusters.size()) <= max_clusters) {
            out.levels.push_back(h.levels[i]);
            out.merge_heights.push_back(h.merge_heights[i]);
        }
    }
    detail::require(!out.levels.empty(), "prune_levels: no estimable levels remain");
    return out;
}

} // namespace hfr
