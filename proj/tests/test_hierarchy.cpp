#include <catch2/catch_amalgamated.hpp>

#include <set>

#include "hfr/hierarchy.hpp"
#include "hfr/rng.hpp"
#include "helpers.hpp"

using namespace hfr;

namespace {

MergeSequence merges_of(int k, std::initializer_list<std::pair<int, int>> steps) {
    MergeSequence seq;
    seq.k = k;
    double cost = 1.0;
    for (auto [a, b] : steps) {
        seq.steps.push_back({a, b, cost});
        cost += 1.0;
    }
    return seq;
}

std::vector<std::set<int>> level_sets(const Hierarchy& h, int ell) {
    std::vector<std::set<int>> out;
    for (const auto& c : h.level(ell).clusters) out.emplace_back(c.members.begin(), c.members.end());
    return out;
}

// random valid merge sequence over k leaves
MergeSequence random_merges(Rng& rng, int k) {
    MergeSequence seq;
    seq.k = k;
    std::vector<int> active;
    for (int i = 1; i <= k; ++i) active.push_back(i);
    double cost = 0.5;
    for (int t = 1; t < k; ++t) {
        const auto a = static_cast<std::size_t>(rng.below(active.size()));
        auto b = static_cast<std::size_t>(rng.below(active.size() - 1));
        if (b >= a) ++b;
        seq.steps.push_back({std::min(active[a], active[b]), std::max(active[a], active[b]), cost});
        cost += 0.5;
        const int merged = k + t;
        std::erase(active, seq.steps.back().left);
        std::erase(active, seq.steps.back().right);
        active.push_back(merged);
    }
    return seq;
}

} // namespace

TEST_CASE("build_hierarchy produces the textbook four-predictor ladder") {
    Hierarchy h = build_hierarchy(merges_of(4, {{1, 2}, {3, 4}, {5, 6}}), 4);
    REQUIRE(h.level_count() == 4);
    REQUIRE(level_sets(h, 1) == std::vector<std::set<int>>{{0, 1, 2, 3}});
    REQUIRE(level_sets(h, 2) == std::vector<std::set<int>>{{0, 1}, {2, 3}});
    REQUIRE(level_sets(h, 3) == std::vector<std::set<int>>{{0, 1}, {2}, {3}});
    REQUIRE(level_sets(h, 4) == std::vector<std::set<int>>{{0}, {1}, {2}, {3}});
}

TEST_CASE("build_hierarchy with two predictors is forced") {
    Hierarchy h = build_hierarchy(merges_of(2, {{1, 2}}), 2);
    REQUIRE(h.level_count() == 2);
    REQUIRE(level_sets(h, 1) == std::vector<std::set<int>>{{0, 1}});
    REQUIRE(level_sets(h, 2) == std::vector<std::set<int>>{{0}, {1}});
}

TEST_CASE("random hierarchies are nested partitions with one more cluster per level") {
    Rng rng(51);
    for (int rep = 0; rep < 20; ++rep) {
        const int k = 5;
        Hierarchy h = build_hierarchy(random_merges(rng, k), k);
        REQUIRE(h.level_count() == k);
        int node_count = 0;
        for (int ell = 1; ell <= k; ++ell) {
            const auto part = level_sets(h, ell);
            REQUIRE(static_cast<int>(part.size()) == ell);
            node_count += static_cast<int>(part.size());
            // partition of all k indices
            std::set<int> all;
            for (const auto& c : part) all.insert(c.begin(), c.end());
            REQUIRE(static_cast<int>(all.size()) == k);
            // refinement: every cluster at ell+1 lies inside one at ell
            if (ell < k) {
                for (const auto& child : level_sets(h, ell + 1)) {
                    bool contained = false;
                    for (const auto& parent : part) {
                        if (std::includes(parent.begin(), parent.end(), child.begin(), child.end()))
                            contained = true;
                    }
                    REQUIRE(contained);
                }
            }
        }
        REQUIRE(node_count == k * (k + 1) / 2);
    }
}

TEST_CASE("build_hierarchy validates the merge sequence") {
    REQUIRE_THROWS_AS(build_hierarchy(merges_of(4, {{1, 2}}), 4), ValidationError);
    REQUIRE_THROWS_AS(build_hierarchy(merges_of(3, {{1, 2}, {1, 4}}), 3), ValidationError);
}

TEST_CASE("sign adjustment keeps singletons and positive bundles at +1") {
    Hierarchy h = build_hierarchy(merges_of(3, {{1, 2}, {3, 4}}), 3);
    Matrix rho = Matrix::Constant(3, 3, 0.8);
    rho.diagonal().setOnes();
    Hierarchy signed_h = apply_sign_adjustment(h, rho);
    for (int ell = 1; ell <= 3; ++ell)
        for (const auto& c : signed_h.level(ell).clusters)
            for (int s : c.signs) REQUIRE(s == 1);
}

TEST_CASE("sign adjustment mirrors exactly one member of an anticorrelated pair") {
    Hierarchy h = build_hierarchy(merges_of(2, {{1, 2}}), 2);
    Matrix rho(2, 2);
    rho << 1.0, -0.9, -0.9, 1.0;
    Hierarchy signed_h = apply_sign_adjustment(h, rho);
    const auto& root = signed_h.level(1).clusters[0];
    REQUIRE(root.signs[0] * root.signs[1] == -1);
    // leaves stay positive
    for (const auto& c : signed_h.level(2).clusters) REQUIRE(c.signs[0] == 1);
}

TEST_CASE("sign adjustment changes signs only, never membership") {
    Rng rng(53);
    Hierarchy h = build_hierarchy(random_merges(rng, 6), 6);
    Matrix x = testutil::random_correlated(rng, 40, 6);
    Matrix rho = correlation_matrix(x);
    Hierarchy signed_h = apply_sign_adjustment(h, rho);
    for (int ell = 1; ell <= 6; ++ell) {
        const auto& a = h.level(ell).clusters;
        const auto& b = signed_h.level(ell).clusters;
        REQUIRE(a.size() == b.size());
        for (std::size_t c = 0; c < a.size(); ++c) REQUIRE(a[c].members == b[c].members);
    }
    // leaf-level signed summing matrix has exactly one +-1 per row
    Matrix s = level_summing_matrix(signed_h, 6);
    for (int r = 0; r < s.rows(); ++r) {
        REQUIRE(s.row(r).array().abs().sum() == 1.0);
    }
}

TEST_CASE("level_features: leaves reproduce X, the root sums rows, signs subtract") {
    Rng rng(59);
    Matrix x = testutil::random_matrix(rng, 7, 3);
    Hierarchy h = build_hierarchy(merges_of(3, {{1, 2}, {3, 4}}), 3);

    REQUIRE(level_features(x, h, 3).isApprox(x, 1e-14));
    Matrix root = level_features(x, h, 1);
    REQUIRE(root.cols() == 1);
    REQUIRE(root.col(0).isApprox(x.rowwise().sum(), 1e-14));

    Hierarchy flipped = h;
    flipped.levels[2].clusters[0].signs = {1};          // leaf singletons
    flipped.levels[1].clusters[0].signs = {1, -1};      // cluster {0,1} signed (+, -)
    Matrix z = level_features(x, flipped, 2);
    REQUIRE(z.col(0).isApprox(x.col(0) - x.col(1), 1e-14));
}

TEST_CASE("prune_levels keeps only estimable levels") {
    Rng rng(61);
    Hierarchy h10 = build_hierarchy(random_merges(rng, 10), 10);
    Hierarchy pruned = prune_levels(h10, 8, 1);
    REQUIRE(pruned.level_count() == 6);
    for (int ell = 1; ell <= pruned.level_count(); ++ell)
        REQUIRE(static_cast<int>(pruned.level(ell).clusters.size()) == ell);

    Hierarchy h4 = build_hierarchy(random_merges(rng, 4), 4);
    REQUIRE(prune_levels(h4, 100, 1).level_count() == 4);

    Hierarchy h5 = build_hierarchy(random_merges(rng, 5), 5);
    REQUIRE(prune_levels(h5, 5, 1).level_count() == 3);

    REQUIRE_THROWS_AS(prune_levels(h5, 2, 1), ValidationError);
}
