#include <flexparse/infer.hpp>
#include <flexparse/oracle.hpp>

#include "support/random_instance.hpp"

#include <gtest/gtest.h>

#include <random>
#include <set>

using namespace flexparse;
using flexparse::testing::chain;
using flexparse::testing::random_params;
using flexparse::testing::random_terms;
using flexparse::testing::random_tree;
using flexparse::testing::star;

namespace {

// Connected subsets by filtering all 2^K subsets with a plain flood fill.
std::set<std::vector<PartId>> subsets_by_filtering(const PartGraph& g) {
    std::set<std::vector<PartId>> out;
    const int K = g.num_parts();
    for (unsigned mask = 1; mask < (1u << K); ++mask) {
        std::vector<PartId> s;
        for (int b = 0; b < K; ++b)
            if (mask & (1u << b)) s.push_back(b + 1);
        std::vector<PartId> stack{s.front()};
        unsigned seen = 1u << (s.front() - 1);
        while (!stack.empty()) {
            const PartId p = stack.back();
            stack.pop_back();
            for (const Edge& e : g.edges()) {
                const PartId q = e.i == p ? e.j : e.j == p ? e.i : 0;
                if (q && (mask & (1u << (q - 1))) && !(seen & (1u << (q - 1)))) {
                    seen |= 1u << (q - 1);
                    stack.push_back(q);
                }
            }
        }
        if (seen == mask) out.insert(s);
    }
    return out;
}

} // namespace

TEST(Enumerate, Chain3HasSix) { EXPECT_EQ(oracle::enumerate_compositions(chain(3)).size(), 6u); }

TEST(Enumerate, SingleNode) {
    const auto c = oracle::enumerate_compositions(PartGraph::create(1, {}));
    ASSERT_EQ(c.size(), 1u);
    EXPECT_TRUE(c[0].edges.empty());
    EXPECT_TRUE(c[0].decoupled.empty());
}

TEST(Enumerate, StarWithThreeLeaves) {
    const PartGraph g = star(3);
    EXPECT_EQ(subsets_by_filtering(g).size(), 11u);
    EXPECT_EQ(oracle::enumerate_compositions(g).size(), 11u);
    EXPECT_EQ(oracle::count_compositions(g), 11u);
}

TEST(Enumerate, DecoupledEdgesFollowDefinition) {
    const PartGraph g = star(3);
    for (const auto& c : oracle::enumerate_compositions(g)) {
        std::set<std::pair<PartId, PartId>> expected, got;
        for (const Edge& e : g.edges()) {
            if (c.contains(e.i) && !c.contains(e.j)) expected.insert({e.i, e.j});
            if (c.contains(e.j) && !c.contains(e.i)) expected.insert({e.j, e.i});
        }
        for (int d : c.decoupled) got.insert({g.directed(d).from, g.directed(d).to});
        EXPECT_EQ(got, expected);
    }
}

TEST(Enumerate, MatchesFilteringOnRandomTrees) {
    std::mt19937_64 rng(17);
    for (int trial = 0; trial < 100; ++trial) {
        const PartGraph g = random_tree(rng, 1 + trial % 12);
        const auto comps = oracle::enumerate_compositions(g);
        std::set<std::vector<PartId>> seen;
        for (const auto& c : comps) {
            ASSERT_TRUE(is_connected_subset(g, c.visible));
            ASSERT_TRUE(seen.insert(c.visible).second) << "duplicate composition";
        }
        ASSERT_EQ(seen, subsets_by_filtering(g));
        ASSERT_EQ(oracle::count_compositions(g), comps.size());
    }
}

TEST(Count, ChainFormula) {
    for (int n = 1; n <= 12; ++n) EXPECT_EQ(oracle::count_compositions(chain(n)), static_cast<std::uint64_t>(n * (n + 1) / 2));
    EXPECT_EQ(oracle::count_compositions(chain(10)), 55u);
    EXPECT_EQ(oracle::count_compositions(PartGraph::create(1, {})), 1u);
}

TEST(BruteForce, SinglePartIsBestAppearance) {
    std::mt19937_64 rng(18);
    const PartGraph g = PartGraph::create(1, {});
    const ModelParams p = random_params(rng, g);
    const TermGrids t = random_terms(rng, g, 4, 3);
    double best = -1e300;
    for (double v : t.appearance[0]) best = std::max(best, p.appearance_weights[0] * v);
    EXPECT_DOUBLE_EQ(oracle::brute_force_best(t, p, g).score, best);
}

TEST(BruteForce, TwoPartsFourLocationsByHand) {
    std::mt19937_64 rng(19);
    const PartGraph g = chain(2, 1);
    const ModelParams p = random_params(rng, g);
    const TermGrids t = random_terms(rng, g, 2, 2);
    double best = -1e300;
    auto L = [](std::size_t l) { return Location{static_cast<int>(l % 2), static_cast<int>(l / 2)}; };
    for (std::size_t a = 0; a < 4; ++a) {
        const double a1 = p.appearance_weights[0] * t.appearance[0][a];
        const double a2 = p.appearance_weights[1] * t.appearance[1][a];
        best = std::max(best, a1 + p.part_biases[1] + p.directed[0].idpr_weight * t.idod[0][a]);  // {1}
        best = std::max(best, a2 + p.part_biases[0] + p.directed[1].idpr_weight * t.idod[1][a]);  // {2}
        for (std::size_t b = 0; b < 4; ++b) {  // {1,2}
            const double pair = deformation_score(p.directed[0].deformation[0], p.directed[0].mean_offsets[0], L(a), L(b)) +
                                p.directed[0].idpr_weight * t.idpr[0][0][a] +
                                deformation_score(p.directed[1].deformation[0], p.directed[1].mean_offsets[0], L(b), L(a)) +
                                p.directed[1].idpr_weight * t.idpr[1][0][b];
            best = std::max(best, a1 + p.appearance_weights[1] * t.appearance[1][b] + pair);
        }
    }
    const auto r = oracle::brute_force_best(t, p, g);
    EXPECT_NEAR(r.score, best, 1e-12);
    EXPECT_EQ(r.assignments, 4u + 4u + 16u);
}

TEST(BruteForce, EstimateRescores) {
    std::mt19937_64 rng(20);
    for (int trial = 0; trial < 20; ++trial) {
        const PartGraph g = random_tree(rng, 2 + trial % 4);
        const ModelParams p = random_params(rng, g);
        const TermGrids t = random_terms(rng, g, 3, 2);
        const auto r = oracle::brute_force_best(t, p, g);
        EXPECT_NEAR(score_composition(r.estimate, t, p, g), r.score, 1e-9);
    }
}

TEST(BruteForce, GuardRejectsLargeInstances) {
    std::mt19937_64 rng(21);
    const PartGraph g = chain(6, 2);
    const ModelParams p = random_params(rng, g);
    const TermGrids t = random_terms(rng, g, 7, 7);
    EXPECT_THROW(oracle::brute_force_best(t, p, g), Error);
}
