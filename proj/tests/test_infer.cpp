#include <flexparse/infer.hpp>
#include <flexparse/oracle.hpp>

#include "support/random_instance.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <random>

using namespace flexparse;
using flexparse::oracle::global_best;
using flexparse::testing::chain;
using flexparse::testing::random_params;
using flexparse::testing::random_terms;
using flexparse::testing::random_tree;

namespace {

PoseEstimate blank_estimate(const PartGraph& g) {
    PoseEstimate e;
    e.locations.assign(static_cast<std::size_t>(g.num_parts()), std::nullopt);
    e.types.assign(static_cast<std::size_t>(g.num_directed()), -1);
    return e;
}

// Term-by-term re-implementation of the composition score: loops over
// directed edges and classifies each one, rather than walking the
// composition's edge lists.
double reference_score(const PoseEstimate& est, const TermGrids& terms, const ModelParams& p, const PartGraph& g) {
    double s = 0.0;
    auto at = [&](PartId q) { return terms.index(*est.location(q)); };
    for (PartId q = 1; q <= g.num_parts(); ++q)
        if (est.location(q)) s += p.appearance_weights[q - 1] * terms.appearance[q - 1][at(q)];
    for (int d = 0; d < g.num_directed(); ++d) {
        const auto [i, j] = g.directed(d);
        const bool vi = est.location(i).has_value(), vj = est.location(j).has_value();
        const auto& dp = p.directed[d];
        if (vi && vj) {
            const int t = est.types[d];
            const Location a = *est.location(i), b = *est.location(j);
            const double dx = b.x - a.x - dp.mean_offsets[t].dx, dy = b.y - a.y - dp.mean_offsets[t].dy;
            s += dp.deformation[t][0] * dx + dp.deformation[t][1] * dx * dx + dp.deformation[t][2] * dy +
                 dp.deformation[t][3] * dy * dy;
            s += dp.idpr_weight * terms.idpr[d][t][at(i)];
        } else if (vi) {
            for (PartId r : g.subtree(i, j)) s += p.part_biases[r - 1];
            s += dp.idpr_weight * terms.idod[d][at(i)];
        }
    }
    return s;
}


} // namespace

TEST(ScoreComposition, SinglePart) {
    std::mt19937_64 rng(1);
    const PartGraph g = chain(3, 2);
    const ModelParams p = random_params(rng, g);
    const TermGrids t = random_terms(rng, g, 4, 3);
    PoseEstimate e = blank_estimate(g);
    e.composition = make_composition(g, {2});
    e.locations[1] = Location{1, 2};
    const std::size_t l = t.index({1, 2});
    double expected = p.appearance_weights[1] * t.appearance[1][l];
    for (PartId j : {1, 3}) {
        const int d = g.directed_index(2, j);
        expected += p.part_biases[j - 1] + p.directed[d].idpr_weight * t.idod[d][l];
    }
    EXPECT_NEAR(score_composition(e, t, p, g), expected, 1e-12);
}

TEST(ScoreComposition, FullGraphIgnoresBiasesAndIdod) {
    std::mt19937_64 rng(2);
    const PartGraph g = chain(3, 2);
    ModelParams p = random_params(rng, g);
    TermGrids t = random_terms(rng, g, 4, 4);
    PoseEstimate e = blank_estimate(g);
    e.composition = make_composition(g, {1, 2, 3});
    e.locations = {Location{0, 0}, Location{1, 1}, Location{3, 2}};
    e.types = {0, 1, 1, 0};
    const double before = score_composition(e, t, p, g);
    for (double& b : p.part_biases) b += 7.0;
    for (auto& grid : t.idod) for (double& v : grid) v -= 3.0;
    EXPECT_DOUBLE_EQ(score_composition(e, t, p, g), before);
}

TEST(ScoreComposition, MatchesReferenceOnRandomInstances) {
    std::mt19937_64 rng(3);
    for (int trial = 0; trial < 200; ++trial) {
        const PartGraph g = random_tree(rng, 4);
        const ModelParams p = random_params(rng, g);
        const TermGrids t = random_terms(rng, g, 5, 5);
        const auto comps = oracle::enumerate_compositions(g);
        PoseEstimate e = blank_estimate(g);
        e.composition = comps[rng() % comps.size()];
        std::uniform_int_distribution<int> coord(0, 4);
        for (PartId q : e.composition.visible) e.locations[q - 1] = Location{coord(rng), coord(rng)};
        for (int edge : e.composition.edges)
            for (int d : {2 * edge, 2 * edge + 1}) e.types[d] = static_cast<int>(rng() % g.type_count(d));
        ASSERT_NEAR(score_composition(e, t, p, g), reference_score(e, t, p, g), 1e-9);
    }
}

TEST(ScoreComposition, RejectsBadEstimates) {
    std::mt19937_64 rng(4);
    const PartGraph g = chain(2, 2);
    const ModelParams p = random_params(rng, g);
    const TermGrids t = random_terms(rng, g, 3, 3);
    PoseEstimate e = blank_estimate(g);
    e.composition = make_composition(g, {1, 2});
    e.locations = {Location{0, 0}, Location{3, 0}};
    e.types = {0, 0};
    EXPECT_THROW(score_composition(e, t, p, g), Error);
    e.locations[1] = Location{2, 2};
    e.types[1] = 2;
    EXPECT_THROW(score_composition(e, t, p, g), Error);
}

TEST(TwoPass, TwoPartsAgainstEnumeration) {
    std::mt19937_64 rng(5);
    const PartGraph g = chain(2, 1);
    const ModelParams p = random_params(rng, g);
    const TermGrids t = random_terms(rng, g, 3, 3);
    const MessageTable table = two_pass_messages(t, p, g);
    for (std::size_t l1 = 0; l1 < 9; ++l1) {
        const Location a{static_cast<int>(l1 % 3), static_cast<int>(l1 / 3)};
        // Composition {1}: appearance plus cut edge (1,2).
        double best = p.appearance_weights[0] * t.appearance[0][l1] + p.part_biases[1] +
                      p.directed[0].idpr_weight * t.idod[0][l1];
        // Composition {1,2}: every location of part 2.
        for (std::size_t l2 = 0; l2 < 9; ++l2) {
            const Location b{static_cast<int>(l2 % 3), static_cast<int>(l2 / 3)};
            double s = p.appearance_weights[0] * t.appearance[0][l1] + p.appearance_weights[1] * t.appearance[1][l2];
            s += deformation_score(p.directed[0].deformation[0], p.directed[0].mean_offsets[0], a, b) +
                 p.directed[0].idpr_weight * t.idpr[0][0][l1];
            s += deformation_score(p.directed[1].deformation[0], p.directed[1].mean_offsets[0], b, a) +
                 p.directed[1].idpr_weight * t.idpr[1][0][l2];
            best = std::max(best, s);
        }
        EXPECT_NEAR(table.root_scores[0][l1], best, 1e-9);
    }
}

TEST(TwoPass, EachDirectedMessageComputedOnce) {
    std::mt19937_64 rng(6);
    for (int K = 1; K <= 9; ++K) {
        const PartGraph g = random_tree(rng, K);
        const ModelParams p = random_params(rng, g);
        const TermGrids t = random_terms(rng, g, 4, 3);
        for (PartId root = 1; root <= K; ++root) {
            InferenceOptions opt;
            opt.root = root;
            const MessageTable table = two_pass_messages(t, p, g, opt);
            EXPECT_EQ(table.message_count, static_cast<std::size_t>(2 * (K - 1)));
            for (int c : table.computations) EXPECT_EQ(c, 1);
        }
        InferenceOptions single;
        single.flexible = false;
        EXPECT_EQ(two_pass_messages(t, p, g, single).message_count, static_cast<std::size_t>(K - 1));
    }
}

TEST(TwoPass, RootScoresAgreeAcrossRootings) {
    std::mt19937_64 rng(7);
    const PartGraph g = random_tree(rng, 6);
    const ModelParams p = random_params(rng, g);
    const TermGrids t = random_terms(rng, g, 5, 4);
    const MessageTable a = two_pass_messages(t, p, g);
    InferenceOptions opt;
    opt.root = 4;
    const MessageTable b = two_pass_messages(t, p, g, opt);
    for (PartId q = 1; q <= 6; ++q)
        for (std::size_t l = 0; l < t.num_locations(); ++l)
            EXPECT_NEAR(a.root_scores[q - 1][l], b.root_scores[q - 1][l], 1e-9);
}

// For each of the 10 compositions of a 4-chain, evidence that favors exactly
// that composition must make it the DP's global best.
TEST(TwoPass, ChainOfFourRepresentsAllTenCompositions) {
    const PartGraph g = chain(4, 1);
    const auto comps = oracle::enumerate_compositions(g);
    ASSERT_EQ(comps.size(), 10u);
    std::set<std::vector<PartId>> found;
    for (const auto& c : comps) {
        ModelParams p;
        p.appearance_weights.assign(4, 1.0);
        p.part_biases.assign(4, 0.0);
        for (int d = 0; d < g.num_directed(); ++d)
            p.directed.push_back({1.0, {{0.0, -0.1, 0.0, -0.1}}, {{1.0, 0.0}}});
        TermGrids t = TermGrids::zeros(g, 6, 1);
        for (PartId q = 1; q <= 4; ++q)
            for (std::size_t l = 0; l < 6; ++l) t.appearance[q - 1][l] = c.contains(q) ? 1.0 : -10.0;
        const MessageTable table = two_pass_messages(t, p, g);
        PartId root = 0;
        Location where{};
        global_best(table, &root, &where);
        found.insert(backtrack(table, g, root, where).composition.visible);
    }
    EXPECT_EQ(found.size(), 10u);
}

TEST(Backtrack, EverythingDecoupled) {
    std::mt19937_64 rng(8);
    const PartGraph g = random_tree(rng, 5);
    ModelParams p = random_params(rng, g);
    for (double& b : p.part_biases) b = 1e3;
    const TermGrids t = random_terms(rng, g, 4, 4);
    const MessageTable table = two_pass_messages(t, p, g);
    for (PartId r = 1; r <= 5; ++r) {
        const PoseEstimate e = backtrack(table, g, r, {1, 2});
        EXPECT_EQ(e.composition.visible, std::vector<PartId>{r});
    }
}

TEST(Backtrack, NothingDecoupled) {
    std::mt19937_64 rng(9);
    const PartGraph g = random_tree(rng, 5);
    ModelParams p = random_params(rng, g);
    for (double& b : p.part_biases) b = -1e3;
    const TermGrids t = random_terms(rng, g, 4, 4);
    const MessageTable table = two_pass_messages(t, p, g);
    const PoseEstimate e = backtrack(table, g, 3, {0, 0});
    EXPECT_EQ(e.num_visible(), 5u);
    for (PartId q = 1; q <= 5; ++q) EXPECT_TRUE(e.location(q).has_value());
}

TEST(Backtrack, EstimatesRescoreToRootScore) {
    std::mt19937_64 rng(10);
    for (int trial = 0; trial < 50; ++trial) {
        const PartGraph g = random_tree(rng, 2 + trial % 5);
        const ModelParams p = random_params(rng, g);
        const TermGrids t = random_terms(rng, g, 5, 4);
        for (bool flexible : {true, false}) {
            InferenceOptions opt;
            opt.flexible = flexible;
            const MessageTable table = two_pass_messages(t, p, g, opt);
            for (PartId r = 1; r <= g.num_parts(); ++r) {
                if (!table.has_root_scores(r)) continue;
                for (std::size_t l = 0; l < t.num_locations(); l += 3) {
                    const Location at{static_cast<int>(l % 5), static_cast<int>(l / 5)};
                    const PoseEstimate e = backtrack(table, g, r, at);
                    ASSERT_NEAR(score_composition(e, t, p, g), e.score, 1e-6);
                    ASSERT_EQ(e.score, table.root_scores[r - 1][l]);
                    if (!flexible) ASSERT_EQ(e.num_visible(), static_cast<std::size_t>(g.num_parts()));
                }
            }
        }
    }
}

TEST(Backtrack, MatchesOracleBest) {
    std::mt19937_64 rng(11);
    for (int trial = 0; trial < 30; ++trial) {
        const PartGraph g = random_tree(rng, 2 + trial % 3);
        const ModelParams p = random_params(rng, g);
        const TermGrids t = random_terms(rng, g, 3, 3);
        const MessageTable table = two_pass_messages(t, p, g);
        PartId root = 0;
        Location where{};
        const double best = global_best(table, &root, &where);
        const auto oracle_best = oracle::brute_force_best(t, p, g);
        ASSERT_NEAR(best, oracle_best.score, 1e-6);
        ASSERT_NEAR(score_composition(backtrack(table, g, root, where), t, p, g), oracle_best.score, 1e-6);
    }
}

TEST(Nms, IdenticalCandidatesCollapse) {
    const PartGraph g = chain(2, 1);
    PoseEstimate e = blank_estimate(g);
    e.composition = make_composition(g, {1, 2});
    e.locations = {Location{3, 3}, Location{4, 3}};
    e.types = {0, 0};
    e.root = 1;
    e.score = 2.0;
    PoseEstimate f = e;
    f.root = 2;
    const auto kept = part_nms({e, f}, 0.6, 2.0);
    ASSERT_EQ(kept.size(), 1u);
    EXPECT_EQ(kept[0].root, 1);
}

TEST(Nms, DisjointPartsNeverSuppress) {
    const PartGraph g = chain(2, 1);
    PoseEstimate a = blank_estimate(g), b = blank_estimate(g);
    a.composition = make_composition(g, {1});
    a.locations[0] = Location{3, 3};
    b.composition = make_composition(g, {2});
    b.locations[1] = Location{3, 3};
    a.root = 1;
    b.root = 2;
    EXPECT_EQ(part_nms({a, b}, 0.6, 4.0).size(), 2u);
}

TEST(Nms, OrderIndependent) {
    std::mt19937_64 rng(12);
    const PartGraph g = random_tree(rng, 4);
    const ModelParams p = random_params(rng, g);
    const TermGrids t = random_terms(rng, g, 8, 6);
    const MessageTable table = two_pass_messages(t, p, g);
    std::vector<PoseEstimate> cands;
    for (PartId r = 1; r <= 4; ++r)
        for (int y = 0; y < 6; y += 2)
            for (int x = 0; x < 8; x += 2) cands.push_back(backtrack(table, g, r, {x, y}));
    const auto ref = part_nms(cands, 0.6, 2.0);
    for (int rep = 0; rep < 5; ++rep) {
        std::shuffle(cands.begin(), cands.end(), rng);
        const auto again = part_nms(cands, 0.6, 2.0);
        ASSERT_EQ(again.size(), ref.size());
        for (std::size_t i = 0; i < ref.size(); ++i) {
            EXPECT_EQ(again[i].root, ref[i].root);
            EXPECT_EQ(again[i].locations, ref[i].locations);
        }
    }
}

TEST(Detect, DefaultsAndPreconditions) {
    EXPECT_DOUBLE_EQ(DetectOptions{}.nms_iou, 0.6);
    EXPECT_EQ(DetectOptions{}.min_parts, 1);
    std::mt19937_64 rng(13);
    const PartGraph g = chain(3, 1);
    const ModelParams p = random_params(rng, g);
    const TermGrids t = random_terms(rng, g, 4, 4);
    DetectOptions bad;
    bad.nms_iou = 0.0;
    EXPECT_THROW(detect(t, p, g, bad), Error);
    bad.nms_iou = 0.6;
    bad.min_parts = 0;
    EXPECT_THROW(detect(t, p, g, bad), Error);
}

TEST(Detect, MinPartsAndThreshold) {
    std::mt19937_64 rng(14);
    const PartGraph g = random_tree(rng, 5);
    const ModelParams p = random_params(rng, g);
    const TermGrids t = random_terms(rng, g, 10, 8);
    DetectOptions opt;
    opt.threshold = -1e9;
    opt.min_parts = 3;
    const auto dets = detect(t, p, g, opt);
    ASSERT_FALSE(dets.empty());
    for (std::size_t i = 0; i < dets.size(); ++i) {
        EXPECT_GE(dets[i].num_visible(), 3u);
        if (i) EXPECT_LE(dets[i].score, dets[i - 1].score);
        for (std::size_t j = 0; j < i; ++j) EXPECT_FALSE(parts_overlap(dets[i], dets[j], 1.0, 0.6));
    }
    opt.threshold = dets.front().score + p.svm_bias;
    EXPECT_TRUE(detect(t, p, g, opt).empty());
}
