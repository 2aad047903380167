// Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any
// criterion fails.

#include <flexparse/eval.hpp>
#include <flexparse/gdt.hpp>
#include <flexparse/infer.hpp>
#include <flexparse/learn.hpp>
#include <flexparse/model_io.hpp>
#include <flexparse/oracle.hpp>
#include <flexparse/pose_io.hpp>
#include <flexparse/scoremap.hpp>
#include <flexparse/synth.hpp>

#include "support/naive.hpp"
#include "support/random_instance.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

using namespace flexparse;
using flexparse::testing::chain;
using flexparse::testing::naive_dt2d;
using flexparse::testing::random_params;
using flexparse::testing::random_scoremaps;
using flexparse::testing::random_terms;
using flexparse::testing::random_tree;

namespace {

namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

/// Collects failed checks of one criterion and a one-line summary.
struct Outcome {
    std::vector<std::string> failures;
    std::string summary;

    void check(bool ok, const std::string& what) {
        if (!ok) failures.push_back(what);
    }
    bool passed() const { return failures.empty(); }
};

std::string fmt(const char* f, double a) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, a);
    return buf;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), {}};
}

// ------------------------------------------------------------- criteria --

Outcome oracle_equivalence() {
    Outcome o;
    const auto t0 = Clock::now();
    const auto r = oracle::check_equivalence(2024, 200);
    const double t = seconds_since(t0);
    o.check(r.trials >= 200, "fewer than 200 instances");
    o.check(r.matched == r.trials, std::to_string(r.trials - r.matched) + " instances disagree");
    for (const auto& f : r.failures) o.failures.push_back(f);
    o.check(t < 120.0, "runtime " + fmt("%.1f s", t) + " exceeds 2 min");
    o.summary = std::to_string(r.matched) + "/" + std::to_string(r.trials) + " matched, worst gap " +
                fmt("%.2e", r.worst_gap) + ", " + fmt("%.1f s", t);
    return o;
}

Outcome composition_counting() {
    Outcome o;
    for (int n = 1; n <= 12; ++n) {
        const auto c = oracle::count_compositions(chain(n));
        o.check(c == static_cast<std::uint64_t>(n * (n + 1) / 2), "chain " + std::to_string(n) + " counts " + std::to_string(c));
    }
    std::mt19937_64 rng(12);
    for (int trial = 0; trial < 100; ++trial) {
        const PartGraph g = random_tree(rng, 1 + trial % 12);
        const auto n = oracle::enumerate_compositions(g).size();
        o.check(n == oracle::count_compositions(g), "tree " + std::to_string(trial) + ": enumeration length differs from count");
    }
    o.summary = "chains 1..12 and 100 random trees";
    return o;
}

Outcome message_economy() {
    Outcome o;
    std::mt19937_64 rng(3);
    for (int K = 1; K <= 15; ++K) {
        const PartGraph g = random_tree(rng, K);
        const TermGrids t = random_terms(rng, g, 5, 4);
        const auto table = two_pass_messages(t, random_params(rng, g), g);
        o.check(table.message_count == static_cast<std::size_t>(2 * (K - 1)),
                "K=" + std::to_string(K) + " sent " + std::to_string(table.message_count) + " messages");
    }

    const Model m = gen_model(15, 15, 8);
    const TermGrids t = random_terms(rng, m.graph, 80, 60);
    InferenceOptions flexible, single;
    single.flexible = false;
    auto time_once = [&](const InferenceOptions& opt) {
        const auto t0 = Clock::now();
        const auto table = two_pass_messages(t, m.params, m.graph, opt);
        const double s = seconds_since(t0);
        if (opt.flexible)
            o.check(table.message_count == 28u, "K=15 sent " + std::to_string(table.message_count) + " messages");
        return s;
    };
    time_once(flexible);  // warm-up
    std::vector<double> tf, ts;
    for (int rep = 0; rep < 5; ++rep) {
        ts.push_back(time_once(single));
        tf.push_back(time_once(flexible));
    }
    std::sort(tf.begin(), tf.end());
    std::sort(ts.begin(), ts.end());
    const double ratio = tf[2] / ts[2];
    o.check(ratio <= 2.5, "flexible/single time ratio " + fmt("%.2f", ratio) + " above 2.5");
    o.summary = "2(K-1) messages for K=1..15; flexible " + fmt("%.3f s", tf[2]) + " vs single " + fmt("%.3f s", ts[2]) +
                " (ratio " + fmt("%.2f", ratio) + ")";
    return o;
}

Outcome gdt_correctness() {
    Outcome o;
    std::mt19937_64 rng(500);
    std::uniform_real_distribution<double> val(-10.0, 10.0), av(-2.0, -0.01), bv(-1.0, 1.0), rv(-3.0, 3.0);
    std::uniform_int_distribution<int> side(1, 16);
    double worst = 0.0;
    for (int trial = 0; trial < 500; ++trial) {
        Grid<double> g(side(rng), side(rng));
        for (double& v : g) v = val(rng);
        const QuadPenalty pen{av(rng), bv(rng), av(rng), bv(rng), rv(rng), rv(rng)};
        const auto fast = dt2d_max(g, pen);
        const auto slow = naive_dt2d(g, pen);
        for (std::size_t i = 0; i < g.size(); ++i) worst = std::max(worst, std::abs(fast.values[i] - slow.values[i]));
    }
    o.check(worst <= 1e-9, "worst gap " + fmt("%.2e", worst));
    o.summary = "500 grids, worst gap " + fmt("%.2e", worst);
    return o;
}

Outcome ablation_ordering() {
    Outcome o;
    const auto t0 = Clock::now();
    const Model m = gen_model(7, 6, 8);
    std::vector<Person> gt;
    std::vector<Detection> det[3];  // base, no IDOD, full
    for (int s = 0; s < 50; ++s) {
        const std::string id = "s" + std::to_string(s);
        const Scene sc = gen_scene(mix_seed(11, static_cast<std::uint64_t>(s)), m, 6, 0.3, {}, id);
        gt.insert(gt.end(), sc.people.begin(), sc.people.end());
        const TermGrids full = compute_terms(sc.maps, m.graph);
        const TermGrids no_idod = without_idod(full);
        DetectOptions opt;
        opt.threshold = -1e18;
        opt.max_detections = 30;
        for (int v = 0; v < 3; ++v) {
            opt.flexible = v > 0;
            for (const auto& e : detect(v == 2 ? full : no_idod, m.params, m.graph, opt))
                det[v].push_back(to_detection(id, e, m.graph));
        }
    }
    const auto sticks = sticks_from_graph(m.graph);
    EvalReport r[3];
    for (int v = 0; v < 3; ++v) r[v] = evaluate(gt, det[v], sticks);
    const double t = seconds_since(t0);
    const char* names[3] = {"base", "FC", "FC+IDOD"};
    for (int v = 0; v < 2; ++v) {
        o.check(r[v + 1].mpcp - r[v].mpcp >= 2.0, std::string("mPCP gap ") + names[v] + " -> " + names[v + 1] + " below 2");
        o.check(r[v + 1].aop - r[v].aop >= 2.0, std::string("AOP gap ") + names[v] + " -> " + names[v + 1] + " below 2");
    }
    o.check(t < 600.0, "runtime " + fmt("%.1f s", t) + " exceeds 10 min");
    o.summary = "mPCP " + fmt("%.2f", r[0].mpcp) + " < " + fmt("%.2f", r[1].mpcp) + " < " + fmt("%.2f", r[2].mpcp) +
                ", AOP " + fmt("%.2f", r[0].aop) + " < " + fmt("%.2f", r[1].aop) + " < " + fmt("%.2f", r[2].aop) + ", " +
                fmt("%.1f s", t);
    return o;
}

Outcome learning_sanity() {
    Outcome o;
    const auto t0 = Clock::now();

    // Score linearity.
    std::mt19937_64 rng(21);
    double worst = 0.0;
    for (int n = 0; n < 100; ++n) {
        const PartGraph g = random_tree(rng, 2 + n % 7, 1, 3);
        const ModelParams p = random_params(rng, g);
        const TermGrids t = random_terms(rng, g, 9, 7);
        const ParameterLayout layout(g);
        MeanOffsets off;
        for (const auto& d : p.directed) off.push_back(d.mean_offsets);
        const auto pose = random_pose(g, off, 9, 7, rng, 0.6, 3);
        worst = std::max(worst, std::abs(build_feature_vector(pose, t, g, layout, off).dot(layout.pack(p)) -
                                         score_composition(pose, t, p, g)));
    }
    o.check(worst <= 1e-6, "linearity gap " + fmt("%.2e", worst));

    // Separable toy set.
    std::uniform_real_distribution<double> u(-3, 3);
    std::vector<LabeledVector> toy;
    while (toy.size() < 80) {
        const double a = u(rng), b = u(rng), s = a + 2 * b;
        if (std::abs(s) < 1.0) continue;
        SparseVector x;
        x.add(0, a);
        x.add(1, b);
        toy.push_back({x, s > 0 ? 1 : -1});
    }
    SvmOptions so;
    so.C = 10.0;
    so.epochs = 200;
    const auto svm = train_svm(toy, 2, so);
    const double hinge = hinge_loss(toy, svm.weights, svm.bias);
    o.check(hinge == 0.0, "toy hinge loss " + fmt("%.3g", hinge));

    // k-means objective.
    std::uniform_real_distribution<double> w(-10, 10);
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<Offset> pts(80);
        for (auto& p : pts) p = {w(rng), w(rng)};
        const auto km = kmeans(pts, 1 + trial % 8, static_cast<std::uint64_t>(trial));
        for (std::size_t i = 1; i < km.objective.size(); ++i)
            o.check(km.objective[i] <= km.objective[i - 1] + 1e-9, "k-means objective rose in trial " + std::to_string(trial));
    }

    // Trained model against random weights on held-out scenes.
    const Model m = gen_model(3, 6, 4);
    std::vector<Person> people;
    std::vector<std::size_t> scene_of;
    std::vector<TermGrids> scenes, negatives;
    for (int s = 0; s < 20; ++s) {
        const Scene sc = gen_scene(mix_seed(100, static_cast<std::uint64_t>(s)), m, 6, 0.3, {}, "t" + std::to_string(s));
        for (const auto& p : sc.people) {
            people.push_back(p);
            scene_of.push_back(static_cast<std::size_t>(s));
        }
        scenes.push_back(compute_terms(sc.maps, m.graph));
    }
    for (int s = 0; s < 10; ++s)
        negatives.push_back(compute_terms(gen_scene(mix_seed(200, static_cast<std::uint64_t>(s)), m, 0, 0.3).maps, m.graph));
    TrainOptions to;
    to.seed = 5;
    const ModelParams learned = train_model(m.graph, people, scene_of, scenes, negatives, to);
    const ModelParams random = random_weight_params(m.graph, 9);

    std::vector<Person> gt;
    std::vector<Detection> dl, dr;
    DetectOptions d;
    d.threshold = -1e18;
    d.max_detections = 30;
    for (int s = 0; s < 20; ++s) {
        const std::string id = "h" + std::to_string(s);
        const Scene sc = gen_scene(mix_seed(300, static_cast<std::uint64_t>(s)), m, 6, 0.3, {}, id);
        gt.insert(gt.end(), sc.people.begin(), sc.people.end());
        const TermGrids t = compute_terms(sc.maps, m.graph);
        for (const auto& e : detect(t, learned, m.graph, d)) dl.push_back(to_detection(id, e, m.graph));
        for (const auto& e : detect(t, random, m.graph, d)) dr.push_back(to_detection(id, e, m.graph));
    }
    const auto sticks = sticks_from_graph(m.graph);
    const double ml = evaluate(gt, dl, sticks).mpcp, mr = evaluate(gt, dr, sticks).mpcp;
    o.check(ml - mr >= 10.0, "trained " + fmt("%.2f", ml) + " vs random " + fmt("%.2f", mr) + " mPCP");
    o.summary = "linearity " + fmt("%.1e", worst) + ", toy hinge " + fmt("%g", hinge) + ", trained " + fmt("%.2f", ml) +
                " vs random " + fmt("%.2f", mr) + " mPCP, " + fmt("%.1f s", seconds_since(t0));
    return o;
}

Outcome metric_suite() {
    Outcome o;
    o.check(pcp_stick(Segment{{0, 0}, {10, 0}}, Segment{{0, 1}, {10, 1}}), "distance 1 stick not correct");
    o.check(!pcp_stick(std::nullopt, Segment{{3, 4}, {20, 9}}), "occluded ground truth accepted a visible stick");
    o.check(!pcp_stick(Segment{{0, 0}, {10, 0}}, Segment{{0, 3}, {10, 8}}), "distance 5.5 stick counted correct");

    const StickMap sticks{{"a", 1, 2}, {"b", 3, 4}, {"c", 5, 6}};
    auto body = [](int x, int y) {
        return Joints{Location{x, y}, Location{x + 10, y}, Location{x, y + 10}, Location{x + 10, y + 10},
                      Location{x, y + 20}, Location{x + 10, y + 20}};
    };
    const std::vector<Person> gt{{"x", body(0, 0)}, {"x", body(40, 0)}, {"y", body(5, 5)}};
    std::vector<Detection> same;
    for (const auto& p : gt) same.push_back({p.image_id, 1.0, 1, p.joints, {}});
    const auto perfect = evaluate(gt, same, sticks);
    o.check(perfect.mpcp == 100.0 && perfect.aop == 100.0, "identical detections do not give 100/100");
    for (double v : perfect.pcp) o.check(v == 100.0, "per-part PCP below 100 for identical detections");

    Joints hidden = body(0, 0);
    hidden[2].reset();
    const auto two_thirds = evaluate({{"x", body(0, 0)}}, {{"x", 1.0, 1, hidden, {}}}, sticks);
    o.check(std::abs(two_thirds.aop - 200.0 / 3.0) < 1e-12, "visibility (1,0,1) vs (1,1,1) gives AOP " + fmt("%.4f", two_thirds.aop));

    std::mt19937_64 rng(7);
    std::uniform_int_distribution<int> jitter(-4, 4), score(0, 3);
    std::bernoulli_distribution hide(0.2);
    std::vector<Person> crowd;
    std::vector<Detection> dets;
    for (int i = 0; i < 12; ++i) {
        const std::string image = i % 2 ? "odd" : "even";
        crowd.push_back({image, body(30 * i, 0)});
        for (int k = 0; k < 3; ++k) {
            Joints j = body(30 * i + jitter(rng), jitter(rng));
            for (auto& l : j)
                if (hide(rng)) l.reset();
            dets.push_back({image, static_cast<double>(score(rng)), 1, j, {}});
        }
    }
    const auto base = evaluate(crowd, dets, sticks);
    for (int trial = 0; trial < 20; ++trial) {
        std::shuffle(dets.begin(), dets.end(), rng);
        const auto r = evaluate(crowd, dets, sticks);
        o.check(r.pcp == base.pcp && r.aop == base.aop, "permutation " + std::to_string(trial) + " changed the metrics");
    }
    o.summary = "trivial examples and 20 permutations";
    return o;
}

Outcome format_round_trips() {
    Outcome o;
    const fs::path dir = fs::temp_directory_path() / "flexparse_acceptance";
    fs::remove_all(dir);
    fs::create_directories(dir);
    std::mt19937_64 rng(8);
    for (int trial = 0; trial < 10; ++trial) {
        Model m;
        m.graph = random_tree(rng, 1 + trial, 1, 4);
        m.params = random_params(rng, m.graph);
        save_model(dir / "a.json", m);
        save_model(dir / "b.json", load_model(dir / "a.json"));
        o.check(slurp(dir / "a.json") == slurp(dir / "b.json"), "model " + std::to_string(trial) + " changed on reload");

        const ScoreMapSet maps = random_scoremaps(rng, m.graph, 3 + trial, 2 + trial % 4);
        save_scoremaps(dir / "first", maps);
        save_scoremaps(dir / "second", load_scoremaps(dir / "first", m.graph));
        for (const char* f : {"meta.json", "probs.bin"})
            o.check(slurp(dir / "first" / f) == slurp(dir / "second" / f),
                    std::string(f) + " of container " + std::to_string(trial) + " changed on reload");
    }
    fs::remove_all(dir);
    o.summary = "10 models and 10 score-map containers";
    return o;
}

} // namespace

int main() {
    const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria{
        {"oracle equivalence", oracle_equivalence},
        {"composition counting", composition_counting},
        {"message economy and complexity", message_economy},
        {"distance transform correctness", gdt_correctness},
        {"ablation ordering", ablation_ordering},
        {"learning sanity", learning_sanity},
        {"metric suite", metric_suite},
        {"format round trips", format_round_trips},
    };
    int failed = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        Outcome o;
        try {
            o = criteria[i].second();
        } catch (const std::exception& e) {
            o.failures.push_back(std::string("exception: ") + e.what());
        }
        std::printf("%s %zu %s: %s\n", o.passed() ? "PASS" : "FAIL", i + 1, criteria[i].first, o.summary.c_str());
        for (const auto& f : o.failures) std::printf("    %s\n", f.c_str());
        std::fflush(stdout);
        failed += !o.passed();
    }
    std::printf("%d/%zu criteria passed\n", static_cast<int>(criteria.size()) - failed, criteria.size());
    return failed == 0 ? 0 : 1;
}
