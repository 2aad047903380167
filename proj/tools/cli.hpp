#ifndef FLEXPARSE_TOOLS_CLI_HPP
#define FLEXPARSE_TOOLS_CLI_HPP

// Command-line front end. `run` takes the arguments after the program name
// and writes to the given streams, so tests can drive it in-process.

#include <flexparse/error.hpp>
#include <flexparse/eval.hpp>
#include <flexparse/infer.hpp>
#include <flexparse/learn.hpp>
#include <flexparse/model_io.hpp>
#include <flexparse/oracle.hpp>
#include <flexparse/parallel.hpp>
#include <flexparse/pose_io.hpp>
#include <flexparse/scoremap.hpp>
#include <flexparse/synth.hpp>

#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <map>
#include <ostream>
#include <string>
#include <vector>

namespace flexparse::cli {

namespace fs = std::filesystem;

enum class LogLevel { error = 0, info = 1, debug = 2 };

inline LogLevel log_level_from_env() {
    const char* v = std::getenv("FLEXPARSE_LOG");
    if (!v || !*v) return LogLevel::error;
    const std::string s(v);
    if (s == "error") return LogLevel::error;
    if (s == "info") return LogLevel::info;
    if (s == "debug") return LogLevel::debug;
    throw Error("invalid_argument", "FLEXPARSE_LOG must be one of error, info, debug; got '" + s + "'");
}

class Log {
public:
    Log(std::ostream& err, LogLevel level) : err_(err), level_(level) {}
    void info(const std::string& msg) const { emit(LogLevel::info, "info", msg); }
    void debug(const std::string& msg) const { emit(LogLevel::debug, "debug", msg); }

private:
    void emit(LogLevel at, const char* tag, const std::string& msg) const {
        if (level_ >= at) err_ << json{{"level", tag}, {"message", msg}}.dump() << "\n";
    }
    std::ostream& err_;
    LogLevel level_;
};

inline std::string padded(std::size_t i, std::size_t n) {
    const std::size_t width = std::max<std::size_t>(3, std::to_string(n > 0 ? n - 1 : 0).size());
    std::string s = std::to_string(i);
    return std::string(width - std::min(width, s.size()), '0') + s;
}

/// A directory holding one container (meta.json at its top) or several,
/// one per subdirectory. Returns (image id, path) sorted by id.
inline std::vector<std::pair<std::string, fs::path>> list_containers(const fs::path& dir) {
    if (!fs::is_directory(dir)) throw Error("io", "score-map directory " + dir.string() + " does not exist");
    std::vector<std::pair<std::string, fs::path>> out;
    if (fs::exists(dir / "meta.json")) {
        out.emplace_back(fs::absolute(dir).lexically_normal().filename().string(), dir);
        if (out.back().first.empty()) out.back().first = fs::absolute(dir).lexically_normal().parent_path().filename().string();
        return out;
    }
    for (const auto& entry : fs::directory_iterator(dir))
        if (entry.is_directory() && fs::exists(entry.path() / "meta.json"))
            out.emplace_back(entry.path().filename().string(), entry.path());
    std::sort(out.begin(), out.end());
    if (out.empty()) throw Error("io", "no score-map containers under " + dir.string());
    return out;
}

inline Model load_valid_model(const fs::path& path) {
    Model m = load_model(path);
    const auto problems = validate_model(m.graph, m.params);
    if (!problems.empty()) {
        std::string msg = path.string() + ":";
        for (const auto& p : problems) msg += " " + p + ";";
        throw Error("invalid_model", msg);
    }
    return m;
}

inline void write_json(const fs::path& path, const json& j) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    detail::write_text_file(path, dump_json(j));
}

// ------------------------------------------------------------ subcommands --

struct SynthArgs {
    std::uint64_t seed = 0;
    int parts = 6;
    int types = 4;
    int people = 6;
    double occlusion = 0.3;
    int scenes = 5;
    int negatives = 3;
    int width = 64;
    int height = 48;
    std::string out;
};

inline void synth_gen(const SynthArgs& a, unsigned threads, const Log& log) {
    if (a.scenes < 0 || a.negatives < 0) throw Error("invalid_argument", "scene counts must be non-negative");
    const Model model = gen_model(mix_seed(a.seed, 0), a.parts, a.types);
    SceneOptions so;
    so.width = a.width;
    so.height = a.height;
    const fs::path out(a.out);
    fs::create_directories(out);
    save_model(out / "model.json", model);
    json sticks = json::array();
    for (const auto& s : sticks_from_graph(model.graph)) sticks.push_back({{"name", s.name}, {"a", s.a}, {"b", s.b}});
    write_json(out / "sticks.json", sticks);

    const auto n_scenes = static_cast<std::size_t>(a.scenes);
    std::vector<std::vector<Person>> people(n_scenes);
    parallel_for(n_scenes, threads, [&](std::size_t i) {
        const std::string id = "s" + padded(i, n_scenes);
        Scene sc = gen_scene(mix_seed(mix_seed(a.seed, 1), i), model, a.people, a.occlusion, so, id);
        save_scoremaps(out / "scenes" / id, sc.maps);
        people[i] = std::move(sc.people);
    });
    const auto n_neg = static_cast<std::size_t>(a.negatives);
    parallel_for(n_neg, threads, [&](std::size_t i) {
        const std::string id = "n" + padded(i, n_neg);
        save_scoremaps(out / "negatives" / id, gen_scene(mix_seed(mix_seed(a.seed, 2), i), model, 0, 0.0, so, id).maps);
    });
    std::vector<Person> all;
    for (auto& p : people) all.insert(all.end(), p.begin(), p.end());
    save_annotations(out / "annotations.json", all);
    log.info("wrote " + std::to_string(a.scenes) + " scenes, " + std::to_string(all.size()) + " people and " +
             std::to_string(a.negatives) + " negative scenes to " + out.string());
}

struct InferArgs {
    std::string model;
    std::string scoremaps;
    std::string out;
    double threshold = 0.0;
    int min_parts = 1;
    double nms_iou = 0.6;
    double part_box = 0.0;
    std::size_t max_detections = 0;
    bool single_composition = false;
    bool no_idod = false;
};

inline void infer(const InferArgs& a, unsigned threads, const Log& log) {
    const Model model = load_valid_model(a.model);
    const auto containers = list_containers(a.scoremaps);
    DetectOptions opt;
    opt.threshold = a.threshold;
    opt.min_parts = a.min_parts;
    opt.nms_iou = a.nms_iou;
    opt.part_box = a.part_box;
    opt.max_detections = a.max_detections;
    opt.flexible = !a.single_composition;
    std::vector<std::vector<Detection>> per(containers.size());
    parallel_for(containers.size(), threads, [&](std::size_t i) {
        const auto& [id, path] = containers[i];
        TermGrids terms = compute_terms(load_scoremaps(path, model.graph), model.graph);
        if (a.no_idod) terms = without_idod(std::move(terms));
        for (const auto& est : detect(terms, model.params, model.graph, opt))
            per[i].push_back(to_detection(id, est, model.graph));
    });
    std::vector<Detection> all;
    for (std::size_t i = 0; i < per.size(); ++i) {
        log.debug(containers[i].first + ": " + std::to_string(per[i].size()) + " detections");
        all.insert(all.end(), per[i].begin(), per[i].end());
    }
    write_json(a.out, detections_to_json(all));
    log.info("wrote " + std::to_string(all.size()) + " detections for " + std::to_string(containers.size()) +
             " images to " + a.out);
}

struct TrainArgs {
    std::string annotations;
    std::string scoremaps;
    std::string negatives;
    std::string out;
    double C = 1.0;
    std::uint64_t seed = 0;
    int epochs = 30;
    int rounds = 4;
    std::size_t cap = 200;
    std::size_t random_negatives = 20;
};

inline void train(const TrainArgs& a, unsigned threads, const Log& log) {
    const auto people = load_annotations(a.annotations);
    const auto pos = list_containers(a.scoremaps);
    const auto neg = list_containers(a.negatives);
    const PartGraph g = load_scoremaps(pos.front().second).graph();

    std::map<std::string, std::size_t> index;
    std::vector<std::size_t> scene_of;
    std::vector<fs::path> used;
    for (const auto& p : people) {
        auto it = index.find(p.image_id);
        if (it == index.end()) {
            const auto c = std::find_if(pos.begin(), pos.end(), [&](const auto& e) { return e.first == p.image_id; });
            if (c == pos.end())
                throw Error("invalid_argument", "no score maps for annotated image '" + p.image_id + "' under " + a.scoremaps);
            it = index.emplace(p.image_id, used.size()).first;
            used.push_back(c->second);
        }
        scene_of.push_back(it->second);
    }
    std::vector<TermGrids> scenes(used.size()), negatives(neg.size());
    parallel_for(used.size(), threads, [&](std::size_t i) { scenes[i] = compute_terms(load_scoremaps(used[i], g), g); });
    parallel_for(neg.size(), threads,
                 [&](std::size_t i) { negatives[i] = compute_terms(load_scoremaps(neg[i].second, g), g); });

    TrainOptions opt;
    opt.svm.C = a.C;
    opt.svm.epochs = a.epochs;
    opt.svm.seed = a.seed;
    opt.mining.rounds = a.rounds;
    opt.mining.per_round_cap = a.cap;
    opt.random_negatives_per_scene = a.random_negatives;
    opt.seed = a.seed;
    opt.threads = threads;
    TrainReport rep;
    Model m{g, train_model(g, people, scene_of, scenes, negatives, opt, &rep)};
    save_model(a.out, m);
    log.info("trained on " + std::to_string(rep.positives) + " positives, " + std::to_string(rep.random_negatives) +
             " random and " + std::to_string(rep.mined_negatives) + " mined negatives; " +
             std::to_string(rep.rejected_annotations) + " annotations without visible parts skipped; hinge " +
             std::to_string(rep.final_hinge_loss));
}

struct EvalArgs {
    std::string gt;
    std::string det;
    std::string out;
    std::string model;
    std::string sticks;
    double match_radius = 0.0;
    std::size_t reference_stick = 0;
};

inline json evaluate_files(const EvalArgs& a, const Log& log) {
    const auto gt = load_annotations(a.gt);
    const auto dets = load_detections(a.det);
    StickMap sticks;
    if (!a.sticks.empty()) {
        sticks = sticks_from_json(detail::read_json_file(a.sticks), a.sticks);
    } else if (!a.model.empty()) {
        sticks = sticks_from_graph(load_model(a.model).graph);
    } else {
        const int J = gt.empty() ? 0 : static_cast<int>(gt.front().joints.size());
        for (int j = 1; j < J; ++j) sticks.push_back({std::to_string(j) + "-" + std::to_string(j + 1), j, j + 1});
        log.info("no stick map given; using consecutive joints");
    }
    EvalOptions opt;
    opt.reference_stick = a.reference_stick;
    if (a.match_radius > 0.0) opt.match_radius = a.match_radius;
    const json report = report_to_json(evaluate(gt, dets, sticks, opt));
    write_json(a.out, report);
    return report;
}

// -------------------------------------------------------------- dispatch --

inline void error_line(std::ostream& err, const std::string& code, const std::string& message) {
    err << json{{"error", code}, {"message", message}}.dump() << "\n";
}

/// Runs one command; returns the process exit code. 0 on success, 1 on a
/// runtime error, 2 on bad usage.
inline int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Occlusion-aware part parsing with flexible compositions", "flexparse"};
    app.require_subcommand(1);
    app.fallthrough();
    unsigned threads = default_threads();
    app.add_option("--threads", threads, "Worker threads")->check(CLI::Range(1u, 1024u));

    auto* synth = app.add_subcommand("synth", "Synthetic data");
    synth->require_subcommand(1);
    auto* gen = synth->add_subcommand("gen", "Generate a model, annotated scenes and negative scenes");
    SynthArgs sa;
    gen->add_option("--seed", sa.seed, "Random seed")->required();
    gen->add_option("--parts", sa.parts, "Number of parts")->capture_default_str();
    gen->add_option("--types", sa.types, "Types per directed edge")->capture_default_str();
    gen->add_option("--people", sa.people, "People per scene")->capture_default_str();
    gen->add_option("--occlusion", sa.occlusion, "Per-edge decoupling probability")->capture_default_str();
    gen->add_option("--scenes", sa.scenes, "Annotated scenes")->capture_default_str();
    gen->add_option("--negatives", sa.negatives, "Person-free scenes")->capture_default_str();
    gen->add_option("--width", sa.width, "Grid width")->capture_default_str();
    gen->add_option("--height", sa.height, "Grid height")->capture_default_str();
    gen->add_option("--out", sa.out, "Output directory")->required();

    auto* inf = app.add_subcommand("infer", "Detect poses in score maps");
    InferArgs ia;
    inf->add_option("--model", ia.model, "Model JSON")->required();
    inf->add_option("--scoremaps", ia.scoremaps, "Score-map container or directory of containers")->required();
    inf->add_option("--threshold", ia.threshold, "Score threshold (including the SVM bias)")->capture_default_str();
    inf->add_option("--min-parts", ia.min_parts, "Minimum visible parts per detection")->capture_default_str();
    inf->add_option("--nms-iou", ia.nms_iou, "Part-box overlap that suppresses a detection")->capture_default_str();
    inf->add_option("--part-box", ia.part_box, "Side of the square part box; 0 uses a tenth of the grid");
    inf->add_option("--max-detections", ia.max_detections, "Detections kept per image; 0 keeps all");
    inf->add_flag("--single-composition", ia.single_composition, "Only the full-graph composition");
    inf->add_flag("--no-idod", ia.no_idod, "Zero the decoupling terms");
    inf->add_option("--out", ia.out, "Detections JSON")->required();

    auto* tr = app.add_subcommand("train", "Learn model weights from annotations");
    TrainArgs ta;
    tr->add_option("--annotations", ta.annotations, "Annotations JSON")->required();
    tr->add_option("--scoremaps", ta.scoremaps, "Directory of containers named by image id")->required();
    tr->add_option("--neg", ta.negatives, "Person-free score maps")->required();
    tr->add_option("--C", ta.C, "SVM slack weight")->capture_default_str();
    tr->add_option("--seed", ta.seed, "Random seed")->capture_default_str();
    tr->add_option("--epochs", ta.epochs, "SVM epochs")->capture_default_str();
    tr->add_option("--rounds", ta.rounds, "Hard-negative mining rounds")->capture_default_str();
    tr->add_option("--cap", ta.cap, "Mined negatives per round")->capture_default_str();
    tr->add_option("--random-negatives", ta.random_negatives, "Random poses per negative scene")->capture_default_str();
    tr->add_option("--out", ta.out, "Model JSON")->required();

    auto* ev = app.add_subcommand("eval", "Score detections against annotations");
    EvalArgs ea;
    ev->add_option("--gt", ea.gt, "Annotations JSON")->required();
    ev->add_option("--det", ea.det, "Detections JSON")->required();
    ev->add_option("--out", ea.out, "Report JSON")->required();
    auto* with_model = ev->add_option("--model", ea.model, "Evaluate one stick per model edge");
    ev->add_option("--sticks", ea.sticks, "Stick map JSON")->excludes(with_model);
    ev->add_option("--match-radius", ea.match_radius, "Fixed match radius; 0 uses half the reference stick");
    ev->add_option("--reference-stick", ea.reference_stick, "Stick used for matching")->capture_default_str();

    auto* orc = app.add_subcommand("oracle", "Brute-force checks");
    orc->require_subcommand(1);
    auto* check = orc->add_subcommand("check", "Compare inference with brute force on random instances");
    std::uint64_t oseed = 0;
    int trials = 50;
    check->add_option("--seed", oseed, "Random seed")->capture_default_str();
    check->add_option("--trials", trials, "Number of instances")->capture_default_str();

    try {
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        app.parse(reversed);
    } catch (const CLI::Success&) {
        out << app.help();
        for (auto* sub : {synth, gen, inf, tr, ev, orc, check})
            if (sub->parsed()) {
                out.clear();
                out << sub->help();
            }
        return 0;
    } catch (const CLI::ParseError& e) {
        error_line(err, "usage", e.what());
        return 2;
    }

    try {
        const Log log(err, log_level_from_env());
        if (gen->parsed()) {
            synth_gen(sa, threads, log);
        } else if (inf->parsed()) {
            infer(ia, threads, log);
        } else if (tr->parsed()) {
            train(ta, threads, log);
        } else if (ev->parsed()) {
            const json r = evaluate_files(ea, log);
            char line[96];
            std::snprintf(line, sizeof line, "mPCP %.2f AOP %.2f", r.at("mPCP").get<double>(), r.at("AOP").get<double>());
            out << line << "\n";
        } else if (check->parsed()) {
            const auto r = oracle::check_equivalence(oseed, trials);
            out << r.matched << "/" << r.trials << " matched\n";
            for (const auto& f : r.failures) log.info(f);
            if (r.matched != r.trials) {
                error_line(err, "mismatch", std::to_string(r.trials - r.matched) + " instances disagree with brute force");
                return 1;
            }
        }
    } catch (const Error& e) {
        error_line(err, e.code(), e.what());
        return 1;
    } catch (const fs::filesystem_error& e) {
        error_line(err, "io", e.what());
        return 1;
    } catch (const std::exception& e) {
        error_line(err, "internal", e.what());
        return 1;
    }
    return 0;
}

} // namespace flexparse::cli

#endif // FLEXPARSE_TOOLS_CLI_HPP
