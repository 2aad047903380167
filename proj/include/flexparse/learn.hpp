#ifndef FLEXPARSE_LEARN_HPP
#define FLEXPARSE_LEARN_HPP

#include "error.hpp"
#include "infer.hpp"
#include "model.hpp"
#include "parallel.hpp"
#include "pose_io.hpp"
#include "scoremap.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numbers>
#include <numeric>
#include <random>
#include <vector>

namespace flexparse {

/// Mean relative positions, [directed edge][type].
using MeanOffsets = std::vector<std::vector<Offset>>;

/// A labelled pose: composition, locations and types, plus polarity and the
/// index of the scene whose terms it is scored against.
struct TrainingExample {
    PoseEstimate pose;
    bool positive = true;
    std::size_t scene = 0;
};

// ---------------------------------------------------------------- labels --

inline int nearest_type(const std::vector<Offset>& centers, double dx, double dy) {
    int best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t t = 0; t < centers.size(); ++t) {
        const double ex = dx - centers[t].dx, ey = dy - centers[t].dy;
        const double d = ex * ex + ey * ey;
        if (d < best_d) {
            best_d = d;
            best = static_cast<int>(t);
        }
    }
    return best;
}

/// Largest connected set of visible parts; ties go to the set holding the
/// smallest part index.
inline std::vector<PartId> largest_visible_component(const PartGraph& g, const Joints& joints) {
    const auto K = static_cast<std::size_t>(g.num_parts());
    std::vector<char> seen(K + 1, 0);
    std::vector<PartId> best;
    for (PartId start = 1; start <= g.num_parts(); ++start) {
        if (!joints[static_cast<std::size_t>(start - 1)] || seen[static_cast<std::size_t>(start)]) continue;
        std::vector<PartId> comp{start}, stack{start};
        seen[static_cast<std::size_t>(start)] = 1;
        while (!stack.empty()) {
            const PartId p = stack.back();
            stack.pop_back();
            for (PartId q : g.neighbors(p))
                if (joints[static_cast<std::size_t>(q - 1)] && !seen[static_cast<std::size_t>(q)]) {
                    seen[static_cast<std::size_t>(q)] = 1;
                    comp.push_back(q);
                    stack.push_back(q);
                }
        }
        // Components are discovered in order of their smallest part, so a
        // strict comparison keeps the earlier one on ties.
        if (comp.size() > best.size()) best = std::move(comp);
    }
    std::sort(best.begin(), best.end());
    return best;
}

/// Turns an annotated person into a positive example: composition from the
/// largest visible component, decouplings from its cut edges, types from the
/// nearest mean offset.
inline PoseEstimate derive_labels(const Person& person, const PartGraph& g, const MeanOffsets& offsets) {
    if (person.joints.size() != static_cast<std::size_t>(g.num_parts()))
        throw Error("invalid_argument", "annotation has " + std::to_string(person.joints.size()) + " joints, graph has " +
                                            std::to_string(g.num_parts()) + " parts");
    const auto visible = largest_visible_component(g, person.joints);
    if (visible.empty()) throw Error("degenerate", "annotation of image " + person.image_id + " has no visible parts");
    PoseEstimate est;
    est.composition = make_composition(g, visible);
    est.locations.assign(static_cast<std::size_t>(g.num_parts()), std::nullopt);
    est.types.assign(static_cast<std::size_t>(g.num_directed()), -1);
    for (PartId p : visible) est.locations[static_cast<std::size_t>(p - 1)] = person.joints[static_cast<std::size_t>(p - 1)];
    est.root = visible.front();
    for (int e : est.composition.edges)
        for (int d : {2 * e, 2 * e + 1}) {
            const auto [from, to] = g.directed(d);
            const Location a = *est.location(from), b = *est.location(to);
            est.types[static_cast<std::size_t>(d)] =
                nearest_type(offsets[static_cast<std::size_t>(d)], b.x - a.x, b.y - a.y);
        }
    return est;
}

// --------------------------------------------------------------- k-means --

struct KMeansResult {
    std::vector<Offset> centers;
    std::vector<int> assignment;
    std::vector<double> objective;  // after each assignment step
};

/// Lloyd's algorithm with k-means++ seeding. Stops after `max_iterations`
/// or once no center moves more than `tolerance`.
inline KMeansResult kmeans(const std::vector<Offset>& points, int k, std::uint64_t seed, int max_iterations = 100,
                           double tolerance = 1e-6) {
    if (k < 1) throw Error("invalid_argument", "k-means needs at least one cluster");
    if (points.size() < static_cast<std::size_t>(k))
        throw Error("degenerate", "k-means with " + std::to_string(k) + " clusters needs at least that many samples, got " +
                                      std::to_string(points.size()));
    std::mt19937_64 rng(seed);
    auto dist2 = [](const Offset& a, const Offset& b) {
        return (a.dx - b.dx) * (a.dx - b.dx) + (a.dy - b.dy) * (a.dy - b.dy);
    };

    KMeansResult r;
    r.centers.push_back(points[std::uniform_int_distribution<std::size_t>(0, points.size() - 1)(rng)]);
    std::vector<double> d2(points.size());
    while (r.centers.size() < static_cast<std::size_t>(k)) {
        double total = 0.0;
        for (std::size_t i = 0; i < points.size(); ++i) {
            d2[i] = std::numeric_limits<double>::infinity();
            for (const auto& c : r.centers) d2[i] = std::min(d2[i], dist2(points[i], c));
            total += d2[i];
        }
        std::size_t pick = 0;
        if (total > 0.0) {
            double u = std::uniform_real_distribution<double>(0.0, total)(rng);
            for (pick = 0; pick + 1 < points.size(); ++pick) {
                u -= d2[pick];
                if (u < 0.0 && d2[pick] > 0.0) break;
            }
        } else {
            pick = std::uniform_int_distribution<std::size_t>(0, points.size() - 1)(rng);
        }
        r.centers.push_back(points[pick]);
    }

    r.assignment.assign(points.size(), 0);
    for (int it = 0; it < max_iterations; ++it) {
        double obj = 0.0;
        for (std::size_t i = 0; i < points.size(); ++i) {
            r.assignment[i] = nearest_type(r.centers, points[i].dx, points[i].dy);
            obj += dist2(points[i], r.centers[static_cast<std::size_t>(r.assignment[i])]);
        }
        r.objective.push_back(obj);

        std::vector<Offset> sum(static_cast<std::size_t>(k));
        std::vector<std::size_t> count(static_cast<std::size_t>(k), 0);
        for (std::size_t i = 0; i < points.size(); ++i) {
            auto& s = sum[static_cast<std::size_t>(r.assignment[i])];
            s.dx += points[i].dx;
            s.dy += points[i].dy;
            ++count[static_cast<std::size_t>(r.assignment[i])];
        }
        double moved = 0.0;
        for (std::size_t c = 0; c < sum.size(); ++c) {
            if (!count[c]) continue;  // empty cluster keeps its center
            const Offset next{sum[c].dx / static_cast<double>(count[c]), sum[c].dy / static_cast<double>(count[c])};
            moved = std::max(moved, std::sqrt(dist2(next, r.centers[c])));
            r.centers[c] = next;
        }
        if (moved <= tolerance) break;
    }
    double obj = 0.0;
    for (std::size_t i = 0; i < points.size(); ++i) {
        r.assignment[i] = nearest_type(r.centers, points[i].dx, points[i].dy);
        obj += dist2(points[i], r.centers[static_cast<std::size_t>(r.assignment[i])]);
    }
    r.objective.push_back(obj);
    return r;
}

/// Clusters the observed relative positions l_j - l_i of every directed edge
/// into as many centers as the edge has types.
inline MeanOffsets kmeans_types(const std::vector<Person>& people, const PartGraph& g, std::uint64_t seed,
                                int restarts = 10) {
    if (restarts < 1) throw Error("invalid_argument", "k-means needs at least one restart");
    MeanOffsets out(static_cast<std::size_t>(g.num_directed()));
    for (int d = 0; d < g.num_directed(); ++d) {
        const auto [from, to] = g.directed(d);
        std::vector<Offset> samples;
        for (const auto& p : people) {
            const auto& a = p.joints[static_cast<std::size_t>(from - 1)];
            const auto& b = p.joints[static_cast<std::size_t>(to - 1)];
            if (a && b) samples.push_back({static_cast<double>(b->x - a->x), static_cast<double>(b->y - a->y)});
        }
        if (samples.size() < static_cast<std::size_t>(g.type_count(d)))
            throw Error("degenerate", "edge (" + std::to_string(from) + "," + std::to_string(to) + ") has " +
                                          std::to_string(samples.size()) + " samples for " +
                                          std::to_string(g.type_count(d)) + " types");
        std::seed_seq seq{seed, static_cast<std::uint64_t>(d)};
        std::uint64_t edge_seed = 0;
        std::vector<std::uint32_t> words(2);
        seq.generate(words.begin(), words.end());
        edge_seed = (static_cast<std::uint64_t>(words[0]) << 32) | words[1];
        // Several seedings; the lowest final objective wins.
        std::mt19937_64 restart(edge_seed);
        KMeansResult best;
        for (int r = 0; r < restarts; ++r) {
            KMeansResult km = kmeans(samples, g.type_count(d), restart());
            if (r == 0 || km.objective.back() < best.objective.back()) best = std::move(km);
        }
        out[static_cast<std::size_t>(d)] = std::move(best.centers);
        sort_types_by_angle(out[static_cast<std::size_t>(d)]);
    }
    return out;
}

// -------------------------------------------------------------- features --

struct SparseVector {
    std::vector<std::pair<std::size_t, double>> entries;

    void add(std::size_t index, double value) { entries.emplace_back(index, value); }
    double dot(const std::vector<double>& w) const {
        double s = 0.0;
        for (const auto& [i, v] : entries) s += w[i] * v;
        return s;
    }
};

/// Per-coordinate bounds on the weight vector, enforced after every step.
/// Empty vectors mean unbounded.
struct WeightBounds {
    std::vector<double> lower;
    std::vector<double> upper;

    void apply(std::vector<double>& w) const {
        for (std::size_t i = 0; i < lower.size(); ++i) w[i] = std::max(w[i], lower[i]);
        for (std::size_t i = 0; i < upper.size(); ++i) w[i] = std::min(w[i], upper[i]);
    }
};

/// Positions of every learned scalar in the flat parameter vector:
/// appearance weights, deformation weights (4 per direction and type),
/// one shared IDPR/IDOD weight per direction, then part biases.
class ParameterLayout {
public:
    explicit ParameterLayout(const PartGraph& g) : K_(static_cast<std::size_t>(g.num_parts())) {
        std::size_t at = K_;
        for (int d = 0; d < g.num_directed(); ++d) {
            deformation_start_.push_back(at);
            types_.push_back(g.type_count(d));
            at += 4 * static_cast<std::size_t>(g.type_count(d));
        }
        pairwise_start_ = at;
        bias_start_ = at + types_.size();
        size_ = bias_start_ + K_;
    }

    std::size_t size() const noexcept { return size_; }
    std::size_t appearance(PartId p) const { return static_cast<std::size_t>(p - 1); }
    std::size_t deformation(int d, int type, int component) const {
        return deformation_start_[static_cast<std::size_t>(d)] + 4 * static_cast<std::size_t>(type) +
               static_cast<std::size_t>(component);
    }
    std::size_t pairwise(int d) const { return pairwise_start_ + static_cast<std::size_t>(d); }
    std::size_t bias(PartId p) const { return bias_start_ + static_cast<std::size_t>(p - 1); }

    /// Term weights non-negative, quadratic deformation coefficients at most
    /// `quadratic_ceiling`, linear deformation coefficients held at zero so
    /// each deformation peaks at its type's mean offset. With a free linear
    /// part and a near-flat quadratic the peak can drift far off the grid
    /// region seen in training.
    WeightBounds model_bounds(double quadratic_ceiling = -1e-3) const {
        const double inf = std::numeric_limits<double>::infinity();
        WeightBounds b{std::vector<double>(size_, -inf), std::vector<double>(size_, inf)};
        for (std::size_t k = 0; k < K_; ++k) b.lower[k] = 0.0;
        for (std::size_t d = 0; d < types_.size(); ++d) {
            b.lower[pairwise_start_ + d] = 0.0;
            for (int t = 0; t < types_[d]; ++t) {
                b.lower[deformation(static_cast<int>(d), t, 0)] = b.upper[deformation(static_cast<int>(d), t, 0)] = 0.0;
                b.lower[deformation(static_cast<int>(d), t, 2)] = b.upper[deformation(static_cast<int>(d), t, 2)] = 0.0;
                b.upper[deformation(static_cast<int>(d), t, 1)] = quadratic_ceiling;
                b.upper[deformation(static_cast<int>(d), t, 3)] = quadratic_ceiling;
            }
        }
        return b;
    }

    std::vector<double> pack(const ModelParams& p) const {
        std::vector<double> beta(size_, 0.0);
        for (std::size_t k = 0; k < K_; ++k) {
            beta[k] = p.appearance_weights[k];
            beta[bias_start_ + k] = p.part_biases[k];
        }
        for (std::size_t d = 0; d < types_.size(); ++d) {
            beta[pairwise_start_ + d] = p.directed[d].idpr_weight;
            for (int t = 0; t < types_[d]; ++t)
                for (int c = 0; c < 4; ++c)
                    beta[deformation(static_cast<int>(d), t, c)] = p.directed[d].deformation[static_cast<std::size_t>(t)][static_cast<std::size_t>(c)];
        }
        return beta;
    }

    ModelParams unpack(const std::vector<double>& beta, const MeanOffsets& offsets, double svm_bias) const {
        if (beta.size() != size_) throw Error("invalid_argument", "parameter vector has the wrong length");
        ModelParams p;
        p.svm_bias = svm_bias;
        for (std::size_t k = 0; k < K_; ++k) {
            p.appearance_weights.push_back(beta[k]);
            p.part_biases.push_back(beta[bias_start_ + k]);
        }
        for (std::size_t d = 0; d < types_.size(); ++d) {
            DirectedParams dp;
            dp.idpr_weight = beta[pairwise_start_ + d];
            dp.mean_offsets = offsets[d];
            for (int t = 0; t < types_[d]; ++t) {
                Deformation w{};
                for (int c = 0; c < 4; ++c) w[static_cast<std::size_t>(c)] = beta[deformation(static_cast<int>(d), t, c)];
                dp.deformation.push_back(w);
            }
            p.directed.push_back(std::move(dp));
        }
        return p;
    }

private:
    std::size_t K_;
    std::vector<std::size_t> deformation_start_;
    std::vector<int> types_;
    std::size_t pairwise_start_ = 0;
    std::size_t bias_start_ = 0;
    std::size_t size_ = 0;
};

/// Feature vector whose inner product with the packed parameters equals the
/// composition score of `pose`.
inline SparseVector build_feature_vector(const PoseEstimate& pose, const TermGrids& terms, const PartGraph& g,
                                         const ParameterLayout& layout, const MeanOffsets& offsets) {
    SparseVector x;
    auto at = [&](PartId p) {
        const Location l = *pose.location(p);
        if (!terms.contains(l)) throw Error("invalid_argument", "pose location " + to_string(l) + " is outside the grid");
        return terms.index(l);
    };
    for (PartId p : pose.composition.visible)
        x.add(layout.appearance(p), terms.appearance[static_cast<std::size_t>(p - 1)][at(p)]);
    for (int e : pose.composition.edges)
        for (int d : {2 * e, 2 * e + 1}) {
            const auto [from, to] = g.directed(d);
            const int t = pose.types[static_cast<std::size_t>(d)];
            const Offset& r = offsets[static_cast<std::size_t>(d)][static_cast<std::size_t>(t)];
            const Location a = *pose.location(from), b = *pose.location(to);
            const double dx = b.x - a.x - r.dx, dy = b.y - a.y - r.dy;
            x.add(layout.deformation(d, t, 0), dx);
            x.add(layout.deformation(d, t, 1), dx * dx);
            x.add(layout.deformation(d, t, 2), dy);
            x.add(layout.deformation(d, t, 3), dy * dy);
            x.add(layout.pairwise(d), terms.idpr[static_cast<std::size_t>(d)][static_cast<std::size_t>(t)][at(from)]);
        }
    for (int d : pose.composition.decoupled) {
        const auto [from, to] = g.directed(d);
        x.add(layout.pairwise(d), terms.idod[static_cast<std::size_t>(d)][at(from)]);
        for (PartId r : g.subtree(from, to)) x.add(layout.bias(r), 1.0);
    }
    return x;
}

// ------------------------------------------------------------------- SVM --

struct LabeledVector {
    SparseVector x;
    int label = 1;  // +1 or -1
};

struct SvmOptions {
    double C = 1.0;
    int epochs = 30;
    std::uint64_t seed = 0;
};

struct SvmResult {
    std::vector<double> weights;
    double bias = 0.0;
    std::vector<double> objective;  // at the running average after each epoch
};

/// 0.5 |w|^2 + 0.5 b^2 + C * sum of hinge losses.
inline double svm_objective(const std::vector<LabeledVector>& data, const std::vector<double>& w, double b, double C) {
    double reg = b * b;
    for (double v : w) reg += v * v;
    double loss = 0.0;
    for (const auto& ex : data) loss += std::max(0.0, 1.0 - ex.label * (ex.x.dot(w) + b));
    return 0.5 * reg + C * loss;
}

inline double hinge_loss(const std::vector<LabeledVector>& data, const std::vector<double>& w, double b) {
    double loss = 0.0;
    for (const auto& ex : data) loss += std::max(0.0, 1.0 - ex.label * (ex.x.dot(w) + b));
    return loss;
}

/// Primal stochastic sub-gradient descent (step 1/(lambda t), lambda =
/// 1/(C n)) with the bias treated as a weight on a constant feature. The
/// result is the running average of all iterates.
inline SvmResult train_svm(const std::vector<LabeledVector>& data, std::size_t dim, const SvmOptions& opt,
                           const WeightBounds& bounds = {}) {
    if (!(opt.C > 0.0)) throw Error("invalid_argument", "C must be positive");
    if (opt.epochs < 1) throw Error("invalid_argument", "at least one epoch is required");
    bool has_pos = false, has_neg = false;
    for (const auto& ex : data) {
        if (ex.label != 1 && ex.label != -1) throw Error("invalid_argument", "labels must be +1 or -1");
        (ex.label > 0 ? has_pos : has_neg) = true;
        for (const auto& [i, v] : ex.x.entries)
            if (i >= dim) throw Error("invalid_argument", "feature index out of range");
    }
    if (!has_pos || !has_neg) throw Error("degenerate", "SVM training needs both positive and negative examples");

    const std::size_t n = data.size();
    const double lambda = 1.0 / (opt.C * static_cast<double>(n));
    const double radius = 1.0 / std::sqrt(lambda);
    std::vector<double> w(dim, 0.0), avg(dim, 0.0);
    double b = 0.0, avg_b = 0.0;
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 rng(opt.seed);

    SvmResult result;
    std::size_t t = 0;
    for (int epoch = 0; epoch < opt.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        for (std::size_t idx : order) {
            ++t;
            const auto& ex = data[idx];
            const double eta = 1.0 / (lambda * static_cast<double>(t));
            const double margin = ex.label * (ex.x.dot(w) + b);
            const double shrink = 1.0 - eta * lambda;
            for (double& v : w) v *= shrink;
            b *= shrink;
            if (margin < 1.0) {
                for (const auto& [i, v] : ex.x.entries) w[i] += eta * ex.label * v;
                b += eta * ex.label;
            }
            double norm2 = b * b;
            for (double v : w) norm2 += v * v;
            if (norm2 > radius * radius) {
                const double s = radius / std::sqrt(norm2);
                for (double& v : w) v *= s;
                b *= s;
            }
            bounds.apply(w);
            for (std::size_t i = 0; i < dim; ++i) avg[i] += w[i];
            avg_b += b;
        }
        std::vector<double> mean(avg);
        for (double& v : mean) v /= static_cast<double>(t);
        result.objective.push_back(svm_objective(data, mean, avg_b / static_cast<double>(t), opt.C));
    }
    for (double& v : avg) v /= static_cast<double>(t);
    result.weights = std::move(avg);
    result.bias = avg_b / static_cast<double>(t);
    return result;
}

/// Clamps every quadratic deformation coefficient to at most `ceiling` so
/// the distance transform stays applicable.
inline void project_concave(ModelParams& p, double ceiling = -1e-3) {
    for (auto& dp : p.directed)
        for (auto& w : dp.deformation) {
            w[1] = std::min(w[1], ceiling);
            w[3] = std::min(w[3], ceiling);
        }
}

// ------------------------------------------------------ training pipeline --

/// Random pose on a grid: a random connected composition placed around a
/// uniform root location using the mean offsets plus jitter.
inline PoseEstimate random_pose(const PartGraph& g, const MeanOffsets& offsets, int width, int height,
                                std::mt19937_64& rng, double keep_probability = 0.8, int jitter = 6) {
    std::uniform_int_distribution<int> part(1, g.num_parts()), ux(0, width - 1), uy(0, height - 1), uj(-jitter, jitter);
    std::bernoulli_distribution keep(keep_probability);
    PoseEstimate est;
    est.locations.assign(static_cast<std::size_t>(g.num_parts()), std::nullopt);
    est.types.assign(static_cast<std::size_t>(g.num_directed()), -1);
    est.root = part(rng);
    est.locations[static_cast<std::size_t>(est.root - 1)] = Location{ux(rng), uy(rng)};
    std::vector<PartId> visible{est.root}, stack{est.root};
    while (!stack.empty()) {
        const PartId p = stack.back();
        stack.pop_back();
        for (PartId q : g.neighbors(p)) {
            if (est.location(q) || !keep(rng)) continue;
            const int d = g.directed_index(p, q);
            const int t = std::uniform_int_distribution<int>(0, g.type_count(d) - 1)(rng);
            const int tr = std::uniform_int_distribution<int>(0, g.type_count(PartGraph::reverse(d)) - 1)(rng);
            const Offset& r = offsets[static_cast<std::size_t>(d)][static_cast<std::size_t>(t)];
            const Location lp = *est.location(p);
            const Location lq{std::clamp(lp.x + static_cast<int>(std::lround(r.dx)) + uj(rng), 0, width - 1),
                              std::clamp(lp.y + static_cast<int>(std::lround(r.dy)) + uj(rng), 0, height - 1)};
            est.locations[static_cast<std::size_t>(q - 1)] = lq;
            est.types[static_cast<std::size_t>(d)] = t;
            est.types[static_cast<std::size_t>(PartGraph::reverse(d))] = tr;
            visible.push_back(q);
            stack.push_back(q);
        }
    }
    est.composition = make_composition(g, std::move(visible));
    return est;
}

struct MiningOptions {
    int rounds = 4;
    std::size_t per_round_cap = 200;
    /// Detections scoring above this (including the SVM bias) are kept.
    double threshold = -1.0;
    unsigned threads = 1;
};

/// Runs detection on person-free scenes and turns high-scoring detections
/// into negatives, alternating with `retrain` after every round. Returns
/// every mined negative.
inline std::vector<TrainingExample> mine_negatives(
    ModelParams params, const PartGraph& g, const std::vector<TermGrids>& negatives, const MiningOptions& opt,
    const std::function<ModelParams(const std::vector<TrainingExample>&)>& retrain) {
    std::vector<TrainingExample> mined;
    for (int round = 0; round < opt.rounds; ++round) {
        std::vector<std::vector<PoseEstimate>> per_scene(negatives.size());
        DetectOptions det;
        det.threshold = opt.threshold;
        det.max_detections = opt.per_round_cap;
        parallel_for(negatives.size(), opt.threads,
                     [&](std::size_t s) { per_scene[s] = detect(negatives[s], params, g, det); });
        std::vector<TrainingExample> round_neg;
        for (std::size_t s = 0; s < per_scene.size(); ++s)
            for (auto& est : per_scene[s]) round_neg.push_back({std::move(est), false, s});
        std::stable_sort(round_neg.begin(), round_neg.end(),
                         [](const TrainingExample& a, const TrainingExample& b) { return a.pose.score > b.pose.score; });
        if (round_neg.size() > opt.per_round_cap) round_neg.resize(opt.per_round_cap);
        mined.insert(mined.end(), round_neg.begin(), round_neg.end());
        if (retrain) params = retrain(mined);
    }
    return mined;
}

struct TrainOptions {
    SvmOptions svm;
    MiningOptions mining;
    std::size_t random_negatives_per_scene = 20;
    std::uint64_t seed = 0;
    unsigned threads = 1;
};

struct TrainReport {
    std::size_t positives = 0;
    std::size_t random_negatives = 0;
    std::size_t mined_negatives = 0;
    std::size_t rejected_annotations = 0;
    double final_hinge_loss = 0.0;
};

/// Full pipeline: label derivation, mean offsets by k-means, SVM on
/// positives and random negatives, then rounds of hard-negative mining.
/// `scene_of[n]` indexes the positive scene whose terms person n lies on.
inline ModelParams train_model(const PartGraph& g, const std::vector<Person>& people,
                               const std::vector<std::size_t>& scene_of, const std::vector<TermGrids>& scenes,
                               const std::vector<TermGrids>& negatives, const TrainOptions& opt,
                               TrainReport* report = nullptr) {
    if (scene_of.size() != people.size()) throw Error("invalid_argument", "every person needs a scene");
    if (negatives.empty()) throw Error("degenerate", "training needs at least one negative scene");
    TrainReport rep;
    const MeanOffsets offsets = kmeans_types(people, g, opt.seed);
    const ParameterLayout layout(g);
    const WeightBounds bounds = layout.model_bounds();

    std::vector<LabeledVector> base;
    for (std::size_t n = 0; n < people.size(); ++n) {
        PoseEstimate pose;
        try {
            pose = derive_labels(people[n], g, offsets);
        } catch (const Error& e) {
            if (e.code() != "degenerate") throw;
            ++rep.rejected_annotations;
            continue;
        }
        base.push_back({build_feature_vector(pose, scenes.at(scene_of[n]), g, layout, offsets), 1});
        ++rep.positives;
    }
    std::mt19937_64 rng(opt.seed ^ 0x9e3779b97f4a7c15ULL);
    for (const auto& neg : negatives)
        for (std::size_t k = 0; k < opt.random_negatives_per_scene; ++k) {
            const PoseEstimate pose = random_pose(g, offsets, neg.width, neg.height, rng);
            base.push_back({build_feature_vector(pose, neg, g, layout, offsets), -1});
            ++rep.random_negatives;
        }

    auto fit = [&](const std::vector<LabeledVector>& data) {
        const SvmResult r = train_svm(data, layout.size(), opt.svm, bounds);
        ModelParams p = layout.unpack(r.weights, offsets, r.bias);
        project_concave(p);
        rep.final_hinge_loss = hinge_loss(data, r.weights, r.bias);
        return p;
    };
    ModelParams params = fit(base);

    MiningOptions mining = opt.mining;
    mining.threads = opt.threads;
    const auto mined = mine_negatives(params, g, negatives, mining, [&](const std::vector<TrainingExample>& found) {
        std::vector<LabeledVector> data = base;
        for (const auto& ex : found)
            data.push_back({build_feature_vector(ex.pose, negatives[ex.scene], g, layout, offsets), -1});
        params = fit(data);
        return params;
    });
    rep.mined_negatives = mined.size();
    if (report) *report = rep;
    return params;
}

/// Model with weights drawn without looking at any annotation: the baseline
/// the trained model is compared against.
inline ModelParams random_weight_params(const PartGraph& g, std::uint64_t seed, double offset_range = 6.0) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0), lin(-0.2, 0.2), quad(-0.5, -0.01),
        off(-offset_range, offset_range), bias(-1.0, 0.0);
    ModelParams p;
    for (int k = 0; k < g.num_parts(); ++k) {
        p.appearance_weights.push_back(unit(rng));
        p.part_biases.push_back(bias(rng));
    }
    for (int d = 0; d < g.num_directed(); ++d) {
        DirectedParams dp;
        dp.idpr_weight = unit(rng);
        for (int t = 0; t < g.type_count(d); ++t) {
            dp.deformation.push_back({lin(rng), quad(rng), lin(rng), quad(rng)});
            dp.mean_offsets.push_back({off(rng), off(rng)});
        }
        p.directed.push_back(std::move(dp));
    }
    p.svm_bias = 0.0;
    return p;
}

} // namespace flexparse

#endif // FLEXPARSE_LEARN_HPP
