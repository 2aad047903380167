#ifndef FLEXPARSE_INFER_HPP
#define FLEXPARSE_INFER_HPP

#include "error.hpp"
#include "gdt.hpp"
#include "grid.hpp"
#include "model.hpp"
#include "scoremap.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <tuple>
#include <vector>

namespace flexparse {

/// A connected set of visible parts together with the tree edges it keeps
/// and the edges it cuts.
struct Composition {
    std::vector<PartId> visible;  // sorted
    std::vector<int> edges;       // undirected edge indices with both ends visible
    std::vector<int> decoupled;   // directed indices (i -> j), i visible and j not

    bool contains(PartId p) const { return std::binary_search(visible.begin(), visible.end(), p); }
    friend bool operator==(const Composition&, const Composition&) = default;
};

/// True when `parts` is non-empty, duplicate-free, in range and induces a
/// connected subgraph.
inline bool is_connected_subset(const PartGraph& g, std::vector<PartId> parts) {
    if (parts.empty()) return false;
    std::sort(parts.begin(), parts.end());
    if (std::adjacent_find(parts.begin(), parts.end()) != parts.end()) return false;
    if (parts.front() < 1 || parts.back() > g.num_parts()) return false;
    std::vector<char> in(static_cast<std::size_t>(g.num_parts()) + 1, 0), seen(in.size(), 0);
    for (PartId p : parts) in[static_cast<std::size_t>(p)] = 1;
    std::vector<PartId> stack{parts.front()};
    seen[static_cast<std::size_t>(parts.front())] = 1;
    std::size_t reached = 0;
    while (!stack.empty()) {
        PartId p = stack.back();
        stack.pop_back();
        ++reached;
        for (PartId q : g.neighbors(p))
            if (in[static_cast<std::size_t>(q)] && !seen[static_cast<std::size_t>(q)]) {
                seen[static_cast<std::size_t>(q)] = 1;
                stack.push_back(q);
            }
    }
    return reached == parts.size();
}

inline Composition make_composition(const PartGraph& g, std::vector<PartId> visible) {
    if (!is_connected_subset(g, visible))
        throw Error("invalid_argument", "composition must be a non-empty connected set of parts");
    std::sort(visible.begin(), visible.end());
    Composition c;
    c.visible = std::move(visible);
    for (int e = 0; e < g.num_edges(); ++e) {
        const Edge& edge = g.edges()[static_cast<std::size_t>(e)];
        const bool vi = c.contains(edge.i), vj = c.contains(edge.j);
        if (vi && vj) c.edges.push_back(e);
        else if (vi) c.decoupled.push_back(2 * e);
        else if (vj) c.decoupled.push_back(2 * e + 1);
    }
    return c;
}

/// One parsed person: visible parts with locations, types on kept edges.
struct PoseEstimate {
    Composition composition;
    std::vector<std::optional<Location>> locations;  // [part - 1], set exactly on visible parts
    std::vector<int> types;                          // [directed edge], 0-based type or -1
    double score = 0.0;
    PartId root = 0;

    std::size_t num_visible() const { return composition.visible.size(); }
    const std::optional<Location>& location(PartId p) const { return locations[static_cast<std::size_t>(p - 1)]; }
};

/// <w, psi(to - from - r)> with psi = [dx, dx^2, dy, dy^2].
inline double deformation_score(const Deformation& w, const Offset& r, Location from, Location to) {
    const double dx = static_cast<double>(to.x - from.x) - r.dx;
    const double dy = static_cast<double>(to.y - from.y) - r.dy;
    return w[0] * dx + w[1] * dx * dx + w[2] * dy + w[3] * dy * dy;
}

/// Evaluates the composition score of a fully specified estimate: appearance
/// over visible parts, both pairwise halves over kept edges, and decoupling
/// bias plus IDOD over cut edges. Throws on malformed estimates.
inline double score_composition(const PoseEstimate& est, const TermGrids& terms, const ModelParams& params,
                                const PartGraph& g) {
    const auto K = static_cast<std::size_t>(g.num_parts());
    if (est.locations.size() != K || est.types.size() != static_cast<std::size_t>(g.num_directed()))
        throw Error("invalid_argument", "estimate does not match the graph");
    auto loc = [&](PartId p) {
        const auto& l = est.locations[static_cast<std::size_t>(p - 1)];
        if (!l) throw Error("invalid_argument", "visible part " + std::to_string(p) + " has no location");
        if (!terms.contains(*l))
            throw Error("invalid_argument", "part " + std::to_string(p) + " location " + to_string(*l) + " is outside the grid");
        return *l;
    };
    auto type = [&](int d) {
        const int t = est.types[static_cast<std::size_t>(d)];
        if (t < 0 || t >= g.type_count(d))
            throw Error("invalid_argument", "type " + std::to_string(t) + " out of range on directed edge " + std::to_string(d));
        return t;
    };

    double score = 0.0;
    for (PartId p : est.composition.visible)
        score += params.appearance_weights[static_cast<std::size_t>(p - 1)] *
                 terms.appearance[static_cast<std::size_t>(p - 1)][terms.index(loc(p))];
    for (int e : est.composition.edges) {
        for (int d : {2 * e, 2 * e + 1}) {
            const auto [from, to] = g.directed(d);
            const int t = type(d);
            const auto& dp = params.directed[static_cast<std::size_t>(d)];
            score += deformation_score(dp.deformation[static_cast<std::size_t>(t)],
                                       dp.mean_offsets[static_cast<std::size_t>(t)], loc(from), loc(to));
            score += dp.idpr_weight * terms.idpr[static_cast<std::size_t>(d)][static_cast<std::size_t>(t)][terms.index(loc(from))];
        }
    }
    for (int d : est.composition.decoupled) {
        const auto [from, to] = g.directed(d);
        score += decoupling_bias(g, params, from, to);
        score += params.directed[static_cast<std::size_t>(d)].idpr_weight *
                 terms.idod[static_cast<std::size_t>(d)][terms.index(loc(from))];
    }
    return score;
}

/// Message sent along one directed edge (sender k -> receiver i), indexed
/// by the receiver's location.
struct Message {
    std::vector<double> value;
    std::vector<std::uint8_t> decoupled;  // gamma: 1 when the decoupling branch won
    std::vector<int> source;              // flat index of the maximizing sender location
    std::vector<int> type_out;            // t_{ik}, 0-based
    std::vector<int> type_in;             // t_{ki}, 0-based

    bool computed() const noexcept { return !value.empty(); }
};

struct InferenceOptions {
    /// false runs the single full-graph composition (no decoupling, one pass).
    bool flexible = true;
    PartId root = 1;
};

struct MessageTable {
    int width = 0;
    int height = 0;
    bool flexible = true;
    PartId root = 1;
    std::vector<Message> messages;                  // [directed edge (sender -> receiver)]
    std::vector<double> decoupling_bias;            // [directed edge (i -> j)], B_ij
    std::vector<std::vector<double>> root_scores;   // [part - 1][loc]; empty when not available
    std::vector<int> computations;                  // per directed edge
    std::size_t message_count = 0;

    std::size_t num_locations() const noexcept {
        return static_cast<std::size_t>(width) * static_cast<std::size_t>(height);
    }
    bool has_root_scores(PartId p) const { return !root_scores[static_cast<std::size_t>(p - 1)].empty(); }
};

namespace detail {

/// Combined quadratic of both directed deformation terms of an edge as a
/// function of delta = l_k - l_i, returned as penalty (r = 0) plus constant.
inline std::pair<QuadPenalty, double> combine_deformations(const Deformation& w_ik, const Offset& r_ik,
                                                           const Deformation& w_ki, const Offset& r_ki) {
    // w_ik . psi(delta - r_ik) + w_ki . psi(-delta - r_ki), per axis.
    auto axis = [](double lin1, double quad1, double r1, double lin2, double quad2, double r2) {
        const double a = quad1 + quad2;
        const double b = lin1 - 2.0 * quad1 * r1 - lin2 + 2.0 * quad2 * r2;
        const double c = quad1 * r1 * r1 - lin1 * r1 + quad2 * r2 * r2 - lin2 * r2;
        return std::tuple{a, b, c};
    };
    const auto [ax, bx, cx] = axis(w_ik[0], w_ik[1], r_ik.dx, w_ki[0], w_ki[1], r_ki.dx);
    const auto [ay, by, cy] = axis(w_ik[2], w_ik[3], r_ik.dy, w_ki[2], w_ki[3], r_ki.dy);
    return {QuadPenalty{ax, bx, ay, by, 0.0, 0.0}, cx + cy};
}

class MessagePasser {
public:
    MessagePasser(const TermGrids& terms, const ModelParams& params, const PartGraph& g, const InferenceOptions& opt)
        : terms_(terms), params_(params), g_(g), opt_(opt), L_(terms.num_locations()) {}

    MessageTable run() {
        if (opt_.root < 1 || opt_.root > g_.num_parts()) throw Error("invalid_argument", "root part out of range");
        MessageTable table;
        table.width = terms_.width;
        table.height = terms_.height;
        table.flexible = opt_.flexible;
        table.root = opt_.root;
        table.messages.resize(static_cast<std::size_t>(g_.num_directed()));
        table.computations.assign(static_cast<std::size_t>(g_.num_directed()), 0);
        table.root_scores.assign(static_cast<std::size_t>(g_.num_parts()), {});
        table.decoupling_bias = subtree_biases();

        appearance_.assign(static_cast<std::size_t>(g_.num_parts()), std::vector<double>(L_));
        for (PartId p = 1; p <= g_.num_parts(); ++p) {
            const double w = params_.appearance_weights[static_cast<std::size_t>(p - 1)];
            const auto& src = terms_.appearance[static_cast<std::size_t>(p - 1)];
            auto& dst = appearance_[static_cast<std::size_t>(p - 1)];
            for (std::size_t l = 0; l < L_; ++l) dst[l] = w * src[l];
        }

        const RootedTree tree = root_at(g_, opt_.root);
        // Leaves to root.
        for (auto it = tree.order.rbegin(); it != tree.order.rend(); ++it) {
            const PartId k = *it;
            const PartId parent = tree.parent[static_cast<std::size_t>(k - 1)];
            if (parent == 0) continue;
            compute(table, k, parent);
        }
        // Root to leaves: every part forwards to its children what it
        // collected from all other neighbors, including its own parent.
        if (opt_.flexible) {
            for (PartId p : tree.order)
                for (PartId c : g_.neighbors(p))
                    if (c != tree.parent[static_cast<std::size_t>(p - 1)]) compute(table, p, c);
            for (PartId p = 1; p <= g_.num_parts(); ++p) table.root_scores[static_cast<std::size_t>(p - 1)] = collect(table, p, 0);
        } else {
            table.root_scores[static_cast<std::size_t>(opt_.root - 1)] = collect(table, opt_.root, 0);
        }
        return table;
    }

private:
    std::vector<double> subtree_biases() const {
        std::vector<double> out(static_cast<std::size_t>(g_.num_directed()));
        for (int d = 0; d < g_.num_directed(); ++d) {
            const auto [from, to] = g_.directed(d);
            out[static_cast<std::size_t>(d)] = decoupling_bias(g_, params_, from, to);
        }
        return out;
    }

    /// A_p + sum of messages into p from every neighbor except `skip`.
    std::vector<double> collect(const MessageTable& table, PartId p, PartId skip) const {
        std::vector<double> s = appearance_[static_cast<std::size_t>(p - 1)];
        for (PartId q : g_.neighbors(p)) {
            if (q == skip) continue;
            const auto& m = table.messages[static_cast<std::size_t>(g_.directed_index(q, p))];
            if (!m.computed()) throw Error("invalid_argument", "message schedule out of order");
            for (std::size_t l = 0; l < L_; ++l) s[l] += m.value[l];
        }
        return s;
    }

    void compute(MessageTable& table, PartId k, PartId i) {
        const int d_ki = g_.directed_index(k, i);
        const int d_ik = PartGraph::reverse(d_ki);
        const auto& p_ki = params_.directed[static_cast<std::size_t>(d_ki)];
        const auto& p_ik = params_.directed[static_cast<std::size_t>(d_ik)];
        const int T_ik = g_.type_count(d_ik), T_ki = g_.type_count(d_ki);
        const std::vector<double> subtree = collect(table, k, i);

        // Sender-side evidence per t_ki.
        sender_.resize(static_cast<std::size_t>(T_ki));
        for (int t = 0; t < T_ki; ++t) {
            auto& gk = sender_[static_cast<std::size_t>(t)];
            gk.resize(L_);
            const auto& idpr = terms_.idpr[static_cast<std::size_t>(d_ki)][static_cast<std::size_t>(t)];
            for (std::size_t l = 0; l < L_; ++l) gk[l] = subtree[l] + p_ki.idpr_weight * idpr[l];
        }

        Message m;
        m.value.assign(L_, -std::numeric_limits<double>::infinity());
        m.decoupled.assign(L_, 0);
        m.source.assign(L_, -1);
        m.type_out.assign(L_, -1);
        m.type_in.assign(L_, -1);
        dt_out_.resize(L_);
        dt_arg_.resize(L_);
        for (int t_ik = 0; t_ik < T_ik; ++t_ik) {
            const auto& idpr_i = terms_.idpr[static_cast<std::size_t>(d_ik)][static_cast<std::size_t>(t_ik)];
            for (int t_ki = 0; t_ki < T_ki; ++t_ki) {
                const auto [pen, constant] = combine_deformations(
                    p_ik.deformation[static_cast<std::size_t>(t_ik)], p_ik.mean_offsets[static_cast<std::size_t>(t_ik)],
                    p_ki.deformation[static_cast<std::size_t>(t_ki)], p_ki.mean_offsets[static_cast<std::size_t>(t_ki)]);
                if (!pen.valid()) throw Error("invalid_model", "non-concave deformation on edge (" + std::to_string(i) + "," + std::to_string(k) + ")");
                dt_.run2d(sender_[static_cast<std::size_t>(t_ki)].data(), terms_.width, terms_.height, pen,
                          dt_out_.data(), dt_arg_.data());
                for (std::size_t l = 0; l < L_; ++l) {
                    const double v = dt_out_[l] + constant + p_ik.idpr_weight * idpr_i[l];
                    if (v > m.value[l]) {
                        m.value[l] = v;
                        m.source[l] = dt_arg_[l];
                        m.type_out[l] = t_ik;
                        m.type_in[l] = t_ki;
                    }
                }
            }
        }
        if (opt_.flexible) {
            const double bias = table.decoupling_bias[static_cast<std::size_t>(d_ik)];
            const auto& idod = terms_.idod[static_cast<std::size_t>(d_ik)];
            for (std::size_t l = 0; l < L_; ++l) {
                const double dec = p_ik.idpr_weight * idod[l] + bias;
                // Visible wins exact ties.
                if (dec > m.value[l]) {
                    m.value[l] = dec;
                    m.decoupled[l] = 1;
                }
            }
        }
        table.messages[static_cast<std::size_t>(d_ki)] = std::move(m);
        ++table.computations[static_cast<std::size_t>(d_ki)];
        ++table.message_count;
    }

    const TermGrids& terms_;
    const ModelParams& params_;
    const PartGraph& g_;
    InferenceOptions opt_;
    std::size_t L_;
    std::vector<std::vector<double>> appearance_;
    std::vector<std::vector<double>> sender_;
    std::vector<double> dt_out_;
    std::vector<int> dt_arg_;
    DistanceTransform dt_;
};

} // namespace detail

/// Computes every directed edge message once (two passes over the tree) and
/// the per-part maxima S_i over all compositions containing part i.
inline MessageTable two_pass_messages(const TermGrids& terms, const ModelParams& params, const PartGraph& g,
                                      const InferenceOptions& options = {}) {
    return detail::MessagePasser(terms, params, g, options).run();
}

/// Follows the stored argmax choices from (root, l_root), stopping at every
/// decoupled edge; decoupled subtrees come back as occluded.
inline PoseEstimate backtrack(const MessageTable& table, const PartGraph& g, PartId root, Location l_root) {
    if (root < 1 || root > g.num_parts() || !table.has_root_scores(root))
        throw Error("invalid_argument", "no root scores for part " + std::to_string(root));
    if (l_root.x < 0 || l_root.y < 0 || l_root.x >= table.width || l_root.y >= table.height)
        throw Error("invalid_argument", "root location outside the grid");
    auto flat = [&](Location l) {
        return static_cast<std::size_t>(l.y) * static_cast<std::size_t>(table.width) + static_cast<std::size_t>(l.x);
    };
    PoseEstimate est;
    est.locations.assign(static_cast<std::size_t>(g.num_parts()), std::nullopt);
    est.types.assign(static_cast<std::size_t>(g.num_directed()), -1);
    est.root = root;
    est.score = table.root_scores[static_cast<std::size_t>(root - 1)][flat(l_root)];

    std::vector<PartId> visible;
    std::vector<std::tuple<PartId, PartId, Location>> stack{{root, 0, l_root}};
    while (!stack.empty()) {
        auto [i, parent, li] = stack.back();
        stack.pop_back();
        visible.push_back(i);
        est.locations[static_cast<std::size_t>(i - 1)] = li;
        for (PartId k : g.neighbors(i)) {
            if (k == parent) continue;
            const int d_ki = g.directed_index(k, i);
            const Message& m = table.messages[static_cast<std::size_t>(d_ki)];
            const std::size_t at = flat(li);
            if (m.decoupled[at]) continue;
            const int src = m.source[at];
            const Location lk{src % table.width, src / table.width};
            est.types[static_cast<std::size_t>(PartGraph::reverse(d_ki))] = m.type_out[at];
            est.types[static_cast<std::size_t>(d_ki)] = m.type_in[at];
            stack.emplace_back(k, i, lk);
        }
    }
    est.composition = make_composition(g, std::move(visible));
    return est;
}

/// IoU of two axis-aligned squares of the given side centered at a and b.
inline double part_box_iou(Location a, Location b, double side) {
    const double ox = std::max(0.0, side - std::abs(static_cast<double>(a.x - b.x)));
    const double oy = std::max(0.0, side - std::abs(static_cast<double>(a.y - b.y)));
    const double inter = ox * oy;
    return inter / (2.0 * side * side - inter);
}

/// True when some part visible in both estimates overlaps with IoU > threshold.
inline bool parts_overlap(const PoseEstimate& a, const PoseEstimate& b, double part_box, double iou_threshold) {
    for (std::size_t p = 0; p < a.locations.size(); ++p)
        if (a.locations[p] && b.locations[p] && part_box_iou(*a.locations[p], *b.locations[p], part_box) > iou_threshold)
            return true;
    return false;
}

namespace detail {

inline bool detection_before(const PoseEstimate& a, const PoseEstimate& b) {
    if (a.score != b.score) return a.score > b.score;
    if (a.root != b.root) return a.root < b.root;
    return *a.location(a.root) < *b.location(b.root);
}

} // namespace detail

/// Greedy part-based NMS. Output is sorted by score and independent of the
/// input order.
inline std::vector<PoseEstimate> part_nms(std::vector<PoseEstimate> candidates, double iou_threshold, double part_box) {
    std::sort(candidates.begin(), candidates.end(), detail::detection_before);
    std::vector<PoseEstimate> kept;
    for (auto& c : candidates) {
        bool suppressed = false;
        for (const auto& k : kept)
            if (parts_overlap(c, k, part_box, iou_threshold)) {
                suppressed = true;
                break;
            }
        if (!suppressed) kept.push_back(std::move(c));
    }
    return kept;
}

struct DetectOptions {
    double threshold = 0.0;
    int min_parts = 1;
    double nms_iou = 0.6;
    /// Side of the square part box; <= 0 selects 1/10 of the larger grid side.
    double part_box = 0.0;
    bool flexible = true;
    /// Compare S + b0 (rather than S) against the threshold.
    bool add_svm_bias = true;
    /// Stop after this many detections survive NMS; 0 keeps all.
    std::size_t max_detections = 0;
};

inline double default_part_box(int width, int height) { return std::max(width, height) / 10.0; }

/// Thresholds the per-root maxima, backtracks each candidate and applies
/// part-based NMS.
inline std::vector<PoseEstimate> detect(const TermGrids& terms, const ModelParams& params, const PartGraph& g,
                                        const DetectOptions& opt = {}) {
    if (!(opt.nms_iou > 0.0 && opt.nms_iou <= 1.0)) throw Error("invalid_argument", "nms_iou must lie in (0, 1]");
    if (opt.min_parts < 1) throw Error("invalid_argument", "min_parts must be at least 1");
    const double box = opt.part_box > 0.0 ? opt.part_box : default_part_box(terms.width, terms.height);
    InferenceOptions io;
    io.flexible = opt.flexible;
    const MessageTable table = two_pass_messages(terms, params, g, io);
    const double offset = opt.add_svm_bias ? params.svm_bias : 0.0;

    struct Candidate {
        double score;
        PartId root;
        std::size_t loc;
    };
    std::vector<Candidate> cands;
    for (PartId p = 1; p <= g.num_parts(); ++p) {
        if (!table.has_root_scores(p)) continue;
        const auto& s = table.root_scores[static_cast<std::size_t>(p - 1)];
        for (std::size_t l = 0; l < s.size(); ++l)
            if (s[l] + offset > opt.threshold) cands.push_back({s[l], p, l});
    }
    std::sort(cands.begin(), cands.end(), [](const Candidate& a, const Candidate& b) {
        if (a.score != b.score) return a.score > b.score;
        if (a.root != b.root) return a.root < b.root;
        return a.loc < b.loc;
    });

    std::vector<PoseEstimate> kept;
    for (const auto& c : cands) {
        const Location l{static_cast<int>(c.loc % static_cast<std::size_t>(terms.width)),
                         static_cast<int>(c.loc / static_cast<std::size_t>(terms.width))};
        PoseEstimate est = backtrack(table, g, c.root, l);
        if (static_cast<int>(est.num_visible()) < opt.min_parts) continue;
        bool suppressed = false;
        for (const auto& k : kept)
            if (parts_overlap(est, k, box, opt.nms_iou)) {
                suppressed = true;
                break;
            }
        if (!suppressed) kept.push_back(std::move(est));
        if (opt.max_detections && kept.size() >= opt.max_detections) break;
    }
    return kept;
}

} // namespace flexparse

#endif // FLEXPARSE_INFER_HPP
