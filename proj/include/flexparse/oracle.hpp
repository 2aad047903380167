#ifndef FLEXPARSE_ORACLE_HPP
#define FLEXPARSE_ORACLE_HPP

// Brute-force references for the flexible-composition DP. Everything here is
// deliberately slow and written against the score definition, not against
// the message-passing code.

#include "error.hpp"
#include "infer.hpp"
#include "model.hpp"
#include "scoremap.hpp"

#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <string>
#include <vector>

namespace flexparse::oracle {

namespace detail {

inline void grow(const PartGraph& g, PartId anchor, std::vector<PartId>& current, const std::vector<PartId>& frontier,
                 std::vector<char>& used, std::vector<Composition>& out) {
    out.push_back(make_composition(g, current));
    std::vector<PartId> blocked_here;
    for (std::size_t idx = 0; idx < frontier.size(); ++idx) {
        const PartId c = frontier[idx];
        std::vector<PartId> next(frontier.begin() + static_cast<std::ptrdiff_t>(idx) + 1, frontier.end());
        used[static_cast<std::size_t>(c)] = 1;
        for (PartId q : g.neighbors(c))
            if (q > anchor && !used[static_cast<std::size_t>(q)] &&
                std::find(next.begin(), next.end(), q) == next.end())
                next.push_back(q);
        current.push_back(c);
        grow(g, anchor, current, next, used, out);
        current.pop_back();
        // c stays marked for the remaining siblings so no set is produced twice.
        blocked_here.push_back(c);
    }
    for (PartId c : blocked_here) used[static_cast<std::size_t>(c)] = 0;
}

} // namespace detail

/// Every connected non-empty part set exactly once. Sets are grown from
/// their smallest part (the anchor), anchors in increasing order.
inline std::vector<Composition> enumerate_compositions(const PartGraph& g) {
    std::vector<Composition> out;
    std::vector<char> used(static_cast<std::size_t>(g.num_parts()) + 1, 0);
    for (PartId anchor = 1; anchor <= g.num_parts(); ++anchor) {
        std::vector<PartId> current{anchor};
        std::vector<PartId> frontier;
        for (PartId q : g.neighbors(anchor))
            if (q > anchor) frontier.push_back(q);
        used[static_cast<std::size_t>(anchor)] = 1;
        detail::grow(g, anchor, current, frontier, used, out);
        used[static_cast<std::size_t>(anchor)] = 0;
    }
    return out;
}

/// Number of connected subtrees: sum over parts of prod over children (1 + f(child)).
inline std::uint64_t count_compositions(const PartGraph& g) {
    const RootedTree t = root_at(g, 1);
    std::vector<std::uint64_t> f(static_cast<std::size_t>(g.num_parts()), 1);
    std::uint64_t total = 0;
    for (auto it = t.order.rbegin(); it != t.order.rend(); ++it) {
        const PartId p = *it;
        total += f[static_cast<std::size_t>(p - 1)];
        const PartId parent = t.parent[static_cast<std::size_t>(p - 1)];
        if (parent != 0) f[static_cast<std::size_t>(parent - 1)] *= 1 + f[static_cast<std::size_t>(p - 1)];
    }
    return total;
}

struct BruteForceResult {
    double score = -std::numeric_limits<double>::infinity();
    PoseEstimate estimate;
    std::uint64_t assignments = 0;  // (composition, location assignment) pairs visited
};

inline constexpr double kDefaultGuard = 1e8;

/// Number of (composition, location assignment) pairs brute_force_best visits.
inline double brute_force_work(const PartGraph& g, std::size_t locations) {
    double work = 0.0;
    for (const auto& c : enumerate_compositions(g))
        work += std::pow(static_cast<double>(locations), static_cast<double>(c.visible.size()));
    return work;
}

namespace detail {

class Exhaustive {
public:
    Exhaustive(const TermGrids& terms, const ModelParams& params, const PartGraph& g)
        : terms_(terms), params_(params), g_(g), L_(terms.num_locations()) {}

    void search(const Composition& c, BruteForceResult& best) {
        comp_ = &c;
        // Placement order: BFS inside the composition so each part after the
        // first has its composition parent already placed.
        order_.assign(1, c.visible.front());
        parent_.assign(static_cast<std::size_t>(g_.num_parts()) + 1, 0);
        for (std::size_t h = 0; h < order_.size(); ++h)
            for (PartId q : g_.neighbors(order_[h]))
                if (c.contains(q) && q != parent_[static_cast<std::size_t>(order_[h])] && q != c.visible.front() &&
                    parent_[static_cast<std::size_t>(q)] == 0) {
                    parent_[static_cast<std::size_t>(q)] = order_[h];
                    order_.push_back(q);
                }
        placed_.assign(static_cast<std::size_t>(g_.num_parts()) + 1, 0);
        best_types_.assign(order_.size(), {-1, -1});
        unary_.assign(static_cast<std::size_t>(g_.num_parts()) + 1, {});
        for (PartId p : order_) {
            auto& u = unary_[static_cast<std::size_t>(p)];
            u.resize(L_);
            for (std::size_t l = 0; l < L_; ++l) u[l] = unary(p, l);
        }
        place(0, 0.0, best);
    }

private:
    // Best (t_ij, t_ji) and its value for the edge between placed parent i
    // and child j at the given locations.
    std::pair<double, std::pair<int, int>> edge_best(PartId i, PartId j, std::size_t li, std::size_t lj) const {
        const int d_ij = g_.directed_index(i, j), d_ji = g_.directed_index(j, i);
        const auto& p_ij = params_.directed[static_cast<std::size_t>(d_ij)];
        const auto& p_ji = params_.directed[static_cast<std::size_t>(d_ji)];
        const Location a = loc(li), b = loc(lj);
        double best = -std::numeric_limits<double>::infinity();
        std::pair<int, int> arg{-1, -1};
        // Written out term by term; no shared quadratic expansion with infer.
        auto half = [](const Deformation& w, const Offset& r, double dx, double dy) {
            const double ex = dx - r.dx, ey = dy - r.dy;
            return w[0] * ex + w[1] * ex * ex + w[2] * ey + w[3] * ey * ey;
        };
        for (int t = 0; t < g_.type_count(d_ij); ++t) {
            const auto ti = static_cast<std::size_t>(t);
            const double forward = half(p_ij.deformation[ti], p_ij.mean_offsets[ti], b.x - a.x, b.y - a.y) +
                                   p_ij.idpr_weight * terms_.idpr[static_cast<std::size_t>(d_ij)][ti][li];
            for (int u = 0; u < g_.type_count(d_ji); ++u) {
                const auto ui = static_cast<std::size_t>(u);
                const double v = forward + half(p_ji.deformation[ui], p_ji.mean_offsets[ui], a.x - b.x, a.y - b.y) +
                                 p_ji.idpr_weight * terms_.idpr[static_cast<std::size_t>(d_ji)][ui][lj];
                if (v > best) {
                    best = v;
                    arg = {t, u};
                }
            }
        }
        return {best, arg};
    }

    // Unary contribution of placing visible part p at l: appearance plus,
    // for every neighbor outside the composition, its subtree bias and IDOD.
    double unary(PartId p, std::size_t l) const {
        double s = params_.appearance_weights[static_cast<std::size_t>(p - 1)] * terms_.appearance[static_cast<std::size_t>(p - 1)][l];
        for (PartId q : g_.neighbors(p)) {
            if (comp_->contains(q)) continue;
            const int d = g_.directed_index(p, q);
            for (PartId r : g_.subtree(p, q)) s += params_.part_biases[static_cast<std::size_t>(r - 1)];
            s += params_.directed[static_cast<std::size_t>(d)].idpr_weight * terms_.idod[static_cast<std::size_t>(d)][l];
        }
        return s;
    }

    void place(std::size_t idx, double partial, BruteForceResult& best) {
        if (idx == order_.size()) {
            ++best.assignments;
            if (partial > best.score) {
                best.score = partial;
                record(best);
            }
            return;
        }
        const PartId p = order_[idx];
        const PartId parent = parent_[static_cast<std::size_t>(p)];
        for (std::size_t l = 0; l < L_; ++l) {
            double s = partial + unary_[static_cast<std::size_t>(p)][l];
            if (parent != 0) {
                const auto [v, types] = edge_best(parent, p, placed_[static_cast<std::size_t>(parent)], l);
                s += v;
                best_types_[idx] = types;
            }
            placed_[static_cast<std::size_t>(p)] = l;
            place(idx + 1, s, best);
        }
    }

    void record(BruteForceResult& best) const {
        PoseEstimate& e = best.estimate;
        e.composition = *comp_;
        e.locations.assign(static_cast<std::size_t>(g_.num_parts()), std::nullopt);
        e.types.assign(static_cast<std::size_t>(g_.num_directed()), -1);
        e.root = order_.front();
        e.score = best.score;
        for (std::size_t idx = 0; idx < order_.size(); ++idx) {
            const PartId p = order_[idx];
            e.locations[static_cast<std::size_t>(p - 1)] = loc(placed_[static_cast<std::size_t>(p)]);
            const PartId parent = parent_[static_cast<std::size_t>(p)];
            if (parent == 0) continue;
            e.types[static_cast<std::size_t>(g_.directed_index(parent, p))] = best_types_[idx].first;
            e.types[static_cast<std::size_t>(g_.directed_index(p, parent))] = best_types_[idx].second;
        }
    }

    Location loc(std::size_t l) const {
        return {static_cast<int>(l % static_cast<std::size_t>(terms_.width)),
                static_cast<int>(l / static_cast<std::size_t>(terms_.width))};
    }

    const TermGrids& terms_;
    const ModelParams& params_;
    const PartGraph& g_;
    std::size_t L_;
    const Composition* comp_ = nullptr;
    std::vector<PartId> order_;
    std::vector<PartId> parent_;
    std::vector<std::size_t> placed_;
    std::vector<std::pair<int, int>> best_types_;
    std::vector<std::vector<double>> unary_;
};

} // namespace detail

/// Exhaustive maximum of the composition score over every composition and
/// every location assignment of its visible parts. Each kept edge's type
/// pair only enters that edge's term, so it is maximized exhaustively per
/// edge once both endpoints are placed.
inline BruteForceResult brute_force_best(const TermGrids& terms, const ModelParams& params, const PartGraph& g,
                                         double guard = kDefaultGuard) {
    const double work = brute_force_work(g, terms.num_locations());
    if (work > guard)
        throw Error("too_large", "brute force would visit " + std::to_string(work) + " assignments (guard " +
                                     std::to_string(guard) + ")");
    BruteForceResult best;
    detail::Exhaustive search(terms, params, g);
    for (const auto& c : enumerate_compositions(g)) search.search(c, best);
    return best;
}


// ------------------------------------------------------ equivalence suite --

struct EquivalenceOptions {
    int min_parts = 2;
    int max_parts = 6;
    int max_side = 7;
    int max_types = 2;
    /// Grids are shrunk until the brute force visits at most this many
    /// assignments.
    double budget = 5e6;
    double tolerance = 1e-6;
};

struct EquivalenceReport {
    int trials = 0;
    int matched = 0;
    double worst_gap = 0.0;
    std::vector<std::string> failures;
};

/// One random instance: tree, concave parameters and log-probability terms.
struct Instance {
    PartGraph graph;
    ModelParams params;
    TermGrids terms;
};

inline Instance random_instance(std::mt19937_64& rng, const EquivalenceOptions& opt = {}) {
    std::uniform_int_distribution<int> parts(opt.min_parts, opt.max_parts), side(1, opt.max_side),
        types(1, opt.max_types);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    auto uni = [&](double lo, double hi) { return lo + (hi - lo) * unit(rng); };
    const int K = parts(rng);
    std::vector<Edge> edges;
    for (int v = 2; v <= K; ++v)
        edges.push_back({std::uniform_int_distribution<int>(1, v - 1)(rng), v, types(rng), types(rng)});
    Instance in{PartGraph::create(K, std::move(edges)), {}, {}};
    int w = side(rng), h = side(rng);
    while (brute_force_work(in.graph, static_cast<std::size_t>(w * h)) > opt.budget) (w >= h ? w : h) -= 1;

    for (int k = 0; k < K; ++k) {
        in.params.appearance_weights.push_back(uni(0.2, 1.5));
        in.params.part_biases.push_back(uni(-2.0, 0.5));
    }
    for (int d = 0; d < in.graph.num_directed(); ++d) {
        DirectedParams dp;
        dp.idpr_weight = uni(0.2, 1.5);
        for (int t = 0; t < in.graph.type_count(d); ++t) {
            dp.deformation.push_back({uni(-0.5, 0.5), uni(-0.6, -0.05), uni(-0.5, 0.5), uni(-0.6, -0.05)});
            dp.mean_offsets.push_back({uni(-2.0, 2.0), uni(-2.0, 2.0)});
        }
        in.params.directed.push_back(std::move(dp));
    }
    in.terms = TermGrids::zeros(in.graph, w, h);
    auto fill = [&](std::vector<double>& grid) {
        for (double& v : grid) v = uni(-6.0, 0.0);
    };
    for (auto& grid : in.terms.appearance) fill(grid);
    for (auto& per_type : in.terms.idpr)
        for (auto& grid : per_type) fill(grid);
    for (auto& grid : in.terms.idod) fill(grid);
    return in;
}

/// Best root score over every part and location, with where it was found.
inline double global_best(const MessageTable& table, PartId* root = nullptr, Location* where = nullptr) {
    double best = -std::numeric_limits<double>::infinity();
    for (PartId p = 1; p <= static_cast<int>(table.root_scores.size()); ++p) {
        if (!table.has_root_scores(p)) continue;
        const auto& s = table.root_scores[static_cast<std::size_t>(p - 1)];
        for (std::size_t l = 0; l < s.size(); ++l)
            if (s[l] > best) {
                best = s[l];
                if (root) *root = p;
                if (where) *where = {static_cast<int>(l % static_cast<std::size_t>(table.width)),
                                     static_cast<int>(l / static_cast<std::size_t>(table.width))};
            }
    }
    return best;
}

/// Runs `trials` seeded random instances and compares the message-passing
/// maximum, and the score of its backtracked estimate, with brute force.
inline EquivalenceReport check_equivalence(std::uint64_t seed, int trials, const EquivalenceOptions& opt = {}) {
    if (trials < 0) throw Error("invalid_argument", "trial count must be non-negative");
    EquivalenceReport rep;
    std::mt19937_64 rng(seed);
    for (int n = 0; n < trials; ++n) {
        const Instance in = random_instance(rng, opt);
        const MessageTable table = two_pass_messages(in.terms, in.params, in.graph);
        PartId root = 0;
        Location where{};
        const double dp = global_best(table, &root, &where);
        const double bf = brute_force_best(in.terms, in.params, in.graph).score;
        const double rescored = score_composition(backtrack(table, in.graph, root, where), in.terms, in.params, in.graph);
        const double gap = std::max(std::abs(dp - bf), std::abs(rescored - bf));
        rep.worst_gap = std::max(rep.worst_gap, gap);
        ++rep.trials;
        if (gap <= opt.tolerance) {
            ++rep.matched;
        } else {
            rep.failures.push_back("trial " + std::to_string(n) + ": K=" + std::to_string(in.graph.num_parts()) + " " +
                                   std::to_string(in.terms.width) + "x" + std::to_string(in.terms.height) +
                                   " dp " + std::to_string(dp) + " brute force " + std::to_string(bf) +
                                   " backtracked " + std::to_string(rescored));
        }
    }
    return rep;
}

} // namespace flexparse::oracle

#endif // FLEXPARSE_ORACLE_HPP
