#ifndef FLEXPARSE_MODEL_HPP
#define FLEXPARSE_MODEL_HPP

#include "error.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <numbers>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace flexparse {

/// Parts are numbered 1..K. Label 0 is reserved for background.
using PartId = int;

struct Edge {
    PartId i = 0;
    PartId j = 0;
    int types_ij = 1;  // T_ij, spatial types from i towards j
    int types_ji = 1;  // T_ji

    friend bool operator==(const Edge&, const Edge&) = default;
};

struct DirectedEdge {
    PartId from = 0;
    PartId to = 0;
};

/// K-node part tree with per-direction spatial type counts.
///
/// Every undirected edge e yields two directed edges: 2e is (i -> j) and
/// 2e + 1 is (j -> i), with i, j as listed in edges(). Directed indices are
/// used to address all per-direction quantities (weights, offsets, terms,
/// messages).
class PartGraph {
public:
    PartGraph() = default;

    /// Throws Error("invalid_graph") unless the edges form a tree over 1..K.
    static PartGraph create(int num_parts, std::vector<Edge> edges) {
        PartGraph g;
        g.num_parts_ = num_parts;
        g.edges_ = std::move(edges);
        g.check();
        g.index();
        return g;
    }

    int num_parts() const noexcept { return num_parts_; }
    std::span<const Edge> edges() const noexcept { return edges_; }
    int num_edges() const noexcept { return static_cast<int>(edges_.size()); }
    int num_directed() const noexcept { return 2 * num_edges(); }

    DirectedEdge directed(int d) const {
        const Edge& e = edges_[static_cast<std::size_t>(d / 2)];
        return d % 2 == 0 ? DirectedEdge{e.i, e.j} : DirectedEdge{e.j, e.i};
    }
    static int reverse(int d) noexcept { return d ^ 1; }

    /// Directed index of (from -> to), or -1 when the parts are not adjacent.
    int directed_index(PartId from, PartId to) const {
        if (from < 1 || from > num_parts_) return -1;
        const auto& nb = neighbors_[static_cast<std::size_t>(from - 1)];
        for (std::size_t n = 0; n < nb.size(); ++n)
            if (nb[n] == to) return outgoing_[static_cast<std::size_t>(from - 1)][n];
        return -1;
    }

    int type_count(int d) const {
        const Edge& e = edges_[static_cast<std::size_t>(d / 2)];
        return d % 2 == 0 ? e.types_ij : e.types_ji;
    }
    int type_count(PartId from, PartId to) const { return type_count(directed_index(from, to)); }

    /// Neighbors of p in increasing index order.
    const std::vector<PartId>& neighbors(PartId p) const {
        return neighbors_[static_cast<std::size_t>(p - 1)];
    }
    /// Directed indices (p -> neighbors(p)[n]), aligned with neighbors(p).
    const std::vector<int>& outgoing(PartId p) const {
        return outgoing_[static_cast<std::size_t>(p - 1)];
    }

    /// Parts of the subtree hanging off `to` once the edge (from, to) is cut,
    /// in increasing order.
    std::vector<PartId> subtree(PartId from, PartId to) const {
        std::vector<PartId> out;
        std::vector<std::pair<PartId, PartId>> stack{{to, from}};
        while (!stack.empty()) {
            auto [p, parent] = stack.back();
            stack.pop_back();
            out.push_back(p);
            for (PartId q : neighbors(p))
                if (q != parent) stack.emplace_back(q, p);
        }
        std::sort(out.begin(), out.end());
        return out;
    }

    friend bool operator==(const PartGraph& a, const PartGraph& b) {
        return a.num_parts_ == b.num_parts_ && a.edges_ == b.edges_;
    }

private:
    void check() const {
        auto fail = [](const std::string& msg) { throw Error("invalid_graph", msg); };
        if (num_parts_ < 1) fail("part count must be at least 1");
        if (static_cast<int>(edges_.size()) != num_parts_ - 1)
            fail("a tree over " + std::to_string(num_parts_) + " parts needs " +
                 std::to_string(num_parts_ - 1) + " edges, got " + std::to_string(edges_.size()));
        std::vector<int> root(static_cast<std::size_t>(num_parts_) + 1);
        std::iota(root.begin(), root.end(), 0);
        auto find = [&](int x) {
            while (root[static_cast<std::size_t>(x)] != x)
                x = root[static_cast<std::size_t>(x)] = root[static_cast<std::size_t>(root[static_cast<std::size_t>(x)])];
            return x;
        };
        for (const Edge& e : edges_) {
            const std::string name = "(" + std::to_string(e.i) + "," + std::to_string(e.j) + ")";
            if (e.i < 1 || e.j < 1 || e.i > num_parts_ || e.j > num_parts_)
                fail("edge " + name + " references a part outside 1.." + std::to_string(num_parts_));
            if (e.i == e.j) fail("self loop on part " + std::to_string(e.i));
            if (e.types_ij < 1 || e.types_ji < 1)
                fail("edge " + name + " needs positive type counts in both directions");
            int a = find(e.i), b = find(e.j);
            if (a == b) fail("edge " + name + " closes a cycle");
            root[static_cast<std::size_t>(a)] = b;
        }
    }

    void index() {
        neighbors_.assign(static_cast<std::size_t>(num_parts_), {});
        outgoing_.assign(static_cast<std::size_t>(num_parts_), {});
        std::vector<std::vector<std::pair<PartId, int>>> adj(static_cast<std::size_t>(num_parts_));
        for (std::size_t e = 0; e < edges_.size(); ++e) {
            adj[static_cast<std::size_t>(edges_[e].i - 1)].emplace_back(edges_[e].j, static_cast<int>(2 * e));
            adj[static_cast<std::size_t>(edges_[e].j - 1)].emplace_back(edges_[e].i, static_cast<int>(2 * e + 1));
        }
        for (std::size_t p = 0; p < adj.size(); ++p) {
            std::sort(adj[p].begin(), adj[p].end());
            for (auto [q, d] : adj[p]) {
                neighbors_[p].push_back(q);
                outgoing_[p].push_back(d);
            }
        }
    }

    int num_parts_ = 0;
    std::vector<Edge> edges_;
    std::vector<std::vector<PartId>> neighbors_;
    std::vector<std::vector<int>> outgoing_;
};

/// BFS rooting of a PartGraph. order[0] is the root; parent[root] = 0.
struct RootedTree {
    PartId root = 1;
    std::vector<PartId> order;
    std::vector<PartId> parent;  // indexed by part - 1
};

inline RootedTree root_at(const PartGraph& g, PartId root) {
    RootedTree t;
    t.root = root;
    t.parent.assign(static_cast<std::size_t>(g.num_parts()), 0);
    t.order.push_back(root);
    for (std::size_t head = 0; head < t.order.size(); ++head) {
        PartId p = t.order[head];
        for (PartId q : g.neighbors(p)) {
            if (q == t.parent[static_cast<std::size_t>(p - 1)]) continue;
            t.parent[static_cast<std::size_t>(q - 1)] = p;
            t.order.push_back(q);
        }
    }
    return t;
}

/// Weights on [dx, dx^2, dy, dy^2].
using Deformation = std::array<double, 4>;

struct Offset {
    double dx = 0.0;
    double dy = 0.0;

    friend bool operator==(const Offset&, const Offset&) = default;
};

/// Angle of an offset, counterclockwise from +x, in [0, 2pi).
inline double offset_angle(const Offset& o) {
    const double a = std::atan2(o.dy, o.dx);
    return a < 0.0 ? a + 2.0 * std::numbers::pi : a;
}

/// Types on every directed edge are numbered by increasing offset angle.
/// Score maps must use the same numbering for their pairwise digits.
inline void sort_types_by_angle(std::vector<Offset>& centers) {
    std::stable_sort(centers.begin(), centers.end(),
                     [](const Offset& a, const Offset& b) { return offset_angle(a) < offset_angle(b); });
}


struct DirectedParams {
    double idpr_weight = 1.0;  // w_ij, shared by the IDPR and IDOD terms of this direction
    std::vector<Deformation> deformation;  // one per spatial type
    std::vector<Offset> mean_offsets;      // one per spatial type

    friend bool operator==(const DirectedParams&, const DirectedParams&) = default;
};

/// All learned scalars and vectors of the model. Per-part vectors are
/// indexed by part - 1, per-direction data by directed edge index.
struct ModelParams {
    std::vector<double> appearance_weights;
    std::vector<DirectedParams> directed;
    std::vector<double> part_biases;
    double svm_bias = 0.0;

    friend bool operator==(const ModelParams&, const ModelParams&) = default;
};

struct Model {
    PartGraph graph;
    ModelParams params;
};

/// Returns one human-readable diagnostic per violated parameter invariant.
inline std::vector<std::string> validate_model(const PartGraph& g, const ModelParams& params) {
    std::vector<std::string> out;
    const auto K = static_cast<std::size_t>(g.num_parts());
    if (params.appearance_weights.size() != K)
        out.push_back("expected " + std::to_string(K) + " appearance weights, got " +
                      std::to_string(params.appearance_weights.size()));
    if (params.part_biases.size() != K)
        out.push_back("expected " + std::to_string(K) + " part biases, got " +
                      std::to_string(params.part_biases.size()));
    if (params.directed.size() != static_cast<std::size_t>(g.num_directed())) {
        out.push_back("expected parameters for " + std::to_string(g.num_directed()) +
                      " directed edges, got " + std::to_string(params.directed.size()));
        return out;
    }
    for (int d = 0; d < g.num_directed(); ++d) {
        const auto [from, to] = g.directed(d);
        const std::string name = "(" + std::to_string(from) + "," + std::to_string(to) + ")";
        const auto& dp = params.directed[static_cast<std::size_t>(d)];
        const auto T = static_cast<std::size_t>(g.type_count(d));
        for (std::size_t t = dp.mean_offsets.size(); t < T; ++t)
            out.push_back("missing mean offset for edge " + name + " type " + std::to_string(t + 1));
        if (dp.mean_offsets.size() > T)
            out.push_back("edge " + name + " has " + std::to_string(dp.mean_offsets.size()) +
                          " mean offsets for " + std::to_string(T) + " types");
        for (std::size_t t = dp.deformation.size(); t < T; ++t)
            out.push_back("missing deformation weights for edge " + name + " type " + std::to_string(t + 1));
        if (dp.deformation.size() > T)
            out.push_back("edge " + name + " has " + std::to_string(dp.deformation.size()) +
                          " deformation weight vectors for " + std::to_string(T) + " types");
        for (std::size_t t = 0; t < std::min(T, dp.deformation.size()); ++t) {
            const auto& w = dp.deformation[t];
            if (!(w[1] < 0.0) || !(w[3] < 0.0))
                out.push_back("non-concave deformation on edge " + name + " type " + std::to_string(t + 1));
        }
    }
    return out;
}

/// Sum of part biases over the subtree cut off at (from -> to): B_{from,to}.
inline double decoupling_bias(const PartGraph& g, const ModelParams& params, PartId from, PartId to) {
    double b = 0.0;
    for (PartId p : g.subtree(from, to)) b += params.part_biases[static_cast<std::size_t>(p - 1)];
    return b;
}

/// Enumeration of the label space: background plus, for every part g, the
/// product over its sorted neighbors j of {0 (decoupled), 1..T_gj (type)}.
///
/// Order: background first, then parts 1..K, assignments lexicographic with
/// the smallest neighbor index as the most significant digit.
class LabelSpace {
public:
    struct Label {
        PartId part = 0;              // 0 = background
        std::vector<int> assignment;  // aligned with graph.neighbors(part)

        friend bool operator==(const Label&, const Label&) = default;
    };

    LabelSpace() = default;
    explicit LabelSpace(const PartGraph& g) {
        const auto K = static_cast<std::size_t>(g.num_parts());
        offsets_.assign(K + 1, 0);
        radices_.assign(K + 1, {});
        std::size_t next = 1;
        for (PartId p = 1; p <= g.num_parts(); ++p) {
            offsets_[static_cast<std::size_t>(p)] = next;
            std::size_t block = 1;
            for (int d : g.outgoing(p)) {
                radices_[static_cast<std::size_t>(p)].push_back(g.type_count(d) + 1);
                block *= static_cast<std::size_t>(g.type_count(d) + 1);
            }
            next += block;
        }
        size_ = next;
    }

    std::size_t size() const noexcept { return size_; }
    int num_parts() const noexcept { return static_cast<int>(offsets_.size()) - 1; }

    /// First flat index of the block belonging to part p.
    std::size_t offset(PartId p) const { return offsets_[static_cast<std::size_t>(p)]; }
    std::size_t block_size(PartId p) const {
        std::size_t b = 1;
        for (int r : radices_[static_cast<std::size_t>(p)]) b *= static_cast<std::size_t>(r);
        return b;
    }
    /// Digit sizes (T_pj + 1) for part p, aligned with neighbors(p).
    const std::vector<int>& radices(PartId p) const { return radices_[static_cast<std::size_t>(p)]; }

    std::size_t encode(PartId part, std::span<const int> assignment) const {
        if (part == 0) {
            if (!assignment.empty()) throw Error("invalid_argument", "background takes no assignment");
            return 0;
        }
        if (part < 1 || part > num_parts()) throw Error("invalid_argument", "part out of range");
        const auto& rad = radices(part);
        if (assignment.size() != rad.size())
            throw Error("invalid_argument", "assignment length does not match neighbor count");
        std::size_t idx = 0;
        for (std::size_t n = 0; n < rad.size(); ++n) {
            if (assignment[n] < 0 || assignment[n] >= rad[n])
                throw Error("invalid_argument", "assignment digit out of range");
            idx = idx * static_cast<std::size_t>(rad[n]) + static_cast<std::size_t>(assignment[n]);
        }
        return offset(part) + idx;
    }

    Label decode(std::size_t index) const {
        if (index >= size_) throw Error("invalid_argument", "label index out of range");
        if (index == 0) return {};
        auto it = std::upper_bound(offsets_.begin() + 1, offsets_.end(), index);
        const auto part = static_cast<PartId>(std::distance(offsets_.begin(), it) - 1);
        Label out{part, std::vector<int>(radices(part).size())};
        std::size_t rem = index - offset(part);
        const auto& rad = radices(part);
        for (std::size_t n = rad.size(); n-- > 0;) {
            out.assignment[n] = static_cast<int>(rem % static_cast<std::size_t>(rad[n]));
            rem /= static_cast<std::size_t>(rad[n]);
        }
        return out;
    }

private:
    std::vector<std::size_t> offsets_;
    std::vector<std::vector<int>> radices_;
    std::size_t size_ = 0;
};

inline LabelSpace build_label_space(const PartGraph& g) { return LabelSpace(g); }

} // namespace flexparse

#endif // FLEXPARSE_MODEL_HPP
