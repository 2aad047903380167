#ifndef FLEXPARSE_SYNTH_HPP
#define FLEXPARSE_SYNTH_HPP

#include "error.hpp"
#include "infer.hpp"
#include "model.hpp"
#include "pose_io.hpp"
#include "scoremap.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <string>
#include <vector>

namespace flexparse {

/// SplitMix64 step, used to derive independent per-item seeds.
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
    std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

struct SynthModelOptions {
    int max_degree = 3;
    double ring_radius = 4.0;
    double min_quadratic = -0.4;
    double max_quadratic = -0.2;
    double min_bias = -3.5;
    double max_bias = -2.5;
};

namespace detail {

/// Decodes a Prüfer sequence over parts 1..K into tree edges.
inline std::vector<std::pair<PartId, PartId>> pruefer_edges(const std::vector<PartId>& seq, int K) {
    std::vector<int> degree(static_cast<std::size_t>(K) + 1, 1);
    for (PartId v : seq) ++degree[static_cast<std::size_t>(v)];
    std::vector<std::pair<PartId, PartId>> edges;
    for (PartId v : seq) {
        PartId leaf = 1;
        while (degree[static_cast<std::size_t>(leaf)] != 1) ++leaf;
        edges.emplace_back(std::min(leaf, v), std::max(leaf, v));
        --degree[static_cast<std::size_t>(leaf)];
        --degree[static_cast<std::size_t>(v)];
    }
    PartId u = 0, w = 0;
    for (PartId v = 1; v <= K; ++v)
        if (degree[static_cast<std::size_t>(v)] == 1) (u ? w : u) = v;
    edges.emplace_back(u, w);
    return edges;
}

} // namespace detail

/// Ground-truth model for synthetic data: a random tree of bounded degree,
/// mean offsets evenly spaced on a ring, concave deformations, unit term
/// weights and negative part biases. The ring starts a quarter step past
/// the +x axis in both directions, so types keep the angle order that
/// `kmeans_types` assigns even when the recovered centers are noisy.
inline Model gen_model(std::uint64_t seed, int K, int T, const SynthModelOptions& opt = {}) {
    if (K < 1) throw Error("invalid_argument", "need at least one part");
    if (T < 1) throw Error("invalid_argument", "need at least one type per edge");
    std::mt19937_64 rng(seed);
    std::vector<std::pair<PartId, PartId>> pairs;
    if (K == 2) {
        pairs.emplace_back(1, 2);
    } else if (K > 2) {
        if (opt.max_degree < 2) throw Error("invalid_argument", "max_degree must be at least 2");
        std::uniform_int_distribution<int> vertex(1, K);
        std::vector<PartId> seq(static_cast<std::size_t>(K - 2));
        for (;;) {
            for (auto& v : seq) v = vertex(rng);
            std::vector<int> count(static_cast<std::size_t>(K) + 1, 0);
            bool ok = true;
            for (PartId v : seq) ok &= ++count[static_cast<std::size_t>(v)] + 1 <= opt.max_degree;
            if (ok) break;
        }
        pairs = detail::pruefer_edges(seq, K);
    }
    std::sort(pairs.begin(), pairs.end());
    std::vector<Edge> edges;
    for (auto [i, j] : pairs) edges.push_back({i, j, T, T});

    Model m;
    m.graph = PartGraph::create(K, std::move(edges));
    std::uniform_real_distribution<double> quad(opt.min_quadratic, opt.max_quadratic), bias(opt.min_bias, opt.max_bias);
    m.params.appearance_weights.assign(static_cast<std::size_t>(K), 1.0);
    for (int k = 0; k < K; ++k) m.params.part_biases.push_back(bias(rng));
    m.params.directed.resize(static_cast<std::size_t>(m.graph.num_directed()));
    for (int e = 0; e < m.graph.num_edges(); ++e) {
        const double step = 2.0 * std::numbers::pi / T;
        auto& fwd = m.params.directed[static_cast<std::size_t>(2 * e)];
        auto& bwd = m.params.directed[static_cast<std::size_t>(2 * e + 1)];
        for (int t = 0; t < T; ++t) {
            const double angle = step * (t + 0.25);
            const Offset r{opt.ring_radius * std::cos(angle), opt.ring_radius * std::sin(angle)};
            fwd.mean_offsets.push_back(r);
            bwd.mean_offsets.push_back({-r.dx, -r.dy});
            fwd.deformation.push_back({0.0, quad(rng), 0.0, quad(rng)});
            bwd.deformation.push_back({0.0, quad(rng), 0.0, quad(rng)});
        }
        sort_types_by_angle(bwd.mean_offsets);
    }
    return m;
}

struct SceneOptions {
    int width = 64;
    int height = 48;
    /// Peak probability of a part's true label at its location.
    double p_hit = 0.7;
    /// Spread of that mass to nearby cells.
    double kernel_sigma = 1.0;
    /// Concentration of the Dirichlet noise over labels.
    double concentration = 0.01;
    /// Share of non-hit mass that goes to noise rather than background.
    double noise_mass = 0.05;
    /// Standard deviation of part placement around the mean offset.
    double jitter = 1.0;
    /// Probability that a visible part produces only faint evidence.
    double faint_rate = 0.25;
    double faint_factor = 0.02;
    /// Minimum distance between the root locations of two people.
    double min_separation = 8.0;
    int max_tries = 100;
};

struct Scene {
    std::vector<Person> people;
    ScoreMapSet maps;
};

namespace detail {

/// Dirichlet(alpha, ..., alpha) sample of size n; falls back to a random
/// one-hot vector when every gamma draw underflows.
inline std::vector<double> dirichlet(std::mt19937_64& rng, std::size_t n, double alpha) {
    std::gamma_distribution<double> gamma(alpha, 1.0);
    std::vector<double> v(n);
    double sum = 0.0;
    for (double& x : v) sum += (x = gamma(rng));
    if (!(sum > 0.0) || !std::isfinite(sum)) {
        std::fill(v.begin(), v.end(), 0.0);
        v[std::uniform_int_distribution<std::size_t>(0, n - 1)(rng)] = 1.0;
        return v;
    }
    for (double& x : v) x /= sum;
    return v;
}

struct Placed {
    std::vector<Location> where;   // [part - 1], every part placed
    std::vector<char> visible;     // [part - 1]
    std::vector<int> types;        // [directed edge], 0-based
};

} // namespace detail

/// Samples visible sets, places people and renders their score maps.
inline Scene gen_scene(std::uint64_t seed, const Model& model, int n_people, double occlusion_rate,
                       const SceneOptions& opt = {}, const std::string& image_id = "scene") {
    if (!(occlusion_rate >= 0.0 && occlusion_rate <= 1.0))
        throw Error("invalid_argument", "occlusion rate must lie in [0, 1]");
    if (n_people < 0) throw Error("invalid_argument", "number of people must be non-negative");
    if (opt.width < 1 || opt.height < 1) throw Error("invalid_argument", "grid must be at least 1x1");
    const PartGraph& g = model.graph;
    const int K = g.num_parts();
    std::mt19937_64 rng(seed);
    std::bernoulli_distribution cut(occlusion_rate);
    std::normal_distribution<double> noise(0.0, opt.jitter);
    std::uniform_int_distribution<int> ux(0, opt.width - 1), uy(0, opt.height - 1), upart(1, K);

    std::vector<detail::Placed> placed;
    for (int n = 0; n < n_people; ++n) {
        // Visible set: prune from a random root, cutting each edge with the
        // occlusion probability.
        detail::Placed person;
        person.visible.assign(static_cast<std::size_t>(K), 0);
        const PartId root = upart(rng);
        const RootedTree tree = root_at(g, root);
        person.visible[static_cast<std::size_t>(root - 1)] = 1;
        for (PartId p : tree.order) {
            const PartId parent = tree.parent[static_cast<std::size_t>(p - 1)];
            if (parent && person.visible[static_cast<std::size_t>(parent - 1)] && !cut(rng))
                person.visible[static_cast<std::size_t>(p - 1)] = 1;
        }
        person.types.assign(static_cast<std::size_t>(g.num_directed()), 0);
        for (int e = 0; e < g.num_edges(); ++e) {
            const int t = std::uniform_int_distribution<int>(0, g.type_count(2 * e) - 1)(rng);
            person.types[static_cast<std::size_t>(2 * e)] = t;
            // Reverse type: the one whose offset best undoes the forward one.
            const auto& fwd = model.params.directed[static_cast<std::size_t>(2 * e)].mean_offsets[static_cast<std::size_t>(t)];
            const auto& back = model.params.directed[static_cast<std::size_t>(2 * e + 1)].mean_offsets;
            int best = 0;
            for (int u = 1; u < static_cast<int>(back.size()); ++u) {
                const auto gap = [&](int k) {
                    return std::hypot(back[static_cast<std::size_t>(k)].dx + fwd.dx, back[static_cast<std::size_t>(k)].dy + fwd.dy);
                };
                if (gap(u) < gap(best)) best = u;
            }
            person.types[static_cast<std::size_t>(2 * e + 1)] = best;
        }

        bool ok = false;
        for (int attempt = 0; attempt < opt.max_tries && !ok; ++attempt) {
            person.where.assign(static_cast<std::size_t>(K), Location{});
            person.where[static_cast<std::size_t>(root - 1)] = {ux(rng), uy(rng)};
            for (PartId p : tree.order) {
                const PartId parent = tree.parent[static_cast<std::size_t>(p - 1)];
                if (!parent) continue;
                const int d = g.directed_index(parent, p);
                const Offset& r = model.params.directed[static_cast<std::size_t>(d)]
                                      .mean_offsets[static_cast<std::size_t>(person.types[static_cast<std::size_t>(d)])];
                const Location lp = person.where[static_cast<std::size_t>(parent - 1)];
                person.where[static_cast<std::size_t>(p - 1)] = {lp.x + static_cast<int>(std::lround(r.dx + noise(rng))),
                                                                 lp.y + static_cast<int>(std::lround(r.dy + noise(rng)))};
            }
            ok = true;
            for (PartId p = 1; p <= K && ok; ++p) {
                if (!person.visible[static_cast<std::size_t>(p - 1)]) continue;
                const Location l = person.where[static_cast<std::size_t>(p - 1)];
                ok = l.x >= 0 && l.y >= 0 && l.x < opt.width && l.y < opt.height;
                for (PartId q : g.neighbors(p))
                    ok = ok && !(person.visible[static_cast<std::size_t>(q - 1)] && person.where[static_cast<std::size_t>(q - 1)] == l);
            }
            const Location me = person.where[static_cast<std::size_t>(root - 1)];
            for (const auto& other : placed)
                for (PartId p = 1; p <= K && ok; ++p)
                    if (other.visible[static_cast<std::size_t>(p - 1)]) {
                        const Location o = other.where[static_cast<std::size_t>(p - 1)];
                        ok = std::hypot(o.x - me.x, o.y - me.y) >= opt.min_separation;
                    }
        }
        if (!ok)
            throw Error("too_large", "could not place person " + std::to_string(n + 1) + " inside a " +
                                         std::to_string(opt.width) + "x" + std::to_string(opt.height) + " grid after " +
                                         std::to_string(opt.max_tries) + " tries");
        placed.push_back(std::move(person));
    }

    Scene scene{{}, ScoreMapSet(opt.width, opt.height, g)};
    const LabelSpace& labels = scene.maps.labels();
    const std::size_t L = scene.maps.num_locations();
    const std::size_t U = labels.size();

    // Hits: each visible part's true label, spread around its location.
    std::vector<std::vector<std::pair<std::size_t, double>>> hits(L);
    std::bernoulli_distribution faint(opt.faint_rate);
    const int reach = static_cast<int>(std::ceil(3.0 * opt.kernel_sigma));
    for (const auto& person : placed) {
        Person ann{image_id, Joints(static_cast<std::size_t>(K))};
        for (PartId p = 1; p <= K; ++p) {
            if (!person.visible[static_cast<std::size_t>(p - 1)]) continue;
            const Location l = person.where[static_cast<std::size_t>(p - 1)];
            ann.joints[static_cast<std::size_t>(p - 1)] = l;
            std::vector<int> digits;
            for (PartId q : g.neighbors(p))
                digits.push_back(person.visible[static_cast<std::size_t>(q - 1)]
                                     ? person.types[static_cast<std::size_t>(g.directed_index(p, q))] + 1
                                     : 0);
            const std::size_t label = labels.encode(p, digits);
            const double peak = opt.p_hit * (faint(rng) ? opt.faint_factor : 1.0);
            for (int dy = -reach; dy <= reach; ++dy)
                for (int dx = -reach; dx <= reach; ++dx) {
                    const Location at{l.x + dx, l.y + dy};
                    if (at.x < 0 || at.y < 0 || at.x >= opt.width || at.y >= opt.height) continue;
                    const double w = peak * std::exp(-(dx * dx + dy * dy) / (2.0 * opt.kernel_sigma * opt.kernel_sigma));
                    if (w < 1e-4) continue;
                    hits[static_cast<std::size_t>(at.y) * static_cast<std::size_t>(opt.width) + static_cast<std::size_t>(at.x)]
                        .emplace_back(label, w);
                }
        }
        scene.people.push_back(std::move(ann));
    }

    // Per location: background, sparse Dirichlet noise, then the hits.
    std::vector<double> row(U);
    for (std::size_t loc = 0; loc < L; ++loc) {
        std::fill(row.begin(), row.end(), 0.0);
        double hit_mass = 0.0;
        for (const auto& [u, w] : hits[loc]) hit_mass += w;
        const double hit_scale = hit_mass > 0.95 ? 0.95 / hit_mass : 1.0;
        const double rest = 1.0 - hit_mass * hit_scale;
        row[0] = rest * (1.0 - opt.noise_mass);
        const auto part_share = detail::dirichlet(rng, static_cast<std::size_t>(K), opt.concentration);
        for (PartId p = 1; p <= K; ++p) {
            const double mass = rest * opt.noise_mass * part_share[static_cast<std::size_t>(p - 1)];
            if (mass < 1e-12) continue;
            // Product of per-neighbor Dirichlet draws over the part's block.
            const auto& radices = labels.radices(p);
            std::vector<std::vector<double>> digit_share;
            for (int r : radices) digit_share.push_back(detail::dirichlet(rng, static_cast<std::size_t>(r), opt.concentration));
            const std::size_t first = labels.offset(p), block = labels.block_size(p);
            for (std::size_t e = 0; e < block; ++e) {
                double v = mass;
                std::size_t rem = e;
                for (std::size_t n = radices.size(); n-- > 0;) {
                    const auto R = static_cast<std::size_t>(radices[n]);
                    v *= digit_share[n][rem % R];
                    rem /= R;
                }
                row[first + e] = v;
            }
        }
        for (const auto& [u, w] : hits[loc]) row[u] += w * hit_scale;
        float* out = scene.maps.raw().data() + loc * U;
        for (std::size_t u = 0; u < U; ++u) out[u] = static_cast<float>(row[u]);
    }
    return scene;
}

} // namespace flexparse

#endif // FLEXPARSE_SYNTH_HPP
