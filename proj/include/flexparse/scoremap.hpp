#ifndef FLEXPARSE_SCOREMAP_HPP
#define FLEXPARSE_SCOREMAP_HPP

#include "error.hpp"
#include "grid.hpp"
#include "model.hpp"
#include "model_io.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

namespace flexparse {

/// Natural-log floor replacing log(0) in every term.
inline constexpr double kLogFloor = -20.0;
/// Below this part probability the conditional terms fall back to uniform.
inline constexpr double kMinPartMass = 1e-6;
/// Per-location normalization tolerance checked on load.
inline constexpr double kNormalizationTolerance = 1e-4;

inline double floored_log(double p) { return p > 0.0 ? std::max(std::log(p), kLogFloor) : kLogFloor; }

/// Per-location probability distributions over the label space, stored
/// row-major as [row][col][label] in float32.
class ScoreMapSet {
public:
    ScoreMapSet() = default;
    ScoreMapSet(int width, int height, PartGraph graph)
        : width_(width), height_(height), graph_(std::move(graph)), labels_(graph_) {
        if (width < 1 || height < 1) throw Error("invalid_argument", "score map grid must be at least 1x1");
        probs_.assign(static_cast<std::size_t>(width) * static_cast<std::size_t>(height) * labels_.size(), 0.0f);
    }

    int width() const noexcept { return width_; }
    int height() const noexcept { return height_; }
    std::size_t num_locations() const noexcept {
        return static_cast<std::size_t>(width_) * static_cast<std::size_t>(height_);
    }
    const PartGraph& graph() const noexcept { return graph_; }
    const LabelSpace& labels() const noexcept { return labels_; }

    std::span<float> at(Location l) {
        return {probs_.data() + flat(l) * labels_.size(), labels_.size()};
    }
    std::span<const float> at(Location l) const {
        return {probs_.data() + flat(l) * labels_.size(), labels_.size()};
    }
    std::span<const float> at(std::size_t location) const {
        return {probs_.data() + location * labels_.size(), labels_.size()};
    }

    std::vector<float>& raw() noexcept { return probs_; }
    const std::vector<float>& raw() const noexcept { return probs_; }

    /// Throws Error("normalization") naming the first offending location.
    void validate() const {
        const std::size_t U = labels_.size();
        for (std::size_t loc = 0; loc < num_locations(); ++loc) {
            double sum = 0.0;
            for (std::size_t u = 0; u < U; ++u) {
                const float p = probs_[loc * U + u];
                if (!(p >= 0.0f) || !std::isfinite(p))
                    throw Error("normalization", "negative or non-finite probability at location " +
                                                     to_string(location(loc)) + ", label " + std::to_string(u));
                sum += p;
            }
            if (std::abs(sum - 1.0) > kNormalizationTolerance)
                throw Error("normalization", "probabilities at location " + to_string(location(loc)) +
                                                 " sum to " + std::to_string(sum));
        }
    }

private:
    std::size_t flat(Location l) const {
        return static_cast<std::size_t>(l.y) * static_cast<std::size_t>(width_) + static_cast<std::size_t>(l.x);
    }
    Location location(std::size_t loc) const {
        return {static_cast<int>(loc % static_cast<std::size_t>(width_)),
                static_cast<int>(loc / static_cast<std::size_t>(width_))};
    }

    int width_ = 0;
    int height_ = 0;
    PartGraph graph_;
    LabelSpace labels_;
    std::vector<float> probs_;
};

namespace detail {

inline std::uint32_t to_little_endian(std::uint32_t v) {
    if constexpr (std::endian::native == std::endian::little) {
        return v;
    } else {
        return ((v & 0xFFu) << 24) | ((v & 0xFF00u) << 8) | ((v >> 8) & 0xFF00u) | (v >> 24);
    }
}

} // namespace detail

inline void save_scoremaps(const std::filesystem::path& dir, const ScoreMapSet& maps) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw Error("io", "cannot create " + dir.string() + ": " + ec.message());
    json meta = {{"width", maps.width()},
                 {"height", maps.height()},
                 {"label_space_size", maps.labels().size()},
                 {"graph", graph_to_json(maps.graph())},
                 {"storage", "f32le"}};
    detail::write_text_file(dir / "meta.json", dump_json(meta));

    std::ofstream out(dir / "probs.bin", std::ios::binary | std::ios::trunc);
    if (!out) throw Error("io", "cannot write " + (dir / "probs.bin").string());
    std::vector<std::uint32_t> buf(maps.raw().size());
    for (std::size_t i = 0; i < buf.size(); ++i)
        buf[i] = detail::to_little_endian(std::bit_cast<std::uint32_t>(maps.raw()[i]));
    out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size() * 4));
    if (!out) throw Error("io", "write failed for " + (dir / "probs.bin").string());
}

/// Loads and validates a score-map container. When `expected` is given the
/// container's graph must match it exactly.
inline ScoreMapSet load_scoremaps(const std::filesystem::path& dir,
                                  const std::optional<PartGraph>& expected = std::nullopt) {
    const json meta = detail::read_json_file(dir / "meta.json");
    const std::string where = (dir / "meta.json").string();
    if (detail::field<std::string>(meta, "storage", where) != "f32le")
        throw Error("format", where + ": unsupported storage, expected f32le");
    const int width = detail::field<int>(meta, "width", where);
    const int height = detail::field<int>(meta, "height", where);
    if (width < 1 || height < 1) throw Error("format", where + ": grid must be at least 1x1");
    const auto declared = detail::field<std::size_t>(meta, "label_space_size", where);
    PartGraph graph = graph_from_json(detail::field<json>(meta, "graph", where), where);

    const std::size_t built = LabelSpace(graph).size();
    if (declared != built)
        throw Error("dimension", where + ": label_space_size " + std::to_string(declared) +
                                     " does not match the declared graph (" + std::to_string(built) + ")");
    if (expected && !(*expected == graph)) {
        const std::size_t want = LabelSpace(*expected).size();
        throw Error("dimension", where + ": score maps were built for a different graph (|U| = " +
                                     std::to_string(built) + ", model expects " + std::to_string(want) + ")");
    }

    ScoreMapSet maps(width, height, std::move(graph));
    const auto path = dir / "probs.bin";
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("io", "cannot open " + path.string());
    const std::size_t want_bytes = maps.raw().size() * 4;
    std::vector<std::uint32_t> buf(maps.raw().size());
    in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(want_bytes));
    const auto got = static_cast<std::size_t>(in.gcount());
    in.clear();
    in.peek();
    if (got != want_bytes || !in.eof())
        throw Error("format", path.string() + ": expected exactly " + std::to_string(want_bytes) + " bytes");
    for (std::size_t i = 0; i < buf.size(); ++i)
        maps.raw()[i] = std::bit_cast<float>(detail::to_little_endian(buf[i]));
    maps.validate();
    return maps;
}

/// Log-domain image-dependent terms, one value per grid location (row-major).
///
/// Directed quantities are indexed by directed edge d = (i -> j) and are
/// evaluated at the location of part i.
struct TermGrids {
    int width = 0;
    int height = 0;
    std::vector<std::vector<double>> appearance;         // [part - 1][loc]
    std::vector<std::vector<std::vector<double>>> idpr;  // [d][type][loc]
    std::vector<std::vector<double>> idod;               // [d][loc]

    std::size_t num_locations() const noexcept {
        return static_cast<std::size_t>(width) * static_cast<std::size_t>(height);
    }
    std::size_t index(Location l) const noexcept {
        return static_cast<std::size_t>(l.y) * static_cast<std::size_t>(width) + static_cast<std::size_t>(l.x);
    }
    bool contains(Location l) const noexcept { return l.x >= 0 && l.y >= 0 && l.x < width && l.y < height; }

    /// Shape-only construction with every value zero.
    static TermGrids zeros(const PartGraph& g, int width, int height) {
        TermGrids t;
        t.width = width;
        t.height = height;
        const std::size_t L = t.num_locations();
        t.appearance.assign(static_cast<std::size_t>(g.num_parts()), std::vector<double>(L, 0.0));
        t.idpr.resize(static_cast<std::size_t>(g.num_directed()));
        t.idod.assign(static_cast<std::size_t>(g.num_directed()), std::vector<double>(L, 0.0));
        for (int d = 0; d < g.num_directed(); ++d)
            t.idpr[static_cast<std::size_t>(d)].assign(static_cast<std::size_t>(g.type_count(d)),
                                                       std::vector<double>(L, 0.0));
        return t;
    }
};

/// Marginalizes the per-location joint p(g, m) into appearance, IDPR and
/// IDOD log terms.
inline TermGrids compute_terms(const ScoreMapSet& maps, const PartGraph& graph) {
    if (!(maps.graph() == graph))
        throw Error("dimension", "score maps were built for a different graph");
    TermGrids terms = TermGrids::zeros(graph, maps.width(), maps.height());
    const LabelSpace& labels = maps.labels();
    const std::size_t L = maps.num_locations();

    std::vector<double> marginal;
    for (PartId p = 1; p <= graph.num_parts(); ++p) {
        const auto& rad = labels.radices(p);
        const auto& out = graph.outgoing(p);
        const std::size_t first = labels.offset(p), block = labels.block_size(p);

        // stride[n]: distance between consecutive values of digit n.
        std::vector<std::size_t> stride(rad.size(), 1);
        for (std::size_t n = rad.size(); n-- > 1;) stride[n - 1] = stride[n] * static_cast<std::size_t>(rad[n]);

        for (std::size_t loc = 0; loc < L; ++loc) {
            const auto probs = maps.at(loc);
            double mass = 0.0;
            for (std::size_t e = 0; e < block; ++e) mass += static_cast<double>(probs[first + e]);
            terms.appearance[static_cast<std::size_t>(p - 1)][loc] = floored_log(mass);

            for (std::size_t n = 0; n < rad.size(); ++n) {
                const auto d = static_cast<std::size_t>(out[n]);
                const auto R = static_cast<std::size_t>(rad[n]);
                if (mass < kMinPartMass) {
                    const double uniform = -std::log(static_cast<double>(R));
                    terms.idod[d][loc] = uniform;
                    for (std::size_t t = 0; t + 1 < R; ++t) terms.idpr[d][t][loc] = uniform;
                    continue;
                }
                marginal.assign(R, 0.0);
                for (std::size_t e = 0; e < block; ++e)
                    marginal[(e / stride[n]) % R] += static_cast<double>(probs[first + e]);
                terms.idod[d][loc] = floored_log(marginal[0] / mass);
                for (std::size_t t = 0; t + 1 < R; ++t) terms.idpr[d][t][loc] = floored_log(marginal[t + 1] / mass);
            }
        }
    }
    return terms;
}

/// Copy of `terms` with every IDOD value zeroed (the no-IDOD ablation).
inline TermGrids without_idod(TermGrids terms) {
    for (auto& grid : terms.idod) std::fill(grid.begin(), grid.end(), 0.0);
    return terms;
}

} // namespace flexparse

#endif // FLEXPARSE_SCOREMAP_HPP
