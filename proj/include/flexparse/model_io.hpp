#ifndef FLEXPARSE_MODEL_IO_HPP
#define FLEXPARSE_MODEL_IO_HPP

#include "error.hpp"
#include "model.hpp"

#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

namespace flexparse {

using json = nlohmann::json;

namespace detail {

inline json read_json_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("io", "cannot open " + path.string());
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        throw Error("format", path.string() + ": " + e.what());
    }
}

inline void write_text_file(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("io", "cannot write " + path.string());
    out << text;
    if (!out) throw Error("io", "write failed for " + path.string());
}

template <class T>
T field(const json& j, const char* key, const std::string& where) {
    auto it = j.find(key);
    if (it == j.end()) throw Error("format", where + ": missing field '" + key + "'");
    try {
        return it->get<T>();
    } catch (const json::exception& e) {
        throw Error("format", where + ": bad field '" + key + "': " + e.what());
    }
}

} // namespace detail

inline json graph_to_json(const PartGraph& g) {
    json edges = json::array();
    for (const Edge& e : g.edges())
        edges.push_back({{"i", e.i}, {"j", e.j}, {"t_ij", e.types_ij}, {"t_ji", e.types_ji}});
    return {{"parts", g.num_parts()}, {"edges", edges}};
}

inline PartGraph graph_from_json(const json& j, const std::string& where = "graph") {
    if (!j.is_object()) throw Error("format", where + ": expected an object");
    const int K = detail::field<int>(j, "parts", where);
    std::vector<Edge> edges;
    const auto arr = detail::field<json>(j, "edges", where);
    if (!arr.is_array()) throw Error("format", where + ": 'edges' must be an array");
    for (const auto& e : arr)
        edges.push_back({detail::field<int>(e, "i", where), detail::field<int>(e, "j", where),
                         detail::field<int>(e, "t_ij", where), detail::field<int>(e, "t_ji", where)});
    return PartGraph::create(K, std::move(edges));
}

inline json model_to_json(const Model& m) {
    const PartGraph& g = m.graph;
    json out = graph_to_json(g);
    json idpr = json::array(), offsets = json::array(), deform = json::array();
    for (int d = 0; d < g.num_directed(); ++d) {
        const auto [from, to] = g.directed(d);
        const auto& dp = m.params.directed.at(static_cast<std::size_t>(d));
        idpr.push_back({{"i", from}, {"j", to}, {"w", dp.idpr_weight}});
        json o = json::array();
        for (const Offset& r : dp.mean_offsets) o.push_back({r.dx, r.dy});
        offsets.push_back({{"i", from}, {"j", to}, {"offsets", o}});
        json w = json::array();
        for (const Deformation& v : dp.deformation) w.push_back({v[0], v[1], v[2], v[3]});
        deform.push_back({{"i", from}, {"j", to}, {"weights", w}});
    }
    out["appearance_weights"] = m.params.appearance_weights;
    out["idpr_weights"] = idpr;
    out["mean_offsets"] = offsets;
    out["deformation_weights"] = deform;
    out["part_biases"] = m.params.part_biases;
    out["svm_bias"] = m.params.svm_bias;
    return out;
}

/// Parses a model document. Count and sign problems inside the parameters are
/// left for validate_model so they can be reported together.
inline Model model_from_json(const json& j, const std::string& where = "model") {
    Model m;
    m.graph = graph_from_json(j, where);
    const PartGraph& g = m.graph;
    m.params.appearance_weights = detail::field<std::vector<double>>(j, "appearance_weights", where);
    m.params.part_biases = detail::field<std::vector<double>>(j, "part_biases", where);
    m.params.svm_bias = detail::field<double>(j, "svm_bias", where);
    m.params.directed.assign(static_cast<std::size_t>(g.num_directed()), DirectedParams{});

    auto directed_slot = [&](const json& e) -> DirectedParams& {
        const int from = detail::field<int>(e, "i", where), to = detail::field<int>(e, "j", where);
        const int d = g.directed_index(from, to);
        if (d < 0)
            throw Error("format", where + ": (" + std::to_string(from) + "," + std::to_string(to) +
                                      ") is not an edge of the graph");
        return m.params.directed[static_cast<std::size_t>(d)];
    };
    for (const auto& e : detail::field<json>(j, "idpr_weights", where))
        directed_slot(e).idpr_weight = detail::field<double>(e, "w", where);
    for (const auto& e : detail::field<json>(j, "mean_offsets", where)) {
        auto& slot = directed_slot(e);
        for (const auto& r : detail::field<json>(e, "offsets", where)) {
            if (!r.is_array() || r.size() != 2) throw Error("format", where + ": offsets must be [dx, dy]");
            slot.mean_offsets.push_back({r[0].get<double>(), r[1].get<double>()});
        }
    }
    for (const auto& e : detail::field<json>(j, "deformation_weights", where)) {
        auto& slot = directed_slot(e);
        for (const auto& w : detail::field<json>(e, "weights", where)) {
            if (!w.is_array() || w.size() != 4) throw Error("format", where + ": deformation weights must be 4-vectors");
            slot.deformation.push_back({w[0].get<double>(), w[1].get<double>(), w[2].get<double>(), w[3].get<double>()});
        }
    }
    return m;
}

inline std::string dump_json(const json& j) { return j.dump(2) + "\n"; }

inline void save_model(const std::filesystem::path& path, const Model& m) {
    detail::write_text_file(path, dump_json(model_to_json(m)));
}

inline Model load_model(const std::filesystem::path& path) {
    return model_from_json(detail::read_json_file(path), path.string());
}

} // namespace flexparse

#endif // FLEXPARSE_MODEL_IO_HPP
