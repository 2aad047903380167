#ifndef FLEXPARSE_POSE_IO_HPP
#define FLEXPARSE_POSE_IO_HPP

// Annotation and detection files. Both list joints as
// {id, visible, x, y} with x and y omitted for occluded joints.

#include "error.hpp"
#include "grid.hpp"
#include "infer.hpp"
#include "model_io.hpp"

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace flexparse {

using Joints = std::vector<std::optional<Location>>;  // [part - 1]

/// One annotated person.
struct Person {
    std::string image_id;
    Joints joints;

    std::size_t num_visible() const {
        std::size_t n = 0;
        for (const auto& j : joints) n += j.has_value();
        return n;
    }
    friend bool operator==(const Person&, const Person&) = default;
};

struct TypedEdge {
    PartId i = 0;
    PartId j = 0;
    int type = 1;  // 1-based
    friend bool operator==(const TypedEdge&, const TypedEdge&) = default;
};

struct Detection {
    std::string image_id;
    double score = 0.0;
    PartId root = 0;
    Joints joints;
    std::vector<TypedEdge> types;
    friend bool operator==(const Detection&, const Detection&) = default;
};

inline Detection to_detection(const std::string& image_id, const PoseEstimate& est, const PartGraph& g) {
    Detection d{image_id, est.score, est.root, est.locations, {}};
    for (int e = 0; e < g.num_directed(); ++e)
        if (est.types[static_cast<std::size_t>(e)] >= 0)
            d.types.push_back({g.directed(e).from, g.directed(e).to, est.types[static_cast<std::size_t>(e)] + 1});
    return d;
}

namespace detail {

inline json joints_to_json(const Joints& joints) {
    json arr = json::array();
    for (std::size_t p = 0; p < joints.size(); ++p) {
        json j{{"id", p + 1}, {"visible", joints[p] ? 1 : 0}};
        if (joints[p]) {
            j["x"] = joints[p]->x;
            j["y"] = joints[p]->y;
        }
        arr.push_back(std::move(j));
    }
    return arr;
}

inline Joints joints_from_json(const json& arr, const std::string& where) {
    if (!arr.is_array()) throw Error("format", where + ": joints must be an array");
    Joints joints(arr.size());
    std::vector<char> seen(arr.size(), 0);
    for (const auto& j : arr) {
        const int id = field<int>(j, "id", where);
        if (id < 1 || id > static_cast<int>(arr.size()) || seen[static_cast<std::size_t>(id - 1)])
            throw Error("format", where + ": joint ids must be 1..N, each exactly once");
        seen[static_cast<std::size_t>(id - 1)] = 1;
        const json& vis = j.at("visible");
        const bool visible = vis.is_boolean() ? vis.get<bool>() : field<int>(j, "visible", where) != 0;
        if (visible) {
            joints[static_cast<std::size_t>(id - 1)] = Location{field<int>(j, "x", where), field<int>(j, "y", where)};
        } else if (j.contains("x") || j.contains("y")) {
            throw Error("format", where + ": occluded joint " + std::to_string(id) + " must not carry coordinates");
        }
    }
    return joints;
}

inline std::string image_id_from_json(const json& j, const std::string& where) {
    auto it = j.find("image_id");
    if (it == j.end()) throw Error("format", where + ": missing field 'image_id'");
    if (it->is_string()) return it->get<std::string>();
    if (it->is_number_integer()) return std::to_string(it->get<long long>());
    throw Error("format", where + ": image_id must be a string or integer");
}

} // namespace detail

inline json persons_to_json(const std::vector<Person>& people) {
    json arr = json::array();
    for (const auto& p : people) arr.push_back({{"image_id", p.image_id}, {"joints", detail::joints_to_json(p.joints)}});
    return arr;
}

inline std::vector<Person> persons_from_json(const json& arr, const std::string& where = "annotations") {
    if (!arr.is_array()) throw Error("format", where + ": expected an array of people");
    std::vector<Person> out;
    for (const auto& j : arr)
        out.push_back({detail::image_id_from_json(j, where), detail::joints_from_json(detail::field<json>(j, "joints", where), where)});
    return out;
}

inline void save_annotations(const std::filesystem::path& path, const std::vector<Person>& people) {
    detail::write_text_file(path, dump_json(persons_to_json(people)));
}

inline std::vector<Person> load_annotations(const std::filesystem::path& path) {
    return persons_from_json(detail::read_json_file(path), path.string());
}

inline json detections_to_json(const std::vector<Detection>& dets) {
    json arr = json::array();
    for (const auto& d : dets) {
        json types = json::array();
        for (const auto& t : d.types) types.push_back({{"i", t.i}, {"j", t.j}, {"t", t.type}});
        arr.push_back({{"image_id", d.image_id},
                       {"score", d.score},
                       {"root", d.root},
                       {"parts", detail::joints_to_json(d.joints)},
                       {"types", types}});
    }
    return arr;
}

inline std::vector<Detection> detections_from_json(const json& arr, const std::string& where = "detections") {
    if (!arr.is_array()) throw Error("format", where + ": expected an array of detections");
    std::vector<Detection> out;
    for (const auto& j : arr) {
        Detection d;
        d.image_id = j.contains("image_id") ? detail::image_id_from_json(j, where) : std::string();
        d.score = detail::field<double>(j, "score", where);
        d.root = detail::field<int>(j, "root", where);
        d.joints = detail::joints_from_json(detail::field<json>(j, "parts", where), where);
        if (j.contains("types"))
            for (const auto& t : j.at("types"))
                d.types.push_back({detail::field<int>(t, "i", where), detail::field<int>(t, "j", where),
                                   detail::field<int>(t, "t", where)});
        out.push_back(std::move(d));
    }
    return out;
}

inline void save_detections(const std::filesystem::path& path, const std::vector<Detection>& dets) {
    detail::write_text_file(path, dump_json(detections_to_json(dets)));
}

inline std::vector<Detection> load_detections(const std::filesystem::path& path) {
    return detections_from_json(detail::read_json_file(path), path.string());
}

} // namespace flexparse

#endif // FLEXPARSE_POSE_IO_HPP
