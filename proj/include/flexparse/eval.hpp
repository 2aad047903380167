#ifndef FLEXPARSE_EVAL_HPP
#define FLEXPARSE_EVAL_HPP

#include "error.hpp"
#include "model.hpp"
#include "model_io.hpp"
#include "pose_io.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace flexparse {

/// An evaluated body part, drawn as the segment between two joints.
struct Stick {
    std::string name;
    PartId a = 0;
    PartId b = 0;
};

using StickMap = std::vector<Stick>;
using Segment = std::pair<Location, Location>;

/// One stick per tree edge, named "i-j".
inline StickMap sticks_from_graph(const PartGraph& g) {
    StickMap out;
    for (const Edge& e : g.edges()) out.push_back({std::to_string(e.i) + "-" + std::to_string(e.j), e.i, e.j});
    return out;
}

inline void validate_sticks(const StickMap& sticks, int num_joints) {
    if (sticks.empty()) throw Error("invalid_argument", "stick map is empty");
    for (const auto& s : sticks)
        if (s.a < 1 || s.b < 1 || s.a > num_joints || s.b > num_joints || s.a == s.b)
            throw Error("invalid_argument", "stick '" + s.name + "' must join two distinct joints in 1.." +
                                                std::to_string(num_joints));
}

inline StickMap sticks_from_json(const json& arr, const std::string& where = "sticks") {
    if (!arr.is_array()) throw Error("format", where + ": expected an array of sticks");
    StickMap out;
    for (const auto& s : arr) {
        Stick st{detail::field<std::string>(s, "name", where), detail::field<int>(s, "a", where),
                 detail::field<int>(s, "b", where)};
        out.push_back(std::move(st));
    }
    return out;
}

inline double distance(Location a, Location b) {
    return std::hypot(static_cast<double>(a.x - b.x), static_cast<double>(a.y - b.y));
}

/// Occlusion-aware PCP for one stick. A visible ground-truth stick is
/// matched when the estimate is visible and its mean endpoint error is
/// below half the ground-truth length; an occluded one only by an occluded
/// estimate.
inline bool pcp_stick(const std::optional<Segment>& gt, const std::optional<Segment>& est) {
    if (!gt) return !est;
    const double len = distance(gt->first, gt->second);
    if (len == 0.0) throw Error("invalid_argument", "ground-truth stick has zero length");
    if (!est) return false;
    const double err = 0.5 * (distance(gt->first, est->first) + distance(gt->second, est->second));
    return err < 0.5 * len;
}

inline std::optional<Segment> stick_segment(const Joints& joints, const Stick& s) {
    const auto& a = joints[static_cast<std::size_t>(s.a - 1)];
    const auto& b = joints[static_cast<std::size_t>(s.b - 1)];
    if (a && b) return Segment{*a, *b};
    return std::nullopt;
}

struct EvalOptions {
    /// Stick used to match detections to people.
    std::size_t reference_stick = 0;
    /// Absolute match radius; unset uses half the ground-truth reference
    /// stick length.
    std::optional<double> match_radius;
};

struct EvalReport {
    std::vector<std::string> parts;
    std::vector<double> pcp;  // per stick, percent
    double mpcp = 0.0;
    double aop = 0.0;
    std::size_t people = 0;
    std::size_t matched = 0;
};

namespace detail {

/// Distance between a detection and a person, with the radius under which
/// they match; nullopt when they share nothing to compare.
inline std::optional<std::pair<double, double>> match_distance(const Person& gt, const Detection& det,
                                                              const StickMap& sticks, const EvalOptions& opt) {
    const Stick& ref = sticks[opt.reference_stick];
    const auto g = stick_segment(gt.joints, ref), d = stick_segment(det.joints, ref);
    if (g && d) {
        const Location gm{g->first.x + g->second.x, g->first.y + g->second.y};
        const Location dm{d->first.x + d->second.x, d->first.y + d->second.y};
        const double radius = opt.match_radius ? *opt.match_radius : 0.5 * distance(g->first, g->second);
        return std::pair{0.5 * distance(gm, dm), radius};
    }
    // Reference stick missing on either side: compare the joints both show,
    // against half the mean visible ground-truth stick length.
    double sum = 0.0;
    int common = 0;
    for (std::size_t p = 0; p < gt.joints.size(); ++p)
        if (gt.joints[p] && det.joints[p]) {
            sum += distance(*gt.joints[p], *det.joints[p]);
            ++common;
        }
    if (!common) return std::nullopt;
    double len = 0.0;
    int n = 0;
    for (const auto& s : sticks)
        if (const auto seg = stick_segment(gt.joints, s)) {
            len += distance(seg->first, seg->second);
            ++n;
        }
    if (!n && !opt.match_radius) return std::nullopt;
    const double radius = opt.match_radius ? *opt.match_radius : 0.5 * len / n;
    return std::pair{sum / common, radius};
}

inline bool detection_order(const Detection& a, const Detection& b) {
    if (a.score != b.score) return a.score > b.score;
    if (a.root != b.root) return a.root < b.root;
    return a.joints < b.joints;
}

} // namespace detail

/// Greedy matching by descending detection score within each image, then
/// per-stick PCP and visibility accuracy over every ground-truth person.
/// People left unmatched are scored as if every stick were predicted
/// occluded.
inline EvalReport evaluate(const std::vector<Person>& gt, std::vector<Detection> dets, const StickMap& sticks,
                           const EvalOptions& opt = {}) {
    const int J = gt.empty() ? 0 : static_cast<int>(gt.front().joints.size());
    validate_sticks(sticks, J ? J : std::numeric_limits<int>::max());
    if (opt.reference_stick >= sticks.size()) throw Error("invalid_argument", "reference stick out of range");
    for (const auto& p : gt)
        if (static_cast<int>(p.joints.size()) != J)
            throw Error("invalid_argument", "all annotations must list the same joints");
    for (const auto& d : dets)
        if (static_cast<int>(d.joints.size()) != J)
            throw Error("invalid_argument", "detection joints do not match the annotations");

    std::sort(dets.begin(), dets.end(), detail::detection_order);
    std::map<std::string, std::vector<std::size_t>> by_image;
    for (std::size_t n = 0; n < gt.size(); ++n) by_image[gt[n].image_id].push_back(n);

    std::vector<const Detection*> assigned(gt.size(), nullptr);
    for (const auto& det : dets) {
        auto it = by_image.find(det.image_id);
        if (it == by_image.end()) continue;
        std::size_t best = gt.size();
        double best_d = 0.0;
        for (std::size_t n : it->second) {
            if (assigned[n]) continue;
            const auto m = detail::match_distance(gt[n], det, sticks, opt);
            if (!m || m->first > m->second) continue;
            if (best == gt.size() || m->first < best_d) {
                best = n;
                best_d = m->first;
            }
        }
        if (best != gt.size()) assigned[best] = &det;
    }

    EvalReport r;
    r.people = gt.size();
    std::vector<std::size_t> correct(sticks.size(), 0);
    std::size_t vis_correct = 0;
    for (std::size_t n = 0; n < gt.size(); ++n) {
        if (assigned[n]) ++r.matched;
        for (std::size_t s = 0; s < sticks.size(); ++s) {
            const auto g = stick_segment(gt[n].joints, sticks[s]);
            const auto e = assigned[n] ? stick_segment(assigned[n]->joints, sticks[s]) : std::nullopt;
            correct[s] += pcp_stick(g, e);
            vis_correct += g.has_value() == e.has_value();
        }
    }
    double sum = 0.0;
    for (std::size_t s = 0; s < sticks.size(); ++s) {
        r.parts.push_back(sticks[s].name);
        const double v = gt.empty() ? 100.0 : 100.0 * static_cast<double>(correct[s]) / static_cast<double>(gt.size());
        r.pcp.push_back(v);
        sum += v;
    }
    r.mpcp = sum / static_cast<double>(sticks.size());
    r.aop = gt.empty() ? 100.0
                       : 100.0 * static_cast<double>(vis_correct) / static_cast<double>(gt.size() * sticks.size());
    return r;
}

inline json report_to_json(const EvalReport& r) {
    json per_part = json::object();
    for (std::size_t s = 0; s < r.parts.size(); ++s) per_part[r.parts[s]] = r.pcp[s];
    return {{"per_part", per_part}, {"mPCP", r.mpcp}, {"AOP", r.aop}, {"people", r.people}, {"matched", r.matched}};
}

} // namespace flexparse

#endif // FLEXPARSE_EVAL_HPP
