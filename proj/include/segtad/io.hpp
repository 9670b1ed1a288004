#pragma once

#include <algorithm>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "segtad/error.hpp"
#include "segtad/labels.hpp"

namespace segtad {

using json = nlohmann::json;

inline json load_json_file(const std::string& path) {
    std::ifstream is(path);
    check(is.good(), "cannot open '", path, "'");
    json j;
    try {
        is >> j;
    } catch (const json::exception& e) {
        fail("failed to parse JSON file '", path, "': ", e.what());
    }
    return j;
}

inline void save_json_file(const std::string& path, const json& j, int indent = 2) {
    std::ofstream os(path);
    check(os.good(), "cannot open '", path, "' for writing");
    os << j.dump(indent) << "\n";
    check(os.good(), "write to '", path, "' failed");
}

// Class-name manifest: sorted unique labels, ids 1..D, 0 is background.
class ClassManifest {
public:
    ClassManifest() = default;
    explicit ClassManifest(std::vector<std::string> names) : names_(std::move(names)) {
        std::sort(names_.begin(), names_.end());
        names_.erase(std::unique(names_.begin(), names_.end()), names_.end());
        for (size_t i = 0; i < names_.size(); ++i) ids_[names_[i]] = static_cast<int>(i) + 1;
    }

    size_t size() const { return names_.size(); }
    const std::vector<std::string>& names() const { return names_; }

    int id_of(const std::string& name) const {
        auto it = ids_.find(name);
        return it == ids_.end() ? -1 : it->second;
    }

    const std::string& name_of(int id) const {
        check(id >= 1 && static_cast<size_t>(id) <= names_.size(),
              "class id ", id, " out of range 1..", names_.size());
        return names_[static_cast<size_t>(id) - 1];
    }

private:
    std::vector<std::string> names_;
    std::map<std::string, int> ids_;
};

inline void save_class_manifest(const std::string& path, const ClassManifest& manifest) {
    save_json_file(path, json(manifest.names()));
}

inline ClassManifest load_class_manifest(const std::string& path) {
    json j = load_json_file(path);
    check(j.is_array(), "class manifest '", path, "' must be a JSON array of names");
    std::vector<std::string> names;
    for (const auto& e : j) {
        check(e.is_string(), "class manifest '", path, "' contains a non-string entry");
        names.push_back(e.get<std::string>());
    }
    check(!names.empty(), "class manifest '", path, "' is empty");
    return ClassManifest(std::move(names));
}

// Annotation database in the ActivityNet layout:
// {"database": {"<video>": {"duration": f, "subset": s,
//    "annotations": [{"segment": [s,e], "label": name}, ...]}}}
struct VideoEntry {
    ActionAnnotation annotation;
    std::string subset;
};

inline std::map<std::string, VideoEntry> load_annotations(const std::string& path,
                                                          const ClassManifest& manifest) {
    json j = load_json_file(path);
    check(j.contains("database") && j["database"].is_object(),
          "annotation file '", path, "' has no 'database' object");
    std::map<std::string, VideoEntry> out;
    std::vector<std::string> unknown;
    for (auto& [vid, entry] : j["database"].items()) {
        VideoEntry v;
        v.annotation.video_id = vid;
        check(entry.contains("duration"), "video '", vid, "' has no duration");
        v.annotation.duration = entry["duration"].get<double>();
        v.subset = entry.value("subset", std::string("training"));
        for (const auto& a : entry.value("annotations", json::array())) {
            check(a.contains("segment") && a["segment"].is_array() && a["segment"].size() == 2,
                  "video '", vid, "' has a malformed segment");
            const std::string label = a.at("label").get<std::string>();
            const int cid = manifest.id_of(label);
            if (cid < 0) {
                if (std::find(unknown.begin(), unknown.end(), label) == unknown.end())
                    unknown.push_back(label);
                continue;
            }
            v.annotation.actions.push_back(
                {a["segment"][0].get<double>(), a["segment"][1].get<double>(), cid});
        }
        out.emplace(vid, std::move(v));
    }
    if (!unknown.empty()) {
        std::string list;
        for (const auto& u : unknown) list += (list.empty() ? "" : ", ") + u;
        fail("annotation file '", path, "' uses labels missing from the manifest: ", list);
    }
    return out;
}

inline void save_annotations(const std::string& path,
                             const std::map<std::string, VideoEntry>& db,
                             const ClassManifest& manifest) {
    json database = json::object();
    for (const auto& [vid, entry] : db) {
        json anns = json::array();
        for (const auto& a : entry.annotation.actions)
            anns.push_back({{"segment", {a.start, a.end}},
                            {"label", manifest.name_of(a.class_id)}});
        database[vid] = {{"duration", entry.annotation.duration},
                         {"subset", entry.subset},
                         {"annotations", anns}};
    }
    save_json_file(path, json{{"database", database}});
}

// Detection submission: {"results": {"<video>": [{"segment": [s,e],
// "score": f, "label": name}, ...]}}
struct ScoredDetection {
    double start = 0.0;
    double end = 0.0;
    int class_id = 0;
    double score = 0.0;
};

inline void save_predictions(const std::string& path,
                             const std::map<std::string, std::vector<ScoredDetection>>& results,
                             const ClassManifest& manifest) {
    json out = json::object();
    for (const auto& [vid, dets] : results) {
        json arr = json::array();
        for (const auto& d : dets)
            arr.push_back({{"segment", {d.start, d.end}},
                           {"score", d.score},
                           {"label", manifest.name_of(d.class_id)}});
        out[vid] = arr;
    }
    save_json_file(path, json{{"results", out}});
}

inline std::map<std::string, std::vector<ScoredDetection>> load_predictions(
    const std::string& path, const ClassManifest& manifest) {
    json j = load_json_file(path);
    check(j.contains("results") && j["results"].is_object(),
          "prediction file '", path, "' has no 'results' object");
    std::map<std::string, std::vector<ScoredDetection>> out;
    std::vector<std::string> unknown;
    for (auto& [vid, arr] : j["results"].items()) {
        auto& dets = out[vid];
        for (const auto& d : arr) {
            const std::string label = d.at("label").get<std::string>();
            const int cid = manifest.id_of(label);
            if (cid < 0) {
                if (std::find(unknown.begin(), unknown.end(), label) == unknown.end())
                    unknown.push_back(label);
                continue;
            }
            dets.push_back({d.at("segment")[0].get<double>(), d.at("segment")[1].get<double>(),
                            cid, d.at("score").get<double>()});
        }
    }
    if (!unknown.empty()) {
        std::string list;
        for (const auto& u : unknown) list += (list.empty() ? "" : ", ") + u;
        fail("prediction file '", path, "' uses labels missing from the manifest: ", list);
    }
    return out;
}

// Optional per-video classifier scores: {"<video>": [{"label": n, "score": s}, ...]}
inline std::map<std::string, std::vector<std::pair<int, double>>> load_class_scores(
    const std::string& path, const ClassManifest& manifest) {
    json j = load_json_file(path);
    check(j.is_object(), "class score file '", path, "' must be a JSON object");
    std::map<std::string, std::vector<std::pair<int, double>>> out;
    for (auto& [vid, arr] : j.items()) {
        check(arr.is_array(), "class score entry for '", vid, "' must be an array");
        for (const auto& e : arr) {
            const std::string label = e.at("label").get<std::string>();
            const int cid = manifest.id_of(label);
            check(cid >= 1, "class score file '", path, "' uses unknown label '", label, "'");
            const double score = e.at("score").get<double>();
            check(score > 0.0 && score <= 1.0, "class score for '", vid, "'/'", label,
                  "' must lie in (0,1], got ", score);
            out[vid].emplace_back(cid, score);
        }
    }
    return out;
}

}  // namespace segtad
