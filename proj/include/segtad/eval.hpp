#pragma once

#include <algorithm>
#include <map>
#include <string>
#include <vector>

#include "segtad/io.hpp"
#include "segtad/labels.hpp"

namespace segtad {

// Detection metric: per-class interpolated average precision with greedy
// matching, averaged over classes and over tIoU thresholds 0.50:0.05:0.95.

inline std::vector<double> default_tiou_thresholds() {
    std::vector<double> t;
    for (int k = 0; k < 10; ++k) t.push_back((50 + 5 * k) / 100.0);
    return t;
}

struct ClassPrediction {
    std::string video_id;
    Segment segment;
    double score = 0.0;
};

// Greedy matching in score order (ties keep input order): a prediction is a
// true positive iff the best-tIoU unmatched ground truth in its video reaches
// the threshold; that ground truth is then consumed. AP integrates the
// right-max interpolated precision over recall increments.
inline double average_precision(std::vector<ClassPrediction> preds,
                                const std::map<std::string, std::vector<Segment>>& gt,
                                double threshold) {
    size_t n_gt = 0;
    for (const auto& [vid, segs] : gt) n_gt += segs.size();
    if (n_gt == 0) return 0.0;
    if (preds.empty()) return 0.0;

    std::stable_sort(preds.begin(), preds.end(),
                     [](const ClassPrediction& a, const ClassPrediction& b) {
                         return a.score > b.score;
                     });

    std::map<std::string, std::vector<uint8_t>> used;
    for (const auto& [vid, segs] : gt) used[vid].assign(segs.size(), 0);

    std::vector<uint8_t> is_tp(preds.size(), 0);
    for (size_t i = 0; i < preds.size(); ++i) {
        auto it = gt.find(preds[i].video_id);
        if (it == gt.end()) continue;
        const auto& segs = it->second;
        auto& flags = used[preds[i].video_id];
        double best = -1.0;
        size_t best_j = 0;
        for (size_t j = 0; j < segs.size(); ++j) {
            if (flags[j]) continue;
            const double v = tiou(preds[i].segment, segs[j]);
            if (v > best) {
                best = v;
                best_j = j;
            }
        }
        if (best >= threshold) {
            is_tp[i] = 1;
            flags[best_j] = 1;
        }
    }

    std::vector<double> precision(preds.size());
    size_t tp = 0;
    for (size_t i = 0; i < preds.size(); ++i) {
        tp += is_tp[i];
        precision[i] = static_cast<double>(tp) / static_cast<double>(i + 1);
    }
    // right-max interpolation
    for (size_t i = preds.size() - 1; i-- > 0;)
        precision[i] = std::max(precision[i], precision[i + 1]);
    double ap = 0.0;
    for (size_t i = 0; i < preds.size(); ++i)
        if (is_tp[i]) ap += precision[i] / static_cast<double>(n_gt);
    return ap;
}

struct EvalReport {
    std::vector<double> thresholds;
    std::vector<double> map_per_threshold;
    double average_map = 0.0;
    std::vector<std::string> class_names;
    std::vector<std::vector<double>> ap;  // [class][threshold]
    std::vector<uint8_t> class_in_gt;
};

inline EvalReport evaluate_detections(
    const std::map<std::string, std::vector<ScoredDetection>>& predictions,
    const std::map<std::string, VideoEntry>& annotations, const ClassManifest& manifest,
    std::vector<double> thresholds = default_tiou_thresholds()) {
    const size_t d = manifest.size();
    EvalReport report;
    report.thresholds = thresholds;
    report.class_names = manifest.names();
    report.ap.assign(d, std::vector<double>(thresholds.size(), 0.0));
    report.class_in_gt.assign(d, 0);

    // split by class once
    std::vector<std::vector<ClassPrediction>> preds_by_class(d);
    for (const auto& [vid, dets] : predictions)
        for (const auto& det : dets) {
            check(det.class_id >= 1 && static_cast<size_t>(det.class_id) <= d,
                  "evaluate: detection class id ", det.class_id, " out of range");
            preds_by_class[static_cast<size_t>(det.class_id) - 1].push_back(
                {vid, Segment{det.start, det.end}, det.score});
        }
    std::vector<std::map<std::string, std::vector<Segment>>> gt_by_class(d);
    for (const auto& [vid, entry] : annotations)
        for (const auto& a : entry.annotation.actions) {
            gt_by_class[static_cast<size_t>(a.class_id) - 1][vid].push_back(
                Segment{a.start, a.end});
            report.class_in_gt[static_cast<size_t>(a.class_id) - 1] = 1;
        }

    report.map_per_threshold.assign(thresholds.size(), 0.0);
    for (size_t ti = 0; ti < thresholds.size(); ++ti) {
        double sum = 0.0;
        size_t counted = 0;
        for (size_t c = 0; c < d; ++c) {
            report.ap[c][ti] =
                average_precision(preds_by_class[c], gt_by_class[c], thresholds[ti]);
            if (report.class_in_gt[c]) {
                sum += report.ap[c][ti];
                ++counted;
            }
        }
        report.map_per_threshold[ti] = counted > 0 ? sum / static_cast<double>(counted) : 0.0;
    }
    double avg = 0.0;
    for (double v : report.map_per_threshold) avg += v;
    report.average_map = avg / static_cast<double>(thresholds.size());
    return report;
}

inline json report_to_json(const EvalReport& report) {
    json per_thr = json::object();
    for (size_t i = 0; i < report.thresholds.size(); ++i)
        per_thr[msg(report.thresholds[i])] = report.map_per_threshold[i];
    json per_class = json::object();
    for (size_t c = 0; c < report.class_names.size(); ++c)
        per_class[report.class_names[c]] = report.ap[c];
    return json{{"average_map", report.average_map},
                {"map_per_threshold", per_thr},
                {"thresholds", report.thresholds},
                {"per_class_ap", per_class}};
}

inline std::string report_to_table(const EvalReport& report) {
    std::ostringstream os;
    os << "tIoU      ";
    char buf[64];
    for (double t : report.thresholds) {
        std::snprintf(buf, sizeof(buf), "%7.2f", t);
        os << buf;
    }
    os << "\nmAP       ";
    for (double v : report.map_per_threshold) {
        std::snprintf(buf, sizeof(buf), "%7.4f", v);
        os << buf;
    }
    std::snprintf(buf, sizeof(buf), "%.4f", report.average_map);
    os << "\naverage mAP " << buf << "\n";
    return os.str();
}

}  // namespace segtad
