#pragma once

#include <algorithm>
#include <string>
#include <vector>

#include "segtad/error.hpp"

namespace segtad {

// 1-D time segment, start < end.
struct Segment {
    double start = 0.0;
    double end = 0.0;
};

struct ActionInstance {
    double start = 0.0;  // seconds
    double end = 0.0;    // seconds
    int class_id = 0;    // 1..D
};

struct ActionAnnotation {
    std::string video_id;
    double duration = 0.0;  // seconds
    std::vector<ActionInstance> actions;
};

// Per-frame class labels plus boundary indicators. Class 0 is background.
struct FrameLabels {
    size_t t = 0;
    std::vector<int> b;            // class id per frame, 0 = background
    std::vector<uint8_t> beta_s;   // 1 iff first labeled frame of an instance
    std::vector<uint8_t> beta_e;   // 1 iff last labeled frame of an instance
};

struct ProposalLabels {
    std::vector<double> h_reg;  // best tIoU against ground truth, in [0,1]
    std::vector<uint8_t> h_cls; // 1 iff h_reg > tau
};

inline double tiou(const Segment& a, const Segment& b) {
    check(a.start < a.end, "tiou: degenerate segment [", a.start, ",", a.end, "]");
    check(b.start < b.end, "tiou: degenerate segment [", b.start, ",", b.end, "]");
    const double inter = std::max(0.0, std::min(a.end, b.end) - std::max(a.start, b.start));
    const double uni = (a.end - a.start) + (b.end - b.start) - inter;
    return inter / uni;
}

// Segment-level annotations to frame-level labels. Frame t covers the center
// time (t + 0.5) * duration / T; it takes an action's class when the center
// falls in [start, end). Overlapping actions are rejected: the transform is
// only invertible when instances are disjoint.
inline FrameLabels segments_to_frame_labels(const ActionAnnotation& ann, size_t t_frames) {
    check(t_frames >= 1, "segments_to_frame_labels: frame count must be >= 1");
    check(ann.duration > 0.0, "segments_to_frame_labels: non-positive duration for video '",
          ann.video_id, "'");
    for (const auto& a : ann.actions) {
        check(a.start >= 0.0 && a.start < a.end && a.end <= ann.duration,
              "segments_to_frame_labels: action [", a.start, ",", a.end,
              "] outside video '", ann.video_id, "' of duration ", ann.duration);
        check(a.class_id >= 1, "segments_to_frame_labels: class id ", a.class_id,
              " must be >= 1");
    }
    for (size_t i = 0; i < ann.actions.size(); ++i)
        for (size_t j = i + 1; j < ann.actions.size(); ++j) {
            const auto& a = ann.actions[i];
            const auto& b = ann.actions[j];
            check(a.end <= b.start || b.end <= a.start,
                  "segments_to_frame_labels: overlapping actions [", a.start, ",", a.end,
                  "] and [", b.start, ",", b.end, "] in video '", ann.video_id, "'");
        }

    FrameLabels labels;
    labels.t = t_frames;
    labels.b.assign(t_frames, 0);
    labels.beta_s.assign(t_frames, 0);
    labels.beta_e.assign(t_frames, 0);
    const double dt = ann.duration / static_cast<double>(t_frames);
    for (const auto& a : ann.actions) {
        long first = -1, last = -1;
        for (size_t f = 0; f < t_frames; ++f) {
            const double center = (static_cast<double>(f) + 0.5) * dt;
            if (center >= a.start && center < a.end) {
                labels.b[f] = a.class_id;
                if (first < 0) first = static_cast<long>(f);
                last = static_cast<long>(f);
            }
        }
        if (first >= 0) {
            labels.beta_s[first] = 1;
            labels.beta_e[last] = 1;
        }
    }
    return labels;
}

// Inverse transform: maximal constant nonzero runs of b become actions. A run
// over frames [i..j] maps to [i * duration / T, (j+1) * duration / T].
inline ActionAnnotation frame_labels_to_segments(const FrameLabels& labels, double duration,
                                                 const std::string& video_id = {}) {
    check(labels.t == labels.b.size() && labels.t == labels.beta_s.size() &&
              labels.t == labels.beta_e.size(),
          "frame_labels_to_segments: inconsistent label array lengths");
    ActionAnnotation ann;
    ann.video_id = video_id;
    ann.duration = duration;
    const double dt = duration / static_cast<double>(labels.t);
    size_t f = 0;
    while (f < labels.t) {
        if (labels.b[f] == 0) {
            ++f;
            continue;
        }
        const int cls = labels.b[f];
        size_t j = f;
        while (j + 1 < labels.t && labels.b[j + 1] == cls) ++j;
        ann.actions.push_back({static_cast<double>(f) * dt,
                               static_cast<double>(j + 1) * dt, cls});
        f = j + 1;
    }
    return ann;
}

// h_reg[m] = best tIoU of proposal m against any ground-truth action,
// h_cls[m] = 1 iff h_reg[m] > tau.
inline ProposalLabels compile_proposal_labels(const std::vector<Segment>& proposals,
                                              const ActionAnnotation& ann, double tau = 0.5) {
    check(!proposals.empty(), "compile_proposal_labels: empty proposal list");
    ProposalLabels out;
    out.h_reg.resize(proposals.size(), 0.0);
    out.h_cls.resize(proposals.size(), 0);
    for (size_t m = 0; m < proposals.size(); ++m) {
        double best = 0.0;
        for (const auto& a : ann.actions)
            best = std::max(best, tiou(proposals[m], Segment{a.start, a.end}));
        out.h_reg[m] = best;
        out.h_cls[m] = best > tau ? 1 : 0;
    }
    return out;
}

}  // namespace segtad
