#pragma once

#include <cstdio>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "segtad/adam.hpp"
#include "segtad/checkpoint.hpp"
#include "segtad/data.hpp"
#include "segtad/io.hpp"
#include "segtad/pdn.hpp"
#include "segtad/ssn1d.hpp"

namespace segtad {

// End-to-end glue: the combined model, the joint training objective,
// inference with score fusion and soft-NMS, and the per-epoch training loop.

class SegTadModel {
public:
    SegTadModel(const SsnConfig& ssn_cfg, const PdnConfig& pdn_cfg, uint64_t seed) {
        Rng rng(seed);
        ssn_.emplace(ssn_cfg, store_, rng);
        pdn_.emplace(pdn_cfg, store_, rng);
    }

    Ssn1d& ssn() { return *ssn_; }
    Pdn& pdn() { return *pdn_; }
    ParamStore& params() { return store_; }

private:
    ParamStore store_;
    std::optional<Ssn1d> ssn_;
    std::optional<Pdn> pdn_;
};

struct TrainConfig {
    double lr = 1e-3;
    int lr_drop_epoch = 7;  // epochs after this one train at lr / 10
    int epochs = 15;
    double lambda1 = 1.0;   // detection loss weight
    double lambda2 = 1.0;   // boundary auxiliary loss weight
    double lambda3 = 1e-4;  // parameter regularizer weight
    uint64_t seed = 1;
    int batch = 1;          // videos per optimizer step
    SegLossMode seg_mode = SegLossMode::kMulticlass;

    void validate() const {
        check(epochs >= 1, "train config: epochs must be >= 1");
        check(lambda1 >= 0.0 && lambda2 >= 0.0 && lambda3 >= 0.0,
              "train config: loss weights must be >= 0");
        check(batch >= 1, "train config: batch must be >= 1");
    }
};

struct LossParts {
    Tensor total, seg, det, aux, reg;
};

// Mean squared parameter magnitude, summed over trainable parameters.
inline Tensor param_regularizer(ParamStore& store) {
    Tensor acc = Tensor::scalar(0.0);
    for (auto& p : store.items()) {
        if (!p.trainable) continue;
        acc = add(acc, mean_all(mul(p.tensor, p.tensor)));
    }
    return acc;
}

inline Tensor weighted_total(const Tensor& l_seg, const Tensor& l_det, const Tensor& l_aux,
                             const Tensor& l_reg, const TrainConfig& cfg) {
    Tensor total = l_seg;
    total = add(total, scale(l_det, cfg.lambda1));
    total = add(total, scale(l_aux, cfg.lambda2));
    return add(total, scale(l_reg, cfg.lambda3));
}

// Joint loss for one video. In training mode the proposal set is restricted
// to a sampled neighborhood; in evaluation mode all proposals participate.
// `sample` can be forced off with training mode kept on, which yields a fully
// deterministic loss for finite-difference verification.
inline LossParts video_loss(SegTadModel& model, const VideoSample& video,
                            const TrainConfig& cfg, Rng& sample_rng, bool training = true,
                            std::optional<bool> sample = std::nullopt) {
    const bool do_sample = sample.value_or(training);
    const size_t t = video.features.dim(1);
    const FrameLabels labels = segments_to_frame_labels(video.annotation, t);
    SsnOutput ssn_out = model.ssn().forward(video.features, training);

    LossParts parts;
    parts.seg = seg_loss(ssn_out.p, labels, cfg.seg_mode);
    parts.aux = aux_loss(ssn_out.p_start, ssn_out.p_end, labels);

    const PdnConfig& pcfg = model.pdn().config();
    ProposalPattern pattern = gen_sparse_pattern(t, pcfg.eta);
    const double sec_per_snippet = video.annotation.duration / static_cast<double>(t);
    std::vector<Segment> seconds;
    seconds.reserve(pattern.proposals.size());
    for (const auto& p : pattern.proposals) {
        const Segment s = p.segment();
        seconds.push_back({s.start * sec_per_snippet, s.end * sec_per_snippet});
    }
    ProposalLabels plabels = compile_proposal_labels(seconds, video.annotation);

    ProposalPattern active = pattern;
    ProposalLabels active_labels = plabels;
    if (do_sample) {
        std::vector<Segment> snippet_segs;
        snippet_segs.reserve(pattern.proposals.size());
        for (const auto& p : pattern.proposals) snippet_segs.push_back(p.segment());
        const std::vector<int> keep =
            sage_sample(snippet_segs, plabels, pcfg.m0, pcfg.k, sample_rng);
        active.proposals.clear();
        active_labels.h_reg.clear();
        active_labels.h_cls.clear();
        for (int idx : keep) {
            active.proposals.push_back(pattern.proposals[static_cast<size_t>(idx)]);
            active_labels.h_reg.push_back(plabels.h_reg[static_cast<size_t>(idx)]);
            active_labels.h_cls.push_back(plabels.h_cls[static_cast<size_t>(idx)]);
        }
    }
    std::vector<Segment> active_segs;
    for (const auto& p : active.proposals) active_segs.push_back(p.segment());

    Tensor feats = model.pdn().align_features(ssn_out.y, active);
    ProposalGraph graph = build_proposal_graph(feats, active_segs, pcfg);
    Tensor refined = model.pdn().forward(feats, graph);
    parts.det = det_loss(model.pdn().det_head(refined), active_labels);

    parts.reg = param_regularizer(model.params());
    parts.total = weighted_total(parts.seg, parts.det, parts.aux, parts.reg, cfg);
    return parts;
}

struct EpochLog {
    int epoch = 0;
    double lr = 0.0;
    double total = 0.0, seg = 0.0, det = 0.0, aux = 0.0, reg = 0.0;
};

inline std::string format_loss_log(const std::vector<EpochLog>& log) {
    std::string out = "epoch,lr,total,seg,det,aux,reg\n";
    char buf[256];
    for (const auto& e : log) {
        std::snprintf(buf, sizeof(buf), "%d,%.12g,%.12g,%.12g,%.12g,%.12g,%.12g\n", e.epoch,
                      e.lr, e.total, e.seg, e.det, e.aux, e.reg);
        out += buf;
    }
    return out;
}

// Deterministic training loop: seeded video order, seeded proposal sampling,
// gradient accumulation over `batch` videos per Adam step, learning rate
// divided by 10 after lr_drop_epoch. Writes a checkpoint per epoch and a CSV
// loss log when run_dir is given.
inline std::vector<EpochLog> train_model(SegTadModel& model,
                                         const std::vector<VideoSample>& videos,
                                         const TrainConfig& cfg,
                                         const std::string& run_dir = {}) {
    cfg.validate();
    check(!videos.empty(), "train: empty dataset");
    namespace fs = std::filesystem;
    if (!run_dir.empty()) fs::create_directories(fs::path(run_dir) / "checkpoints");

    Adam opt(model.params().trainable());
    Rng order_rng(cfg.seed);
    Rng sample_rng(cfg.seed ^ 0x5eedf00dULL);
    std::vector<EpochLog> log;

    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        const double lr = epoch > cfg.lr_drop_epoch ? cfg.lr / 10.0 : cfg.lr;
        std::vector<size_t> order(videos.size());
        for (size_t i = 0; i < order.size(); ++i) order[i] = i;
        for (size_t i = order.size(); i > 1; --i)
            std::swap(order[i - 1],
                      order[static_cast<size_t>(order_rng.uniform_int(0, static_cast<int64_t>(i) - 1))]);

        EpochLog entry;
        entry.epoch = epoch;
        entry.lr = lr;
        size_t in_batch = 0;
        opt.zero_grad();
        for (size_t vi = 0; vi < order.size(); ++vi) {
            const VideoSample& video = videos[order[vi]];
            LossParts parts = video_loss(model, video, cfg, sample_rng, true);
            if (!all_finite(parts.total)) {
                const std::string op = first_nonfinite(parts.total);
                fail("train: non-finite loss at epoch ", epoch, " on video '", video.id,
                     "', first non-finite tensor from op '", op, "'");
            }
            entry.total += parts.total.item();
            entry.seg += parts.seg.item();
            entry.det += parts.det.item();
            entry.aux += parts.aux.item();
            entry.reg += parts.reg.item();
            backward(scale(parts.total, 1.0 / static_cast<double>(cfg.batch)));
            if (++in_batch == static_cast<size_t>(cfg.batch) || vi + 1 == order.size()) {
                opt.step(lr);
                opt.zero_grad();
                in_batch = 0;
            }
        }
        const double inv = 1.0 / static_cast<double>(videos.size());
        entry.total *= inv;
        entry.seg *= inv;
        entry.det *= inv;
        entry.aux *= inv;
        entry.reg *= inv;
        log.push_back(entry);

        if (!run_dir.empty()) {
            char name[64];
            std::snprintf(name, sizeof(name), "epoch_%03d.stad", epoch);
            save_checkpoint((fs::path(run_dir) / "checkpoints" / name).string(),
                            model.params());
        }
    }
    if (!run_dir.empty()) {
        std::ofstream os(fs::path(run_dir) / "loss_log.csv");
        check(os.good(), "train: cannot write loss log in '", run_dir, "'");
        os << format_loss_log(log);
    }
    return log;
}

// ---------------------------------------------------------------------------
// inference

struct InferConfig {
    double nms_sigma = 0.5;
    int keep = 100;
};

// Gaussian soft-NMS: repeatedly promote the highest-scored detection and decay
// every remaining score by exp(-tIoU^2 / sigma). Segment boundaries are never
// altered and scores never increase.
inline std::vector<ScoredDetection> soft_nms(std::vector<ScoredDetection> dets, double sigma,
                                             size_t keep) {
    check(sigma > 0.0, "soft_nms: sigma must be positive");
    std::vector<ScoredDetection> out;
    out.reserve(std::min(dets.size(), keep));
    while (!dets.empty() && out.size() < keep) {
        size_t best = 0;
        for (size_t i = 1; i < dets.size(); ++i)
            if (dets[i].score > dets[best].score) best = i;
        const ScoredDetection top = dets[best];
        dets.erase(dets.begin() + static_cast<long>(best));
        out.push_back(top);
        for (auto& d : dets) {
            const double v = tiou(Segment{top.start, top.end}, Segment{d.start, d.end});
            d.score *= std::exp(-(v * v) / sigma);
        }
    }
    return out;
}

// Scores all proposals of one video (no sampling), fuses the two detection
// head outputs, assigns class labels either from the optional per-video
// classifier scores or from the video-averaged segmentation posterior, then
// runs per-class soft-NMS and keeps the global top `keep`.
inline std::vector<ScoredDetection> infer_video(
    SegTadModel& model, const Tensor& features, double duration, const InferConfig& cfg,
    const std::vector<std::pair<int, double>>* class_scores = nullptr) {
    const size_t t = features.dim(1);
    check(duration > 0.0, "infer: non-positive video duration");
    SsnOutput ssn_out = model.ssn().forward(features, false);

    const PdnConfig& pcfg = model.pdn().config();
    ProposalPattern pattern = gen_sparse_pattern(t, pcfg.eta);
    std::vector<Segment> segs;
    for (const auto& p : pattern.proposals) segs.push_back(p.segment());
    Tensor feats = model.pdn().align_features(ssn_out.y, pattern);
    ProposalGraph graph = build_proposal_graph(feats, segs, pcfg);
    Tensor refined = model.pdn().forward(feats, graph);
    PdnScores scores = model.pdn().det_head(refined);

    const size_t m = pattern.proposals.size();
    const double sec_per_snippet = duration / static_cast<double>(t);

    // fallback label: argmax of the video-averaged action posterior
    int fallback_class = 1;
    {
        const Tensor& p = ssn_out.p;
        const size_t d1 = p.dim(0);
        double best = -1.0;
        for (size_t c = 1; c < d1; ++c) {
            double avg = 0.0;
            for (size_t f = 0; f < t; ++f) avg += p.at(c, f);
            if (avg > best) {
                best = avg;
                fallback_class = static_cast<int>(c);
            }
        }
    }

    std::vector<ScoredDetection> all;
    for (size_t i = 0; i < m; ++i) {
        const double fused = scores.s1.values()[i] * scores.s2.values()[i];
        const double start = pattern.proposals[i].start * sec_per_snippet;
        const double end =
            (pattern.proposals[i].start + pattern.proposals[i].len) * sec_per_snippet;
        if (class_scores != nullptr && !class_scores->empty()) {
            for (const auto& [cid, cscore] : *class_scores)
                all.push_back({start, end, cid, fused * cscore});
        } else {
            all.push_back({start, end, fallback_class, fused});
        }
    }

    // per-class suppression, then a global cap
    std::map<int, std::vector<ScoredDetection>> by_class;
    for (const auto& d : all) by_class[d.class_id].push_back(d);
    std::vector<ScoredDetection> merged;
    for (auto& [cid, dets] : by_class) {
        auto kept = soft_nms(std::move(dets), cfg.nms_sigma, static_cast<size_t>(cfg.keep));
        merged.insert(merged.end(), kept.begin(), kept.end());
    }
    std::sort(merged.begin(), merged.end(), [](const ScoredDetection& a, const ScoredDetection& b) {
        if (a.score != b.score) return a.score > b.score;
        if (a.start != b.start) return a.start < b.start;
        if (a.end != b.end) return a.end < b.end;
        return a.class_id < b.class_id;
    });
    if (merged.size() > static_cast<size_t>(cfg.keep))
        merged.resize(static_cast<size_t>(cfg.keep));
    return merged;
}

}  // namespace segtad
