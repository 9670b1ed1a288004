#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "segtad/config.hpp"
#include "segtad/pipeline.hpp"

using namespace segtad;
namespace fs = std::filesystem;

namespace {

SsnConfig tiny_ssn() {
    SsnConfig cfg;
    cfg.c_in = 4;
    cfg.c_hidden = 8;
    cfg.encoder_layers = 2;
    cfg.dilations = {1, 2};
    cfg.k_s = 4;
    cfg.num_classes = 2;
    return cfg;
}

PdnConfig tiny_pdn() {
    PdnConfig cfg;
    cfg.c_hidden = 8;
    cfg.eta = 4;
    cfg.align_bins = 5;
    cfg.m0 = 4;
    cfg.k = 2;
    return cfg;
}

std::vector<VideoSample> tiny_videos(int n, uint64_t seed) {
    SyntheticSpec spec;
    spec.n_videos = n;
    spec.num_classes = 2;
    spec.channels = 4;
    spec.snippets = 16;
    spec.actions_min = 1;
    spec.actions_max = 1;
    spec.len_min = 4;
    spec.len_max = 8;
    spec.align = 4;
    spec.gap = 4;
    spec.noise_sigma = 0.2;
    spec.seed = seed;
    std::vector<VideoSample> out;
    for (const auto& v : generate_synthetic(spec))
        out.push_back({v.id, v.features.to_tensor(), v.annotation});
    return out;
}

std::string slurp(const fs::path& p) {
    std::ifstream is(p, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(is), {});
}

}  // namespace

TEST_CASE("weighted total is a plain linear combination") {
    TrainConfig cfg;
    cfg.lambda1 = 0.0;
    cfg.lambda2 = 0.0;
    cfg.lambda3 = 0.0;
    Tensor seg = Tensor::scalar(1.25);
    Tensor det = Tensor::scalar(0.5);
    Tensor aux = Tensor::scalar(0.75);
    Tensor reg = Tensor::scalar(2.0);
    CHECK(weighted_total(seg, det, aux, reg, cfg).item() == 1.25);

    cfg.lambda3 = 0.3;
    Tensor zero = Tensor::scalar(0.0);
    CHECK(weighted_total(zero, zero, zero, reg, cfg).item() == Catch::Approx(0.6));

    Rng rng(3);
    for (int trial = 0; trial < 20; ++trial) {
        TrainConfig c2;
        c2.lambda1 = rng.uniform(0, 2);
        c2.lambda2 = rng.uniform(0, 2);
        c2.lambda3 = rng.uniform(0, 2);
        const double s = rng.uniform(0, 3), d = rng.uniform(0, 3), a = rng.uniform(0, 3),
                     r = rng.uniform(0, 3);
        const double expect = s + c2.lambda1 * d + c2.lambda2 * a + c2.lambda3 * r;
        CHECK(weighted_total(Tensor::scalar(s), Tensor::scalar(d), Tensor::scalar(a),
                             Tensor::scalar(r), c2)
                  .item() == Catch::Approx(expect).margin(1e-12));
    }
}

TEST_CASE("soft-NMS decay, ordering and invariances") {
    SECTION("single detection is unchanged") {
        auto out = soft_nms({{0, 10, 1, 0.8}}, 0.5, 100);
        REQUIRE(out.size() == 1);
        CHECK(out[0].score == 0.8);
    }
    SECTION("identical duplicate decays by exp(-1/sigma)") {
        auto out = soft_nms({{0, 10, 1, 0.9}, {0, 10, 1, 0.8}}, 0.5, 100);
        REQUIRE(out.size() == 2);
        CHECK(out[0].score == 0.9);
        CHECK(out[1].score == Catch::Approx(0.8 * std::exp(-2.0)).margin(1e-12));
    }
    SECTION("disjoint detections keep their scores") {
        auto out = soft_nms({{0, 5, 1, 0.9}, {10, 15, 1, 0.7}, {20, 25, 1, 0.5}}, 0.5, 100);
        REQUIRE(out.size() == 3);
        CHECK(out[0].score == 0.9);
        CHECK(out[1].score == 0.7);
        CHECK(out[2].score == 0.5);
    }
    SECTION("scores never increase, boundaries never move, output sorted") {
        Rng rng(5);
        for (int trial = 0; trial < 50; ++trial) {
            std::vector<ScoredDetection> dets;
            const int n = 1 + static_cast<int>(rng.uniform_int(0, 12));
            for (int i = 0; i < n; ++i) {
                const double s = rng.uniform(0, 30);
                dets.push_back({s, s + rng.uniform(0.5, 10), 1, rng.uniform(0.05, 1.0)});
            }
            auto out = soft_nms(dets, 0.5, 100);
            REQUIRE(out.size() == dets.size());
            for (size_t i = 1; i < out.size(); ++i) CHECK(out[i - 1].score >= out[i].score);
            for (const auto& o : out) {
                bool found = false;
                for (const auto& d : dets)
                    if (d.start == o.start && d.end == o.end && o.score <= d.score + 1e-15)
                        found = true;
                CHECK(found);
            }
        }
    }
    SECTION("keep truncates") {
        std::vector<ScoredDetection> dets;
        for (int i = 0; i < 150; ++i)
            dets.push_back({i * 10.0, i * 10.0 + 5.0, 1, 0.5 + i * 1e-3});
        CHECK(soft_nms(dets, 0.5, 100).size() == 100);
    }
}

TEST_CASE("checkpoint round-trips bit-exactly and validates") {
    SegTadModel model(tiny_ssn(), tiny_pdn(), 42);
    const fs::path tmp = fs::temp_directory_path() / "segtad_ckpt_test.stad";
    save_checkpoint(tmp.string(), model.params());

    SegTadModel other(tiny_ssn(), tiny_pdn(), 43);
    bool differs = false;
    for (size_t i = 0; i < model.params().items().size(); ++i)
        if (model.params().items()[i].tensor.values() !=
            other.params().items()[i].tensor.values())
            differs = true;
    CHECK(differs);

    load_checkpoint(tmp.string(), other.params());
    for (size_t i = 0; i < model.params().items().size(); ++i) {
        const auto& a = model.params().items()[i];
        const auto& b = other.params().items()[i];
        CHECK(a.name == b.name);
        CHECK(a.tensor.values() == b.tensor.values());
    }

    // wrong architecture is rejected
    PdnConfig conv = tiny_pdn();
    conv.layer_mode = LayerMode::kConv1x1;
    SegTadModel mismatched(tiny_ssn(), conv, 44);
    CHECK_THROWS_AS(load_checkpoint(tmp.string(), mismatched.params()), Error);
    CHECK_THROWS_AS(load_checkpoint("/nonexistent/file.stad", other.params()), Error);
    fs::remove(tmp);
}

TEST_CASE("training runs, logs and writes loadable checkpoints") {
    auto videos = tiny_videos(2, 7);
    SegTadModel model(tiny_ssn(), tiny_pdn(), 1);
    TrainConfig cfg;
    cfg.epochs = 1;
    cfg.seed = 1;
    const fs::path run = fs::temp_directory_path() / "segtad_run_smoke";
    fs::remove_all(run);
    auto log = train_model(model, videos, cfg, run.string());
    REQUIRE(log.size() == 1);
    CHECK(std::isfinite(log[0].total));
    CHECK(fs::exists(run / "checkpoints" / "epoch_001.stad"));
    CHECK(fs::exists(run / "loss_log.csv"));

    SegTadModel fresh(tiny_ssn(), tiny_pdn(), 2);
    load_checkpoint((run / "checkpoints" / "epoch_001.stad").string(), fresh.params());
    fs::remove_all(run);
}

TEST_CASE("loss decreases over the first steps on a fixed batch") {
    auto videos = tiny_videos(1, 11);
    SegTadModel model(tiny_ssn(), tiny_pdn(), 3);
    TrainConfig cfg;
    cfg.lr = 1e-3;
    cfg.epochs = 5;  // one video, so one step per epoch
    cfg.seed = 3;
    auto log = train_model(model, videos, cfg);
    REQUIRE(log.size() == 5);
    for (size_t i = 1; i < log.size(); ++i) CHECK(log[i].total < log[i - 1].total);
}

TEST_CASE("equal seeds give identical loss logs, different seeds do not") {
    auto videos = tiny_videos(3, 13);
    TrainConfig cfg;
    cfg.epochs = 2;
    cfg.seed = 9;

    SegTadModel m1(tiny_ssn(), tiny_pdn(), 9);
    SegTadModel m2(tiny_ssn(), tiny_pdn(), 9);
    auto l1 = train_model(m1, videos, cfg);
    auto l2 = train_model(m2, videos, cfg);
    CHECK(format_loss_log(l1) == format_loss_log(l2));

    SegTadModel m3(tiny_ssn(), tiny_pdn(), 10);
    TrainConfig cfg2 = cfg;
    cfg2.seed = 10;
    auto l3 = train_model(m3, videos, cfg2);
    CHECK(format_loss_log(l1) != format_loss_log(l3));
}

TEST_CASE("learning rate drops by 10 after the configured epoch") {
    auto videos = tiny_videos(1, 17);
    SegTadModel model(tiny_ssn(), tiny_pdn(), 5);
    TrainConfig cfg;
    cfg.epochs = 3;
    cfg.lr = 1e-3;
    cfg.lr_drop_epoch = 2;
    auto log = train_model(model, videos, cfg);
    CHECK(log[0].lr == 1e-3);
    CHECK(log[1].lr == 1e-3);
    CHECK(log[2].lr == Catch::Approx(1e-4));
}

TEST_CASE("detection loss gradient reaches the segmentation network") {
    auto videos = tiny_videos(1, 19);
    SegTadModel model(tiny_ssn(), tiny_pdn(), 21);
    TrainConfig cfg;
    cfg.lambda1 = 1.0;
    cfg.lambda2 = 0.0;
    cfg.lambda3 = 0.0;
    cfg.seg_mode = SegLossMode::kOff;
    cfg.epochs = 1;

    std::vector<double> before;
    for (const auto& p : model.params().items())
        if (p.name.rfind("ssn.", 0) == 0 && p.trainable)
            before.insert(before.end(), p.tensor.values().begin(), p.tensor.values().end());
    train_model(model, videos, cfg);
    std::vector<double> after;
    for (const auto& p : model.params().items())
        if (p.name.rfind("ssn.", 0) == 0 && p.trainable)
            after.insert(after.end(), p.tensor.values().begin(), p.tensor.values().end());
    REQUIRE(before.size() == after.size());
    bool changed = false;
    for (size_t i = 0; i < before.size(); ++i)
        if (before[i] != after[i]) changed = true;
    CHECK(changed);
}

TEST_CASE("seg-loss ablation changes the objective, not the architecture") {
    SegTadModel on(tiny_ssn(), tiny_pdn(), 31);
    SegTadModel off(tiny_ssn(), tiny_pdn(), 31);
    REQUIRE(on.params().items().size() == off.params().items().size());
    for (size_t i = 0; i < on.params().items().size(); ++i) {
        CHECK(on.params().items()[i].name == off.params().items()[i].name);
        CHECK(on.params().items()[i].tensor.shape() ==
              off.params().items()[i].tensor.shape());
    }
    auto videos = tiny_videos(1, 23);
    TrainConfig with;
    TrainConfig without;
    without.seg_mode = SegLossMode::kOff;
    Rng r1(1), r2(1);
    LossParts a = video_loss(on, videos[0], with, r1, true, false);
    LossParts b = video_loss(off, videos[0], without, r2, true, false);
    CHECK(b.seg.item() == 0.0);
    CHECK(a.det.item() == Catch::Approx(b.det.item()).margin(1e-12));
    CHECK(a.total.item() - a.seg.item() == Catch::Approx(b.total.item()).margin(1e-9));
}

TEST_CASE("inference returns capped, fused, sorted detections") {
    auto videos = tiny_videos(1, 29);
    SegTadModel model(tiny_ssn(), tiny_pdn(), 37);
    InferConfig icfg;
    auto dets = infer_video(model, videos[0].features, videos[0].annotation.duration, icfg);
    CHECK(!dets.empty());
    CHECK(dets.size() <= 100);
    for (size_t i = 1; i < dets.size(); ++i) CHECK(dets[i - 1].score >= dets[i].score);
    for (const auto& d : dets) {
        CHECK(d.score > 0.0);
        CHECK(d.score <= 1.0);
        CHECK(d.start < d.end);
        CHECK(d.class_id >= 1);
    }

    // keep cap applies
    InferConfig capped;
    capped.keep = 3;
    CHECK(infer_video(model, videos[0].features, videos[0].annotation.duration, capped)
              .size() <= 3);

    // class-score file variant replicates proposals per provided class
    std::vector<std::pair<int, double>> cls{{1, 0.6}, {2, 0.4}};
    auto multi =
        infer_video(model, videos[0].features, videos[0].annotation.duration, capped, &cls);
    bool saw1 = false, saw2 = false;
    for (const auto& d : multi) {
        if (d.class_id == 1) saw1 = true;
        if (d.class_id == 2) saw2 = true;
    }
    CHECK((saw1 || saw2));
}

TEST_CASE("single proposal video returns the fused score") {
    // T = eta means exactly one proposal
    SsnConfig scfg = tiny_ssn();
    PdnConfig pcfg = tiny_pdn();
    pcfg.eta = 16;
    SegTadModel model(scfg, pcfg, 41);
    auto videos = tiny_videos(1, 31);
    auto dets = infer_video(model, videos[0].features, videos[0].annotation.duration, {});
    REQUIRE(dets.size() == 1);

    // recompute the two head scores directly
    SsnOutput out = model.ssn().forward(videos[0].features, false);
    auto pat = gen_sparse_pattern(16, 16);
    std::vector<Segment> segs{pat.proposals[0].segment()};
    Tensor f = model.pdn().align_features(out.y, pat);
    ProposalGraph g = build_proposal_graph(f, segs, pcfg);
    PdnScores s = model.pdn().det_head(model.pdn().forward(f, g));
    CHECK(dets[0].score ==
          Catch::Approx(s.s1.values()[0] * s.s2.values()[0]).margin(1e-12));
}

TEST_CASE("config loading, overrides and environment seed") {
    const fs::path tmp = fs::temp_directory_path() / "segtad_cfg_test.json";
    {
        std::ofstream os(tmp);
        os << R"({"seed": 5, "t": 64, "model": {"c_hidden": 16}, "pdn": {"eta": 4},
                  "train": {"epochs": 2, "seg_mode": "binary"}})";
    }
    Config cfg = load_config(tmp.string());
    CHECK(cfg.seed == 5);
    CHECK(cfg.t == 64);
    CHECK(cfg.model.c_hidden == 16);
    CHECK(cfg.pdn.eta == 4);
    CHECK(cfg.train.epochs == 2);
    CHECK(cfg.train.seg_mode == "binary");
    // defaults survive
    CHECK(cfg.pdn.m0 == 50);
    CHECK(cfg.infer.keep == 100);

    apply_override(cfg, "pdn.eta=16");
    CHECK(cfg.pdn.eta == 16);
    apply_override(cfg, "model.dilations=[1,2,4]");
    CHECK(cfg.model.dilations == std::vector<int>{1, 2, 4});
    apply_override(cfg, "pdn.edge_mode=center_distance");
    CHECK(cfg.pdn.edge_mode == "center_distance");
    CHECK_THROWS_WITH(apply_override(cfg, "pdn.nonsense=1"),
                      Catch::Matchers::ContainsSubstring("unknown key"));
    CHECK_THROWS_AS(apply_override(cfg, "no_equals_sign"), Error);

    setenv("SEGTAD_SEED", "777", 1);
    finalize_config(cfg);
    unsetenv("SEGTAD_SEED");
    CHECK(cfg.seed == 777);
    CHECK(cfg.data.seed == 777);

    {
        std::ofstream os(tmp);
        os << R"({"typo_key": 1})";
    }
    CHECK_THROWS_WITH(load_config(tmp.string()),
                      Catch::Matchers::ContainsSubstring("unknown key"));
    fs::remove(tmp);
}
