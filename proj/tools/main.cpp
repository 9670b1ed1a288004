// segtad command line: synthetic data generation, training, inference,
// detection evaluation and gradient verification.

#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "segtad/config.hpp"
#include "segtad/data.hpp"
#include "segtad/eval.hpp"
#include "segtad/gradcheck_suite.hpp"
#include "segtad/io.hpp"
#include "segtad/pipeline.hpp"

namespace fs = std::filesystem;
using namespace segtad;

namespace {

Config make_config(const std::string& config_path, const std::vector<std::string>& overrides) {
    Config cfg = load_config(config_path);
    for (const auto& kv : overrides) apply_override(cfg, kv);
    finalize_config(cfg);
    return cfg;
}

int cmd_gen_data(const Config& cfg, const std::string& out_dir) {
    write_synthetic_dataset(cfg.data, out_dir);
    std::printf("wrote %d videos (%d classes, C=%d, T=%d) to %s\n", cfg.data.n_videos,
                cfg.data.num_classes, cfg.data.channels, cfg.data.snippets, out_dir.c_str());
    return 0;
}

int cmd_train(const Config& cfg, const std::string& data_dir, const std::string& run_dir) {
    Dataset ds = load_dataset(data_dir, cfg.t);
    SegTadModel model(cfg.ssn_config(ds.channels, ds.manifest.size()), cfg.pdn_config(),
                      cfg.seed);
    auto log = train_model(model, ds.videos, cfg.train_config(), run_dir);
    for (const auto& e : log)
        std::printf("epoch %3d  lr %.2e  total %.6f  seg %.6f  det %.6f  aux %.6f\n", e.epoch,
                    e.lr, e.total, e.seg, e.det, e.aux);
    std::printf("checkpoints and loss_log.csv in %s\n", run_dir.c_str());
    return 0;
}

int cmd_infer(const Config& cfg, const std::string& data_dir, const std::string& ckpt,
              const std::string& out_path, const std::string& class_scores_path) {
    check(fs::exists(ckpt), "checkpoint '", ckpt, "' does not exist");
    Dataset ds = load_dataset(data_dir, cfg.t);
    SegTadModel model(cfg.ssn_config(ds.channels, ds.manifest.size()), cfg.pdn_config(),
                      cfg.seed);
    load_checkpoint(ckpt, model.params());

    std::map<std::string, std::vector<std::pair<int, double>>> class_scores;
    if (!class_scores_path.empty())
        class_scores = load_class_scores(class_scores_path, ds.manifest);

    std::map<std::string, std::vector<ScoredDetection>> results;
    for (const auto& video : ds.videos) {
        const std::vector<std::pair<int, double>>* scores = nullptr;
        if (auto it = class_scores.find(video.id); it != class_scores.end())
            scores = &it->second;
        results[video.id] = infer_video(model, video.features, video.annotation.duration,
                                        cfg.infer_config(), scores);
    }
    if (const auto dir = fs::path(out_path).parent_path(); !dir.empty())
        fs::create_directories(dir);
    save_predictions(out_path, results, ds.manifest);
    std::printf("wrote predictions for %zu videos to %s\n", results.size(), out_path.c_str());
    return 0;
}

int cmd_eval(const std::string& pred_path, const std::string& ann_path,
             const std::string& classes_path, const std::string& report_path) {
    ClassManifest manifest = load_class_manifest(classes_path);
    auto predictions = load_predictions(pred_path, manifest);
    auto annotations = load_annotations(ann_path, manifest);
    EvalReport report = evaluate_detections(predictions, annotations, manifest);
    std::fputs(report_to_table(report).c_str(), stdout);
    if (!report_path.empty()) {
        if (const auto dir = fs::path(report_path).parent_path(); !dir.empty())
            fs::create_directories(dir);
        save_json_file(report_path, report_to_json(report));
        std::printf("report written to %s\n", report_path.c_str());
    }
    return 0;
}

int cmd_gradcheck(bool full, double tol) {
    bool ok = true;
    for (const auto& r : run_op_gradchecks()) {
        const bool pass = r.pass(tol);
        ok = ok && pass;
        std::printf("[%s] op %-22s max rel err %.3e  (%zu entries)\n", pass ? "PASS" : "FAIL",
                    r.name.c_str(), r.max_rel_err, r.checked);
    }
    GradCheckReport composed = run_composed_gradcheck(99, full ? 0 : 64);
    const bool pass = composed.pass(tol);
    ok = ok && pass;
    std::printf("[%s] %-25s max rel err %.3e  (%zu entries)\n", pass ? "PASS" : "FAIL",
                composed.name.c_str(), composed.max_rel_err, composed.checked);
    check(ok, "gradient check failed (tolerance ", tol, ")");
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"temporal action detection via 1-D semantic segmentation"};
    app.require_subcommand(1);

    std::string config_path, data_dir, run_dir = "run", out_path, ckpt, class_scores_path;
    std::string pred_path, ann_path, classes_path, report_path;
    std::vector<std::string> overrides;
    bool full = false;
    double tol = 1e-4;

    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", config_path, "JSON config file");
        sub->add_option("--set", overrides, "override config keys, e.g. --set pdn.eta=16");
    };

    auto* gen = app.add_subcommand("gen-data", "generate a synthetic dataset");
    add_common(gen);
    gen->add_option("--out", data_dir, "output dataset directory")->required();

    auto* train = app.add_subcommand("train", "train a model");
    add_common(train);
    train->add_option("--data", data_dir, "dataset directory")->required();
    train->add_option("--out", run_dir, "run directory for checkpoints and logs");

    auto* infer = app.add_subcommand("infer", "score a dataset with a trained checkpoint");
    add_common(infer);
    infer->add_option("--data", data_dir, "dataset directory")->required();
    infer->add_option("--checkpoint", ckpt, "checkpoint file")->required();
    infer->add_option("--out", out_path, "predictions JSON path")->required();
    infer->add_option("--class-scores", class_scores_path,
                      "optional per-video classifier score JSON");

    auto* ev = app.add_subcommand("eval", "evaluate predictions against annotations");
    ev->add_option("--predictions", pred_path, "predictions JSON")->required();
    ev->add_option("--annotations", ann_path, "annotation JSON")->required();
    ev->add_option("--classes", classes_path, "class manifest JSON")->required();
    ev->add_option("--out", report_path, "report JSON path");

    auto* gc = app.add_subcommand("gradcheck", "finite-difference gradient verification");
    gc->add_flag("--full", full, "probe every parameter entry of the composed model");
    gc->add_option("--tol", tol, "maximum relative error");

    CLI11_PARSE(app, argc, argv);

    try {
        if (gen->parsed()) return cmd_gen_data(make_config(config_path, overrides), data_dir);
        if (train->parsed())
            return cmd_train(make_config(config_path, overrides), data_dir, run_dir);
        if (infer->parsed())
            return cmd_infer(make_config(config_path, overrides), data_dir, ckpt, out_path,
                             class_scores_path);
        if (ev->parsed()) return cmd_eval(pred_path, ann_path, classes_path, report_path);
        if (gc->parsed()) return cmd_gradcheck(full, tol);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
