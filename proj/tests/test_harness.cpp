#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "gazeatt/harness.hpp"
#include "gazeatt/synthetic.hpp"

using namespace gazeatt;
namespace fs = std::filesystem;

namespace {

std::string small_manifest() {
    static std::string path = [] {
        const fs::path dir = fs::temp_directory_path() / "gazeatt_harness_data";
        fs::remove_all(dir);
        DatasetBuildConfig cfg;
        cfg.n = 8;
        cfg.gaze_ratio = 1.0;
        cfg.phantom.seed = 2024;
        return build_dataset(cfg, dir.string());
    }();
    return path;
}

ExperimentConfig tiny_experiment() {
    ExperimentConfig cfg;
    cfg.manifest = small_manifest();
    cfg.variant = VariantSpec::Ours;
    cfg.epochs = 1;
    cfg.lr = 1e-3;
    cfg.lr_schedule.kind = LrSchedule::Kind::constant;
    cfg.eval_every = 1;
    cfg.base_channels = 4;
    cfg.san_c1 = 8;
    cfg.san_c2 = 8;
    cfg.san_norm_groups = 4;
    cfg.aab_hidden = 16;
    cfg.aab_heads = 2;
    cfg.aab_ffn = 16;
    cfg.seed = 5;
    return cfg;
}

}  // namespace

TEST_CASE("adam step matches a hand-computed trace on one parameter") {
    // quadratic f(p) = 0.5 p^2, grad = p; two adam steps by hand
    ag::Var p = ag::make_var({1}, {1.0}, true);
    OptimizerConfig oc;
    Optimizer opt({p}, oc);
    const double lr = 0.1, b1 = 0.9, b2 = 0.999, eps = 1e-8;
    double hp = 1.0, m = 0.0, v = 0.0;
    for (int t = 1; t <= 2; ++t) {
        p->ensure_grad();
        p->grad[0] = p->val[0];
        const double g = hp;
        m = b1 * m + (1 - b1) * g;
        v = b2 * v + (1 - b2) * g * g;
        const double mhat = m / (1 - std::pow(b1, t));
        const double vhat = v / (1 - std::pow(b2, t));
        hp -= lr * mhat / (std::sqrt(vhat) + eps);
        opt.step(lr);
        opt.zero_grad();
        CHECK(p->val[0] == doctest::Approx(hp).epsilon(1e-12));
    }
}

TEST_CASE("lookahead algebra: k_sync=1, alpha=0.5 halves each inner update") {
    ag::Var p = ag::make_var({1}, {1.0}, true);
    OptimizerConfig oc;
    oc.kind = OptimizerConfig::Kind::adam;  // drive lookahead manually
    oc.k_sync = 1;
    oc.alpha = 0.5;
    Optimizer opt({p}, oc);
    const double before = p->val[0];
    p->ensure_grad();
    p->grad[0] = 1.0;
    opt.step(0.1);
    const double inner_after = p->val[0];
    const bool synced = opt.lookahead_step();
    CHECK(synced);
    CHECK(p->val[0] == doctest::Approx(before + 0.5 * (inner_after - before)));

    // alpha = 1: fast returns exactly to the inner trajectory value
    ag::Var q = ag::make_var({1}, {1.0}, true);
    OptimizerConfig oc1;
    oc1.k_sync = 1;
    oc1.alpha = 1.0;
    Optimizer opt1({q}, oc1);
    q->ensure_grad();
    q->grad[0] = 1.0;
    opt1.step(0.1);
    const double inner_val = q->val[0];
    opt1.lookahead_step();
    CHECK(q->val[0] == doctest::Approx(inner_val));
}

TEST_CASE("lr schedule endpoints") {
    LrSchedule s;
    s.kind = LrSchedule::Kind::cosine_after;
    s.warm_epochs = 100;
    CHECK(s.lr_at(1, 210, 1e-4) == doctest::Approx(1e-4));
    CHECK(s.lr_at(100, 210, 1e-4) == doctest::Approx(1e-4));
    CHECK(s.lr_at(210, 210, 1e-4) < 0.01 * 1e-4);
    CHECK(s.lr_at(155, 210, 1e-4) == doctest::Approx(0.5e-4).epsilon(1e-6));
    LrSchedule c;
    c.kind = LrSchedule::Kind::constant;
    CHECK(c.lr_at(999, 1000, 3.0) == doctest::Approx(3.0));
}

TEST_CASE("experiment config json round trip and stable fingerprint") {
    ExperimentConfig cfg = tiny_experiment();
    cfg.data_ratio = 0.3;
    cfg.optimizer.kind = OptimizerConfig::Kind::ranger;
    const fs::path p = fs::temp_directory_path() / "gazeatt_cfg.json";
    std::ofstream(p) << experiment_to_json(cfg);
    ExperimentConfig back = experiment_from_json_file(p.string());
    CHECK(back.variant == cfg.variant);
    CHECK(back.data_ratio == doctest::Approx(cfg.data_ratio));
    CHECK(back.optimizer.kind == cfg.optimizer.kind);
    CHECK(back.fingerprint() == cfg.fingerprint());
    back.seed += 1;
    CHECK(back.fingerprint() != cfg.fingerprint());
}

TEST_CASE("config validation rejects bad ratios") {
    ExperimentConfig cfg = tiny_experiment();
    cfg.data_ratio = 0.0;
    CHECK_THROWS(cfg.validate());
    cfg.data_ratio = 1.5;
    CHECK_THROWS(cfg.validate());
}

TEST_CASE("train subsets are deterministic and nested across ratios") {
    LoadedDataset ds = load_dataset(small_manifest());
    auto r2 = subsample_train(ds, 0.2, 9);
    auto r5 = subsample_train(ds, 0.5, 9);
    auto r10 = subsample_train(ds, 1.0, 9);
    CHECK(subsample_train(ds, 0.5, 9) == r5);
    CHECK(std::includes(r5.begin(), r5.end(), r2.begin(), r2.end()));
    CHECK(std::includes(r10.begin(), r10.end(), r5.begin(), r5.end()));
    CHECK(r10.size() == ds.split_indices("train").size());
}

TEST_CASE("one-epoch train: checkpoint reload reproduces outputs bitwise") {
    ExperimentConfig cfg = tiny_experiment();
    const fs::path dir = fs::temp_directory_path() / "gazeatt_run_reload";
    fs::remove_all(dir);
    TrainResult res = train(cfg, dir.string());
    LoadedCheckpoint c1 = load_checkpoint(res.checkpoint_path);
    LoadedCheckpoint c2 = load_checkpoint(res.checkpoint_path);
    LoadedDataset ds = load_dataset(cfg.manifest);
    ModelForward f1 = c1.model->forward(ds.records[0].record.volume);
    ModelForward f2 = c2.model->forward(ds.records[0].record.volume);
    CHECK(f1.seg->val == f2.seg->val);
    CHECK(c1.epoch == res.best_epoch);
}

TEST_CASE("training and evaluation are deterministic end to end") {
    ExperimentConfig cfg = tiny_experiment();
    const fs::path d1 = fs::temp_directory_path() / "gazeatt_det_1";
    const fs::path d2 = fs::temp_directory_path() / "gazeatt_det_2";
    fs::remove_all(d1);
    fs::remove_all(d2);
    TrainResult r1 = train(cfg, d1.string());
    TrainResult r2 = train(cfg, d2.string());
    MetricsReport m1 = evaluate(r1.checkpoint_path, cfg.manifest, "test");
    MetricsReport m2 = evaluate(r2.checkpoint_path, cfg.manifest, "test");
    CHECK(m1.to_json() == m2.to_json());
    // evaluating the same checkpoint twice is also identical
    CHECK(evaluate(r1.checkpoint_path, cfg.manifest, "val").to_json() ==
          evaluate(r1.checkpoint_path, cfg.manifest, "val").to_json());
}

TEST_CASE("reports omit gaze fields") {
    ExperimentConfig cfg = tiny_experiment();
    const fs::path dir = fs::temp_directory_path() / "gazeatt_run_nogaze";
    fs::remove_all(dir);
    TrainResult res = train(cfg, dir.string());
    const std::string json = evaluate(res.checkpoint_path, cfg.manifest, "test").to_json();
    CHECK(json.find("gaze") == std::string::npos);
}

TEST_CASE("gaze-requiring variant without gaze maps is rejected") {
    const fs::path dir = fs::temp_directory_path() / "gazeatt_nogaze_data";
    fs::remove_all(dir);
    DatasetBuildConfig bc;
    bc.n = 8;
    bc.gaze_ratio = 0.0;
    bc.phantom.seed = 3030;
    ExperimentConfig cfg = tiny_experiment();
    cfg.manifest = build_dataset(bc, dir.string());
    const fs::path run = fs::temp_directory_path() / "gazeatt_run_missing";
    fs::remove_all(run);
    CHECK_THROWS(train(cfg, run.string()));
    // but the mask-supervised variant trains fine on the same data
    cfg.variant = VariantSpec::OursNoGaze;
    CHECK_NOTHROW(train(cfg, run.string()));
}

TEST_CASE("evaluate rejects an empty split") {
    ExperimentConfig cfg = tiny_experiment();
    const fs::path dir = fs::temp_directory_path() / "gazeatt_run_split";
    fs::remove_all(dir);
    TrainResult res = train(cfg, dir.string());
    CHECK_THROWS(evaluate(res.checkpoint_path, cfg.manifest, "nonexistent"));
}
