#pragma once

// Training loop, optimizers, checkpointing, experiment sweeps, reports.

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "gazeatt/network.hpp"
#include "gazeatt/objectives.hpp"

namespace gazeatt {

// ---- optimizers ----

struct OptimizerConfig {
    enum class Kind { adam, ranger } kind = Kind::adam;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    // lookahead wrapper (ranger only)
    int k_sync = 5;
    double alpha = 0.5;
};

// Adaptive-moment inner step; `ranger` adds the rectified warmup (RAdam) and
// the lookahead wrapper.
class Optimizer {
public:
    Optimizer(std::vector<ag::Var> params, OptimizerConfig cfg);

    void step(double lr);
    void zero_grad();

    // Exposed lookahead rule: every k_sync inner steps,
    // slow <- slow + alpha (fast - slow); fast <- slow.
    // Returns true when a sync happened.
    bool lookahead_step();

    std::int64_t steps() const { return t_; }
    const OptimizerConfig& config() const { return cfg_; }

    // checkpoint plumbing
    std::vector<std::pair<std::string, std::vector<double>>> state_arrays() const;
    void load_state(const std::map<std::string, std::vector<double>>& arrays);

private:
    std::vector<ag::Var> params_;
    OptimizerConfig cfg_;
    std::vector<std::vector<double>> m_, v_, slow_;
    std::int64_t t_ = 0;
    int since_sync_ = 0;
};

// ---- experiment configuration ----

struct LrSchedule {
    enum class Kind { constant, cosine_after } kind = Kind::cosine_after;
    int warm_epochs = 100;

    // epoch in [1, total]; constant lr0 through warm_epochs, then cosine to 0.
    double lr_at(int epoch, int total_epochs, double lr0) const;
};

struct ExperimentConfig {
    VariantSpec variant = VariantSpec::Ours;
    std::string manifest;
    double data_ratio = 1.0;
    int epochs = 60;
    double lr = 1e-4;
    LrSchedule lr_schedule;
    OptimizerConfig optimizer;
    LossWeights loss;
    double cls_weight = 0.5;  // survival head share inside the task loss
    std::uint64_t seed = 1;
    int batch_size = 2;
    int eval_every = 5;
    // model
    int base_channels = 8;
    int num_pool_stages = 3;
    int san_c1 = 16, san_c2 = 32, san_norm_groups = 8;
    int aab_hidden = 64, aab_heads = 4, aab_ffn = 128;
    bool classification = false;  // 2D multi-label mode (AUROC metric)
    double h95_sentinel = 0.0;    // 0 -> volume diagonal

    void validate() const;
    std::string fingerprint() const;  // stable hash of the canonical form
};

ExperimentConfig experiment_from_json_file(const std::string& path);
std::string experiment_to_json(const ExperimentConfig& cfg);

// ---- dataset access ----

struct LoadedRecord {
    DatasetRecord record;
    std::string split;
    bool has_gaze = false;
    std::optional<int> survival;  // 3-class label derived at build time
};

struct LoadedDataset {
    std::vector<LoadedRecord> records;
    Shape3 shape{};
    int channels = 0;
    int num_regions = 0;
    std::string expertise;

    std::vector<int> split_indices(const std::string& split) const;
};

LoadedDataset load_dataset(const std::string& manifest_path);

// Deterministic nested ratio subset of the train split: the ratio-r subset is
// a prefix of a fixed seed-shuffled order, so smaller ratios nest in larger.
std::vector<int> subsample_train(const LoadedDataset& ds, double ratio, std::uint64_t seed);

// ---- training and evaluation ----

struct TrainResult {
    std::string checkpoint_path;
    std::string log_path;
    int best_epoch = 0;
    double best_val_metric = 0.0;
    double final_train_task_loss = 0.0;
};

TrainResult train(const ExperimentConfig& cfg, const std::string& out_dir);

struct MetricsReport {
    std::string config_fingerprint;
    std::string split;
    int num_records = 0;
    // segmentation: one entry per region; classification: one per class
    std::vector<double> mean_dice, std_dice;
    std::vector<double> mean_h95, std_h95;
    std::vector<double> auroc_per_class;
    std::vector<std::map<std::string, double>> per_record;
    std::string to_json() const;
};

MetricsReport evaluate(const std::string& checkpoint_path, const std::string& manifest_path,
                       const std::string& split);

// In-memory variant used by tests.
MetricsReport evaluate_model(const Model& model, const LoadedDataset& ds,
                             const std::string& split, const ExperimentConfig& cfg);

// ---- checkpoints ----
// `<path>.hdr.json` + `<path>.raw`: named float32 arrays (parameters then
// optimizer state), model/experiment config, epoch, fingerprint.
void save_checkpoint(const std::string& path, const Model& model,
                     const Optimizer* opt, int epoch, const ExperimentConfig& cfg);

struct LoadedCheckpoint {
    ExperimentConfig cfg;
    int epoch = 0;
    std::map<std::string, std::vector<double>> optimizer_state;
    // model is rebuilt from cfg and overwritten with the stored parameters
    std::unique_ptr<Model> model;
};
LoadedCheckpoint load_checkpoint(const std::string& path);

ModelConfig model_config_from_experiment(const ExperimentConfig& cfg, int in_channels,
                                         int num_regions, int spatial_rank);

// ---- sweeps ----

struct SweepCell {
    std::string variant;
    double ratio = 0.0;
    std::vector<double> per_seed_mean_dice;  // AUROC mean in classification mode
    double mean = 0.0, stddev = 0.0;
};

struct SweepResult {
    std::vector<SweepCell> cells;
    std::string to_table() const;  // text table, variants x ratios, mean (std)
    std::string to_json() const;
};

SweepResult sweep(const ExperimentConfig& base, const std::vector<double>& ratios,
                  const std::vector<VariantSpec>& variants,
                  const std::vector<std::uint64_t>& seeds, const std::string& out_dir);

}  // namespace gazeatt
