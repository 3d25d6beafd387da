#include "gazeatt/harness.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

#include "gazeatt/hash.hpp"

namespace gazeatt {

namespace fs = std::filesystem;
using nlohmann::json;

// ---------------------------------------------------------------------------
// optimizer

Optimizer::Optimizer(std::vector<ag::Var> params, OptimizerConfig cfg)
    : params_(std::move(params)), cfg_(cfg) {
    m_.resize(params_.size());
    v_.resize(params_.size());
    slow_.resize(params_.size());
    for (std::size_t i = 0; i < params_.size(); ++i) {
        m_[i].assign(params_[i]->size(), 0.0);
        v_[i].assign(params_[i]->size(), 0.0);
        slow_[i] = params_[i]->val;
    }
}

void Optimizer::zero_grad() { ag::zero_grad(params_); }

void Optimizer::step(double lr) {
    ++t_;
    const double b1 = cfg_.beta1, b2 = cfg_.beta2;
    const double bc1 = 1.0 - std::pow(b1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(b2, static_cast<double>(t_));
    const bool rectified = cfg_.kind == OptimizerConfig::Kind::ranger;
    double r_t = 1.0;
    bool use_adaptive = true;
    if (rectified) {
        const double rho_inf = 2.0 / (1.0 - b2) - 1.0;
        const double b2t = std::pow(b2, static_cast<double>(t_));
        const double rho_t = rho_inf - 2.0 * t_ * b2t / (1.0 - b2t);
        if (rho_t > 4.0) {
            r_t = std::sqrt(((rho_t - 4.0) * (rho_t - 2.0) * rho_inf) /
                            ((rho_inf - 4.0) * (rho_inf - 2.0) * rho_t));
        } else {
            use_adaptive = false;  // warmup: un-adapted momentum step
        }
    }
    for (std::size_t i = 0; i < params_.size(); ++i) {
        auto& p = *params_[i];
        if (p.grad.size() != p.val.size()) continue;  // parameter unused this step
        for (std::size_t j = 0; j < p.val.size(); ++j) {
            const double g = p.grad[j];
            m_[i][j] = b1 * m_[i][j] + (1.0 - b1) * g;
            v_[i][j] = b2 * v_[i][j] + (1.0 - b2) * g * g;
            const double mhat = m_[i][j] / bc1;
            if (use_adaptive) {
                const double vhat = std::sqrt(v_[i][j] / bc2);
                p.val[j] -= lr * r_t * mhat / (vhat + cfg_.eps);
            } else {
                p.val[j] -= lr * mhat;
            }
        }
    }
    if (cfg_.kind == OptimizerConfig::Kind::ranger) lookahead_step();
}

bool Optimizer::lookahead_step() {
    if (++since_sync_ < cfg_.k_sync) return false;
    since_sync_ = 0;
    for (std::size_t i = 0; i < params_.size(); ++i) {
        auto& fast = params_[i]->val;
        auto& slow = slow_[i];
        for (std::size_t j = 0; j < fast.size(); ++j) {
            slow[j] += cfg_.alpha * (fast[j] - slow[j]);
            fast[j] = slow[j];
        }
    }
    return true;
}

std::vector<std::pair<std::string, std::vector<double>>> Optimizer::state_arrays() const {
    std::vector<std::pair<std::string, std::vector<double>>> out;
    for (std::size_t i = 0; i < params_.size(); ++i) {
        out.emplace_back("opt.m." + std::to_string(i), m_[i]);
        out.emplace_back("opt.v." + std::to_string(i), v_[i]);
        out.emplace_back("opt.slow." + std::to_string(i), slow_[i]);
    }
    out.emplace_back("opt.t", std::vector<double>{static_cast<double>(t_),
                                                  static_cast<double>(since_sync_)});
    return out;
}

void Optimizer::load_state(const std::map<std::string, std::vector<double>>& arrays) {
    for (std::size_t i = 0; i < params_.size(); ++i) {
        auto get = [&](const std::string& k) -> const std::vector<double>& {
            auto it = arrays.find(k);
            if (it == arrays.end()) throw std::invalid_argument("optimizer state missing " + k);
            return it->second;
        };
        m_[i] = get("opt.m." + std::to_string(i));
        v_[i] = get("opt.v." + std::to_string(i));
        slow_[i] = get("opt.slow." + std::to_string(i));
    }
    auto it = arrays.find("opt.t");
    if (it != arrays.end() && it->second.size() == 2) {
        t_ = static_cast<std::int64_t>(it->second[0]);
        since_sync_ = static_cast<int>(it->second[1]);
    }
}

// ---------------------------------------------------------------------------
// schedules / config

double LrSchedule::lr_at(int epoch, int total_epochs, double lr0) const {
    if (kind == Kind::constant || epoch <= warm_epochs || total_epochs <= warm_epochs)
        return lr0;
    const double f = static_cast<double>(epoch - warm_epochs) /
                     static_cast<double>(total_epochs - warm_epochs);
    return lr0 * 0.5 * (1.0 + std::cos(M_PI * f));
}

void ExperimentConfig::validate() const {
    if (data_ratio <= 0.0 || data_ratio > 1.0)
        throw std::invalid_argument("ExperimentConfig: data_ratio must be in (0,1]");
    if (epochs < 1) throw std::invalid_argument("ExperimentConfig: epochs must be >= 1");
    if (lr <= 0) throw std::invalid_argument("ExperimentConfig: lr must be > 0");
    if (batch_size < 1 || eval_every < 1)
        throw std::invalid_argument("ExperimentConfig: batch_size/eval_every must be >= 1");
    loss.validate();
}

std::string experiment_to_json(const ExperimentConfig& c) {
    json j;
    j["variant"] = variant_name(c.variant);
    j["manifest"] = c.manifest;
    j["data_ratio"] = c.data_ratio;
    j["epochs"] = c.epochs;
    j["lr"] = c.lr;
    j["lr_schedule"] =
        c.lr_schedule.kind == LrSchedule::Kind::constant ? "constant" : "cosine_after";
    j["warm_epochs"] = c.lr_schedule.warm_epochs;
    j["optimizer"] = c.optimizer.kind == OptimizerConfig::Kind::adam ? "adam" : "ranger";
    j["k_sync"] = c.optimizer.k_sync;
    j["alpha"] = c.optimizer.alpha;
    j["w1"] = c.loss.w1;
    j["w2"] = c.loss.w2;
    j["smoothing_eps"] = c.loss.smoothing_eps;
    j["bce_clamp"] = c.loss.bce_clamp;
    j["cls_weight"] = c.cls_weight;
    j["seed"] = c.seed;
    j["batch_size"] = c.batch_size;
    j["eval_every"] = c.eval_every;
    j["base_channels"] = c.base_channels;
    j["num_pool_stages"] = c.num_pool_stages;
    j["san_c1"] = c.san_c1;
    j["san_c2"] = c.san_c2;
    j["san_norm_groups"] = c.san_norm_groups;
    j["aab_hidden"] = c.aab_hidden;
    j["aab_heads"] = c.aab_heads;
    j["aab_ffn"] = c.aab_ffn;
    j["classification"] = c.classification;
    j["h95_sentinel"] = c.h95_sentinel;
    return j.dump(2);
}

static ExperimentConfig experiment_from_json(const json& j) {
    ExperimentConfig c;
    if (j.contains("variant")) c.variant = variant_from_name(j["variant"].get<std::string>());
    auto pick = [&](const char* k, auto& field) {
        if (j.contains(k)) field = j[k].get<std::decay_t<decltype(field)>>();
    };
    pick("manifest", c.manifest);
    pick("data_ratio", c.data_ratio);
    pick("epochs", c.epochs);
    pick("lr", c.lr);
    if (j.contains("lr_schedule"))
        c.lr_schedule.kind = j["lr_schedule"] == "constant" ? LrSchedule::Kind::constant
                                                            : LrSchedule::Kind::cosine_after;
    pick("warm_epochs", c.lr_schedule.warm_epochs);
    if (j.contains("optimizer"))
        c.optimizer.kind = j["optimizer"] == "ranger" ? OptimizerConfig::Kind::ranger
                                                      : OptimizerConfig::Kind::adam;
    pick("k_sync", c.optimizer.k_sync);
    pick("alpha", c.optimizer.alpha);
    pick("w1", c.loss.w1);
    pick("w2", c.loss.w2);
    pick("smoothing_eps", c.loss.smoothing_eps);
    pick("bce_clamp", c.loss.bce_clamp);
    pick("cls_weight", c.cls_weight);
    pick("seed", c.seed);
    pick("batch_size", c.batch_size);
    pick("eval_every", c.eval_every);
    pick("base_channels", c.base_channels);
    pick("num_pool_stages", c.num_pool_stages);
    pick("san_c1", c.san_c1);
    pick("san_c2", c.san_c2);
    pick("san_norm_groups", c.san_norm_groups);
    pick("aab_hidden", c.aab_hidden);
    pick("aab_heads", c.aab_heads);
    pick("aab_ffn", c.aab_ffn);
    pick("classification", c.classification);
    pick("h95_sentinel", c.h95_sentinel);
    c.validate();
    return c;
}

ExperimentConfig experiment_from_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in.good()) throw std::runtime_error("cannot open config: " + path);
    return experiment_from_json(json::parse(in));
}

std::string ExperimentConfig::fingerprint() const {
    return hex64(fnv1a64(experiment_to_json(*this)));
}

// ---------------------------------------------------------------------------
// dataset

std::vector<int> LoadedDataset::split_indices(const std::string& split) const {
    std::vector<int> out;
    for (std::size_t i = 0; i < records.size(); ++i)
        if (records[i].split == split) out.push_back(static_cast<int>(i));
    return out;
}

LoadedDataset load_dataset(const std::string& manifest_path) {
    std::ifstream in(manifest_path);
    if (!in.good()) throw std::runtime_error("cannot open manifest: " + manifest_path);
    json m = json::parse(in);
    const fs::path dir = fs::path(manifest_path).parent_path();

    LoadedDataset ds;
    auto sh = m.at("shape");
    ds.shape = {sh[0].get<int>(), sh[1].get<int>(), sh[2].get<int>()};
    ds.channels = m.at("channels").get<int>();
    ds.num_regions = m.at("num_regions").get<int>();
    if (m.contains("expertise")) ds.expertise = m["expertise"].get<std::string>();

    for (const auto& r : m.at("records")) {
        LoadedRecord lr;
        lr.record.id = r.at("id").get<std::string>();
        lr.record.volume = read_volume((dir / r.at("volume").get<std::string>()).string());
        if (r.contains("mask"))
            lr.record.mask = read_mask((dir / r.at("mask").get<std::string>()).string());
        if (r.contains("fixations"))
            lr.record.fixations = read_fixations(
                (dir / r.at("fixations").get<std::string>()).string());
        if (r.contains("gaze_map"))
            lr.record.gaze_map =
                read_gaze_map((dir / r.at("gaze_map").get<std::string>()).string());
        if (r.contains("labels")) lr.record.labels = r["labels"].get<std::vector<float>>();
        if (r.contains("survival")) lr.survival = r["survival"].get<int>();
        lr.split = r.at("split").get<std::string>();
        lr.has_gaze = r.at("has_gaze").get<bool>();
        lr.record.validate();
        ds.records.push_back(std::move(lr));
    }
    return ds;
}

std::vector<int> subsample_train(const LoadedDataset& ds, double ratio, std::uint64_t seed) {
    auto train = ds.split_indices("train");
    std::mt19937_64 rng(derive_seed(seed, 0xdadaULL));
    std::shuffle(train.begin(), train.end(), rng);
    const int k = std::max(1, static_cast<int>(std::lround(ratio * train.size())));
    train.resize(std::min<std::size_t>(k, train.size()));
    std::sort(train.begin(), train.end());
    return train;
}

// ---------------------------------------------------------------------------
// model plumbing

ModelConfig model_config_from_experiment(const ExperimentConfig& cfg, int in_channels,
                                         int num_regions, int spatial_rank) {
    ModelConfig mc;
    mc.variant = cfg.variant;
    mc.backbone.spatial_rank = spatial_rank;
    mc.backbone.base_channels = cfg.base_channels;
    mc.backbone.num_pool_stages = cfg.num_pool_stages;
    mc.backbone.in_channels = in_channels;
    mc.san.c1 = cfg.san_c1;
    mc.san.c2 = cfg.san_c2;
    mc.san.norm_groups = cfg.san_norm_groups;
    mc.aab.hidden_dim = cfg.aab_hidden;
    mc.aab.num_heads = cfg.aab_heads;
    mc.aab.ffn_dim = cfg.aab_ffn;
    mc.num_regions = cfg.classification ? 0 : num_regions;
    if (cfg.classification) {
        mc.num_classes = 5;
        mc.softmax_classes = false;
    } else if (cfg.variant == VariantSpec::OursMultiTask) {
        mc.num_classes = 3;
        mc.softmax_classes = true;
    }
    mc.init_seed = cfg.seed;
    return mc;
}

namespace {

json model_config_to_json(const ModelConfig& mc) {
    json j;
    j["variant"] = variant_name(mc.variant);
    j["spatial_rank"] = mc.backbone.spatial_rank;
    j["base_channels"] = mc.backbone.base_channels;
    j["num_pool_stages"] = mc.backbone.num_pool_stages;
    j["in_channels"] = mc.backbone.in_channels;
    j["san_c1"] = mc.san.c1;
    j["san_c2"] = mc.san.c2;
    j["san_norm_groups"] = mc.san.norm_groups;
    j["aab_hidden"] = mc.aab.hidden_dim;
    j["aab_heads"] = mc.aab.num_heads;
    j["aab_ffn"] = mc.aab.ffn_dim;
    j["num_regions"] = mc.num_regions;
    j["num_classes"] = mc.num_classes;
    j["softmax_classes"] = mc.softmax_classes;
    j["init_seed"] = mc.init_seed;
    return j;
}

ModelConfig model_config_from_json(const json& j) {
    ModelConfig mc;
    mc.variant = variant_from_name(j.at("variant").get<std::string>());
    mc.backbone.spatial_rank = j.at("spatial_rank").get<int>();
    mc.backbone.base_channels = j.at("base_channels").get<int>();
    mc.backbone.num_pool_stages = j.at("num_pool_stages").get<int>();
    mc.backbone.in_channels = j.at("in_channels").get<int>();
    mc.san.c1 = j.at("san_c1").get<int>();
    mc.san.c2 = j.at("san_c2").get<int>();
    mc.san.norm_groups = j.at("san_norm_groups").get<int>();
    mc.aab.hidden_dim = j.at("aab_hidden").get<int>();
    mc.aab.num_heads = j.at("aab_heads").get<int>();
    mc.aab.ffn_dim = j.at("aab_ffn").get<int>();
    mc.num_regions = j.at("num_regions").get<int>();
    mc.num_classes = j.at("num_classes").get<int>();
    mc.softmax_classes = j.at("softmax_classes").get<bool>();
    mc.init_seed = j.at("init_seed").get<std::uint64_t>();
    return mc;
}

std::vector<double> gaze_target_for(const LoadedRecord& lr, VariantSpec variant) {
    if (variant == VariantSpec::OursNoGaze) {
        GazeMap u = mask_union_target(*lr.record.mask, 16);
        return std::vector<double>(u.data.begin(), u.data.end());
    }
    if (!lr.record.gaze_map) return {};
    return std::vector<double>(lr.record.gaze_map->data.begin(),
                               lr.record.gaze_map->data.end());
}

std::vector<double> onehot3(int cls) {
    std::vector<double> v(3, 0.0);
    v.at(cls) = 1.0;
    return v;
}

double selection_metric(const MetricsReport& rep, bool classification) {
    if (classification) {
        double s = 0.0;
        int n = 0;
        for (double a : rep.auroc_per_class)
            if (std::isfinite(a)) { s += a; ++n; }
        return n ? s / n : 0.0;
    }
    double s = 0.0;
    for (double d : rep.mean_dice) s += d;
    return rep.mean_dice.empty() ? 0.0 : s / rep.mean_dice.size();
}

}  // namespace

// ---------------------------------------------------------------------------
// checkpoints

void save_checkpoint(const std::string& path, const Model& model, const Optimizer* opt,
                     int epoch, const ExperimentConfig& cfg) {
    json header;
    header["dtype"] = "float32";
    header["byte_order"] = "little";
    header["epoch"] = epoch;
    header["fingerprint"] = cfg.fingerprint();
    header["experiment"] = json::parse(experiment_to_json(cfg));
    header["model"] = model_config_to_json(model.config());

    std::vector<float> payload;
    json arrays = json::array();
    auto append = [&](const std::string& name, const std::vector<int>& shape,
                      const std::vector<double>& vals) {
        json a;
        a["name"] = name;
        a["shape"] = shape;
        a["offset"] = payload.size();
        arrays.push_back(a);
        for (double v : vals) payload.push_back(static_cast<float>(v));
    };
    for (const auto& [name, var] : model.params().entries())
        append(name, var->shape, var->val);
    if (opt) {
        for (const auto& [name, vals] : opt->state_arrays())
            append(name, {static_cast<int>(vals.size())}, vals);
    }
    header["arrays"] = arrays;

    std::ofstream hdr(path + ".hdr.json");
    if (!hdr.good()) throw std::runtime_error("cannot write checkpoint header: " + path);
    hdr << header.dump(2) << "\n";
    std::ofstream raw(path + ".raw", std::ios::binary);
    raw.write(reinterpret_cast<const char*>(payload.data()),
              static_cast<std::streamsize>(payload.size() * sizeof(float)));
    if (!raw.good()) throw std::runtime_error("cannot write checkpoint payload: " + path);
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
    std::ifstream hdr(path + ".hdr.json");
    if (!hdr.good()) throw std::runtime_error("cannot open checkpoint: " + path);
    json header = json::parse(hdr);
    std::ifstream raw(path + ".raw", std::ios::binary | std::ios::ate);
    if (!raw.good()) throw std::runtime_error("cannot open checkpoint payload: " + path);
    const std::size_t count = static_cast<std::size_t>(raw.tellg()) / sizeof(float);
    raw.seekg(0);
    std::vector<float> payload(count);
    raw.read(reinterpret_cast<char*>(payload.data()),
             static_cast<std::streamsize>(count * sizeof(float)));

    LoadedCheckpoint out;
    out.epoch = header.at("epoch").get<int>();
    out.cfg = experiment_from_json(header.at("experiment"));
    out.model = std::make_unique<Model>(model_config_from_json(header.at("model")));

    for (const auto& a : header.at("arrays")) {
        const std::string name = a.at("name").get<std::string>();
        const std::size_t offset = a.at("offset").get<std::size_t>();
        std::size_t n = 1;
        for (const auto& s : a.at("shape")) n *= s.get<std::size_t>();
        if (offset + n > payload.size())
            throw std::runtime_error("checkpoint payload too short: " + path);
        std::vector<double> vals(n);
        for (std::size_t i = 0; i < n; ++i) vals[i] = payload[offset + i];
        if (name.rfind("opt.", 0) == 0) {
            out.optimizer_state[name] = std::move(vals);
        } else {
            auto var = out.model->params().get(name);
            if (var->size() != n)
                throw std::runtime_error("checkpoint shape mismatch for " + name);
            var->val = std::move(vals);
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// evaluation

std::string MetricsReport::to_json() const {
    json j;
    j["config_fingerprint"] = config_fingerprint;
    j["split"] = split;
    j["num_records"] = num_records;
    auto put = [&](const char* k, const std::vector<double>& v) {
        json arr = json::array();
        for (double x : v) {
            if (std::isfinite(x)) arr.push_back(x);
            else arr.push_back(nullptr);
        }
        j[k] = arr;
    };
    put("mean_dice", mean_dice);
    put("std_dice", std_dice);
    put("mean_h95", mean_h95);
    put("std_h95", std_h95);
    put("auroc_per_class", auroc_per_class);
    json per = json::array();
    for (const auto& rec : per_record) {
        json r;
        for (const auto& [k, v] : rec) r[k] = v;
        per.push_back(r);
    }
    j["per_record"] = per;
    return j.dump(2);
}

MetricsReport evaluate_model(const Model& model, const LoadedDataset& ds,
                             const std::string& split, const ExperimentConfig& cfg) {
    const auto idx = ds.split_indices(split);
    if (idx.empty()) throw std::invalid_argument("evaluate: empty split " + split);
    MetricsReport rep;
    rep.config_fingerprint = cfg.fingerprint();
    rep.split = split;
    rep.num_records = static_cast<int>(idx.size());

    const bool classification = model.config().num_regions == 0;
    const int regions = model.config().num_regions;
    const Shape3 sh = ds.shape;
    const std::size_t plane = shape_voxels(sh);
    double sentinel = cfg.h95_sentinel;
    if (sentinel <= 0.0)
        sentinel = std::sqrt(static_cast<double>(sh[0]) * sh[0] +
                             static_cast<double>(sh[1]) * sh[1] +
                             static_cast<double>(sh[2]) * sh[2]);

    std::vector<std::vector<double>> dice(regions), h95(regions);
    std::vector<std::vector<double>> scores;  // classification, per class
    std::vector<std::vector<int>> labs;

    for (int i : idx) {
        const auto& lr = ds.records[i];
        ModelForward fwd = model.forward(lr.record.volume);
        std::map<std::string, double> row;
        row["record"] = i;
        if (!classification) {
            std::vector<float> pred(fwd.seg->val.size());
            for (std::size_t p = 0; p < pred.size(); ++p)
                pred[p] = fwd.seg->val[p] > 0.5 ? 1.0f : 0.0f;
            for (int r = 0; r < regions; ++r) {
                std::vector<float> pr(pred.begin() + r * plane, pred.begin() + (r + 1) * plane);
                std::vector<float> gt(lr.record.mask->data.begin() + r * plane,
                                      lr.record.mask->data.begin() + (r + 1) * plane);
                const double d = dice_score(pr, gt, 1, cfg.loss.smoothing_eps);
                const auto h = hausdorff95(pr, gt, sh, sentinel);
                dice[r].push_back(d);
                h95[r].push_back(h.value);
                row["dice_r" + std::to_string(r)] = d;
                row["h95_r" + std::to_string(r)] = h.value;
            }
        } else {
            const auto& probs = fwd.class_probs->val;
            if (scores.empty()) {
                scores.resize(probs.size());
                labs.resize(probs.size());
            }
            for (std::size_t c = 0; c < probs.size(); ++c) {
                scores[c].push_back(probs[c]);
                labs[c].push_back(lr.record.labels && (*lr.record.labels)[c] > 0.5f ? 1 : 0);
                row["score_c" + std::to_string(c)] = probs[c];
            }
        }
        rep.per_record.push_back(std::move(row));
    }

    auto mean_std = [](const std::vector<double>& v) {
        double m = std::accumulate(v.begin(), v.end(), 0.0) / v.size();
        double s = 0.0;
        for (double x : v) s += (x - m) * (x - m);
        return std::pair<double, double>(m, v.size() > 1 ? std::sqrt(s / (v.size() - 1)) : 0.0);
    };
    for (int r = 0; r < regions; ++r) {
        auto [md, sd] = mean_std(dice[r]);
        auto [mh, sh2] = mean_std(h95[r]);
        rep.mean_dice.push_back(md);
        rep.std_dice.push_back(sd);
        rep.mean_h95.push_back(mh);
        rep.std_h95.push_back(sh2);
    }
    for (std::size_t c = 0; c < scores.size(); ++c) {
        auto a = auroc(scores[c], labs[c]);
        rep.auroc_per_class.push_back(a ? *a : std::numeric_limits<double>::quiet_NaN());
    }
    return rep;
}

MetricsReport evaluate(const std::string& checkpoint_path, const std::string& manifest_path,
                       const std::string& split) {
    LoadedCheckpoint ck = load_checkpoint(checkpoint_path);
    LoadedDataset ds = load_dataset(manifest_path);
    return evaluate_model(*ck.model, ds, split, ck.cfg);
}

// ---------------------------------------------------------------------------
// training

TrainResult train(const ExperimentConfig& cfg, const std::string& out_dir) {
    cfg.validate();
    fs::create_directories(out_dir);
    LoadedDataset ds = load_dataset(cfg.manifest);
    const int spatial_rank = ds.shape[0] == 1 ? 2 : 3;

    ModelConfig mc = model_config_from_experiment(cfg, ds.channels, ds.num_regions,
                                                  spatial_rank);
    Model model(mc);
    Optimizer opt(model.params().vars(), cfg.optimizer);

    const auto subset = subsample_train(ds, cfg.data_ratio, cfg.seed);
    if (subset.empty()) throw std::invalid_argument("train: empty training subset");

    // per-record gaze supervision targets
    std::vector<std::vector<double>> gaze_targets(ds.records.size());
    bool any_gaze = false;
    for (int i : subset) {
        if (cfg.variant == VariantSpec::OursNoGaze ||
            (variant_uses_gaze_maps(cfg.variant) && ds.records[i].has_gaze)) {
            gaze_targets[i] = gaze_target_for(ds.records[i], cfg.variant);
            if (!gaze_targets[i].empty()) any_gaze = true;
        }
    }
    if (variant_uses_gaze_maps(cfg.variant) && !any_gaze)
        throw std::invalid_argument(
            "train: variant requires gaze maps but no training record carries gaze");

    auto val = ds.split_indices("val");
    const std::string val_split = val.empty() ? "train" : "val";

    std::ostringstream log;
    double best_metric = -1.0;
    int best_epoch = 0;
    std::vector<std::vector<double>> best_params;
    double last_task_loss = 0.0;

    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        const double lr = cfg.lr_schedule.lr_at(epoch, cfg.epochs, cfg.lr);
        std::vector<int> order = subset;
        std::mt19937_64 rng(derive_seed(cfg.seed, 0xe90c + static_cast<std::uint64_t>(epoch)));
        std::shuffle(order.begin(), order.end(), rng);

        double task_acc = 0.0, gaze_acc = 0.0;
        int n_batches = 0, n_gaze_total = 0;
        for (std::size_t b0 = 0; b0 < order.size(); b0 += cfg.batch_size) {
            const std::size_t b1 = std::min(order.size(), b0 + cfg.batch_size);
            int n_gaze = 0;
            for (std::size_t k = b0; k < b1; ++k)
                if (!gaze_targets[order[k]].empty()) ++n_gaze;
            const double n_in_batch = static_cast<double>(b1 - b0);

            opt.zero_grad();
            for (std::size_t k = b0; k < b1; ++k) {
                const auto& lrrec = ds.records[order[k]];
                ModelForward fwd = model.forward(lrrec.record.volume);

                ag::Var task;
                if (cfg.classification) {
                    std::vector<double> labels(lrrec.record.labels->begin(),
                                               lrrec.record.labels->end());
                    task = ag::bce_loss(fwd.class_probs, labels, cfg.loss.bce_clamp);
                } else {
                    std::vector<double> tgt(lrrec.record.mask->data.begin(),
                                            lrrec.record.mask->data.end());
                    task = ag::dice_loss(fwd.seg, tgt, cfg.loss.smoothing_eps);
                    if (cfg.variant == VariantSpec::OursMultiTask && lrrec.survival) {
                        ag::Var ce = ag::categorical_ce(fwd.class_probs, onehot3(*lrrec.survival),
                                                        cfg.loss.bce_clamp);
                        task = ag::add(task, ag::scale(ce, cfg.cls_weight));
                    }
                }
                // batch loss: w1 * mean(task) + w2 * mean over gaze-carrying samples
                ag::Var total = ag::scale(task, cfg.loss.w1 / n_in_batch);
                const auto& gtgt = gaze_targets[order[k]];
                ag::Var gaze_term;
                if (!gtgt.empty()) {
                    if (!fwd.gaze || fwd.gaze->size() != gtgt.size())
                        throw std::invalid_argument(
                            "train: gaze target shape does not match the gaze estimate");
                    gaze_term = ag::bce_loss(fwd.gaze, gtgt, cfg.loss.bce_clamp);
                    total = ag::add(total, ag::scale(gaze_term, cfg.loss.w2 / n_gaze));
                }
                if (!std::isfinite(total->val[0]))
                    throw std::runtime_error("train: NaN loss in batch record " + lrrec.record.id +
                                             " (epoch " + std::to_string(epoch) + ")");
                ag::backward(total);
                task_acc += task->val[0] / n_in_batch;
                if (gaze_term) gaze_acc += gaze_term->val[0], ++n_gaze_total;
            }
            opt.step(lr);
            ++n_batches;
        }
        last_task_loss = task_acc / n_batches;

        json line;
        line["epoch"] = epoch;
        line["lr"] = lr;
        line["train_task_loss"] = last_task_loss;
        if (n_gaze_total) line["train_gaze_loss"] = gaze_acc / n_gaze_total;

        if (epoch % cfg.eval_every == 0 || epoch == cfg.epochs) {
            MetricsReport rep = evaluate_model(model, ds, val_split, cfg);
            const double metric = selection_metric(rep, cfg.classification);
            line["val_metric"] = metric;
            if (metric > best_metric) {
                best_metric = metric;
                best_epoch = epoch;
                best_params.clear();
                for (const auto& [_, var] : model.params().entries())
                    best_params.push_back(var->val);
            }
        }
        log << line.dump() << "\n";
    }

    if (!best_params.empty()) {
        std::size_t i = 0;
        for (const auto& [_, var] : model.params().entries()) var->val = best_params[i++];
    }

    TrainResult res;
    res.best_epoch = best_epoch;
    res.best_val_metric = best_metric;
    res.final_train_task_loss = last_task_loss;
    res.checkpoint_path = (fs::path(out_dir) / "checkpoint").string();
    res.log_path = (fs::path(out_dir) / "train_log.jsonl").string();
    save_checkpoint(res.checkpoint_path, model, &opt, best_epoch, cfg);
    std::ofstream lf(res.log_path);
    lf << log.str();
    if (!lf.good()) throw std::runtime_error("train: cannot write log " + res.log_path);
    return res;
}

// ---------------------------------------------------------------------------
// sweeps

std::string SweepResult::to_table() const {
    std::ostringstream os;
    os << "variant        ratio   mean (std)\n";
    for (const auto& c : cells) {
        char buf[96];
        std::snprintf(buf, sizeof buf, "%-14s %.2f    %.4f (%.4f)\n", c.variant.c_str(),
                      c.ratio, c.mean, c.stddev);
        os << buf;
    }
    return os.str();
}

std::string SweepResult::to_json() const {
    json j = json::array();
    for (const auto& c : cells) {
        json e;
        e["variant"] = c.variant;
        e["ratio"] = c.ratio;
        e["per_seed"] = c.per_seed_mean_dice;
        e["mean"] = c.mean;
        e["std"] = c.stddev;
        j.push_back(e);
    }
    return j.dump(2);
}

SweepResult sweep(const ExperimentConfig& base, const std::vector<double>& ratios,
                  const std::vector<VariantSpec>& variants,
                  const std::vector<std::uint64_t>& seeds, const std::string& out_dir) {
    fs::create_directories(out_dir);
    SweepResult result;
    for (VariantSpec v : variants)
        for (double ratio : ratios) {
            SweepCell cell;
            cell.variant = variant_name(v);
            cell.ratio = ratio;
            for (std::uint64_t seed : seeds) {
                ExperimentConfig cfg = base;
                cfg.variant = v;
                cfg.data_ratio = ratio;
                cfg.seed = seed;
                std::ostringstream run;
                run << variant_name(v) << "_r" << ratio << "_s" << seed;
                const std::string run_dir = (fs::path(out_dir) / run.str()).string();
                TrainResult tr = train(cfg, run_dir);
                MetricsReport rep = evaluate(tr.checkpoint_path, cfg.manifest, "test");
                const double m = selection_metric(rep, cfg.classification);
                cell.per_seed_mean_dice.push_back(m);
                std::ofstream rf(fs::path(run_dir) / "report.json");
                rf << rep.to_json() << "\n";
            }
            double mean = std::accumulate(cell.per_seed_mean_dice.begin(),
                                          cell.per_seed_mean_dice.end(), 0.0) /
                          cell.per_seed_mean_dice.size();
            double var = 0.0;
            for (double x : cell.per_seed_mean_dice) var += (x - mean) * (x - mean);
            cell.mean = mean;
            cell.stddev = cell.per_seed_mean_dice.size() > 1
                              ? std::sqrt(var / (cell.per_seed_mean_dice.size() - 1))
                              : 0.0;
            result.cells.push_back(cell);
        }
    std::ofstream tf(fs::path(out_dir) / "sweep_table.txt");
    tf << result.to_table();
    std::ofstream jf(fs::path(out_dir) / "sweep.json");
    jf << result.to_json() << "\n";
    return result;
}

}  // namespace gazeatt
