// Acceptance suite: every release gate in one binary, one verdict line per
// criterion. Fast property checks run first; the directional benchmark runs
// (criteria 8-10) train real models and dominate the runtime (~70 min on one
// core). Exit code is the number of failed criteria.

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "gazeatt/harness.hpp"
#include "gazeatt/network.hpp"
#include "gazeatt/synthetic.hpp"

using namespace gazeatt;
namespace fs = std::filesystem;
using clock_type = std::chrono::steady_clock;

namespace {

struct Verdict {
    int id;
    bool pass = false;
    std::string desc;
    std::string detail;
    double secs = 0.0;
};

std::vector<Verdict> verdicts;

void run_criterion(int id, const std::string& desc,
                   const std::function<bool(std::string&)>& fn) {
    Verdict v;
    v.id = id;
    v.desc = desc;
    const auto t0 = clock_type::now();
    try {
        v.pass = fn(v.detail);
    } catch (const std::exception& e) {
        v.pass = false;
        v.detail = std::string("exception: ") + e.what();
    }
    v.secs = std::chrono::duration<double>(clock_type::now() - t0).count();
    std::printf("criterion %2d [%s] %s%s%s  (%.1f s)\n", id, v.pass ? "PASS" : "FAIL",
                desc.c_str(), v.detail.empty() ? "" : " -- ", v.detail.c_str(), v.secs);
    std::fflush(stdout);
    verdicts.push_back(v);
}

std::vector<double> random_vals(std::size_t n, std::mt19937_64& rng, double lo = -1.0,
                                double hi = 1.0) {
    std::uniform_real_distribution<double> d(lo, hi);
    std::vector<double> out(n);
    for (auto& x : out) x = d(rng);
    return out;
}

ImageVolume random_volume(int channels, Shape3 shape, std::uint64_t seed) {
    ImageVolume v;
    v.channels = channels;
    v.shape = shape;
    v.data.resize(channels * shape_voxels(shape));
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<float> d(0.0f, 1.0f);
    for (auto& x : v.data) x = d(rng);
    return v;
}

// naive single-head attention: per-query loop, stabilized softmax
std::vector<double> attention_oracle(const std::vector<double>& q,
                                     const std::vector<double>& k,
                                     const std::vector<double>& v, int n, int c) {
    std::vector<double> out(n * c, 0.0);
    for (int i = 0; i < n; ++i) {
        std::vector<double> logits(n);
        double mx = -1e300;
        for (int j = 0; j < n; ++j) {
            double dot = 0;
            for (int t = 0; t < c; ++t) dot += q[i * c + t] * k[j * c + t];
            logits[j] = dot / std::sqrt(static_cast<double>(c));
            mx = std::max(mx, logits[j]);
        }
        double z = 0;
        for (int j = 0; j < n; ++j) z += std::exp(logits[j] - mx);
        for (int j = 0; j < n; ++j) {
            const double w = std::exp(logits[j] - mx) / z;
            for (int t = 0; t < c; ++t) out[i * c + t] += w * v[j * c + t];
        }
    }
    return out;
}

double h95_bruteforce(const std::vector<float>& a, const std::vector<float>& b,
                      const Shape3& sh) {
    auto positives = [&](const std::vector<float>& m) {
        std::vector<std::array<int, 3>> out;
        std::size_t p = 0;
        for (int z = 0; z < sh[0]; ++z)
            for (int y = 0; y < sh[1]; ++y)
                for (int x = 0; x < sh[2]; ++x, ++p)
                    if (m[p] > 0.5f) out.push_back({z, y, x});
        return out;
    };
    auto pa = positives(a), pb = positives(b);
    std::vector<double> pooled;
    auto directed = [&](const auto& from, const auto& to) {
        for (const auto& p : from) {
            double best = 1e30;
            for (const auto& q : to) {
                const double dz = p[0] - q[0], dy = p[1] - q[1], dx = p[2] - q[2];
                best = std::min(best, dz * dz + dy * dy + dx * dx);
            }
            pooled.push_back(std::sqrt(best));
        }
    };
    directed(pa, pb);
    directed(pb, pa);
    std::sort(pooled.begin(), pooled.end());
    const std::size_t rank = static_cast<std::size_t>(std::ceil(0.95 * pooled.size())) - 1;
    return pooled[rank];
}

ModelConfig micro_model_config() {
    // Smallest geometry the gaze path admits: the gaze estimate lives at 1/16
    // of the input, and the attention representation needs two pools after the
    // 4x input downsample, so the input must be at least 16 per axis.
    ModelConfig mc;
    mc.variant = VariantSpec::Ours;
    mc.backbone.base_channels = 4;
    mc.san.c1 = 8;
    mc.san.c2 = 8;
    mc.san.norm_groups = 4;
    mc.aab.hidden_dim = 8;
    mc.aab.num_heads = 1;
    mc.aab.ffn_dim = 8;
    mc.init_seed = 99;
    return mc;
}

ExperimentConfig bench_experiment(const std::string& manifest) {
    ExperimentConfig cfg;
    cfg.manifest = manifest;
    cfg.variant = VariantSpec::Ours;
    cfg.data_ratio = 0.2;
    cfg.epochs = 40;
    cfg.lr = 1e-2;
    cfg.lr_schedule.kind = LrSchedule::Kind::constant;
    cfg.optimizer.kind = OptimizerConfig::Kind::ranger;
    cfg.eval_every = 1000;  // no mid-run validation; final weights are kept
    return cfg;
}

const SweepCell* find_cell(const SweepResult& r, const std::string& variant) {
    for (const auto& c : r.cells)
        if (c.variant == variant) return &c;
    return nullptr;
}

}  // namespace

int main() {
    const fs::path work = fs::temp_directory_path() / "gazeatt_acceptance";
    fs::remove_all(work);
    fs::create_directories(work);

    // 1. vectorized multi-head attention vs a per-position, per-head loop oracle
    run_criterion(1, "multi-head attention matches loop oracle (20 cases, rel err < 1e-6)",
                  [&](std::string& detail) {
        std::mt19937_64 rng(41);
        double worst = 0.0;
        for (int cas = 0; cas < 20; ++cas) {
            const int heads = std::array<int, 3>{1, 2, 4}[cas % 3];
            const int n = 2 + static_cast<int>(rng() % 7);          // n <= 8
            const int c = heads * (1 + static_cast<int>(rng() % (16 / heads)));  // c_h <= 16
            const int hd = c / heads;
            auto qv = random_vals(n * c, rng), kv = random_vals(n * c, rng),
                 vv = random_vals(n * c, rng);
            ParamStore params;
            std::vector<std::vector<double>> wq(heads), wk(heads), wv(heads);
            for (int h = 0; h < heads; ++h) {
                wq[h] = random_vals(c * hd, rng);
                wk[h] = random_vals(c * hd, rng);
                wv[h] = random_vals(c * hd, rng);
                params.create("mha.head" + std::to_string(h) + ".wq", {c, hd}, wq[h]);
                params.create("mha.head" + std::to_string(h) + ".wk", {c, hd}, wk[h]);
                params.create("mha.head" + std::to_string(h) + ".wv", {c, hd}, wv[h]);
            }
            auto wo = random_vals(c * c, rng);
            params.create("mha.wo", {c, c}, wo);

            ag::Var got = multi_head_attention(ag::make_var({n, c}, qv),
                                               ag::make_var({n, c}, kv),
                                               ag::make_var({n, c}, vv), heads, params, "mha");

            auto project = [&](const std::vector<double>& x, const std::vector<double>& w) {
                std::vector<double> out(n * hd, 0.0);
                for (int i = 0; i < n; ++i)
                    for (int j = 0; j < hd; ++j)
                        for (int t = 0; t < c; ++t)
                            out[i * hd + j] += x[i * c + t] * w[t * hd + j];
                return out;
            };
            std::vector<double> concat(n * c, 0.0);
            for (int h = 0; h < heads; ++h) {
                auto head = attention_oracle(project(qv, wq[h]), project(kv, wk[h]),
                                             project(vv, wv[h]), n, hd);
                for (int i = 0; i < n; ++i)
                    for (int j = 0; j < hd; ++j) concat[i * c + h * hd + j] = head[i * hd + j];
            }
            std::vector<double> want(n * c, 0.0);
            for (int i = 0; i < n; ++i)
                for (int j = 0; j < c; ++j)
                    for (int t = 0; t < c; ++t)
                        want[i * c + j] += concat[i * c + t] * wo[t * c + j];
            for (int i = 0; i < n * c; ++i) {
                const double denom = std::max(1e-9, std::abs(want[i]));
                worst = std::max(worst, std::abs(got->val[i] - want[i]) / denom);
            }
        }
        std::ostringstream os;
        os << "max rel err " << worst;
        detail = os.str();
        return worst < 1e-6;
    });

    // 2. attention softmax rows are a probability distribution
    run_criterion(2, "attention softmax rows sum to 1 within 1e-6",
                  [&](std::string& detail) {
        std::mt19937_64 rng(42);
        double worst = 0.0;
        for (int cas = 0; cas < 10; ++cas) {
            const int n = 2 + static_cast<int>(rng() % 15);
            const int c = 1 + static_cast<int>(rng() % 16);
            ag::Var q = ag::make_var({n, c}, random_vals(n * c, rng, -4.0, 4.0));
            ag::Var k = ag::make_var({n, c}, random_vals(n * c, rng, -4.0, 4.0));
            ag::Var rows = ag::softmax_rows(
                ag::scale(ag::matmul(q, ag::transpose(k)), 1.0 / std::sqrt(double(c))));
            for (int i = 0; i < n; ++i) {
                double s = 0.0;
                for (int j = 0; j < n; ++j) s += rows->val[i * n + j];
                worst = std::max(worst, std::abs(s - 1.0));
            }
        }
        std::ostringstream os;
        os << "max |row sum - 1| = " << worst;
        detail = os.str();
        return worst < 1e-6;
    });

    // 3. positional encoding: corners exactly +-1, centers of odd axes 0,
    //    degenerate (length-1) axes emit 0
    run_criterion(3, "positional encoding corner/center/degenerate exactness",
                  [&](std::string&) {
        bool ok = true;
        {
            ag::Var p = positional_encoding({3, 3, 3});
            const int n = 27;
            auto at = [&](int c, int z, int y, int x) {
                return p->val[c * n + (z * 3 + y) * 3 + x];
            };
            for (int c = 0; c < 3; ++c) {
                ok = ok && at(c, 0, 0, 0) == -1.0;
                ok = ok && at(c, 2, 2, 2) == 1.0;
                ok = ok && at(c, 1, 1, 1) == 0.0;
            }
            ok = ok && at(0, 2, 0, 0) == 1.0 && at(1, 2, 0, 0) == -1.0;
        }
        {
            ag::Var p = positional_encoding({1, 4, 4});  // 2D mode: depth axis degenerate
            for (int i = 0; i < 16; ++i) ok = ok && p->val[i] == 0.0;
        }
        return ok;
    });

    // 4. joint loss gradients through the full model vs central finite differences
    run_criterion(4, "joint-loss gradient check vs finite differences (50 params, rel < 1e-5)",
                  [&](std::string& detail) {
        ModelConfig mc = micro_model_config();
        Model model(mc);
        std::mt19937_64 rng(7);
        // break the zero-initialized projections so no gradient is structurally zero
        for (const auto& [name, var] : model.params().entries())
            for (auto& x : var->val)
                x += 0.02 * std::uniform_real_distribution<double>(-1, 1)(rng);

        const ImageVolume vol = random_volume(4, {16, 16, 16}, 13);
        std::vector<double> seg_t(3 * 16 * 16 * 16);
        for (auto& x : seg_t) x = (rng() % 4 == 0) ? 1.0 : 0.0;
        std::vector<double> gz_t{0.7};  // gaze estimate is 1^3 at this size
        const LossWeights lw;

        auto loss_of = [&]() {
            ModelForward f = model.forward(vol);
            return ag::add(ag::scale(ag::dice_loss(f.seg, seg_t, lw.smoothing_eps), lw.w1),
                           ag::scale(ag::bce_loss(f.gaze, gz_t, lw.bce_clamp), lw.w2));
        };

        ag::Var loss = loss_of();
        ag::backward(loss);

        const auto& entries = model.params().entries();
        double worst = 0.0;
        // step chosen to keep FD round-off (ulp(loss)/2h) well under the
        // tolerance even for the smallest gradients near init
        const double h = 1e-4;
        for (int s = 0; s < 50; ++s) {
            const auto& [name, var] = entries[rng() % entries.size()];
            const std::size_t idx = rng() % var->val.size();
            const double analytic = var->grad.empty() ? 0.0 : var->grad[idx];
            const double keep = var->val[idx];
            var->val[idx] = keep + h;
            const double up = loss_of()->val[0];
            var->val[idx] = keep - h;
            const double dn = loss_of()->val[0];
            var->val[idx] = keep;
            const double fd = (up - dn) / (2 * h);
            const double rel = std::abs(analytic - fd) / std::max({1e-6, std::abs(analytic),
                                                                   std::abs(fd)});
            worst = std::max(worst, rel);
        }
        std::ostringstream os;
        os << "max rel err " << worst;
        detail = os.str();
        return worst < 1e-5;
    });

    // 5. loss golden values
    run_criterion(5, "loss goldens: dice 0.6667, BCE ln 2, joint 0.5",
                  [&](std::string&) {
        const double dice = dice_score({0.5f, 0.5f}, {1.0f, 0.0f}, 1);
        const std::vector<float> half(8, 0.5f), tgt{0, 1, 0, 1, 1, 0, 0, 1};
        const double bce = gaze_bce_loss(half, tgt);
        const double joint = joint_loss(0.4, 0.2, LossWeights{});
        return std::abs(dice - 2.0 / 3.0) < 1e-3 && std::abs(bce - std::log(2.0)) < 1e-6 &&
               joint == 0.5;
    });

    // 6. shape pipeline: gaze estimate at 1/16, attention output preserves E4 shape
    run_criterion(6, "shape pipeline: 32^3 -> gaze 2^3, E'4 == E4 shape, 2D and 3D",
                  [&](std::string&) {
        bool ok = true;
        {
            ModelConfig mc = micro_model_config();
            Model m(mc);
            ModelForward f = m.forward(random_volume(4, {32, 32, 32}, 21));
            ok = ok && f.gaze->shape == std::vector<int>{1, 2, 2, 2};
            ok = ok && f.seg->shape == std::vector<int>{3, 32, 32, 32};
        }
        {
            ModelConfig mc = micro_model_config();
            mc.backbone.spatial_rank = 2;
            mc.backbone.in_channels = 1;
            mc.san.in_channels = 1;
            mc.san.spatial_rank = 2;
            Model m(mc);
            ModelForward f = m.forward(random_volume(1, {1, 32, 32}, 22));
            ok = ok && f.gaze->shape == std::vector<int>{1, 1, 2, 2};
        }
        for (int rank : {3, 2}) {
            AabConfig ac;
            ac.hidden_dim = 8;
            ac.num_heads = 1;
            ac.ffn_dim = 8;
            ac.encoder_channels = 16;
            ac.san_channels = 8;
            ParamStore params;
            std::mt19937_64 rng(30 + rank);
            aab_init(ac, params, rng);
            const int d = rank == 3 ? 4 : 1, ds = rank == 3 ? 2 : 1;
            ag::Var e4 = ag::make_var({16, d, 4, 4}, random_vals(16 * d * 16, rng));
            ag::Var m2 = ag::make_var({8, ds, 2, 2}, random_vals(8 * ds * 4, rng));
            ag::Var out = aab_forward(e4, m2, ac, params);
            ok = ok && out->shape == e4->shape;
        }
        return ok;
    });

    // 7. identity at initialization: zero-initialized projection makes the
    //    attention branch a no-op, so full and plain models agree bitwise
    run_criterion(7, "identity-at-init: full variant equals backbone bitwise",
                  [&](std::string&) {
        ModelConfig mo = micro_model_config();
        ModelConfig mb = mo;
        mb.variant = VariantSpec::Backbone;
        Model ours(mo), backbone(mb);
        const ImageVolume v = random_volume(4, {32, 32, 32}, 23);
        ModelForward a = ours.forward(v), b = backbone.forward(v);
        if (a.seg->val.size() != b.seg->val.size()) return false;
        for (std::size_t i = 0; i < a.seg->val.size(); ++i)
            if (a.seg->val[i] != b.seg->val[i]) return false;
        return true;
    });

    // 11. metric oracles (cheap; run before the training-heavy criteria)
    run_criterion(11, "hausdorff95 equals brute force; AUROC golden 0.75",
                  [&](std::string& detail) {
        const Shape3 sh{8, 8, 8};
        std::mt19937_64 rng(51);
        double worst = 0.0;
        for (int cas = 0; cas < 10; ++cas) {
            std::vector<float> a(512, 0.0f), b(512, 0.0f);
            for (auto& x : a) x = (rng() % 5 == 0) ? 1.0f : 0.0f;
            for (auto& x : b) x = (rng() % 5 == 0) ? 1.0f : 0.0f;
            a[rng() % 512] = 1.0f;  // keep both non-empty
            b[rng() % 512] = 1.0f;
            const double got = hausdorff95(a, b, sh, 100.0).value;
            worst = std::max(worst, std::abs(got - h95_bruteforce(a, b, sh)));
        }
        const auto roc = auroc({0.1, 0.4, 0.35, 0.8}, {0, 0, 1, 1});
        std::ostringstream os;
        os << "max h95 deviation " << worst << ", auroc " << (roc ? *roc : -1.0);
        detail = os.str();
        return worst == 0.0 && roc && *roc == 0.75;
    });

    // 12. determinism: identical config + seed reproduces the report exactly
    run_criterion(12, "repeat run reproduces the metrics report exactly",
                  [&](std::string&) {
        DatasetBuildConfig dc;
        dc.n = 8;
        dc.gaze_ratio = 1.0;
        dc.phantom.seed = 404;
        const std::string manifest = build_dataset(dc, (work / "det_data").string());
        ExperimentConfig cfg;
        cfg.manifest = manifest;
        cfg.variant = VariantSpec::Ours;
        cfg.epochs = 2;
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
        cfg.seed = 12;
        TrainResult t1 = train(cfg, (work / "det_run1").string());
        TrainResult t2 = train(cfg, (work / "det_run2").string());
        const std::string r1 = evaluate(t1.checkpoint_path, manifest, "test").to_json();
        const std::string r2 = evaluate(t2.checkpoint_path, manifest, "test").to_json();
        return r1 == r2;
    });

    // 8. overfit sanity: memorize two volumes
    run_criterion(8, "overfit: 2 volumes, 200 iterations -> train dice > 0.9 in < 5 min",
                  [&](std::string& detail) {
        const auto t0 = clock_type::now();
        DatasetBuildConfig dc;
        dc.n = 2;
        dc.train_frac = 1.0;
        dc.val_frac = 0.0;
        dc.gaze_ratio = 1.0;
        const std::string manifest = build_dataset(dc, (work / "overfit_data").string());
        ExperimentConfig cfg;
        cfg.manifest = manifest;
        cfg.variant = VariantSpec::Ours;
        cfg.epochs = 200;  // batch of 2 on 2 records: one iteration per epoch
        cfg.lr = 5e-2;
        cfg.lr_schedule.kind = LrSchedule::Kind::constant;
        cfg.optimizer.kind = OptimizerConfig::Kind::ranger;
        cfg.eval_every = 1000;
        TrainResult tr = train(cfg, (work / "overfit_run").string());
        MetricsReport rep = evaluate(tr.checkpoint_path, manifest, "train");
        const double mean =
            std::accumulate(rep.mean_dice.begin(), rep.mean_dice.end(), 0.0) /
            rep.mean_dice.size();
        const double secs = std::chrono::duration<double>(clock_type::now() - t0).count();
        std::ostringstream os;
        os << "train dice " << mean << " in " << secs << " s";
        detail = os.str();
        return mean > 0.9 && secs < 300.0;
    });

    // 9 and 10 share the expert-gaze benchmark sweep; build both pools first.
    std::printf("building 200-record benchmark pools...\n");
    std::fflush(stdout);
    DatasetBuildConfig pool;
    pool.n = 200;
    pool.gaze_ratio = 1.0;
    pool.phantom.seed = 1234;
    const std::string expert_manifest = build_dataset(pool, (work / "pool_expert").string());
    pool.gaze.expertise = GazeSimConfig::Expertise::non_expert;
    const std::string novice_manifest = build_dataset(pool, (work / "pool_novice").string());

    SweepResult expert_sweep;
    std::string sweep_error;
    try {
        std::printf("training 9 expert-gaze runs (3 variants x 3 seeds, ~5 min each)...\n");
        std::fflush(stdout);
        expert_sweep = sweep(bench_experiment(expert_manifest), {0.2},
                             {VariantSpec::Backbone, VariantSpec::OursNoGaze, VariantSpec::Ours},
                             {5, 7, 9}, (work / "sweep_expert").string());
        std::printf("%s", expert_sweep.to_table().c_str());
        std::fflush(stdout);
    } catch (const std::exception& e) {
        sweep_error = e.what();
    }

    // 9. directional ablation: gaze-supervised attention beats the backbone and
    //    the mask-supervised stand-in. Expected-not-guaranteed: the margin is
    //    stochastic, so the full table above is emitted for inspection.
    run_criterion(9, "benchmark direction: full variant >= backbone and >= mask-supervised",
                  [&](std::string& detail) {
        if (!sweep_error.empty()) {
            detail = "sweep failed: " + sweep_error;
            return false;
        }
        const SweepCell* ours = find_cell(expert_sweep, "ours");
        const SweepCell* backbone = find_cell(expert_sweep, "backbone");
        const SweepCell* nogaze = find_cell(expert_sweep, "ours_no_gaze");
        if (!ours || !backbone || !nogaze) return false;
        std::ostringstream os;
        os << "mean dice: ours " << ours->mean << ", backbone " << backbone->mean
           << ", ours_no_gaze " << nogaze->mean;
        detail = os.str();
        return ours->mean >= backbone->mean && ours->mean >= nogaze->mean;
    });

    // 10. expert vs non-expert gaze supervision. Same caveat as 9.
    run_criterion(10, "benchmark direction: expert gaze >= non-expert gaze",
                  [&](std::string& detail) {
        if (!sweep_error.empty()) {
            detail = "expert sweep failed: " + sweep_error;
            return false;
        }
        std::printf("training 3 non-expert-gaze runs...\n");
        std::fflush(stdout);
        SweepResult novice = sweep(bench_experiment(novice_manifest), {0.2},
                                   {VariantSpec::Ours}, {5, 7, 9},
                                   (work / "sweep_novice").string());
        std::printf("%s", novice.to_table().c_str());
        const SweepCell* eg = find_cell(expert_sweep, "ours");
        const SweepCell* neg = find_cell(novice, "ours");
        if (!eg || !neg) return false;
        std::ostringstream os;
        os << "mean dice: expert " << eg->mean << ", non-expert " << neg->mean;
        detail = os.str();
        return eg->mean >= neg->mean;
    });

    std::sort(verdicts.begin(), verdicts.end(),
              [](const Verdict& a, const Verdict& b) { return a.id < b.id; });
    int failed = 0;
    std::printf("\n==== acceptance summary ====\n");
    for (const auto& v : verdicts) {
        std::printf("criterion %2d [%s] %s\n", v.id, v.pass ? "PASS" : "FAIL", v.desc.c_str());
        if (!v.pass) ++failed;
    }
    std::printf("%d/%zu criteria passed\n", static_cast<int>(verdicts.size()) - failed,
                verdicts.size());
    return failed;
}
