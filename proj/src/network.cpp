#include "gazeatt/network.hpp"

#include <sstream>
#include <stdexcept>

#include "gazeatt/gaze_processing.hpp"

namespace gazeatt {

using namespace ag;

void BackboneConfig::validate() const {
    if (spatial_rank != 2 && spatial_rank != 3)
        throw std::invalid_argument("BackboneConfig: spatial_rank must be 2 or 3");
    if (base_channels < 1 || num_pool_stages < 1 || in_channels < 1)
        throw std::invalid_argument("BackboneConfig: counts must be >= 1");
}

std::string variant_name(VariantSpec v) {
    switch (v) {
        case VariantSpec::Backbone: return "backbone";
        case VariantSpec::GazeHeadOnly: return "gaze_head";
        case VariantSpec::SanConcat: return "san_concat";
        case VariantSpec::OursNoGaze: return "ours_no_gaze";
        case VariantSpec::Ours: return "ours";
        case VariantSpec::OursMultiTask: return "ours_multitask";
    }
    throw std::invalid_argument("variant_name: bad variant");
}

VariantSpec variant_from_name(const std::string& name) {
    for (VariantSpec v : {VariantSpec::Backbone, VariantSpec::GazeHeadOnly,
                          VariantSpec::SanConcat, VariantSpec::OursNoGaze,
                          VariantSpec::Ours, VariantSpec::OursMultiTask})
        if (variant_name(v) == name) return v;
    throw std::invalid_argument("unknown variant: " + name);
}

bool variant_uses_san(VariantSpec v) {
    return v == VariantSpec::SanConcat || v == VariantSpec::OursNoGaze ||
           v == VariantSpec::Ours || v == VariantSpec::OursMultiTask;
}

bool variant_uses_gaze_maps(VariantSpec v) {
    return v == VariantSpec::GazeHeadOnly || v == VariantSpec::SanConcat ||
           v == VariantSpec::Ours || v == VariantSpec::OursMultiTask;
}

namespace {

constexpr int kBackboneNormGroups = 4;

Var conv_gn_relu(const Var& x, const std::string& prefix, const ParamStore& p) {
    Var y = conv3d(x, p.get(prefix + ".w"), p.get(prefix + ".b"));
    y = group_norm(y, p.get(prefix + ".gamma"), p.get(prefix + ".beta"), kBackboneNormGroups);
    return relu(y);
}

void init_conv(ParamStore& p, const std::string& prefix, int co, int ci, int kd,
               std::mt19937_64& rng, bool norm = true) {
    p.he_normal(prefix + ".w", {co, ci, kd, 3, 3}, ci * kd * 9, rng);
    p.zeros(prefix + ".b", {co});
    if (norm) {
        p.constant(prefix + ".gamma", {co}, 1.0);
        p.zeros(prefix + ".beta", {co});
    }
}

int pool_depth(const BackboneConfig& cfg, const Var& x) {
    return (cfg.spatial_rank == 3 && x->shape[1] > 1) ? 2 : 1;
}

}  // namespace

EncoderOut encoder_forward(const ag::Var& x, const BackboneConfig& cfg,
                           const ParamStore& params) {
    cfg.validate();
    EncoderOut out;
    Var cur = x;
    for (int s = 0; s < cfg.num_pool_stages; ++s) {
        cur = conv_gn_relu(cur, "enc.stage" + std::to_string(s), params);
        out.skips.push_back(cur);
        cur = max_pool(cur, pool_depth(cfg, cur), 2, 2);
    }
    out.e4 = cur;
    return out;
}

GazeMap mask_union_target(const SegmentationMask& mask, int factor) {
    GazeMap u;
    u.shape = mask.shape;
    u.data.assign(u.voxels(), 0.0f);
    for (int r = 0; r < mask.regions; ++r)
        for (std::size_t i = 0; i < u.voxels(); ++i)
            u.data[i] = std::max(u.data[i], mask.data[r * u.voxels() + i]);
    return downsample_gaze_map(u, factor);
}

Model::Model(const ModelConfig& cfg) : cfg_(cfg) {
    cfg_.backbone.validate();
    if (cfg_.num_regions < 1 && cfg_.num_classes < 1)
        throw std::invalid_argument("Model: needs a segmentation or classification head");
    // Separate init streams so backbone weights are identical across variants
    // for a fixed seed (the SAN/AAB draws must not shift the backbone's).
    std::mt19937_64 rng(cfg.init_seed);
    std::mt19937_64 aux_rng(cfg.init_seed ^ 0x9e3779b97f4a7c15ULL);
    const auto& bb = cfg_.backbone;
    const int kd = bb.spatial_rank == 3 ? 3 : 1;

    int ci = bb.in_channels;
    for (int s = 0; s < bb.num_pool_stages; ++s) {
        init_conv(params_, "enc.stage" + std::to_string(s), bb.stage_channels(s), ci, kd, rng);
        ci = bb.stage_channels(s);
    }
    const int ce = bb.encoder_out_channels();

    if (variant_uses_san(cfg_.variant)) {
        cfg_.san.in_channels = bb.in_channels;
        cfg_.san.spatial_rank = bb.spatial_rank;
        san_init(cfg_.san, params_, aux_rng);
    }
    if (cfg_.variant == VariantSpec::Ours || cfg_.variant == VariantSpec::OursNoGaze ||
        cfg_.variant == VariantSpec::OursMultiTask) {
        cfg_.aab.encoder_channels = ce;
        cfg_.aab.san_channels = cfg_.san.c2;
        aab_init(cfg_.aab, params_, aux_rng);
    }
    if (cfg_.variant == VariantSpec::SanConcat) {
        // 1x1x1 fusing conv after channel concat of E4 and upsampled M2
        params_.he_normal("fuse.w", {ce, ce + cfg_.san.c2, 1, 1, 1}, ce + cfg_.san.c2, aux_rng);
        params_.zeros("fuse.b", {ce});
    }
    if (cfg_.variant == VariantSpec::GazeHeadOnly) {
        params_.he_normal("enc_gaze.w", {1, ce, 1, 1, 1}, ce, aux_rng);
        params_.zeros("enc_gaze.b", {1});
    }

    if (cfg_.num_regions >= 1) {
        int up_in = ce;
        for (int s = bb.num_pool_stages - 1; s >= 0; --s) {
            const int skip_c = bb.stage_channels(s);
            const int out_c = s > 0 ? bb.stage_channels(s - 1) : bb.base_channels;
            init_conv(params_, "dec.stage" + std::to_string(s), out_c, up_in + skip_c, kd, rng);
            up_in = out_c;
        }
        params_.he_normal("seg_head.w", {cfg_.num_regions, up_in, 1, 1, 1}, up_in, rng);
        params_.zeros("seg_head.b", {cfg_.num_regions});
    }
    if (cfg_.num_classes >= 1) {
        params_.he_normal("cls_head.w", {ce, cfg_.num_classes}, ce, rng);
        params_.zeros("cls_head.b", {cfg_.num_classes});
    }
}

ModelForward Model::forward(const ImageVolume& volume) const {
    volume.validate();
    if (volume.channels != cfg_.backbone.in_channels)
        throw std::invalid_argument("Model::forward: input channel mismatch");
    const auto& bb = cfg_.backbone;

    Var input = volume_to_var(volume);
    EncoderOut enc = encoder_forward(input, bb, params_);
    Var e4 = enc.e4;

    ModelForward out;

    // SAN branch
    Var m2;
    if (variant_uses_san(cfg_.variant)) {
        ImageVolume ids = downsample_input(volume, 4);
        SanOutput san = san_forward(volume_to_var(ids), cfg_.san, params_);
        m2 = san.m2;
        out.gaze = san.gaze;
    }

    // feature refinement per variant
    Var refined = e4;
    switch (cfg_.variant) {
        case VariantSpec::Backbone:
            break;
        case VariantSpec::GazeHeadOnly: {
            const int pd = pool_depth(bb, e4);
            Var pooled = max_pool(e4, pd, 2, 2);
            Var g = sigmoid(conv3d(pooled, params_.get("enc_gaze.w"), params_.get("enc_gaze.b")));
            out.gaze = g;
            // (1 + upsampled G) as a soft attention map on E4
            Var up = upsample_nearest(g, pd, 2, 2);
            refined = mul_channel_broadcast(e4, add_scalar(up, 1.0));
            break;
        }
        case VariantSpec::SanConcat: {
            std::array<int, 3> r{};
            for (int a = 0; a < 3; ++a) r[a] = e4->shape[a + 1] / m2->shape[a + 1];
            Var up = upsample_nearest(m2, r[0], r[1], r[2]);
            refined = relu(conv3d(concat_channels(e4, up), params_.get("fuse.w"),
                                  params_.get("fuse.b")));
            break;
        }
        case VariantSpec::OursNoGaze:
        case VariantSpec::Ours:
        case VariantSpec::OursMultiTask:
            refined = aab_forward(e4, m2, cfg_.aab, params_);
            break;
    }

    // segmentation head: UNet-style decoder over the skips
    if (cfg_.num_regions >= 1) {
        Var cur = refined;
        for (int s = bb.num_pool_stages - 1; s >= 0; --s) {
            const Var& skip = enc.skips[s];
            const int fd = skip->shape[1] / cur->shape[1];
            const int fw = skip->shape[2] / cur->shape[2];
            const int fh = skip->shape[3] / cur->shape[3];
            cur = upsample_nearest(cur, fd, fw, fh);
            cur = conv_gn_relu(concat_channels(cur, skip), "dec.stage" + std::to_string(s),
                               params_);
        }
        out.seg = sigmoid(conv3d(cur, params_.get("seg_head.w"), params_.get("seg_head.b")));
    }

    if (cfg_.num_classes >= 1) {
        Var pooled = global_avg_pool(refined);
        Var logits = linear(pooled, params_.get("cls_head.w"), params_.get("cls_head.b"));
        out.class_probs = cfg_.softmax_classes ? softmax_rows(logits) : sigmoid(logits);
    }
    return out;
}

std::string Model::summary() const {
    std::ostringstream os;
    os << "variant: " << variant_name(cfg_.variant) << "\n";
    const char* groups[] = {"enc.", "dec.", "seg_head.", "san.", "aab.", "fuse.",
                            "enc_gaze.", "cls_head."};
    std::size_t total = 0;
    for (const char* g : groups) {
        std::size_t n = params_.parameter_count(g);
        if (n) os << g << " " << n << "\n";
        total += n;
    }
    os << "total " << total << "\n";
    return os.str();
}

Model assemble_model(const ModelConfig& cfg) { return Model(cfg); }

}  // namespace gazeatt
