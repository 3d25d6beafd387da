#pragma once

// Configurable backbone encoder/decoder, task heads, and the six ablation
// variant wirings.

#include <optional>
#include <string>
#include <vector>

#include "gazeatt/aab.hpp"
#include "gazeatt/data_model.hpp"
#include "gazeatt/params.hpp"
#include "gazeatt/san.hpp"

namespace gazeatt {

struct BackboneConfig {
    int spatial_rank = 3;
    int base_channels = 8;   // doubles per stage
    int num_pool_stages = 3; // E4 at 1/8, AAB pools the last factor of 2
    int in_channels = 4;

    void validate() const;
    int stage_channels(int stage) const { return base_channels << stage; }
    int encoder_out_channels() const { return stage_channels(num_pool_stages - 1); }
};

enum class VariantSpec {
    Backbone,      // encoder -> heads, no SAN/AAB, no gaze loss
    GazeHeadOnly,  // +gaze*: gaze head on the encoder, (1+G) soft attention on E4
    SanConcat,     // +SAN*: M2 upsampled and concatenated onto E4, fusing conv
    OursNoGaze,    // SAN+AAB, SAN supervised by the downsampled mask union
    Ours,          // SAN+AAB with gaze supervision
    OursMultiTask, // Ours + classification head trained jointly
};

std::string variant_name(VariantSpec v);
VariantSpec variant_from_name(const std::string& name);
bool variant_uses_san(VariantSpec v);
bool variant_uses_gaze_maps(VariantSpec v);  // needs G^gt files during training

struct ModelConfig {
    VariantSpec variant = VariantSpec::Ours;
    BackboneConfig backbone;
    SanConfig san;
    AabConfig aab;      // encoder/san channel counts are filled by assemble_model
    int num_regions = 3;
    int num_classes = 0;        // 0 disables the classification head
    bool softmax_classes = false;  // survival mode; otherwise multi-label sigmoid
    std::uint64_t init_seed = 1;
};

struct ModelForward {
    ag::Var seg;                 // {N, D, W, H} soft mask, when segmentation is on
    ag::Var gaze;                // {1, d, w, h} estimate, variants with a gaze head
    ag::Var class_probs;         // {1, K}, when the classification head is on
};

class Model {
public:
    explicit Model(const ModelConfig& cfg);

    ModelForward forward(const ImageVolume& volume) const;

    const ModelConfig& config() const { return cfg_; }
    ParamStore& params() { return params_; }
    const ParamStore& params() const { return params_; }

    // Structured per-module parameter counts.
    std::string summary() const;

private:
    ModelConfig cfg_;
    ParamStore params_;
};

Model assemble_model(const ModelConfig& cfg);

// Encoder-only forward, exposed for tests: returns E4 and per-stage pre-pool
// skip features.
struct EncoderOut {
    ag::Var e4;
    std::vector<ag::Var> skips;
};
EncoderOut encoder_forward(const ag::Var& x, const BackboneConfig& cfg,
                           const ParamStore& params);

// SAN supervision target for OursNoGaze: max over regions of the ground-truth
// mask, 16x max-pool downsampled; values stay {0,1}.
GazeMap mask_union_target(const SegmentationMask& mask, int factor = 16);

}  // namespace gazeatt
