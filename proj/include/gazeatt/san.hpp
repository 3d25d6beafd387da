#pragma once

// Selective Attention Network: shallow conv net on the 4x-downsampled input,
// emitting the attention representation M2 and the gaze estimate G.

#include <random>

#include "gazeatt/data_model.hpp"
#include "gazeatt/params.hpp"

namespace gazeatt {

struct SanConfig {
    int in_channels = 4;
    int c1 = 16;
    int c2 = 32;
    int norm_groups = 8;
    int spatial_rank = 3;  // 2 -> in-plane kernels/pools only

    void validate() const;
};

// Average-pools each channel by `factor` per spatial axis; a depth axis of
// length 1 (2D mode) is untouched.
ImageVolume downsample_input(const ImageVolume& volume, int factor = 4);

void san_init(const SanConfig& cfg, ParamStore& params, std::mt19937_64& rng);

struct SanOutput {
    ag::Var m1;    // {c1, d1, w1, h1}
    ag::Var m2;    // {c2, d, w, h} at 1/16 of the original image
    ag::Var gaze;  // {1, d, w, h}, sigmoid output in (0,1)
};

// ids must already be the 4x-downsampled input as a graph node {C,D,W,H}.
SanOutput san_forward(const ag::Var& ids, const SanConfig& cfg, const ParamStore& params);

// Convenience: volume -> graph constant.
ag::Var volume_to_var(const ImageVolume& v);

}  // namespace gazeatt
