#pragma once

// Deterministic phantom generator: nested-region volumes, simulated
// expert/non-expert gaze, and dataset building.

#include <cstdint>
#include <string>

#include "gazeatt/data_model.hpp"

namespace gazeatt {

struct PhantomConfig {
    Shape3 shape{32, 32, 32};
    int channels = 4;
    int num_regions = 3;       // nested like ET c TC c WT
    int blob_count_min = 1;
    int blob_count_max = 2;
    double blob_radius_min = 2.8;
    double blob_radius_max = 4.2;
    // Tumor-mimicking distractors rendered into the image but absent from the
    // masks. They share the tumor's contrast except in channel 0, where their
    // response is suppressed; separating them from real lesions is the part
    // of the task that dense attention supervision helps with.
    int confuser_count_min = 1;
    int confuser_count_max = 2;
    double confuser_suppression = 0.15;  // channel-0 contrast factor
    double noise_std = 0.05;
    std::uint64_t seed = 1;

    void validate() const;
};

struct GazeSimConfig {
    enum class Expertise { expert, non_expert } expertise = Expertise::expert;
    int fixations_min = 20;
    int fixations_max = 35;
    double boundary_bias = 0.5;  // expert share of fixations on the boundary shell
    double duration_ms = 38000;  // total viewing span the timestamps cover
    std::uint64_t seed = 1;

    void validate() const;
};

// Volume + nested masks (+ 5 synthetic labels in 2D single-channel mode),
// fully determined by cfg.seed.
DatasetRecord generate_phantom(const PhantomConfig& cfg);

// Raw gaze stream (kind=raw, dwell runs per fixation) over the record.
// Expert gaze concentrates on the tumor and its boundary shell; non-expert
// gaze scans the head region with only mild tumor bias.
FixationSequence simulate_gaze(const DatasetRecord& record, const GazeSimConfig& cfg);

struct DatasetBuildConfig {
    int n = 10;
    PhantomConfig phantom;
    GazeSimConfig gaze;
    double gaze_ratio = 0.5;   // fraction of train records carrying gaze
    double train_frac = 0.7;
    double val_frac = 0.15;
    int gaze_kernel_size = 10;
    int gaze_downsample = 16;
};

// Writes n records (volume/mask/fixations, gaze map for gaze-flagged train
// records) plus manifest.json; returns the manifest path.
std::string build_dataset(const DatasetBuildConfig& cfg, const std::string& out_dir);

// Dilated-mask hit rate used by the generator separability checks: fraction
// of gaze samples whose nearest voxel lies within the region-0 union mask
// dilated by `dilate` voxels.
double gaze_hit_rate(const DatasetRecord& record, const FixationSequence& gaze, int dilate);

}  // namespace gazeatt
