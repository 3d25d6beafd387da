#pragma once

// Raw gaze stream -> fixations -> ground-truth gaze maps.

#include "gazeatt/data_model.hpp"

namespace gazeatt {

struct FixationFilterConfig {
    double velocity_threshold = 30.0;   // voxels per second
    double min_fixation_duration = 100.0;  // milliseconds
};

// Velocity-threshold (I-VT) fixation detection. Each output fixation is the
// centroid of a maximal run of consecutive raw samples whose successive
// displacement / dt stays below the threshold; runs shorter than
// min_fixation_duration are dropped. Fewer than 2 raw samples -> empty.
FixationSequence filter_fixations(const FixationSequence& raw,
                                  const FixationFilterConfig& cfg);

// Impulse map: 1 at each fixation's nearest voxel, 0 elsewhere.
GazeMap rasterize_fixations(const FixationSequence& fixations, const Shape3& shape);

// Truncated isotropic gaussian blur (window = kernel_size per axis,
// sigma = kernel_size / 4), then peak normalization to max 1.
GazeMap gaussian_gaze_map(const GazeMap& impulses, int kernel_size);

// Block max-pooling by `factor` per spatial axis. Axes of length 1 (2D mode)
// are left untouched regardless of factor.
GazeMap downsample_gaze_map(const GazeMap& map, int factor);

}  // namespace gazeatt
