#pragma once

// Loss functions and evaluation metrics. The differentiable loss ops live in
// autodiff.hpp; these are the plain-array forms used for evaluation plus the
// loss weighting used for training.

#include <optional>
#include <vector>

#include "gazeatt/data_model.hpp"

namespace gazeatt {

struct LossWeights {
    double w1 = 1.0;           // task loss weight
    double w2 = 0.5;           // gaze loss weight
    double smoothing_eps = 1e-5;
    double bce_clamp = 1e-7;

    void validate() const;
};

// Channel-averaged soft dice with additive smoothing, the maximized form.
// Predictions soft in [0,1], targets binary.
double dice_score(const std::vector<float>& pred, const std::vector<float>& target,
                  int regions, double eps = 1e-5);

double dice_loss_value(const std::vector<float>& pred, const std::vector<float>& target,
                       int regions, double eps = 1e-5);

// Mean binary cross entropy with probability clamping.
double gaze_bce_loss(const std::vector<float>& pred, const std::vector<float>& target,
                     double clamp = 1e-7);

double joint_loss(double task_loss, double gaze_loss, const LossWeights& w);

// Multi-label mode: mean BCE over classes. Survival mode: categorical CE
// against a one-hot label.
double classification_ce_loss(const std::vector<float>& probs,
                              const std::vector<float>& labels, bool multi_label,
                              double clamp = 1e-7);

// 95th percentile (lower nearest-rank) of the pooled directed Euclidean
// distances from each mask's positive voxels to the other's nearest positive
// voxel. Either side empty -> `empty_sentinel`.
struct Hausdorff95Result {
    double value = 0.0;
    bool empty_flagged = false;  // true when the sentinel was used
};
Hausdorff95Result hausdorff95(const std::vector<float>& a, const std::vector<float>& b,
                              const Shape3& shape, double empty_sentinel);

// Squared Euclidean distance from every voxel to the nearest positive voxel
// of `mask` (exact transform; used by hausdorff95 and mask dilation).
std::vector<double> distance_sq_to_mask(const std::vector<float>& mask, const Shape3& shape);

// Mann-Whitney AUROC with ties counting 1/2. Single-class labels -> nullopt.
std::optional<double> auroc(const std::vector<double>& scores,
                            const std::vector<int>& labels);

}  // namespace gazeatt
