#include "gazeatt/objectives.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace gazeatt {

void LossWeights::validate() const {
    if (w1 < 0 || w2 < 0) throw std::invalid_argument("LossWeights: weights must be >= 0");
    if (smoothing_eps <= 0 || bce_clamp <= 0)
        throw std::invalid_argument("LossWeights: eps and clamp must be > 0");
}

double dice_score(const std::vector<float>& pred, const std::vector<float>& target,
                  int regions, double eps) {
    if (pred.size() != target.size() || regions < 1 || pred.size() % regions != 0)
        throw std::invalid_argument("dice_score: shape mismatch");
    const std::size_t per = pred.size() / regions;
    double score = 0.0;
    for (int n = 0; n < regions; ++n) {
        double inter = 0.0, denom = 0.0;
        const float* s = &pred[n * per];
        const float* g = &target[n * per];
        for (std::size_t i = 0; i < per; ++i) {
            inter += static_cast<double>(s[i]) * g[i];
            denom += static_cast<double>(s[i]) * s[i] + static_cast<double>(g[i]) * g[i];
        }
        score += (2.0 * inter + eps) / (denom + eps);
    }
    return score / regions;
}

double dice_loss_value(const std::vector<float>& pred, const std::vector<float>& target,
                       int regions, double eps) {
    return 1.0 - dice_score(pred, target, regions, eps);
}

double gaze_bce_loss(const std::vector<float>& pred, const std::vector<float>& target,
                     double clamp) {
    if (pred.size() != target.size() || pred.empty())
        throw std::invalid_argument("gaze_bce_loss: shape mismatch");
    double loss = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const double p = std::min(std::max(static_cast<double>(pred[i]), clamp), 1.0 - clamp);
        loss -= target[i] * std::log(p) + (1.0 - target[i]) * std::log(1.0 - p);
    }
    return loss / static_cast<double>(pred.size());
}

double joint_loss(double task_loss, double gaze_loss, const LossWeights& w) {
    w.validate();
    if (!std::isfinite(task_loss) || !std::isfinite(gaze_loss))
        throw std::invalid_argument("joint_loss: non-finite loss");
    return w.w1 * task_loss + w.w2 * gaze_loss;
}

double classification_ce_loss(const std::vector<float>& probs,
                              const std::vector<float>& labels, bool multi_label,
                              double clamp) {
    if (probs.size() != labels.size() || probs.empty())
        throw std::invalid_argument("classification_ce_loss: shape mismatch");
    if (multi_label) return gaze_bce_loss(probs, labels, clamp);
    double loss = 0.0;
    for (std::size_t i = 0; i < probs.size(); ++i)
        if (labels[i] != 0.0f)
            loss -= labels[i] * std::log(std::max(static_cast<double>(probs[i]), clamp));
    return loss;
}

namespace {

// Exact squared Euclidean distance transform (per-axis lower envelope).
void edt_1d(const std::vector<double>& f, std::vector<double>& d, int n) {
    static thread_local std::vector<int> v;
    static thread_local std::vector<double> z;
    v.assign(n, 0);
    z.assign(n + 1, 0.0);
    int k = 0;
    v[0] = 0;
    z[0] = -1e300;
    z[1] = 1e300;
    for (int q = 1; q < n; ++q) {
        double s = ((f[q] + q * static_cast<double>(q)) -
                    (f[v[k]] + v[k] * static_cast<double>(v[k]))) /
                   (2.0 * q - 2.0 * v[k]);
        while (s <= z[k]) {
            --k;
            s = ((f[q] + q * static_cast<double>(q)) -
                 (f[v[k]] + v[k] * static_cast<double>(v[k]))) /
                (2.0 * q - 2.0 * v[k]);
        }
        ++k;
        v[k] = q;
        z[k] = s;
        z[k + 1] = 1e300;
    }
    k = 0;
    for (int q = 0; q < n; ++q) {
        while (z[k + 1] < q) ++k;
        d[q] = (q - v[k]) * static_cast<double>(q - v[k]) + f[v[k]];
    }
}

// Squared distance from every voxel to the nearest positive voxel of `mask`.
std::vector<double> distance_transform_sq(const std::vector<float>& mask, const Shape3& sh) {
    const double INF = 1e300;
    std::vector<double> d(shape_voxels(sh));
    for (std::size_t i = 0; i < d.size(); ++i) d[i] = mask[i] > 0.5f ? 0.0 : INF;
    auto idx = [&](int z, int y, int x) {
        return (static_cast<std::size_t>(z) * sh[1] + y) * sh[2] + x;
    };
    std::vector<double> line, out;
    // axis H
    line.resize(sh[2]);
    out.resize(sh[2]);
    for (int z = 0; z < sh[0]; ++z)
        for (int y = 0; y < sh[1]; ++y) {
            for (int x = 0; x < sh[2]; ++x) line[x] = d[idx(z, y, x)];
            edt_1d(line, out, sh[2]);
            for (int x = 0; x < sh[2]; ++x) d[idx(z, y, x)] = out[x];
        }
    // axis W
    line.resize(sh[1]);
    out.resize(sh[1]);
    for (int z = 0; z < sh[0]; ++z)
        for (int x = 0; x < sh[2]; ++x) {
            for (int y = 0; y < sh[1]; ++y) line[y] = d[idx(z, y, x)];
            edt_1d(line, out, sh[1]);
            for (int y = 0; y < sh[1]; ++y) d[idx(z, y, x)] = out[y];
        }
    // axis D
    line.resize(sh[0]);
    out.resize(sh[0]);
    for (int y = 0; y < sh[1]; ++y)
        for (int x = 0; x < sh[2]; ++x) {
            for (int z = 0; z < sh[0]; ++z) line[z] = d[idx(z, y, x)];
            edt_1d(line, out, sh[0]);
            for (int z = 0; z < sh[0]; ++z) d[idx(z, y, x)] = out[z];
        }
    return d;
}

}  // namespace

std::vector<double> distance_sq_to_mask(const std::vector<float>& mask, const Shape3& shape) {
    if (mask.size() != shape_voxels(shape))
        throw std::invalid_argument("distance_sq_to_mask: shape mismatch");
    return distance_transform_sq(mask, shape);
}

Hausdorff95Result hausdorff95(const std::vector<float>& a, const std::vector<float>& b,
                              const Shape3& shape, double empty_sentinel) {
    const std::size_t n = shape_voxels(shape);
    if (a.size() != n || b.size() != n)
        throw std::invalid_argument("hausdorff95: shape mismatch");
    bool a_empty = std::none_of(a.begin(), a.end(), [](float v) { return v > 0.5f; });
    bool b_empty = std::none_of(b.begin(), b.end(), [](float v) { return v > 0.5f; });
    if (a_empty || b_empty) return {empty_sentinel, true};

    const auto da = distance_transform_sq(a, shape);
    const auto db = distance_transform_sq(b, shape);
    std::vector<double> pooled;
    for (std::size_t i = 0; i < n; ++i) {
        if (a[i] > 0.5f) pooled.push_back(std::sqrt(db[i]));
        if (b[i] > 0.5f) pooled.push_back(std::sqrt(da[i]));
    }
    std::sort(pooled.begin(), pooled.end());
    // lower nearest-rank percentile
    std::size_t rank = static_cast<std::size_t>(std::ceil(0.95 * pooled.size()));
    if (rank == 0) rank = 1;
    return {pooled[rank - 1], false};
}

std::optional<double> auroc(const std::vector<double>& scores,
                            const std::vector<int>& labels) {
    if (scores.size() != labels.size())
        throw std::invalid_argument("auroc: size mismatch");
    const std::size_t n = scores.size();
    std::size_t pos = 0;
    for (int l : labels) pos += (l != 0);
    if (pos == 0 || pos == n) return std::nullopt;

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](std::size_t i, std::size_t j) { return scores[i] < scores[j]; });
    // Midranks over tie groups, then the Mann-Whitney statistic.
    std::vector<double> rank(n);
    std::size_t i = 0;
    while (i < n) {
        std::size_t j = i;
        while (j + 1 < n && scores[order[j + 1]] == scores[order[i]]) ++j;
        const double mid = (static_cast<double>(i) + j) / 2.0 + 1.0;
        for (std::size_t k = i; k <= j; ++k) rank[order[k]] = mid;
        i = j + 1;
    }
    double rank_sum = 0.0;
    for (std::size_t k = 0; k < n; ++k)
        if (labels[k] != 0) rank_sum += rank[k];
    const double neg = static_cast<double>(n - pos);
    const double u = rank_sum - static_cast<double>(pos) * (pos + 1) / 2.0;
    return u / (static_cast<double>(pos) * neg);
}

}  // namespace gazeatt
