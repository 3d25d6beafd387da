#include "gazeatt/gaze_processing.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

namespace gazeatt {

namespace {

void check_cfg(const FixationFilterConfig& cfg) {
    if (cfg.velocity_threshold <= 0 || cfg.min_fixation_duration <= 0)
        throw std::invalid_argument("FixationFilterConfig: thresholds must be positive");
}

GazeSample centroid_fixation(const std::vector<GazeSample>& run) {
    GazeSample f;
    double sx = 0, sy = 0, sz = 0;
    for (const auto& s : run) { sx += s.x; sy += s.y; sz += s.z; }
    const double n = static_cast<double>(run.size());
    f.x = sx / n;
    f.y = sy / n;
    f.z = sz / n;
    f.t = run.front().t;
    f.duration = run.back().t - run.front().t;
    f.kind = GazeSample::Kind::fixation;
    return f;
}

}  // namespace

FixationSequence filter_fixations(const FixationSequence& raw,
                                  const FixationFilterConfig& cfg) {
    check_cfg(cfg);
    FixationSequence out;
    const auto& s = raw.samples;
    if (s.size() < 2) return out;

    std::vector<GazeSample> run{s[0]};
    auto flush = [&] {
        if (run.size() >= 2 && run.back().t - run.front().t >= cfg.min_fixation_duration)
            out.samples.push_back(centroid_fixation(run));
        run.clear();
    };
    for (std::size_t i = 1; i < s.size(); ++i) {
        const double dt = (s[i].t - s[i - 1].t) / 1000.0;  // seconds
        const double dx = s[i].x - s[i - 1].x;
        const double dy = s[i].y - s[i - 1].y;
        const double dz = s[i].z - s[i - 1].z;
        const double dist = std::sqrt(dx * dx + dy * dy + dz * dz);
        if (dt <= 0.0 && dist == 0.0) continue;  // exact duplicate sample
        const bool slow = dt > 0 ? (dist / dt < cfg.velocity_threshold) : false;
        if (slow) {
            run.push_back(s[i]);
        } else {
            flush();
            run.push_back(s[i]);
        }
    }
    flush();
    return out;
}

GazeMap rasterize_fixations(const FixationSequence& fixations, const Shape3& shape) {
    GazeMap g;
    g.shape = shape;
    g.data.assign(g.voxels(), 0.0f);
    for (const auto& f : fixations.samples) {
        const int z = static_cast<int>(std::lround(f.z));
        const int y = static_cast<int>(std::lround(f.y));
        const int x = static_cast<int>(std::lround(f.x));
        if (z < 0 || z >= shape[0] || y < 0 || y >= shape[1] || x < 0 || x >= shape[2])
            throw std::invalid_argument("rasterize_fixations: fixation out of bounds");
        g.at(z, y, x) = 1.0f;
    }
    return g;
}

GazeMap gaussian_gaze_map(const GazeMap& impulses, int kernel_size) {
    if (kernel_size < 1)
        throw std::invalid_argument("gaussian_gaze_map: kernel_size must be >= 1");
    for (float v : impulses.data)
        if (v != 0.0f && v != 1.0f)
            throw std::invalid_argument("gaussian_gaze_map: impulses must be in {0,1}");

    const int half = kernel_size / 2;  // window spans +-2 sigma
    const double sigma = kernel_size / 4.0;
    std::vector<double> kernel(2 * half + 1);
    for (int o = -half; o <= half; ++o)
        kernel[o + half] = std::exp(-(o * o) / (2.0 * sigma * sigma));

    const Shape3 sh = impulses.shape;
    // Separable blur, axis by axis, accumulating in double.
    std::vector<double> buf(impulses.data.begin(), impulses.data.end());
    std::vector<double> tmp(buf.size());
    auto idx = [&](int z, int y, int x) {
        return (static_cast<std::size_t>(z) * sh[1] + y) * sh[2] + x;
    };
    for (int axis = 0; axis < 3; ++axis) {
        if (sh[axis] == 1) continue;  // 2D mode: no blur along a degenerate axis
        std::fill(tmp.begin(), tmp.end(), 0.0);
        for (int z = 0; z < sh[0]; ++z)
            for (int y = 0; y < sh[1]; ++y)
                for (int x = 0; x < sh[2]; ++x) {
                    const double v = buf[idx(z, y, x)];
                    if (v == 0.0) continue;
                    for (int o = -half; o <= half; ++o) {
                        int zz = z, yy = y, xx = x;
                        if (axis == 0) zz += o;
                        else if (axis == 1) yy += o;
                        else xx += o;
                        if (zz < 0 || zz >= sh[0] || yy < 0 || yy >= sh[1] ||
                            xx < 0 || xx >= sh[2]) continue;
                        tmp[idx(zz, yy, xx)] += v * kernel[o + half];
                    }
                }
        buf.swap(tmp);
    }
    double peak = 0.0;
    for (double v : buf) peak = std::max(peak, v);
    GazeMap out;
    out.shape = sh;
    out.data.resize(buf.size());
    for (std::size_t i = 0; i < buf.size(); ++i)
        out.data[i] = peak > 0.0 ? static_cast<float>(std::min(buf[i] / peak, 1.0)) : 0.0f;
    return out;
}

GazeMap downsample_gaze_map(const GazeMap& map, int factor) {
    if (factor < 1) throw std::invalid_argument("downsample_gaze_map: factor must be >= 1");
    Shape3 out_shape{};
    std::array<int, 3> f{};
    for (int a = 0; a < 3; ++a) {
        f[a] = map.shape[a] == 1 ? 1 : factor;  // degenerate axes pass through
        if (map.shape[a] % f[a] != 0)
            throw std::invalid_argument("downsample_gaze_map: shape not divisible by factor");
        out_shape[a] = map.shape[a] / f[a];
    }
    GazeMap out;
    out.shape = out_shape;
    out.data.assign(out.voxels(), 0.0f);
    for (int z = 0; z < out_shape[0]; ++z)
        for (int y = 0; y < out_shape[1]; ++y)
            for (int x = 0; x < out_shape[2]; ++x) {
                float best = 0.0f;
                for (int a = 0; a < f[0]; ++a)
                    for (int b = 0; b < f[1]; ++b)
                        for (int c = 0; c < f[2]; ++c)
                            best = std::max(best, map.at(z * f[0] + a, y * f[1] + b, x * f[2] + c));
                out.at(z, y, x) = best;
            }
    return out;
}

}  // namespace gazeatt
