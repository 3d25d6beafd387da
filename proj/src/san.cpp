#include "gazeatt/san.hpp"

#include <stdexcept>

namespace gazeatt {

using namespace ag;

void SanConfig::validate() const {
    if (in_channels < 1 || c1 < 1 || c2 < 1)
        throw std::invalid_argument("SanConfig: channel counts must be >= 1");
    if (norm_groups < 1 || c1 % norm_groups || c2 % norm_groups)
        throw std::invalid_argument("SanConfig: norm_groups must divide c1 and c2");
    if (spatial_rank != 2 && spatial_rank != 3)
        throw std::invalid_argument("SanConfig: spatial_rank must be 2 or 3");
}

ImageVolume downsample_input(const ImageVolume& volume, int factor) {
    volume.validate();
    const int fd = volume.shape[0] == 1 ? 1 : factor;
    if (volume.shape[0] % fd || volume.shape[1] % factor || volume.shape[2] % factor)
        throw std::invalid_argument("downsample_input: shape not divisible by factor");
    ImageVolume out;
    out.channels = volume.channels;
    out.shape = {volume.shape[0] / fd, volume.shape[1] / factor, volume.shape[2] / factor};
    out.data.assign(static_cast<std::size_t>(out.channels) * out.voxels(), 0.0f);
    const double inv = 1.0 / (fd * factor * factor);
    for (int c = 0; c < out.channels; ++c)
        for (int z = 0; z < out.shape[0]; ++z)
            for (int y = 0; y < out.shape[1]; ++y)
                for (int x = 0; x < out.shape[2]; ++x) {
                    double acc = 0.0;
                    for (int a = 0; a < fd; ++a)
                        for (int b = 0; b < factor; ++b)
                            for (int e = 0; e < factor; ++e)
                                acc += volume.at(c, z * fd + a, y * factor + b, x * factor + e);
                    out.data[((static_cast<std::size_t>(c) * out.shape[0] + z) * out.shape[1] + y) *
                                 out.shape[2] + x] = static_cast<float>(acc * inv);
                }
    return out;
}

ag::Var volume_to_var(const ImageVolume& v) {
    std::vector<double> d(v.data.begin(), v.data.end());
    return make_var({v.channels, v.shape[0], v.shape[1], v.shape[2]}, std::move(d));
}

namespace {

// [conv k^3 -> group norm -> ReLU] with same padding.
Var conv_gn_relu(const Var& x, const std::string& prefix, const ParamStore& p, int groups) {
    Var y = conv3d(x, p.get(prefix + ".w"), p.get(prefix + ".b"));
    y = group_norm(y, p.get(prefix + ".gamma"), p.get(prefix + ".beta"), groups);
    return relu(y);
}

void init_conv(ParamStore& p, const std::string& prefix, int co, int ci, int kd, int kw,
               int kh, std::mt19937_64& rng) {
    p.he_normal(prefix + ".w", {co, ci, kd, kw, kh}, ci * kd * kw * kh, rng);
    p.zeros(prefix + ".b", {co});
    p.constant(prefix + ".gamma", {co}, 1.0);
    p.zeros(prefix + ".beta", {co});
}

}  // namespace

void san_init(const SanConfig& cfg, ParamStore& params, std::mt19937_64& rng) {
    cfg.validate();
    const int kd = cfg.spatial_rank == 3 ? 3 : 1;
    init_conv(params, "san.g1.conv1", cfg.c1, cfg.in_channels, kd, 3, 3, rng);
    init_conv(params, "san.g1.conv2", cfg.c1, cfg.c1, kd, 3, 3, rng);
    init_conv(params, "san.g2.conv1", cfg.c2, cfg.c1, kd, 3, 3, rng);
    init_conv(params, "san.g2.conv2", cfg.c2, cfg.c2, kd, 3, 3, rng);
    params.he_normal("san.gaze_head.w", {1, cfg.c2, 1, 1, 1}, cfg.c2, rng);
    params.zeros("san.gaze_head.b", {1});
}

SanOutput san_forward(const ag::Var& ids, const SanConfig& cfg, const ParamStore& params) {
    cfg.validate();
    if (ids->shape.size() != 4 || ids->shape[0] != cfg.in_channels)
        throw std::invalid_argument("san_forward: input channel mismatch");
    const int pd = (cfg.spatial_rank == 3 && ids->shape[1] > 1) ? 2 : 1;

    Var x = conv_gn_relu(ids, "san.g1.conv1", params, cfg.norm_groups);
    x = conv_gn_relu(x, "san.g1.conv2", params, cfg.norm_groups);
    Var m1 = max_pool(x, pd, 2, 2);

    x = conv_gn_relu(m1, "san.g2.conv1", params, cfg.norm_groups);
    x = conv_gn_relu(x, "san.g2.conv2", params, cfg.norm_groups);
    Var m2 = max_pool(x, pd, 2, 2);

    Var g = sigmoid(conv3d(m2, params.get("san.gaze_head.w"), params.get("san.gaze_head.b")));
    return {m1, m2, g};
}

}  // namespace gazeatt
