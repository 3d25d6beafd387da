#include "gazeatt/aab.hpp"

#include <cmath>
#include <stdexcept>

namespace gazeatt {

using namespace ag;

void AabConfig::validate() const {
    if (hidden_dim < 1 || num_heads < 1 || ffn_dim < 1 || encoder_channels < 1 ||
        san_channels < 1)
        throw std::invalid_argument("AabConfig: all counts must be >= 1");
    if (hidden_dim % num_heads)
        throw std::invalid_argument("AabConfig: hidden_dim must be divisible by num_heads");
}

ag::Var positional_encoding(const Shape3& shape) {
    const int D = shape[0], W = shape[1], H = shape[2];
    std::vector<double> v(3 * shape_voxels(shape), 0.0);
    const std::size_t plane = shape_voxels(shape);
    auto axis_val = [](int i, int n) {
        return n > 1 ? (2.0 * i - n + 1.0) / (n - 1.0) : 0.0;
    };
    std::size_t p = 0;
    for (int z = 0; z < D; ++z)
        for (int y = 0; y < W; ++y)
            for (int x = 0; x < H; ++x, ++p) {
                v[p] = axis_val(z, D);
                v[plane + p] = axis_val(y, W);
                v[2 * plane + p] = axis_val(x, H);
            }
    return make_var({3, D, W, H}, std::move(v));
}

ag::Var scaled_dot_attention(const ag::Var& q, const ag::Var& k, const ag::Var& v) {
    if (q->shape.size() != 2 || k->shape != q->shape || v->shape != q->shape)
        throw std::invalid_argument("scaled_dot_attention: Q,K,V must share {n,c}");
    const double s = 1.0 / std::sqrt(static_cast<double>(q->shape[1]));
    Var logits = scale(matmul(q, transpose(k)), s);
    return matmul(softmax_rows(logits), v);
}

ag::Var multi_head_attention(const ag::Var& q, const ag::Var& k, const ag::Var& v,
                             int heads, const ParamStore& params,
                             const std::string& prefix) {
    const int ch = q->shape[1];
    if (ch % heads)
        throw std::invalid_argument("multi_head_attention: heads must divide hidden dim");
    Var cat;
    for (int h = 0; h < heads; ++h) {
        const std::string hp = prefix + ".head" + std::to_string(h);
        Var qh = matmul(q, params.get(hp + ".wq"));
        Var kh = matmul(k, params.get(hp + ".wk"));
        Var vh = matmul(v, params.get(hp + ".wv"));
        Var att = scaled_dot_attention(qh, kh, vh);  // scale sqrt(c_h/k) inside heads
        cat = h == 0 ? att : concat_cols(cat, att);
    }
    return matmul(cat, params.get(prefix + ".wo"));
}

namespace {

void init_linear(ParamStore& p, const std::string& name, int in, int out,
                 std::mt19937_64& rng, bool bias = true) {
    p.he_normal(name + ".w", {in, out}, in, rng);
    if (bias) p.zeros(name + ".b", {out});
}

}  // namespace

void aab_init(const AabConfig& cfg, ParamStore& params, std::mt19937_64& rng) {
    cfg.validate();
    const int ch = cfg.hidden_dim;
    init_linear(params, "aab.proj_q", cfg.san_channels, ch, rng);
    init_linear(params, "aab.proj_kv", cfg.encoder_channels + 3, 2 * ch, rng);
    const int hd = ch / cfg.num_heads;
    for (int h = 0; h < cfg.num_heads; ++h) {
        const std::string hp = "aab.mha.head" + std::to_string(h);
        params.he_normal(hp + ".wq", {ch, hd}, ch, rng);
        params.he_normal(hp + ".wk", {ch, hd}, ch, rng);
        params.he_normal(hp + ".wv", {ch, hd}, ch, rng);
    }
    params.he_normal("aab.mha.wo", {ch, ch}, ch, rng);
    params.constant("aab.norm1.gamma", {ch}, 1.0);
    params.zeros("aab.norm1.beta", {ch});
    init_linear(params, "aab.ffn.fc1", ch, cfg.ffn_dim, rng);
    init_linear(params, "aab.ffn.fc2", cfg.ffn_dim, ch, rng);
    params.constant("aab.norm2.gamma", {ch}, 1.0);
    params.zeros("aab.norm2.beta", {ch});
    // zero init: a fresh AAB is an exact identity on E4
    params.zeros("aab.out_proj.w", {ch, cfg.encoder_channels});
    params.zeros("aab.out_proj.b", {cfg.encoder_channels});
}

ag::Var aab_forward(const ag::Var& e4, const ag::Var& m2, const AabConfig& cfg,
                    const ParamStore& params) {
    cfg.validate();
    if (e4->shape.size() != 4 || m2->shape.size() != 4)
        throw std::invalid_argument("aab_forward: expected {C,D,W,H} inputs");
    if (e4->shape[0] != cfg.encoder_channels || m2->shape[0] != cfg.san_channels)
        throw std::invalid_argument("aab_forward: channel count mismatch");
    std::array<int, 3> ratio{};
    for (int a = 0; a < 3; ++a) {
        const int big = e4->shape[a + 1], small = m2->shape[a + 1];
        if (small < 1 || big % small)
            throw std::invalid_argument("aab_forward: E4 spatial size must be an integer "
                                        "multiple of M2's");
        ratio[a] = big / small;
    }
    const int d = m2->shape[1], w = m2->shape[2], h = m2->shape[3];

    // (1) pool E4 to M2's grid, (2) append positional channels
    Var e4ds = max_pool(e4, ratio[0], ratio[1], ratio[2]);
    Var kv_feat = concat_channels(e4ds, positional_encoding({d, w, h}));

    // (3)-(4) flatten and project
    Var kv_rows = flatten_spatial_to_rows(kv_feat);             // {n, c_e+3}
    Var kv = linear(kv_rows, params.get("aab.proj_kv.w"), params.get("aab.proj_kv.b"));
    Var k = slice_cols(kv, 0, cfg.hidden_dim);
    Var v = slice_cols(kv, cfg.hidden_dim, cfg.hidden_dim);
    Var q = linear(flatten_spatial_to_rows(m2), params.get("aab.proj_q.w"),
                   params.get("aab.proj_q.b"));

    // (5)-(6) attention, add&norm, FFN, add&norm
    Var att = multi_head_attention(q, k, v, cfg.num_heads, params, "aab.mha");
    Var y = layer_norm_rows(add(q, att), params.get("aab.norm1.gamma"),
                            params.get("aab.norm1.beta"));
    Var ff = linear(relu(linear(y, params.get("aab.ffn.fc1.w"), params.get("aab.ffn.fc1.b"))),
                    params.get("aab.ffn.fc2.w"), params.get("aab.ffn.fc2.b"));
    Var m_ref = layer_norm_rows(add(y, ff), params.get("aab.norm2.gamma"),
                                params.get("aab.norm2.beta"));

    // (7)-(8) back to c_e channels, upsample, residual add
    Var proj = linear(m_ref, params.get("aab.out_proj.w"), params.get("aab.out_proj.b"));
    Var up = upsample_nearest(rows_to_feature(proj, d, w, h), ratio[0], ratio[1], ratio[2]);
    return add(e4, up);
}

}  // namespace gazeatt
