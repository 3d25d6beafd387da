#pragma once

// Auxiliary Attention Block: cross-attention where M2 queries the encoder
// feature E4 (keys/values), producing the refined feature E'4.

#include <random>

#include "gazeatt/data_model.hpp"
#include "gazeatt/params.hpp"

namespace gazeatt {

struct AabConfig {
    int hidden_dim = 64;   // c_h
    int num_heads = 4;     // k
    int ffn_dim = 128;
    int encoder_channels = 0;  // c_e
    int san_channels = 0;      // c_m

    void validate() const;
};

// Fixed linear positional encoding, 3 channels spanning [-1,1] per axis.
// Length-1 axes emit constant 0.
ag::Var positional_encoding(const Shape3& shape);

// Softmax(Q K^T / sqrt(c)) V with c = column count of Q.
ag::Var scaled_dot_attention(const ag::Var& q, const ag::Var& k, const ag::Var& v);

// Per-head learned projections to c_h/k, per-head scaled attention, concat,
// then the output matrix W^O. Parameter names are `<prefix>.head<i>.{wq,wk,wv}`
// and `<prefix>.wo`.
ag::Var multi_head_attention(const ag::Var& q, const ag::Var& k, const ag::Var& v,
                             int heads, const ParamStore& params,
                             const std::string& prefix);

void aab_init(const AabConfig& cfg, ParamStore& params, std::mt19937_64& rng);

// E4 {c_e, D, W, H}, M2 {c_m, d, w, h} with (D,W,H) an integer multiple of
// (d,w,h). Returns E'4 with the shape of E4. The final M'->c_e projection is
// zero-initialized, so a fresh block is an exact identity on E4.
ag::Var aab_forward(const ag::Var& e4, const ag::Var& m2, const AabConfig& cfg,
                    const ParamStore& params);

}  // namespace gazeatt
