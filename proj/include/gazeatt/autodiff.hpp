#pragma once

// Minimal reverse-mode autodiff over dense double tensors.
// Nodes are created in topological order; backward() replays them in reverse.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

namespace gazeatt::ag {

struct Node;
using Var = std::shared_ptr<Node>;

struct Node {
    std::vector<int> shape;
    std::vector<double> val;
    std::vector<double> grad;   // allocated lazily, same length as val
    std::vector<Var> parents;
    std::function<void(Node&)> backprop;  // scatters this->grad into parents
    bool needs_grad = false;
    std::uint64_t id = 0;

    std::size_t size() const { return val.size(); }
    void ensure_grad() {
        if (grad.size() != val.size()) grad.assign(val.size(), 0.0);
    }
};

std::size_t shape_numel(const std::vector<int>& shape);

// Leaf constructors. `needs_grad` marks trainable parameters.
Var make_var(std::vector<int> shape, std::vector<double> values, bool needs_grad = false);
Var make_zeros(std::vector<int> shape, bool needs_grad = false);

// Runs reverse accumulation from a scalar loss. Gradients of all reachable
// needs_grad leaves end up in their .grad vectors (accumulated; callers zero
// them between steps).
void backward(const Var& loss);
void zero_grad(const std::vector<Var>& params);

// ---- elementwise / scalar ----
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double s);
Var add_scalar(const Var& a, double s);
Var relu(const Var& a);
Var sigmoid(const Var& a);
Var sum(const Var& a);        // -> shape {1}
Var mean(const Var& a);       // -> shape {1}

// ---- linear algebra on {n, m} matrices ----
Var matmul(const Var& a, const Var& b);               // {n,k}x{k,m} -> {n,m}
Var transpose(const Var& a);                          // {n,m} -> {m,n}
Var linear(const Var& x, const Var& w, const Var& b); // x{n,k}, w{k,m}, b{m}
Var softmax_rows(const Var& x);                       // per-row softmax
Var concat_cols(const Var& a, const Var& b);
Var slice_cols(const Var& x, int begin, int count);
Var layer_norm_rows(const Var& x, const Var& gamma, const Var& beta, double eps = 1e-5);

// ---- feature maps, shape {C, D, W, H} ----
Var conv3d(const Var& x, const Var& w, const Var& b);   // same padding, odd kernels
Var max_pool(const Var& x, int fd, int fw, int fh);
Var avg_pool(const Var& x, int fd, int fw, int fh);
Var upsample_nearest(const Var& x, int fd, int fw, int fh);
Var concat_channels(const Var& a, const Var& b);
Var group_norm(const Var& x, const Var& gamma, const Var& beta, int groups, double eps = 1e-5);
Var global_avg_pool(const Var& x);                      // -> {1, C}
Var mul_channel_broadcast(const Var& x, const Var& g);  // g has 1 channel
Var flatten_spatial_to_rows(const Var& x);              // {C,D,W,H} -> {DWH, C}
Var rows_to_feature(const Var& x, int d, int w, int h); // {DWH, C} -> {C,d,w,h}

// ---- losses (scalar outputs) ----
// Soft dice loss, channel-averaged, additive smoothing in num and denom.
Var dice_loss(const Var& pred, const std::vector<double>& target, double eps);
// Mean binary cross entropy with probability clamping.
Var bce_loss(const Var& pred, const std::vector<double>& target, double clamp);
// Categorical cross entropy against a one-hot target, pred holds probabilities.
Var categorical_ce(const Var& probs, const std::vector<double>& onehot, double clamp);

}  // namespace gazeatt::ag
