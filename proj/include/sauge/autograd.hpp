#pragma once

// Minimal reverse-mode differentiation over Tensor values. Every forward op
// records a closure that pushes the node's gradient into its parents; a
// backward pass seeds one or more roots and replays closures in reverse
// topological order. Nodes that do not require gradients are never visited.

#include <functional>
#include <memory>
#include <span>
#include <vector>

#include "sauge/tensor.hpp"

namespace sauge::ag {

struct Node {
    Tensor value;
    Tensor grad;  // empty until something flows into it
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward_fn;

    Tensor& grad_buffer();
    void accumulate(const Tensor& g);
    void zero_grad() { grad = Tensor(); }
};

using Var = std::shared_ptr<Node>;

Var constant(Tensor value);
Var leaf(Tensor value, bool requires_grad = true);

/// Runs reverse accumulation from `roots`, seeding each with the matching
/// entry of `seeds` (same shape as the root value).
void backward(std::span<const Var> roots, std::span<const Tensor> seeds);
void backward(const Var& root, const Tensor& seed);

// Element-wise ops on equally shaped tensors.
Var add(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var relu(const Var& x);
Var gelu(const Var& x);
Var sigmoid(const Var& x);

/// Same-padded stride-1 convolution: x (Ci, H, W), w (Co, Ci, k, k), b (Co) or null.
Var conv2d(const Var& x, const Var& w, const Var& b);
/// Per-channel convolution: x (C, H, W), w (C, 1, k, k), b (C) or null.
Var depthwise_conv2d(const Var& x, const Var& w, const Var& b);
/// LayerNorm across channels at every pixel: x (C, H, W), gamma/beta (C).
Var layer_norm_channels(const Var& x, const Var& gamma, const Var& beta, double eps = 1e-5);

Var concat_channels(std::span<const Var> parts);
Var slice_channels(const Var& x, int begin, int count);

/// Bilinear resampling with half-pixel centers (edge-clamped).
Var resize_bilinear(const Var& x, int out_h, int out_w);
/// Non-overlapping k x k average pooling; H and W must be multiples of k.
Var avg_pool(const Var& x, int k);

/// Multi-head scaled dot-product attention with pixels as tokens.
/// q (C, Hq, Wq); k, v (C, Hk, Wk); C divisible by `heads`. No positional terms.
Var attention(const Var& q, const Var& k, const Var& v, int heads);

}  // namespace sauge::ag
