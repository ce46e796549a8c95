#pragma once

#include <span>
#include <vector>

#include "attnas/tensor.hpp"

// Differentiable primitives. Spatial tensors are channels-last, either
// [H, W, C] or batched [B, H, W, C]; the output keeps the input's rank.
namespace attnas::ops {

Tensor matmul(const Tensor& a, const Tensor& b);

/// Elementwise a + b. b may equal a's shape, a trailing suffix of it (bias
/// broadcast), or be a single element.
Tensor add(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double c);
Tensor relu(const Tensor& x);
Tensor softmax(const Tensor& x, std::size_t axis);
Tensor sum(const Tensor& x);
Tensor reshape(const Tensor& x, Shape shape);

/// x[..., Cin] * w[Cin, Cout] + bias[Cout]. bias may be undefined.
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& bias);

/// 2x2 window, stride 2. Odd spatial extents are rejected.
Tensor avgpool2d(const Tensor& x);
/// Mean over the spatial axes: [B, H, W, C] -> [B, C] ([H, W, C] -> [C]).
Tensor global_avgpool(const Tensor& x);
/// k x k zero-padded neighbourhood gather: [.., H, W, C] -> [.., H, W, k*k, C].
Tensor unfold(const Tensor& x, std::size_t k);
Tensor upsample_nearest2x(const Tensor& x);

/// sum_i weights[row, i] * xs[i]; all xs share one shape.
Tensor weighted_sum(std::span<const Tensor> xs, const Tensor& weights, std::size_t row);

/// Windowed multi-head attention over k x k zero-padded neighbourhoods.
/// q, k, v: [.., H, W, C]; rel: [window, window, C / heads], shared by heads.
/// logit(p, j) = q_p . (key_j + rel_j) / sqrt(C / heads); padded keys and
/// values are zero vectors.
Tensor local_attention(const Tensor& q, const Tensor& k, const Tensor& v, const Tensor& rel,
                       std::size_t window, std::size_t heads);

/// Single-head global attention over all H*W positions of each image,
/// logits scaled by 1 / sqrt(C).
Tensor nonlocal_attention(const Tensor& q, const Tensor& k, const Tensor& v);

/// Mean absolute error. d|x|/dx at 0 is 0.
Tensor l1_loss(const Tensor& pred, const Tensor& target);
/// Mean absolute error over positions where mask != 0 (0 when mask is empty).
Tensor l1_loss_masked(const Tensor& pred, const Tensor& target, std::span<const double> mask);

/// Mean over the batch of -sum_k q_k log softmax(logits)_k, q the smoothed
/// one-hot target.
Tensor cross_entropy(const Tensor& logits, std::span<const int> labels, double smoothing);

}  // namespace attnas::ops
