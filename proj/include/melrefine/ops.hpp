#pragma once

// Differentiable tensor operations used by the vector-field estimator.
//
// Layout conventions: sequences are (batch, frames, channels); images are
// (batch, channels, height, width). Frame masks are (batch, frames) with 1 for
// valid frames and 0 for padding.

#include <vector>

#include "melrefine/autograd.hpp"

namespace melrefine::ad {

Var add(const Var& a, const Var& b);
Var scale(const Var& a, double factor);
/// Elementwise product with a non-differentiable tensor of the same shape.
Var mul_const(const Var& a, const Tensor& factor);
Var reshape(const Var& a, Shape shape);

/// y = x W + b over the last axis. W is (in, out), b is (out).
Var linear(const Var& x, const Var& weight, const Var& bias);
/// Normalizes over the last axis, then applies per-channel gain and shift.
Var layer_norm(const Var& x, const Var& gain, const Var& shift, double eps = 1e-5);

Var silu(const Var& x);
Var leaky_relu(const Var& x, double slope);
/// Splits the last axis in halves (a, b) and returns a * sigmoid(b).
Var glu(const Var& x);

/// Concatenates along the last axis; leading dimensions must agree.
Var concat_last(const std::vector<Var>& parts);
/// Stacks (N, H, W) tensors into channels of an (N, parts, H, W) image.
Var stack_channels(const std::vector<Var>& parts);
/// Channel `index` of an (N, C, H, W) image as (N, H, W).
Var take_channel(const Var& x, std::size_t index);

/// Rotary position embedding on (N, frames, heads * head_dim); frame index is the position.
Var rope(const Var& x, std::size_t n_heads, double base);

/// Multi-head scaled dot-product attention over (N, T, D) inputs. Masked keys
/// receive an additive -inf bias; masked query rows produce zeros.
Var attention(const Var& q, const Var& k, const Var& v, const Tensor& frame_mask,
              std::size_t n_heads);

/// Per-channel convolution along frames with zero "same" padding.
/// x is (N, T, C), weight is (kernel, C), bias is (C).
Var depthwise_conv1d(const Var& x, const Var& weight, const Var& bias);

/// 2-D convolution with zero "same" padding. x is (N, Cin, H, W), weight is
/// (Cout, Cin, k, k) with odd k, bias is (Cout).
Var conv2d(const Var& x, const Var& weight, const Var& bias);

/// Mean of (pred - target)^2 over cells of valid frames. pred is (N, T, W).
Var masked_mse(const Var& pred, const Tensor& target, const Tensor& frame_mask);

/// Broadcasts a (N, T) frame mask over a trailing channel axis of width `channels`.
Tensor expand_frame_mask(const Tensor& frame_mask, std::size_t channels);
/// Broadcasts a (N, T) frame mask to an (N, C, T, W) image.
Tensor expand_frame_mask_image(const Tensor& frame_mask, std::size_t channels, std::size_t width);

}  // namespace melrefine::ad
