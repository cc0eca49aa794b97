#pragma once

#include <cstddef>
#include <vector>

#include "protoscale/tensor.hpp"

// Differentiable tensor operations. Every function records itself on the
// tape when grad mode is on and an input requires grad.
namespace protoscale {

// Elementwise binary ops broadcast numpy-style: shapes are right-aligned and
// each dimension must match or be 1.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);

Tensor add_scalar(const Tensor& x, double c);
Tensor mul_scalar(const Tensor& x, double c);
Tensor neg(const Tensor& x);

Tensor exp(const Tensor& x);
/// log(max(x, floor)); gradient is zero where the floor is active.
Tensor log(const Tensor& x, double floor = 1e-12);
Tensor sqrt(const Tensor& x);
Tensor square(const Tensor& x);
Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
Tensor sum(const Tensor& x, std::size_t axis, bool keepdim = true);
Tensor mean(const Tensor& x, std::size_t axis, bool keepdim = true);

/// exp((x - max)/temperature) normalized along `axis`.
Tensor softmax(const Tensor& x, std::size_t axis, double temperature = 1.0);

/// 2-D matrix product.
Tensor matmul(const Tensor& a, const Tensor& b);
/// Batched product over a leading axis; a rank-2 operand is shared by every batch.
Tensor bmm(const Tensor& a, const Tensor& b);

Tensor reshape(const Tensor& x, Shape shape);
Tensor transpose(const Tensor& x, std::size_t axis0, std::size_t axis1);
Tensor slice(const Tensor& x, std::size_t axis, std::size_t start, std::size_t length);
Tensor concat(const std::vector<Tensor>& parts, std::size_t axis);

/// Cross-correlation with zero padding. input [C,H,W] or [B,C,H,W],
/// kernel [Cout,Cin,kh,kw] with odd kh, kw.
Tensor conv2d(const Tensor& input, const Tensor& kernel, std::size_t stride, std::size_t padding);
/// x [B,C,...] + bias[C] broadcast over every axis except 1.
Tensor add_channel_bias(const Tensor& x, const Tensor& bias);
/// Nearest-neighbour x2 upsampling of the last two axes.
Tensor upsample_nearest2x(const Tensor& x);

/// Mean over non-axis positions of sum_axis p (log p - log q). `p` is a
/// constant target: no gradient flows into it. Both inputs must be
/// nonnegative and normalized along `axis` within 1e-6.
Tensor kl_divergence(const Tensor& p, const Tensor& q, std::size_t axis);

/// Forward zeroes entries below `threshold`; backward passes the gradient
/// through unchanged (straight-through).
Tensor threshold_straight_through(const Tensor& x, double threshold);

}  // namespace protoscale
