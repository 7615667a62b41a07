#pragma once

// Forward/backward kernels for every layer kind the UA network uses.
// Activations are [B, C, L] (channels-first) or [B, N] after flattening.
// Backward kernels take the forward input and the upstream gradient and
// overwrite the parameter gradients and the input gradient.

#include <cstddef>

#include "fedua/nn/tensor.hpp"

namespace fedua::nn {

inline constexpr double kGroupNormEps = 1e-5;

/// Same zero-padding, stride 1. weight [Cout, Cin, K] with K odd, bias [Cout].
Tensor conv1d_forward(const Tensor& x, const Tensor& weight, const Tensor& bias);
/// Writes d(weight) and d(bias) into the gradient buffers of weight/bias
/// (allocating them) and returns d(x).
Tensor conv1d_backward(const Tensor& x, Tensor& weight, Tensor& bias, const Tensor& dy);

Tensor relu_forward(const Tensor& x);
Tensor relu_backward(const Tensor& x, const Tensor& dy);

/// Non-overlapping mean over windows of `rate` samples; rate divides L.
Tensor avg_pool1d_forward(const Tensor& x, std::size_t rate);
Tensor avg_pool1d_backward(const Tensor& x, std::size_t rate, const Tensor& dy);
/// Nearest-neighbour repeat of each sample `rate` times (inverse shape of pooling).
Tensor upsample1d(const Tensor& x, std::size_t rate);

/// Per sample and per group of C/G channels: scale*(x-mean)/sqrt(var+eps)+shift.
/// scale and shift are per channel, shape [C].
Tensor group_norm_forward(const Tensor& x, std::size_t groups, const Tensor& scale, const Tensor& shift,
                          double eps = kGroupNormEps);
Tensor group_norm_backward(const Tensor& x, std::size_t groups, Tensor& scale, Tensor& shift, const Tensor& dy,
                           double eps = kGroupNormEps);

/// x viewed as [B, n1]; weight [n1, n2]; bias [n2]; result [B, n2].
Tensor fc_forward(const Tensor& x, const Tensor& weight, const Tensor& bias);
Tensor fc_backward(const Tensor& x, Tensor& weight, Tensor& bias, const Tensor& dy);

/// Logistic function, kept strictly inside (0, 1) even when saturated.
double sigmoid(double z) noexcept;
Tensor sigmoid_forward(const Tensor& x);
/// Uses the forward output y: dx = dy * y * (1 - y).
Tensor sigmoid_backward(const Tensor& y, const Tensor& dy);

}  // namespace fedua::nn
