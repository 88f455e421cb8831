// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <vector>

#include "drl/numerics/tensor.hpp"

// Differentiable operations. Every op records an analytic backward rule when
// graph recording is enabled. Instantiated for float and double.
namespace drl::nn {

// Elementwise.
template <typename T> Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> scale(const Tensor<T>& x, T factor);
template <typename T> Tensor<T> abs(const Tensor<T>& x);
template <typename T> Tensor<T> relu(const Tensor<T>& x);

// Reductions to a one-element tensor.
template <typename T> Tensor<T> sum(const Tensor<T>& x);
template <typename T> Tensor<T> mean(const Tensor<T>& x);

// Shape manipulation.
template <typename T> Tensor<T> reshape(const Tensor<T>& x, Shape shape);
template <typename T> Tensor<T> permute(const Tensor<T>& x, const std::vector<std::size_t>& axes);
template <typename T> Tensor<T> concat(const std::vector<Tensor<T>>& parts, std::size_t axis);
template <typename T>
Tensor<T> slice(const Tensor<T>& x, std::size_t axis, std::size_t start, std::size_t length);

/// y = x Wᵀ + b over the last axis. x (..., in), W (out, in), b (out) or undefined.
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias);

/// Batched product. a (B, m, k); b (B, k, n), or (B, n, k) when transpose_b.
template <typename T>
Tensor<T> bmm(const Tensor<T>& a, const Tensor<T>& b, bool transpose_b);

/// Softmax over the last axis.
template <typename T> Tensor<T> softmax(const Tensor<T>& x);

/// Normalizes over the last axis, then applies gamma/beta of that extent.
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                     T eps = T(1e-5));

/// Stride-1 convolution over 2 or 3 spatial axes with symmetric zero padding.
/// x (N, Cin, spatial...), weight (Cout, Cin, k...), bias (Cout) or undefined.
template <typename T>
Tensor<T> conv(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias,
               std::size_t padding);

/// Max pooling with kernel 2 and stride 2 over 2 or 3 spatial axes; extents floor-halve.
template <typename T> Tensor<T> max_pool(const Tensor<T>& x);

/// Per-channel normalization of x (N, C, spatial...). In training mode batch
/// statistics are used and the running estimates are updated in place.
template <typename T>
Tensor<T> batch_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                     std::vector<T>& running_mean, std::vector<T>& running_var, bool training,
                     T momentum = T(0.1), T eps = T(1e-5));

/// out[n, i] = dot(x[n, i, :], weight[i, :]) + bias[i]. x (N, K, d), weight (K, d), bias (K).
template <typename T>
Tensor<T> per_row_affine(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias);

/// Output extents of the shape rules, usable without data.
Shape conv_output_shape(const Shape& input, const Shape& weight, std::size_t padding);
Shape max_pool_output_shape(const Shape& input);

}  // namespace drl::nn
