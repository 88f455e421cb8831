// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "drl/numerics/ops.hpp"
#include "drl/numerics/tensor.hpp"

namespace drl::nn {

using Rng = std::mt19937_64;

template <typename T>
struct NamedParameter {
  std::string name;
  Tensor<T> tensor;
};

// Non-trainable state (batch-norm running statistics).
template <typename T>
struct NamedBuffer {
  std::string name;
  std::vector<T>* values;
};

template <typename T>
struct StateRefs {
  std::vector<NamedParameter<T>> parameters;
  std::vector<NamedBuffer<T>> buffers;

  std::size_t parameter_count() const;
};

/// Fully connected layer; weights uniform in ±1/sqrt(fan_in).
template <typename T>
class Linear {
 public:
  Linear() = default;
  Linear(std::size_t in_features, std::size_t out_features, Rng& rng);

  Tensor<T> operator()(const Tensor<T>& x) const { return linear(x, weight, bias); }
  void collect(const std::string& prefix, StateRefs<T>& out);

  Tensor<T> weight;
  Tensor<T> bias;
};

/// Same-padded stride-1 convolution; fan-in scaled normal init.
template <typename T>
class Conv {
 public:
  Conv() = default;
  Conv(std::size_t in_channels, std::size_t out_channels, std::size_t kernel,
       std::size_t spatial_dims, Rng& rng);

  Tensor<T> operator()(const Tensor<T>& x) const { return conv(x, weight, bias, padding); }
  void collect(const std::string& prefix, StateRefs<T>& out);

  Tensor<T> weight;
  Tensor<T> bias;
  std::size_t padding = 0;
};

template <typename T>
class BatchNorm {
 public:
  static constexpr double kMomentum = 0.1;
  static constexpr double kEpsilon = 1e-5;

  BatchNorm() = default;
  explicit BatchNorm(std::size_t channels);

  Tensor<T> operator()(const Tensor<T>& x, bool training) {
    return batch_norm(x, gamma, beta, running_mean, running_var, training, T(kMomentum),
                      T(kEpsilon));
  }
  void collect(const std::string& prefix, StateRefs<T>& out);

  Tensor<T> gamma;
  Tensor<T> beta;
  std::vector<T> running_mean;
  std::vector<T> running_var;
};

template <typename T>
class LayerNorm {
 public:
  LayerNorm() = default;
  explicit LayerNorm(std::size_t width);

  Tensor<T> operator()(const Tensor<T>& x) const { return layer_norm(x, gamma, beta, T(1e-5)); }
  void collect(const std::string& prefix, StateRefs<T>& out);

  Tensor<T> gamma;
  Tensor<T> beta;
};

}  // namespace drl::nn
