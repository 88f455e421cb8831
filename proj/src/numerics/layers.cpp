// SPDX-License-Identifier: Apache-2.0
#include "drl/numerics/layers.hpp"

#include <cmath>

namespace drl::nn {

template <typename T>
std::size_t StateRefs<T>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : parameters) n += p.tensor.numel();
  return n;
}

template <typename T>
Linear<T>::Linear(std::size_t in_features, std::size_t out_features, Rng& rng) {
  const double bound = 1.0 / std::sqrt(double(in_features));
  std::uniform_real_distribution<double> dist(-bound, bound);
  std::vector<T> w(in_features * out_features), b(out_features);
  for (auto& v : w) v = T(dist(rng));
  for (auto& v : b) v = T(dist(rng));
  weight = Tensor<T>::from({out_features, in_features}, std::move(w), true);
  bias = Tensor<T>::from({out_features}, std::move(b), true);
}

template <typename T>
void Linear<T>::collect(const std::string& prefix, StateRefs<T>& out) {
  out.parameters.push_back({prefix + ".weight", weight});
  out.parameters.push_back({prefix + ".bias", bias});
}

template <typename T>
Conv<T>::Conv(std::size_t in_channels, std::size_t out_channels, std::size_t kernel,
              std::size_t spatial_dims, Rng& rng)
    : padding(kernel / 2) {
  Shape shape{out_channels, in_channels};
  std::size_t fan_in = in_channels;
  for (std::size_t i = 0; i < spatial_dims; ++i) {
    shape.push_back(kernel);
    fan_in *= kernel;
  }
  std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / double(fan_in)));
  std::vector<T> w(numel(shape));
  for (auto& v : w) v = T(dist(rng));
  weight = Tensor<T>::from(std::move(shape), std::move(w), true);
  bias = Tensor<T>::zeros({out_channels}, true);
}

template <typename T>
void Conv<T>::collect(const std::string& prefix, StateRefs<T>& out) {
  out.parameters.push_back({prefix + ".weight", weight});
  out.parameters.push_back({prefix + ".bias", bias});
}

template <typename T>
BatchNorm<T>::BatchNorm(std::size_t channels)
    : gamma(Tensor<T>::full({channels}, T{1}, true)),
      beta(Tensor<T>::zeros({channels}, true)),
      running_mean(channels, T{}),
      running_var(channels, T{1}) {}

template <typename T>
void BatchNorm<T>::collect(const std::string& prefix, StateRefs<T>& out) {
  out.parameters.push_back({prefix + ".gamma", gamma});
  out.parameters.push_back({prefix + ".beta", beta});
  out.buffers.push_back({prefix + ".running_mean", &running_mean});
  out.buffers.push_back({prefix + ".running_var", &running_var});
}

template <typename T>
LayerNorm<T>::LayerNorm(std::size_t width)
    : gamma(Tensor<T>::full({width}, T{1}, true)), beta(Tensor<T>::zeros({width}, true)) {}

template <typename T>
void LayerNorm<T>::collect(const std::string& prefix, StateRefs<T>& out) {
  out.parameters.push_back({prefix + ".gamma", gamma});
  out.parameters.push_back({prefix + ".beta", beta});
}

template struct StateRefs<float>;
template struct StateRefs<double>;
template class Linear<float>;
template class Linear<double>;
template class Conv<float>;
template class Conv<double>;
template class BatchNorm<float>;
template class BatchNorm<double>;
template class LayerNorm<float>;
template class LayerNorm<double>;

}  // namespace drl::nn
