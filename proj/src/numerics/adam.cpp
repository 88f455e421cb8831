// SPDX-License-Identifier: Apache-2.0
#include "drl/numerics/adam.hpp"

#include <cmath>

#include "drl/error.hpp"

namespace drl::nn {

double scheduled_lr(double base_lr, int epoch, int half_period) {
  if (half_period <= 0) throw ValidationError("learning-rate half period must be positive");
  if (epoch < 0) throw ValidationError("epoch must be non-negative");
  return base_lr * std::pow(0.5, epoch / half_period);
}

template <typename T>
Adam<T>::Adam(std::vector<NamedParameter<T>> parameters, AdamOptions options)
    : parameters_(std::move(parameters)), options_(options) {
  for (const auto& p : parameters_) {
    state_.first_moment.emplace_back(p.tensor.numel(), T{});
    state_.second_moment.emplace_back(p.tensor.numel(), T{});
  }
}

template <typename T>
void Adam<T>::step(int epoch) {
  for (const auto& p : parameters_)
    if (!p.tensor.has_grad())
      throw RuntimeFailure("adam: parameter '" + p.name + "' has no gradient");
  const double lr = scheduled_lr(options_.base_lr, epoch, options_.half_period);
  const double b1 = options_.beta1, b2 = options_.beta2;
  const auto t = static_cast<double>(++state_.step_count);
  const double c1 = 1.0 - std::pow(b1, t), c2 = 1.0 - std::pow(b2, t);
  for (std::size_t i = 0; i < parameters_.size(); ++i) {
    Tensor<T> param = parameters_[i].tensor;
    auto values = param.values();
    auto grad = param.grad();
    auto& m = state_.first_moment[i];
    auto& v = state_.second_moment[i];
    for (std::size_t j = 0; j < values.size(); ++j) {
      const double g = grad[j];
      const double mj = b1 * m[j] + (1.0 - b1) * g;
      const double vj = b2 * v[j] + (1.0 - b2) * g * g;
      m[j] = T(mj);
      v[j] = T(vj);
      values[j] = T(values[j] - lr * (mj / c1) / (std::sqrt(vj / c2) + options_.epsilon));
    }
  }
}

template <typename T>
void Adam<T>::zero_grad() {
  for (auto& p : parameters_) p.tensor.zero_grad();
}

template class Adam<float>;
template class Adam<double>;

}  // namespace drl::nn
