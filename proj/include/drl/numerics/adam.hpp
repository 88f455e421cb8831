// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <vector>

#include "drl/numerics/layers.hpp"

namespace drl::nn {

struct AdamOptions {
  double base_lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  int half_period = 35;  // epochs between learning-rate halvings
};

/// base_lr * 0.5^floor(epoch / half_period)
double scheduled_lr(double base_lr, int epoch, int half_period);

template <typename T>
struct AdamState {
  std::uint64_t step_count = 0;
  std::vector<std::vector<T>> first_moment;
  std::vector<std::vector<T>> second_moment;
};

template <typename T>
class Adam {
 public:
  Adam(std::vector<NamedParameter<T>> parameters, AdamOptions options);

  /// One bias-corrected Adam update at the scheduled rate for `epoch`.
  /// Every parameter must carry a gradient.
  void step(int epoch);
  void zero_grad();

  const AdamOptions& options() const { return options_; }
  const std::vector<NamedParameter<T>>& parameters() const { return parameters_; }
  AdamState<T>& state() { return state_; }
  const AdamState<T>& state() const { return state_; }

 private:
  std::vector<NamedParameter<T>> parameters_;
  AdamOptions options_;
  AdamState<T> state_;
};

extern template class Adam<float>;
extern template class Adam<double>;

}  // namespace drl::nn
