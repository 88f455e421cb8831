// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "drl/numerics/tensor.hpp"

namespace drl::testing {

using TensorD = nn::Tensor<double>;

struct GradCheckResult {
  double max_error = 0.0;  // max abs(analytic - numeric) / leaf gradient scale, worst leaf
  std::string worst_leaf;
  std::size_t coordinates = 0;
  std::size_t kinks = 0;  // coordinates where a fallback probe beat the 1e-5 central difference
};

/// Central differences (step 1e-5) against backward() for the scalar loss
/// sum(weights * forward()), with weights drawn once from `seed`. At most
/// `max_coords` coordinates per leaf are probed, chosen at random. Each
/// coordinate is also compared against one-sided differences and against central
/// differences at steps 1e-6 and 1e-7, keeping the closest; this absorbs probes
/// that straddle a ReLU or pooling kink.
GradCheckResult gradient_check(const std::function<TensorD()>& forward,
                               const std::vector<std::pair<std::string, TensorD>>& leaves,
                               std::uint64_t seed, std::size_t max_coords = 48);

struct GradCase {
  std::string name;
  std::function<GradCheckResult(std::uint64_t seed)> run;
};

/// One case per layer kind plus composed blocks and a small end-to-end pair model.
std::vector<GradCase> gradient_cases();

}  // namespace drl::testing
