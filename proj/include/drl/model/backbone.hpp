// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include "drl/model/config.hpp"
#include "drl/numerics/layers.hpp"

namespace drl::model {

struct LayerInfo {
  std::string name;
  std::string kind;
  nn::Shape output;  // per-sample shape, batch axis omitted
  std::size_t parameters = 0;
};

/// Per-layer shapes of the backbone for one sample of shape (C, spatial...),
/// computed from the shape rules alone.
std::vector<LayerInfo> trace_backbone(const BackboneConfig& config, const nn::Shape& sample);

/// Feature shape (d, spatial...) for one sample. Throws when an extent collapses to 0.
nn::Shape feature_shape(const BackboneConfig& config, const nn::Shape& sample);

/// Six-block fully convolutional feature extractor. Blocks 1-5 are
/// conv3 -> batch norm -> ReLU -> max-pool; block 6 is conv1 -> batch norm -> ReLU.
template <typename T>
class Backbone {
 public:
  Backbone(const BackboneConfig& config, nn::Rng& rng);

  /// images (N, C, spatial...) -> features (N, d, spatial'...)
  nn::Tensor<T> operator()(const nn::Tensor<T>& images, bool training);

  void collect(const std::string& prefix, nn::StateRefs<T>& out);
  const BackboneConfig& config() const { return config_; }

 private:
  BackboneConfig config_;
  std::vector<nn::Conv<T>> convs_;
  std::vector<nn::BatchNorm<T>> norms_;
};

extern template class Backbone<float>;
extern template class Backbone<double>;

}  // namespace drl::model
