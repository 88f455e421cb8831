// SPDX-License-Identifier: Apache-2.0
#include "drl/model/backbone.hpp"

#include "drl/error.hpp"

namespace drl::model {

namespace {

constexpr std::size_t kBlocks = 6;

std::size_t kernel_of_block(std::size_t block) { return block + 1 < kBlocks ? 3 : 1; }

nn::Shape halve(const nn::Shape& s, const std::string& where, const nn::Shape& input) {
  nn::Shape out = s;
  for (std::size_t i = 1; i < out.size(); ++i) {
    out[i] /= 2;
    if (out[i] == 0)
      throw ValidationError("input " + nn::shape_str(input) + " collapses to zero extent at " +
                            where + "; use a larger input (each pooled axis needs >= 2^pools)");
  }
  return out;
}

std::size_t pow_size(std::size_t base, std::size_t exp) {
  std::size_t v = 1;
  while (exp--) v *= base;
  return v;
}

}  // namespace

std::vector<LayerInfo> trace_backbone(const BackboneConfig& config, const nn::Shape& sample) {
  config.validate();
  if (sample.size() != config.spatial_dims + 1)
    throw ValidationError("expected a (C, spatial...) sample with " +
                          std::to_string(config.spatial_dims) + " spatial axes, got " +
                          nn::shape_str(sample));
  if (sample[0] != config.in_channels)
    throw ValidationError("image has " + std::to_string(sample[0]) + " channels, backbone expects " +
                          std::to_string(config.in_channels));
  std::vector<LayerInfo> layers;
  nn::Shape s = sample;
  if (config.variant == BackboneVariant::mSFCN) {
    s = halve(s, "input pool", sample);
    layers.push_back({"input_pool", "max_pool", s, 0});
  }
  std::size_t channels = config.in_channels;
  for (std::size_t b = 0; b < kBlocks; ++b) {
    const std::size_t k = kernel_of_block(b), out_c = config.channel_plan[b];
    const std::string prefix = "block" + std::to_string(b + 1);
    s[0] = out_c;
    const std::size_t conv_params = out_c * channels * pow_size(k, config.spatial_dims) + out_c;
    layers.push_back({prefix + ".conv", "conv" + std::to_string(config.spatial_dims) + "d_k" +
                                            std::to_string(k),
                      s, conv_params});
    layers.push_back({prefix + ".bn", "batch_norm", s, 2 * out_c});
    layers.push_back({prefix + ".relu", "relu", s, 0});
    if (b + 1 < kBlocks) {
      s = halve(s, prefix + " pool", sample);
      layers.push_back({prefix + ".pool", "max_pool", s, 0});
    }
    channels = out_c;
  }
  return layers;
}

nn::Shape feature_shape(const BackboneConfig& config, const nn::Shape& sample) {
  return trace_backbone(config, sample).back().output;
}

template <typename T>
Backbone<T>::Backbone(const BackboneConfig& config, nn::Rng& rng) : config_(config) {
  config_.validate();
  std::size_t channels = config_.in_channels;
  for (std::size_t b = 0; b < kBlocks; ++b) {
    convs_.emplace_back(channels, config_.channel_plan[b], kernel_of_block(b),
                        config_.spatial_dims, rng);
    norms_.emplace_back(config_.channel_plan[b]);
    channels = config_.channel_plan[b];
  }
}

template <typename T>
nn::Tensor<T> Backbone<T>::operator()(const nn::Tensor<T>& images, bool training) {
  if (images.rank() != config_.spatial_dims + 2 || images.dim(1) != config_.in_channels)
    throw ValidationError("backbone expects (N, " + std::to_string(config_.in_channels) +
                          ", spatial...) with " + std::to_string(config_.spatial_dims) +
                          " spatial axes, got " + nn::shape_str(images.shape()));
  // Validates extents up front so the error names the whole input.
  nn::Shape sample(images.shape().begin() + 1, images.shape().end());
  (void)feature_shape(config_, sample);
  nn::Tensor<T> h = images;
  if (config_.variant == BackboneVariant::mSFCN) h = nn::max_pool(h);
  for (std::size_t b = 0; b < kBlocks; ++b) {
    h = nn::relu(norms_[b](convs_[b](h), training));
    if (b + 1 < kBlocks) h = nn::max_pool(h);
  }
  return h;
}

template <typename T>
void Backbone<T>::collect(const std::string& prefix, nn::StateRefs<T>& out) {
  for (std::size_t b = 0; b < kBlocks; ++b) {
    const std::string name = prefix + ".block" + std::to_string(b + 1);
    convs_[b].collect(name + ".conv", out);
    norms_[b].collect(name + ".bn", out);
  }
}

template class Backbone<float>;
template class Backbone<double>;

}  // namespace drl::model
