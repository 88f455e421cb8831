// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <memory>
#include <vector>

#include "drl/model/backbone.hpp"
#include "drl/model/config.hpp"
#include "drl/model/transformer.hpp"
#include "json.hpp"

namespace drl::model {

/// Maps pair features to K raw relation outputs (before output scaling).
template <typename T>
class RelationHead {
 public:
  virtual ~RelationHead() = default;
  virtual nn::Tensor<T> operator()(const nn::Tensor<T>& fx, const nn::Tensor<T>& fy) = 0;
  virtual void collect(const std::string& prefix, nn::StateRefs<T>& out) = 0;
  virtual std::vector<LayerInfo> describe() const = 0;
};

/// Tokens -> encoder blocks -> final layer norm -> one affine map per relation,
/// relation i reading token i.
template <typename T>
class TransformerHead final : public RelationHead<T> {
 public:
  TransformerHead(std::size_t d, std::size_t tokens_per_image, const HeadConfig& config,
                  nn::Rng& rng);

  nn::Tensor<T> operator()(const nn::Tensor<T>& fx, const nn::Tensor<T>& fy) override;
  void collect(const std::string& prefix, nn::StateRefs<T>& out) override;
  std::vector<LayerInfo> describe() const override;

  /// Sequence the encoder sees: optional learned relation tokens, then [x tokens, y tokens].
  nn::Tensor<T> encoder_input(const nn::Tensor<T>& fx, const nn::Tensor<T>& fy) const;
  bool uses_relation_tokens() const { return relation_tokens_.defined(); }

  std::vector<EncoderBlock<T>> blocks;
  nn::LayerNorm<T> final_norm;
  nn::Tensor<T> head_weight;  // (K, d)
  nn::Tensor<T> head_bias;    // (K)

 private:
  std::size_t d_, tokens_per_image_, k_;
  nn::Tensor<T> relation_tokens_;  // (K, d) when enabled
  nn::Tensor<T> positions_;        // (2L, d) when enabled
};

/// Flattened, concatenated pair features -> FC(64) -> ReLU -> FC(64) -> ReLU -> FC(K).
template <typename T>
class FcHead final : public RelationHead<T> {
 public:
  FcHead(std::size_t flat_features, const HeadConfig& config, nn::Rng& rng);

  nn::Tensor<T> operator()(const nn::Tensor<T>& fx, const nn::Tensor<T>& fy) override;
  void collect(const std::string& prefix, nn::StateRefs<T>& out) override;
  std::vector<LayerInfo> describe() const override;

  nn::Linear<T> hidden1, hidden2, output;
};

/// The pairwise relation network: one shared or two independent backbones
/// followed by a relation head. Outputs are relations in target units.
template <typename T>
class PairModel {
 public:
  PairModel(const ModelConfig& config, std::uint64_t seed);

  /// images (N, C, spatial...) through the backbone serving input slot 0 (x) or 1 (y).
  nn::Tensor<T> extract_features(const nn::Tensor<T>& images, std::size_t slot, bool training);

  /// (N, K) relations in target units, ordered as config().head.relation_subset.
  nn::Tensor<T> relations_from_features(const nn::Tensor<T>& fx, const nn::Tensor<T>& fy);

  nn::Tensor<T> forward(const nn::Tensor<T>& x, const nn::Tensor<T>& y, bool training);

  nn::StateRefs<T> state();
  std::size_t parameter_count();
  std::size_t backbone_parameter_count();

  const ModelConfig& config() const { return config_; }
  const std::vector<relations::Relation>& relations() const {
    return config_.head.relation_subset;
  }
  /// (d, spatial...) of one image's features.
  const nn::Shape& feature_shape() const { return feature_shape_; }
  std::size_t tokens_per_image() const;
  std::size_t backbone_count() const { return backbones_.size(); }

  RelationHead<T>& head() { return *head_; }
  Backbone<T>& backbone(std::size_t slot);

  /// Layer list, shapes and parameter counts.
  nlohmann::json summary();

 private:
  ModelConfig config_;
  nn::Shape feature_shape_;
  std::vector<Backbone<T>> backbones_;
  std::unique_ptr<RelationHead<T>> head_;
};

extern template class PairModel<float>;
extern template class PairModel<double>;

/// Shape-only walk through the whole pipeline for one pair; no parameters are allocated.
nlohmann::json describe_pipeline(const ModelConfig& config);

}  // namespace drl::model
