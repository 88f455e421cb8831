// SPDX-License-Identifier: Apache-2.0
#include "drl/model/pair_model.hpp"

#include <random>

#include "drl/error.hpp"

namespace drl::model {

namespace {

template <typename T>
nn::Tensor<T> repeat_batch(const nn::Tensor<T>& t, std::size_t n) {
  nn::Shape one{1};
  one.insert(one.end(), t.shape().begin(), t.shape().end());
  auto row = nn::reshape(t, one);
  return nn::concat(std::vector<nn::Tensor<T>>(n, row), 0);
}

template <typename T>
nn::Tensor<T> normal_tensor(nn::Shape shape, double stddev, nn::Rng& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  std::vector<T> v(nn::numel(shape));
  for (auto& x : v) x = T(dist(rng));
  return nn::Tensor<T>::from(std::move(shape), std::move(v), true);
}

std::size_t product_tail(const nn::Shape& s) {
  std::size_t n = 1;
  for (std::size_t i = 1; i < s.size(); ++i) n *= s[i];
  return n;
}

bool wants_relation_tokens(const HeadConfig& head, std::size_t tokens_per_image) {
  const std::size_t k = head.relation_subset.size();
  switch (head.token_selection) {
    case TokenSelection::relation_tokens: return true;
    case TokenSelection::automatic: return 2 * tokens_per_image < k;
    case TokenSelection::sequence:
      if (2 * tokens_per_image < k)
        throw ValidationError("relation heads read tokens 0.." + std::to_string(k - 1) +
                              " but the pair sequence has only " +
                              std::to_string(2 * tokens_per_image) +
                              " tokens; use token_selection relation_tokens or a larger input");
      return false;
  }
  return false;
}

// Learned relation tokens see the pair tokens as an unordered set unless the
// positions are marked, which would make every output symmetric in (x, y).
bool wants_positions(const HeadConfig& head, std::size_t tokens_per_image) {
  return head.positional_embedding || wants_relation_tokens(head, tokens_per_image);
}

nlohmann::json layers_json(const std::vector<LayerInfo>& layers) {
  auto arr = nlohmann::json::array();
  for (const auto& l : layers)
    arr.push_back({{"name", l.name}, {"kind", l.kind}, {"output", l.output},
                   {"parameters", l.parameters}});
  return arr;
}

std::size_t sum_params(const std::vector<LayerInfo>& layers) {
  std::size_t n = 0;
  for (const auto& l : layers) n += l.parameters;
  return n;
}

std::vector<LayerInfo> describe_transformer(std::size_t d, std::size_t l, const HeadConfig& h) {
  const std::size_t k = h.relation_subset.size();
  const bool rel = wants_relation_tokens(h, l);
  const std::size_t seq = 2 * l + (rel ? k : 0), hidden = h.ffn_multiplier * d;
  std::vector<LayerInfo> out;
  out.push_back({"tokens", "tokenize_pair", {d, 2 * l}, 0});
  if (wants_positions(h, l)) out.push_back({"positions", "learned_positions", {d, 2 * l}, 2 * l * d});
  if (rel) out.push_back({"relation_tokens", "learned_tokens", {d, seq}, k * d});
  for (std::size_t b = 0; b < h.num_blocks; ++b) {
    const std::string p = "encoder" + std::to_string(b + 1);
    const std::size_t attn = 2 * d + 4 * (d * d + d), ffn = 2 * d + d * hidden + hidden + hidden * d + d;
    out.push_back({p + ".attention", "layer_norm+mha" + std::to_string(h.num_heads), {d, seq}, attn});
    out.push_back({p + ".ffn", "layer_norm+ffn" + std::to_string(hidden), {d, seq}, ffn});
  }
  out.push_back({"final_norm", "layer_norm", {d, seq}, 2 * d});
  out.push_back({"relation_heads", "per_token_linear", {k}, k * d + k});
  return out;
}

std::vector<LayerInfo> describe_fc(std::size_t flat, const HeadConfig& h) {
  const std::size_t k = h.relation_subset.size(), w = h.fc_width;
  return {{"fc1", "linear+relu", {w}, flat * w + w},
          {"fc2", "linear+relu", {w}, w * w + w},
          {"fc3", "linear", {k}, w * k + k}};
}

nn::Shape sample_shape(const ModelConfig& c) {
  nn::Shape s{c.backbone.in_channels};
  s.insert(s.end(), c.input_extents.begin(), c.input_extents.end());
  return s;
}

}  // namespace

// ---------------------------------------------------------------------------

template <typename T>
TransformerHead<T>::TransformerHead(std::size_t d, std::size_t tokens_per_image,
                                    const HeadConfig& config, nn::Rng& rng)
    : final_norm(d), d_(d), tokens_per_image_(tokens_per_image), k_(config.relation_subset.size()) {
  if (d % config.num_heads != 0)
    throw ValidationError("token dimension " + std::to_string(d) + " is not divisible by " +
                          std::to_string(config.num_heads) + " attention heads");
  // Unit scale so x and y tokens are distinguishable from the first step.
  if (wants_positions(config, tokens_per_image))
    positions_ = normal_tensor<T>({2 * tokens_per_image, d}, 1.0, rng);
  if (wants_relation_tokens(config, tokens_per_image))
    relation_tokens_ = normal_tensor<T>({k_, d}, 0.02, rng);
  for (std::size_t b = 0; b < config.num_blocks; ++b)
    blocks.emplace_back(d, config.num_heads, config.ffn_multiplier * d, rng);
  nn::Linear<T> head(d, k_, rng);  // reuse the fan-in uniform init for the K affine maps
  head_weight = head.weight;
  head_bias = head.bias;
}

template <typename T>
nn::Tensor<T> TransformerHead<T>::encoder_input(const nn::Tensor<T>& fx,
                                                const nn::Tensor<T>& fy) const {
  auto seq = tokenize_pair(fx, fy);
  if (seq.d != d_ || seq.length != 2 * tokens_per_image_)
    throw ValidationError("transformer head built for " + std::to_string(d_) + "x" +
                          std::to_string(2 * tokens_per_image_) + " tokens, got " +
                          std::to_string(seq.d) + "x" + std::to_string(seq.length));
  const std::size_t n = fx.dim(0);
  nn::Tensor<T> t = seq.tokens;
  if (positions_.defined()) t = nn::add(t, repeat_batch(positions_, n));
  if (relation_tokens_.defined()) t = nn::concat<T>({repeat_batch(relation_tokens_, n), t}, 1);
  return t;
}

template <typename T>
nn::Tensor<T> TransformerHead<T>::operator()(const nn::Tensor<T>& fx, const nn::Tensor<T>& fy) {
  auto t = encoder_input(fx, fy);
  for (const auto& block : blocks) t = block(t);
  t = final_norm(t);
  return nn::per_row_affine(nn::slice(t, 1, 0, k_), head_weight, head_bias);
}

template <typename T>
void TransformerHead<T>::collect(const std::string& prefix, nn::StateRefs<T>& out) {
  if (positions_.defined()) out.parameters.push_back({prefix + ".positions", positions_});
  if (relation_tokens_.defined())
    out.parameters.push_back({prefix + ".relation_tokens", relation_tokens_});
  for (std::size_t b = 0; b < blocks.size(); ++b)
    blocks[b].collect(prefix + ".encoder" + std::to_string(b + 1), out);
  final_norm.collect(prefix + ".final_norm", out);
  out.parameters.push_back({prefix + ".relation_heads.weight", head_weight});
  out.parameters.push_back({prefix + ".relation_heads.bias", head_bias});
}

template <typename T>
std::vector<LayerInfo> TransformerHead<T>::describe() const {
  HeadConfig h;
  h.num_blocks = blocks.size();
  h.relation_subset.resize(k_);
  h.positional_embedding = positions_.defined();
  h.token_selection = uses_relation_tokens() ? TokenSelection::relation_tokens : TokenSelection::sequence;
  h.ffn_multiplier = blocks.empty() ? 4 : blocks[0].ffn_in.weight.dim(0) / d_;
  return describe_transformer(d_, tokens_per_image_, h);
}

template <typename T>
FcHead<T>::FcHead(std::size_t flat_features, const HeadConfig& config, nn::Rng& rng)
    : hidden1(flat_features, config.fc_width, rng),
      hidden2(config.fc_width, config.fc_width, rng),
      output(config.fc_width, config.relation_subset.size(), rng) {}

template <typename T>
nn::Tensor<T> FcHead<T>::operator()(const nn::Tensor<T>& fx, const nn::Tensor<T>& fy) {
  const std::size_t n = fx.dim(0);
  auto flat = nn::concat<T>({nn::reshape(fx, {n, product_tail(fx.shape())}),
                             nn::reshape(fy, {n, product_tail(fy.shape())})},
                            1);
  return output(nn::relu(hidden2(nn::relu(hidden1(flat)))));
}

template <typename T>
void FcHead<T>::collect(const std::string& prefix, nn::StateRefs<T>& out) {
  hidden1.collect(prefix + ".fc1", out);
  hidden2.collect(prefix + ".fc2", out);
  output.collect(prefix + ".fc3", out);
}

template <typename T>
std::vector<LayerInfo> FcHead<T>::describe() const {
  HeadConfig h;
  h.fc_width = hidden1.weight.dim(0);
  h.relation_subset.resize(output.weight.dim(0));
  return describe_fc(hidden1.weight.dim(1), h);
}

// ---------------------------------------------------------------------------

template <typename T>
PairModel<T>::PairModel(const ModelConfig& config, std::uint64_t seed) : config_(config) {
  config_.validate();
  feature_shape_ = model::feature_shape(config_.backbone, sample_shape(config_));
  nn::Rng rng(seed);
  backbones_.emplace_back(config_.backbone, rng);
  if (config_.backbone.sharing == Sharing::independent)
    backbones_.emplace_back(config_.backbone, rng);
  const std::size_t d = feature_shape_[0];
  if (config_.head.variant == HeadVariant::Transformer)
    head_ = std::make_unique<TransformerHead<T>>(d, tokens_per_image(), config_.head, rng);
  else
    head_ = std::make_unique<FcHead<T>>(2 * d * tokens_per_image(), config_.head, rng);
}

template <typename T>
std::size_t PairModel<T>::tokens_per_image() const {
  return nn::numel(feature_shape_) / feature_shape_[0];
}

template <typename T>
Backbone<T>& PairModel<T>::backbone(std::size_t slot) {
  if (slot > 1) throw ValidationError("input slot must be 0 (x) or 1 (y)");
  return backbones_[backbones_.size() == 1 ? 0 : slot];
}

template <typename T>
nn::Tensor<T> PairModel<T>::extract_features(const nn::Tensor<T>& images, std::size_t slot,
                                             bool training) {
  return backbone(slot)(images, training);
}

template <typename T>
nn::Tensor<T> PairModel<T>::relations_from_features(const nn::Tensor<T>& fx,
                                                    const nn::Tensor<T>& fy) {
  return nn::scale((*head_)(fx, fy), T(config_.output_scale));
}

template <typename T>
nn::Tensor<T> PairModel<T>::forward(const nn::Tensor<T>& x, const nn::Tensor<T>& y,
                                    bool training) {
  if (x.shape() != y.shape())
    throw ValidationError("pair inputs differ in shape: " + nn::shape_str(x.shape()) + " vs " +
                          nn::shape_str(y.shape()));
  if (backbones_.size() == 1) {
    // One pass over the stacked batch; batch statistics then cover both inputs.
    const std::size_t n = x.dim(0);
    auto f = backbones_[0](nn::concat<T>({x, y}, 0), training);
    return relations_from_features(nn::slice(f, 0, 0, n), nn::slice(f, 0, n, n));
  }
  return relations_from_features(backbones_[0](x, training), backbones_[1](y, training));
}

template <typename T>
nn::StateRefs<T> PairModel<T>::state() {
  nn::StateRefs<T> refs;
  for (std::size_t i = 0; i < backbones_.size(); ++i)
    backbones_[i].collect("backbone" + std::to_string(i + 1), refs);
  head_->collect("head", refs);
  return refs;
}

template <typename T>
std::size_t PairModel<T>::parameter_count() {
  return state().parameter_count();
}

template <typename T>
std::size_t PairModel<T>::backbone_parameter_count() {
  nn::StateRefs<T> refs;
  for (std::size_t i = 0; i < backbones_.size(); ++i)
    backbones_[i].collect("backbone" + std::to_string(i + 1), refs);
  return refs.parameter_count();
}

template <typename T>
nlohmann::json PairModel<T>::summary() {
  auto j = describe_pipeline(config_);
  j["parameters"] = {{"backbone", backbone_parameter_count()}, {"total", parameter_count()}};
  j["head"]["layers"] = layers_json(head_->describe());
  return j;
}

template class TransformerHead<float>;
template class TransformerHead<double>;
template class FcHead<float>;
template class FcHead<double>;
template class PairModel<float>;
template class PairModel<double>;

nlohmann::json describe_pipeline(const ModelConfig& config) {
  config.validate();
  const nn::Shape sample = sample_shape(config);
  const auto backbone_layers = trace_backbone(config.backbone, sample);
  const nn::Shape features = backbone_layers.back().output;
  const std::size_t d = features[0], l = nn::numel(features) / d;
  const std::size_t copies = config.backbone.sharing == Sharing::shared ? 1 : 2;
  const auto head_layers = config.head.variant == HeadVariant::Transformer
                               ? describe_transformer(d, l, config.head)
                               : describe_fc(2 * d * l, config.head);
  nlohmann::json j;
  j["input"] = sample;
  j["backbone"] = {{"variant", to_string(config.backbone.variant)},
                   {"sharing", to_string(config.backbone.sharing)},
                   {"copies", copies},
                   {"layers", layers_json(backbone_layers)},
                   {"parameters_per_copy", sum_params(backbone_layers)}};
  j["features"] = features;
  j["tokens"] = {{"d", d}, {"per_image", l}, {"pair", 2 * l}};
  j["head"] = {{"variant", to_string(config.head.variant)},
               {"relations", relations::format_relation_subset(config.head.relation_subset)},
               {"layers", layers_json(head_layers)}};
  j["shape_parameters"] = copies * sum_params(backbone_layers) + sum_params(head_layers);
  return j;
}

}  // namespace drl::model
