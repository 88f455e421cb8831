// SPDX-License-Identifier: Apache-2.0
#include "drl/model/config.hpp"

#include "drl/error.hpp"

namespace drl::model {

void BackboneConfig::validate() const {
  if (channel_plan.size() != 6)
    throw ValidationError("backbone channel plan needs exactly 6 entries (one per block), got " +
                          std::to_string(channel_plan.size()));
  for (auto c : channel_plan)
    if (c == 0) throw ValidationError("backbone channel counts must be positive");
  if (spatial_dims != 2 && spatial_dims != 3)
    throw ValidationError("spatial_dims must be 2 or 3, got " + std::to_string(spatial_dims));
  if (in_channels == 0) throw ValidationError("in_channels must be positive");
}

void HeadConfig::validate() const {
  const std::size_t k = relation_subset.size();
  if (k != 1 && k != 2 && k != 4)
    throw ValidationError("relation subset must hold 1, 2 or 4 relations, got " +
                          std::to_string(k));
  for (auto r : relation_subset)
    if (!relations::is_trainable(r))
      throw ValidationError("relation subset may only contain r1..r4");
  if (variant == HeadVariant::Transformer) {
    if (num_blocks == 0) throw ValidationError("transformer needs at least one block");
    if (num_heads == 0) throw ValidationError("transformer needs at least one head");
  }
  if (fc_width == 0 || ffn_multiplier == 0) throw ValidationError("head widths must be positive");
}

void ModelConfig::validate() const {
  backbone.validate();
  head.validate();
  if (input_extents.size() != backbone.spatial_dims)
    throw ValidationError("input has " + std::to_string(input_extents.size()) +
                          " spatial extents but the backbone is " +
                          std::to_string(backbone.spatial_dims) + "D");
  if (!(output_scale > 0)) throw ValidationError("output_scale must be positive");
}

std::string to_string(BackboneVariant v) { return v == BackboneVariant::SFCN ? "SFCN" : "mSFCN"; }
std::string to_string(Sharing s) { return s == Sharing::shared ? "shared" : "independent"; }
std::string to_string(HeadVariant v) { return v == HeadVariant::FCs ? "FCs" : "Transformer"; }
std::string to_string(TokenSelection s) {
  switch (s) {
    case TokenSelection::automatic: return "auto";
    case TokenSelection::sequence: return "sequence";
    case TokenSelection::relation_tokens: return "relation_tokens";
  }
  return "?";
}

BackboneVariant parse_backbone_variant(const std::string& s) {
  if (s == "SFCN") return BackboneVariant::SFCN;
  if (s == "mSFCN") return BackboneVariant::mSFCN;
  throw ValidationError("unknown backbone variant '" + s + "' (SFCN or mSFCN)");
}

Sharing parse_sharing(const std::string& s) {
  if (s == "shared") return Sharing::shared;
  if (s == "independent") return Sharing::independent;
  throw ValidationError("unknown sharing '" + s + "' (shared or independent)");
}

HeadVariant parse_head_variant(const std::string& s) {
  if (s == "FCs" || s == "fc") return HeadVariant::FCs;
  if (s == "Transformer" || s == "transformer") return HeadVariant::Transformer;
  throw ValidationError("unknown head variant '" + s + "' (FCs or Transformer)");
}

TokenSelection parse_token_selection(const std::string& s) {
  if (s == "auto") return TokenSelection::automatic;
  if (s == "sequence") return TokenSelection::sequence;
  if (s == "relation_tokens") return TokenSelection::relation_tokens;
  throw ValidationError("unknown token selection '" + s + "' (auto, sequence, relation_tokens)");
}

}  // namespace drl::model
