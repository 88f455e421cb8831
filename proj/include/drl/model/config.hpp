// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "drl/relations/relation.hpp"

namespace drl::model {

enum class BackboneVariant { SFCN, mSFCN };  // mSFCN max-pools the input once before block 1
enum class Sharing { shared, independent };
enum class HeadVariant { FCs, Transformer };

// Which tokens feed the relation heads. `sequence` reads tokens 0..K-1 of the
// concatenated pair sequence; `relation_tokens` prepends K learned tokens and
// reads those. `automatic` picks `sequence` whenever 2L >= K.
enum class TokenSelection { automatic, sequence, relation_tokens };

struct BackboneConfig {
  BackboneVariant variant = BackboneVariant::SFCN;
  Sharing sharing = Sharing::shared;
  std::size_t spatial_dims = 2;
  std::size_t in_channels = 2;
  std::vector<std::size_t> channel_plan{32, 64, 128, 256, 256, 64};

  void validate() const;
};

struct HeadConfig {
  HeadVariant variant = HeadVariant::Transformer;
  std::size_t num_blocks = 2;
  std::size_t num_heads = 8;
  std::vector<relations::Relation> relation_subset{relations::kTrainableRelations.begin(),
                                                   relations::kTrainableRelations.end()};
  bool positional_embedding = false;
  TokenSelection token_selection = TokenSelection::automatic;
  std::size_t ffn_multiplier = 4;
  std::size_t fc_width = 64;

  void validate() const;
};

struct ModelConfig {
  BackboneConfig backbone;
  HeadConfig head;
  std::vector<std::size_t> input_extents{32, 32};  // spatial extents of one image
  double output_scale = 100.0;                      // relations = output_scale * head output

  void validate() const;
};

std::string to_string(BackboneVariant v);
std::string to_string(Sharing s);
std::string to_string(HeadVariant v);
std::string to_string(TokenSelection s);
BackboneVariant parse_backbone_variant(const std::string& s);
Sharing parse_sharing(const std::string& s);
HeadVariant parse_head_variant(const std::string& s);
TokenSelection parse_token_selection(const std::string& s);

}  // namespace drl::model
