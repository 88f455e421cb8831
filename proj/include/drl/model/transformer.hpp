// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "drl/numerics/layers.hpp"

namespace drl::model {

enum class TokenSource { x, y, pair };

/// Token sequence of a batch. Stored token-major as (N, length, d); token i of
/// sample n is the contiguous row tokens[n, i, :].
template <typename T>
struct TokenSequence {
  nn::Tensor<T> tokens;
  std::size_t d = 0;
  std::size_t length = 0;
  TokenSource source = TokenSource::pair;
};

/// Feature tensor (N, d, spatial...) -> (N, L, d) with L the product of the
/// spatial extents, flattened row-major in stored axis order.
template <typename T>
TokenSequence<T> tokenize(const nn::Tensor<T>& features, TokenSource source);

/// Concatenation [tokens(x), tokens(y)] of length 2L. Shapes must match.
template <typename T>
TokenSequence<T> tokenize_pair(const nn::Tensor<T>& fx, const nn::Tensor<T>& fy);

/// softmax(q kᵀ / sqrt(d)) v over (B, n, d) operands. When `weights` is given it
/// receives the (B, n, n) attention matrix.
template <typename T>
nn::Tensor<T> scaled_dot_product_attention(const nn::Tensor<T>& q, const nn::Tensor<T>& k,
                                           const nn::Tensor<T>& v,
                                           nn::Tensor<T>* weights = nullptr);

/// Pre-norm transformer encoder block:
///   t <- t + MHA(LN(t));  t <- t + FFN(LN(t)),  FFN = Linear -> ReLU -> Linear.
template <typename T>
class EncoderBlock {
 public:
  EncoderBlock(std::size_t d, std::size_t heads, std::size_t ffn_hidden, nn::Rng& rng);

  nn::Tensor<T> operator()(const nn::Tensor<T>& tokens) const;

  /// Per-head attention weights (N * heads, n, n) of the attention sub-layer.
  nn::Tensor<T> attention_weights(const nn::Tensor<T>& tokens) const;

  void collect(const std::string& prefix, nn::StateRefs<T>& out);

  nn::LayerNorm<T> norm_attention, norm_ffn;
  nn::Linear<T> query, key, value, projection;
  nn::Linear<T> ffn_in, ffn_out;

 private:
  nn::Tensor<T> attend(const nn::Tensor<T>& normed, nn::Tensor<T>* weights) const;
  nn::Tensor<T> split_heads(const nn::Tensor<T>& x) const;
  nn::Tensor<T> merge_heads(const nn::Tensor<T>& x, std::size_t batch) const;

  std::size_t d_;
  std::size_t heads_;
};

extern template class EncoderBlock<float>;
extern template class EncoderBlock<double>;

}  // namespace drl::model
