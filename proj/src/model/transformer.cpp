// SPDX-License-Identifier: Apache-2.0
#include "drl/model/transformer.hpp"

#include <cmath>

#include "drl/error.hpp"

namespace drl::model {

template <typename T>
TokenSequence<T> tokenize(const nn::Tensor<T>& features, TokenSource source) {
  if (features.rank() < 3)
    throw ValidationError("tokenize expects (N, d, spatial...) features, got " +
                          nn::shape_str(features.shape()));
  const std::size_t n = features.dim(0), d = features.dim(1);
  const std::size_t length = features.numel() / (n * d);
  auto flat = nn::reshape(features, {n, d, length});
  return {nn::permute(flat, {0, 2, 1}), d, length, source};
}

template <typename T>
TokenSequence<T> tokenize_pair(const nn::Tensor<T>& fx, const nn::Tensor<T>& fy) {
  if (fx.shape() != fy.shape())
    throw ValidationError("pair features differ in shape: " + nn::shape_str(fx.shape()) + " vs " +
                          nn::shape_str(fy.shape()));
  auto tx = tokenize(fx, TokenSource::x);
  auto ty = tokenize(fy, TokenSource::y);
  return {nn::concat<T>({tx.tokens, ty.tokens}, 1), tx.d, 2 * tx.length, TokenSource::pair};
}

template <typename T>
nn::Tensor<T> scaled_dot_product_attention(const nn::Tensor<T>& q, const nn::Tensor<T>& k,
                                           const nn::Tensor<T>& v, nn::Tensor<T>* weights) {
  if (q.rank() != 3 || q.shape() != k.shape() || k.shape() != v.shape())
    throw ValidationError("attention expects matching (B, n, d) operands, got " +
                          nn::shape_str(q.shape()) + ", " + nn::shape_str(k.shape()) + ", " +
                          nn::shape_str(v.shape()));
  const T inv_sqrt_d = T(1) / std::sqrt(T(q.dim(2)));
  auto attn = nn::softmax(nn::scale(nn::bmm(q, k, true), inv_sqrt_d));
  if (weights) *weights = attn;
  return nn::bmm(attn, v, false);
}

template <typename T>
EncoderBlock<T>::EncoderBlock(std::size_t d, std::size_t heads, std::size_t ffn_hidden,
                              nn::Rng& rng)
    : norm_attention(d),
      norm_ffn(d),
      query(d, d, rng),
      key(d, d, rng),
      value(d, d, rng),
      projection(d, d, rng),
      ffn_in(d, ffn_hidden, rng),
      ffn_out(ffn_hidden, d, rng),
      d_(d),
      heads_(heads) {
  if (heads == 0 || d % heads != 0)
    throw ValidationError("token dimension " + std::to_string(d) + " is not divisible by " +
                          std::to_string(heads) + " attention heads");
}

template <typename T>
nn::Tensor<T> EncoderBlock<T>::split_heads(const nn::Tensor<T>& x) const {
  const std::size_t n = x.dim(0), len = x.dim(1), dh = d_ / heads_;
  auto h = nn::permute(nn::reshape(x, {n, len, heads_, dh}), {0, 2, 1, 3});
  return nn::reshape(h, {n * heads_, len, dh});
}

template <typename T>
nn::Tensor<T> EncoderBlock<T>::merge_heads(const nn::Tensor<T>& x, std::size_t batch) const {
  const std::size_t len = x.dim(1), dh = x.dim(2);
  auto h = nn::permute(nn::reshape(x, {batch, heads_, len, dh}), {0, 2, 1, 3});
  return nn::reshape(h, {batch, len, d_});
}

template <typename T>
nn::Tensor<T> EncoderBlock<T>::attend(const nn::Tensor<T>& normed, nn::Tensor<T>* weights) const {
  auto q = split_heads(query(normed));
  auto k = split_heads(key(normed));
  auto v = split_heads(value(normed));
  auto mixed = scaled_dot_product_attention(q, k, v, weights);
  return projection(merge_heads(mixed, normed.dim(0)));
}

template <typename T>
nn::Tensor<T> EncoderBlock<T>::operator()(const nn::Tensor<T>& tokens) const {
  if (tokens.rank() != 3 || tokens.dim(2) != d_)
    throw ValidationError("encoder block expects (N, n, " + std::to_string(d_) + ") tokens, got " +
                          nn::shape_str(tokens.shape()));
  auto t = nn::add(tokens, attend(norm_attention(tokens), nullptr));
  return nn::add(t, ffn_out(nn::relu(ffn_in(norm_ffn(t)))));
}

template <typename T>
nn::Tensor<T> EncoderBlock<T>::attention_weights(const nn::Tensor<T>& tokens) const {
  nn::Tensor<T> weights;
  (void)attend(norm_attention(tokens), &weights);
  return weights;
}

template <typename T>
void EncoderBlock<T>::collect(const std::string& prefix, nn::StateRefs<T>& out) {
  norm_attention.collect(prefix + ".norm_attention", out);
  query.collect(prefix + ".query", out);
  key.collect(prefix + ".key", out);
  value.collect(prefix + ".value", out);
  projection.collect(prefix + ".projection", out);
  norm_ffn.collect(prefix + ".norm_ffn", out);
  ffn_in.collect(prefix + ".ffn_in", out);
  ffn_out.collect(prefix + ".ffn_out", out);
}

template TokenSequence<float> tokenize(const nn::Tensor<float>&, TokenSource);
template TokenSequence<double> tokenize(const nn::Tensor<double>&, TokenSource);
template TokenSequence<float> tokenize_pair(const nn::Tensor<float>&, const nn::Tensor<float>&);
template TokenSequence<double> tokenize_pair(const nn::Tensor<double>&,
                                             const nn::Tensor<double>&);
template nn::Tensor<float> scaled_dot_product_attention(const nn::Tensor<float>&,
                                                        const nn::Tensor<float>&,
                                                        const nn::Tensor<float>&,
                                                        nn::Tensor<float>*);
template nn::Tensor<double> scaled_dot_product_attention(const nn::Tensor<double>&,
                                                         const nn::Tensor<double>&,
                                                         const nn::Tensor<double>&,
                                                         nn::Tensor<double>*);
template class EncoderBlock<float>;
template class EncoderBlock<double>;

}  // namespace drl::model
