// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <random>

#include "doctest.h"
#include "drl/error.hpp"
#include "drl/model/pair_model.hpp"
#include "drl/numerics/ops.hpp"

using namespace drl;
using namespace drl::model;
using TD = nn::Tensor<double>;

namespace {

TD random_tensor(nn::Shape shape, std::uint64_t seed, double lo = -1, double hi = 1) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> d(lo, hi);
  std::vector<double> v(nn::numel(shape));
  for (auto& x : v) x = d(rng);
  return TD::from(std::move(shape), std::move(v));
}

ModelConfig small_config() {
  ModelConfig c;
  c.backbone.channel_plan = {4, 4, 8, 8, 8, 16};
  c.head.num_heads = 4;
  c.head.num_blocks = 1;
  return c;
}

}  // namespace

TEST_CASE("SFCN layout") {
  BackboneConfig cfg;
  CHECK(cfg.channel_plan == std::vector<std::size_t>{32, 64, 128, 256, 256, 64});
  auto layers = trace_backbone(cfg, {2, 32, 32});
  std::vector<std::string> convs;
  for (const auto& l : layers)
    if (l.name.find(".conv") != std::string::npos) convs.push_back(l.kind);
  REQUIRE(convs.size() == 6);
  for (int b = 0; b < 5; ++b) CHECK(convs[b] == "conv2d_k3");
  CHECK(convs[5] == "conv2d_k1");
  // Five pools: blocks 1-5 pool, block 6 does not.
  std::size_t pools = 0;
  for (const auto& l : layers) pools += l.kind == "max_pool";
  CHECK(pools == 5);
  CHECK(layers.back().output == nn::Shape{64, 1, 1});

  cfg.channel_plan = {32, 64, 128};
  CHECK_THROWS_AS(cfg.validate(), ValidationError);
}

TEST_CASE("paper geometry propagates to 64x40 tokens per image") {
  BackboneConfig cfg;
  cfg.spatial_dims = 3;
  auto f = feature_shape(cfg, {2, 80, 130, 170});
  CHECK(f == nn::Shape{64, 2, 4, 5});
  CHECK(nn::numel(f) / f[0] == 40);

  cfg.variant = BackboneVariant::mSFCN;
  auto m = feature_shape(cfg, {2, 80, 130, 170});
  CHECK(m == nn::Shape{64, 1, 2, 2});
}

TEST_CASE("mSFCN halves SFCN's output extents") {
  std::mt19937_64 rng(4);
  std::uniform_int_distribution<std::size_t> ext(64, 300);
  for (int i = 0; i < 50; ++i) {
    BackboneConfig cfg;
    cfg.spatial_dims = 3;
    const nn::Shape in{2, ext(rng), ext(rng), ext(rng)};
    auto s = feature_shape(cfg, in);
    cfg.variant = BackboneVariant::mSFCN;
    auto m = feature_shape(cfg, in);
    // floor(floor(n/2^5)/2) == floor(n/2^6)
    for (std::size_t a = 1; a < 4; ++a) CHECK(m[a] == in[a] / 64);
    for (std::size_t a = 1; a < 4; ++a) CHECK(s[a] == in[a] / 32);
  }
}

TEST_CASE("desk geometry and collapse diagnostics") {
  BackboneConfig cfg;
  CHECK(feature_shape(cfg, {2, 32, 32}) == nn::Shape{64, 1, 1});
  cfg.channel_plan.back() = 24;
  CHECK(feature_shape(cfg, {2, 48, 40})[0] == 24);
  try {
    (void)feature_shape(cfg, {2, 16, 32});
    FAIL("expected a collapse error");
  } catch (const ValidationError& e) {
    CHECK(std::string(e.what()).find("larger input") != std::string::npos);
  }
  CHECK_THROWS_AS(feature_shape(cfg, {3, 32, 32}), ValidationError);
}

TEST_CASE("shared backbone has half the parameters of independent ones") {
  auto c = small_config();
  PairModel<float> shared(c, 1);
  c.backbone.sharing = Sharing::independent;
  PairModel<float> independent(c, 1);
  CHECK(shared.backbone_count() == 1);
  CHECK(independent.backbone_count() == 2);
  CHECK(2 * shared.backbone_parameter_count() == independent.backbone_parameter_count());
  CHECK(shared.parameter_count() - shared.backbone_parameter_count() ==
        independent.parameter_count() - independent.backbone_parameter_count());
}

TEST_CASE("shared backbone serves both slots identically") {
  PairModel<double> net(small_config(), 3);
  auto x = random_tensor({3, 2, 32, 32}, 9, 0, 1);
  auto f0 = net.extract_features(x, 0, false);
  auto f1 = net.extract_features(x, 1, false);
  for (std::size_t i = 0; i < f0.numel(); ++i) CHECK(f0.values()[i] == f1.values()[i]);
  CHECK_THROWS_AS(net.backbone(2), ValidationError);
}

TEST_CASE("pair tokenization") {
  auto fx = random_tensor({2, 64, 2, 4, 5}, 1);
  auto fy = random_tensor({2, 64, 2, 4, 5}, 2);
  auto tx = tokenize(fx, TokenSource::x);
  CHECK(tx.d == 64);
  CHECK(tx.length == 40);
  auto pair = tokenize_pair(fx, fy);
  CHECK(pair.length == 80);
  CHECK(pair.tokens.shape() == nn::Shape{2, 80, 64});

  // Token l of image n is the channel vector at flattened spatial position l.
  const std::size_t L = 40;
  for (std::size_t n = 0; n < 2; ++n)
    for (std::size_t l = 0; l < L; l += 7)
      for (std::size_t c = 0; c < 64; c += 5) {
        CHECK(pair.tokens.values()[(n * 80 + l) * 64 + c] == fx.values()[(n * 64 + c) * L + l]);
        CHECK(pair.tokens.values()[(n * 80 + L + l) * 64 + c] == fy.values()[(n * 64 + c) * L + l]);
      }

  SUBCASE("identical inputs repeat the halves") {
    auto same = tokenize_pair(fx, fx);
    for (std::size_t n = 0; n < 2; ++n)
      for (std::size_t i = 0; i < L * 64; ++i)
        CHECK(same.tokens.values()[n * 80 * 64 + i] == same.tokens.values()[n * 80 * 64 + L * 64 + i]);
  }
  SUBCASE("swapping the inputs swaps the halves") {
    auto swapped = tokenize_pair(fy, fx);
    for (std::size_t n = 0; n < 2; ++n)
      for (std::size_t i = 0; i < L * 64; ++i) {
        CHECK(swapped.tokens.values()[n * 80 * 64 + i] == pair.tokens.values()[n * 80 * 64 + L * 64 + i]);
        CHECK(swapped.tokens.values()[n * 80 * 64 + L * 64 + i] == pair.tokens.values()[n * 80 * 64 + i]);
      }
  }
  CHECK_THROWS_AS(tokenize_pair(fx, random_tensor({2, 64, 2, 4, 4}, 3)), ValidationError);
}

TEST_CASE("scaled dot-product attention") {
  SUBCASE("one token returns V") {
    auto q = random_tensor({1, 1, 4}, 1), k = random_tensor({1, 1, 4}, 2),
         v = random_tensor({1, 1, 4}, 3);
    auto out = scaled_dot_product_attention(q, k, v);
    for (std::size_t i = 0; i < 4; ++i) CHECK(out.values()[i] == doctest::Approx(v.values()[i]));
  }
  SUBCASE("equal scores average V") {
    auto k = TD::from({1, 3, 2}, {0, 1, 0, -2, 0, 5});
    auto v = TD::from({1, 3, 2}, {1, 2, 3, 4, 5, 9});
    // q has a zero second coordinate, k a zero first one: every score is 0.
    auto q3 = TD::from({1, 3, 2}, {1, 0, 1, 0, 1, 0});
    auto out = scaled_dot_product_attention(q3, k, v);
    for (std::size_t r = 0; r < 3; ++r) {
      CHECK(out.values()[r * 2] == doctest::Approx(3.0));
      CHECK(out.values()[r * 2 + 1] == doctest::Approx(5.0));
    }
  }
  SUBCASE("two tokens by hand") {
    // d = 2, scale 1/sqrt(2). q0 = (1,0), q1 = (0,1); k0 = (1,1), k1 = (2,0).
    auto q = TD::from({1, 2, 2}, {1, 0, 0, 1});
    auto k = TD::from({1, 2, 2}, {1, 1, 2, 0});
    auto v = TD::from({1, 2, 2}, {1, 0, 0, 1});
    TD w;
    auto out = scaled_dot_product_attention(q, k, v, &w);
    const double s = 1 / std::sqrt(2.0);
    // row 0 scores (1, 2)s; row 1 scores (1, 0)s
    const double a0 = std::exp(s) / (std::exp(s) + std::exp(2 * s));
    const double a1 = std::exp(s) / (std::exp(s) + 1.0);
    CHECK(w.values()[0] == doctest::Approx(a0).epsilon(1e-14));
    CHECK(w.values()[2] == doctest::Approx(a1).epsilon(1e-14));
    CHECK(out.values()[0] == doctest::Approx(a0).epsilon(1e-14));
    CHECK(out.values()[1] == doctest::Approx(1 - a0).epsilon(1e-14));
    CHECK(out.values()[2] == doctest::Approx(a1).epsilon(1e-14));
    CHECK(out.values()[3] == doctest::Approx(1 - a1).epsilon(1e-14));
  }
  CHECK_THROWS_AS(scaled_dot_product_attention(random_tensor({1, 2, 3}, 1), random_tensor({1, 2, 4}, 2),
                                               random_tensor({1, 2, 4}, 3)),
                  ValidationError);
}

TEST_CASE("encoder block") {
  nn::Rng rng(5);
  EncoderBlock<double> block(64, 8, 256, rng);
  auto t = random_tensor({2, 80, 64}, 7);
  CHECK(block(t).shape() == t.shape());

  auto w = block.attention_weights(t);
  REQUIRE(w.shape() == nn::Shape{16, 80, 80});
  for (std::size_t r = 0; r < 16 * 80; ++r) {
    double s = 0;
    for (std::size_t c = 0; c < 80; ++c) s += w.values()[r * 80 + c];
    CHECK(std::abs(s - 1.0) < 1e-12);
  }

  // Zeroed output projections leave only the residual paths.
  for (auto& v : block.projection.weight.values()) v = 0;
  for (auto& v : block.projection.bias.values()) v = 0;
  for (auto& v : block.ffn_out.weight.values()) v = 0;
  for (auto& v : block.ffn_out.bias.values()) v = 0;
  auto out = block(t);
  for (std::size_t i = 0; i < t.numel(); ++i) CHECK(out.values()[i] == t.values()[i]);

  nn::Rng rng2(1);
  CHECK_THROWS_AS(EncoderBlock<double>(64, 6, 256, rng2), ValidationError);

  std::mt19937_64 pick(3);
  for (int i = 0; i < 10; ++i) {
    const std::size_t heads = std::size_t(1) << (pick() % 4), d = heads * (1 + pick() % 4);
    const std::size_t n = 1 + pick() % 6;
    EncoderBlock<double> b(d, heads, 2 * d, rng2);
    CHECK(b(random_tensor({2, n, d}, i)).shape() == nn::Shape{2, n, d});
  }
}

TEST_CASE("relation heads read tokens 0..K-1") {
  HeadConfig h;
  h.num_heads = 2;
  h.num_blocks = 1;
  h.token_selection = TokenSelection::sequence;
  nn::Rng rng(3);
  TransformerHead<double> head(8, 2, h, rng);  // 2L = 4 tokens
  CHECK_FALSE(head.uses_relation_tokens());
  auto fx = random_tensor({3, 8, 1, 2}, 1), fy = random_tensor({3, 8, 1, 2}, 2);
  CHECK(head(fx, fy).shape() == nn::Shape{3, 4});

  for (auto& v : head.head_weight.values()) v = 0;
  const std::vector<double> b{1.5, -2, 3, 0.25};
  std::copy(b.begin(), b.end(), head.head_bias.values().begin());
  auto out = head(fx, fy);
  for (std::size_t n = 0; n < 3; ++n)
    for (std::size_t k = 0; k < 4; ++k) CHECK(out.values()[n * 4 + k] == b[k]);

  SUBCASE("relation i is an affine map of token i") {
    nn::Rng r2(4);
    TransformerHead<double> h2(8, 2, h, r2);
    auto seq = h2.encoder_input(fx, fy);
    for (const auto& blk : h2.blocks) seq = blk(seq);
    seq = h2.final_norm(seq);
    auto rel = h2(fx, fy);
    for (std::size_t n = 0; n < 3; ++n)
      for (std::size_t k = 0; k < 4; ++k) {
        double expect = h2.head_bias.values()[k];
        for (std::size_t c = 0; c < 8; ++c)
          expect += h2.head_weight.values()[k * 8 + c] * seq.values()[(n * 4 + k) * 8 + c];
        CHECK(rel.values()[n * 4 + k] == doctest::Approx(expect).epsilon(1e-12));
      }
  }
}

TEST_CASE("token selection") {
  HeadConfig h;
  h.num_heads = 2;
  h.num_blocks = 1;
  nn::Rng rng(1);
  // Desk geometry: one token per image, 2L = 2 < K = 4.
  TransformerHead<double> automatic(8, 1, h, rng);
  CHECK(automatic.uses_relation_tokens());
  CHECK(automatic.encoder_input(random_tensor({2, 8, 1, 1}, 1), random_tensor({2, 8, 1, 1}, 2))
            .shape() == nn::Shape{2, 6, 8});
  h.token_selection = TokenSelection::sequence;
  CHECK_THROWS_AS(TransformerHead<double>(8, 1, h, rng), ValidationError);
  h.relation_subset = {relations::Relation::r3};
  TransformerHead<double> single(8, 1, h, rng);
  CHECK_FALSE(single.uses_relation_tokens());
  CHECK(single(random_tensor({2, 8, 1, 1}, 1), random_tensor({2, 8, 1, 1}, 2)).shape() ==
        nn::Shape{2, 1});
}

TEST_CASE("FC head") {
  HeadConfig h;
  h.variant = HeadVariant::FCs;
  nn::Rng rng(2);
  FcHead<double> head(2 * 16, h, rng);
  CHECK(head.hidden1.weight.shape() == nn::Shape{64, 32});
  CHECK(head.hidden2.weight.shape() == nn::Shape{64, 64});
  CHECK(head.output.weight.shape() == nn::Shape{4, 64});

  auto zero = TD::zeros({1, 16, 1, 1});
  auto out = head(zero, zero);
  REQUIRE(out.shape() == nn::Shape{1, 4});
  // f(0) = W3 relu(W2 relu(b1) + b2) + b3
  std::vector<double> h1(64), h2(64);
  for (std::size_t i = 0; i < 64; ++i) h1[i] = std::max(0.0, head.hidden1.bias.values()[i]);
  for (std::size_t i = 0; i < 64; ++i) {
    double s = head.hidden2.bias.values()[i];
    for (std::size_t j = 0; j < 64; ++j) s += head.hidden2.weight.values()[i * 64 + j] * h1[j];
    h2[i] = std::max(0.0, s);
  }
  for (std::size_t k = 0; k < 4; ++k) {
    double s = head.output.bias.values()[k];
    for (std::size_t j = 0; j < 64; ++j) s += head.output.weight.values()[k * 64 + j] * h2[j];
    CHECK(out.values()[k] == doctest::Approx(s).epsilon(1e-12));
  }

  auto x = random_tensor({2, 16, 1, 1}, 5);
  auto a = head(x, x), b = head(x, x);
  for (std::size_t i = 0; i < a.numel(); ++i) CHECK(a.values()[i] == b.values()[i]);

  h.relation_subset = {relations::Relation::r1, relations::Relation::r2};
  FcHead<double> pair(32, h, rng);
  CHECK(pair(x, x).shape() == nn::Shape{2, 2});
}

TEST_CASE("pair model outputs and scaling") {
  auto c = small_config();
  c.output_scale = 100;
  PairModel<double> net(c, 11);
  auto x = random_tensor({2, 2, 32, 32}, 1, 0, 1), y = random_tensor({2, 2, 32, 32}, 2, 0, 1);
  auto out = net.forward(x, y, false);
  CHECK(out.shape() == nn::Shape{2, 4});
  auto raw = net.head()(net.extract_features(x, 0, false), net.extract_features(y, 1, false));
  for (std::size_t i = 0; i < out.numel(); ++i)
    CHECK(out.values()[i] == doctest::Approx(100 * raw.values()[i]).epsilon(1e-12));
  CHECK_THROWS_AS(net.forward(x, random_tensor({2, 2, 64, 32}, 3), false), ValidationError);

  c.head.relation_subset = {relations::Relation::r4};
  c.head.variant = HeadVariant::FCs;
  PairModel<double> single(c, 11);
  CHECK(single.forward(x, y, false).shape() == nn::Shape{2, 1});
}

TEST_CASE("every backbone parameter receives gradient") {
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    for (auto sharing : {Sharing::shared, Sharing::independent}) {
      auto c = small_config();
      c.backbone.sharing = sharing;
      PairModel<float> net(c, seed);
      std::mt19937_64 rng(seed);
      std::uniform_real_distribution<float> d(0, 1);
      std::vector<float> xv(4 * 2 * 32 * 32), yv(xv.size());
      for (auto& v : xv) v = d(rng);
      for (auto& v : yv) v = d(rng);
      auto out = net.forward(nn::Tensor<float>::from({4, 2, 32, 32}, xv),
                             nn::Tensor<float>::from({4, 2, 32, 32}, yv), true);
      std::vector<float> w(out.numel());
      for (auto& v : w) v = d(rng) - 0.5f;
      nn::backward(nn::sum(nn::mul(out, nn::Tensor<float>::from(out.shape(), w))));
      for (auto& p : net.state().parameters) {
        INFO(p.name);
        REQUIRE(p.tensor.has_grad());
        if (p.name.find(".conv.bias") != std::string::npos) continue;  // cancelled by batch norm
        double mag = 0;
        for (float g : p.tensor.grad()) mag += std::abs(g);
        CHECK(mag > 0);
      }
    }
  }
}

TEST_CASE("architecture summary") {
  ModelConfig c;
  c.backbone.spatial_dims = 3;
  c.input_extents = {80, 130, 170};
  auto j = describe_pipeline(c);
  CHECK(j["features"] == nlohmann::json::array({64, 2, 4, 5}));
  CHECK(j["tokens"]["per_image"] == 40);
  CHECK(j["tokens"]["pair"] == 80);
  CHECK(j["tokens"]["d"] == 64);

  auto small = small_config();
  PairModel<float> net(small, 2);
  auto s = net.summary();
  CHECK(s["parameters"]["total"].get<std::size_t>() == net.parameter_count());
  CHECK(s["shape_parameters"].get<std::size_t>() == net.parameter_count());
  small.backbone.sharing = Sharing::independent;
  small.head.variant = HeadVariant::FCs;
  PairModel<float> fc(small, 2);
  CHECK(fc.summary()["shape_parameters"].get<std::size_t>() == fc.parameter_count());
}
