#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "vmt/models/grad_checks.hpp"

using namespace vmt;
using namespace vmt::nn;

namespace {

Tensor<double> random_matrix(std::size_t r, std::size_t c, Rng& rng) { return vmt::detail::random_tensor({r, c}, rng); }

void fill(Tensor<double> t, double v) {
  for (auto& x : t.mutable_data()) x = v;
}

}  // namespace

TEST(Gru, ZeroWeightsGiveHalfState) {
  ParamStore<double> s;
  Rng rng(1);
  auto cell = GruCell<double>::create(s, "g", 3, 4, rng);
  for (const auto& e : s.entries()) fill(e.second, 0.0);
  auto h = cell(Tensor<double>::full({1, 3}, 0.7), Tensor<double>::full({1, 4}, 1.0));
  for (double v : h.data()) EXPECT_DOUBLE_EQ(v, 0.5);
}

TEST(Gru, SaturatedUpdateGateKeepsState) {
  ParamStore<double> s;
  Rng rng(2);
  auto cell = GruCell<double>::create(s, "g", 3, 4, rng);
  fill(cell.b_iz, 50.0);
  fill(cell.b_hz, 50.0);
  auto h0 = random_matrix(2, 4, rng);
  auto h = cell(random_matrix(2, 3, rng), h0);
  for (std::size_t i = 0; i < h.size(); ++i) EXPECT_NEAR(h.data()[i], h0.data()[i], 1e-12);
}

TEST(Gru, ShapeMismatchThrows) {
  ParamStore<double> s;
  Rng rng(3);
  auto cell = GruCell<double>::create(s, "g", 3, 4, rng);
  EXPECT_THROW(cell(Tensor<double>::zeros({1, 4}), Tensor<double>::zeros({1, 4})), ShapeError);
}

TEST(Attention, SinglePositionReturnsValue) {
  Rng rng(4);
  auto q = random_matrix(1, 4, rng), k = random_matrix(1, 4, rng), v = random_matrix(1, 3, rng);
  auto out = scaled_dot_attention(q, k, v, false);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(out.data()[i], v.data()[i], 1e-12);
}

TEST(Attention, IdenticalKeysAverageValues) {
  Rng rng(5);
  auto q = random_matrix(2, 4, rng);
  auto row = random_matrix(1, 4, rng);
  auto k = concat<double>({row, row, row, row, row}, 0);
  auto v = random_matrix(5, 3, rng);
  auto out = scaled_dot_attention(q, k, v, false);
  for (std::size_t r = 0; r < 2; ++r) {
    for (std::size_t c = 0; c < 3; ++c) {
      double mean = 0;
      for (std::size_t i = 0; i < 5; ++i) mean += v.data()[i * 3 + c] / 5;
      EXPECT_NEAR(out.data()[r * 3 + c], mean, 1e-12);
    }
  }
}

TEST(Attention, WeightRowsSumToOneAndMaskedAreZero) {
  Rng rng(6);
  for (bool causal : {false, true}) {
    Tensor<double> w;
    scaled_dot_attention(random_matrix(6, 4, rng), random_matrix(6, 4, rng), random_matrix(6, 4, rng), causal, {}, &w);
    for (std::size_t r = 0; r < 6; ++r) {
      double total = 0;
      for (std::size_t c = 0; c < 6; ++c) {
        const double x = w.data()[r * 6 + c];
        if (causal && c > r) EXPECT_EQ(x, 0.0);
        total += x;
      }
      EXPECT_NEAR(total, 1.0, 1e-6);
    }
  }
}

TEST(Attention, CausalOutputIgnoresLaterPositions) {
  Rng rng(7);
  ParamStore<double> s;
  auto mha = MultiHeadAttention<double>::create(s, "a", 8, 2, rng);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t n = 6;
    auto x = random_matrix(n, 8, rng);
    const std::size_t t = rng.below(n);
    auto y = x.clone();
    for (std::size_t r = t + 1; r < n; ++r) {
      for (std::size_t c = 0; c < 8; ++c) y.mutable_data()[r * 8 + c] = rng.uniform(-3, 3);
    }
    auto a = mha.self_attention(x, true, {});
    auto b = mha.self_attention(y, true, {});
    for (std::size_t r = 0; r <= t; ++r) {
      for (std::size_t c = 0; c < 8; ++c) EXPECT_NEAR(a.data()[r * 8 + c], b.data()[r * 8 + c], 1e-6);
    }
  }
}

TEST(Attention, HeadsMustDivideWidth) {
  ParamStore<double> s;
  Rng rng(8);
  EXPECT_THROW(MultiHeadAttention<double>::create(s, "a", 10, 4, rng), ShapeError);
  auto q = random_matrix(3, 4, rng);
  EXPECT_THROW(scaled_dot_attention(q, random_matrix(3, 4, rng), random_matrix(2, 4, rng), false), ShapeError);
}

TEST(Attention, BothCrossModesShapeLikeDecoder) {
  ParamStore<double> s;
  Rng rng(9);
  auto mha = MultiHeadAttention<double>::create(s, "a", 8, 2, rng);
  auto dec = random_matrix(5, 8, rng), enc = random_matrix(7, 8, rng);
  EXPECT_EQ(mha.cross_attention(dec, enc, CrossAttentionMode::Standard, {}).shape(), (Shape{5, 8}));
  EXPECT_EQ(mha.cross_attention(dec, enc, CrossAttentionMode::PaperLiteral, {}).shape(), (Shape{5, 8}));
}

TEST(FeedForward, ZeroParamsGiveZero) {
  ParamStore<double> s;
  Rng rng(10);
  auto ffn = FeedForward<double>::create(s, "f", 4, 8, rng);
  for (const auto& e : s.entries()) fill(e.second, 0.0);
  const auto out = ffn(random_matrix(3, 4, rng));
  for (double v : out.data()) EXPECT_EQ(v, 0.0);
}

TEST(FeedForward, DeadHiddenLayerGivesBias) {
  ParamStore<double> s;
  Rng rng(11);
  auto ffn = FeedForward<double>::create(s, "f", 4, 8, rng);
  fill(ffn.b1, -100.0);
  for (std::size_t i = 0; i < 4; ++i) ffn.b2.mutable_data()[i] = 0.25 * static_cast<double>(i);
  auto out = ffn(random_matrix(3, 4, rng));
  for (std::size_t r = 0; r < 3; ++r) {
    for (std::size_t c = 0; c < 4; ++c) EXPECT_DOUBLE_EQ(out.data()[r * 4 + c], 0.25 * static_cast<double>(c));
  }
  EXPECT_THROW(ffn(random_matrix(3, 5, rng)), ShapeError);
}

TEST(Embedding, LookupIsColumn) {
  ParamStore<double> s;
  Rng rng(12);
  auto emb = Embedding<double>::create(s, "e", 6, codec::kVocabSize, rng);
  EXPECT_EQ(emb.table.shape(), (Shape{6, codec::kVocabSize}));
  const codec::TokenId ids[] = {17, 309, 17};
  auto rows = emb(ids);
  for (std::size_t k = 0; k < 3; ++k) {
    for (std::size_t h = 0; h < 6; ++h) EXPECT_EQ(rows.data()[k * 6 + h], emb.table.data()[h * codec::kVocabSize + ids[k]]);
  }
  const codec::TokenId bad[] = {310};
  EXPECT_THROW(emb(bad), ShapeError);
}

TEST(PositionalEncoding, KnownValues) {
  auto pe = positional_encoding<double>(50, 16);
  for (std::size_t i = 0; i < 8; ++i) {
    EXPECT_EQ(pe.data()[2 * i], 0.0);
    EXPECT_EQ(pe.data()[2 * i + 1], 1.0);
  }
  EXPECT_NEAR(pe.data()[16], std::sin(1.0), 1e-15);
  EXPECT_NEAR(pe.data()[16], 0.84147, 1e-5);
  for (double v : pe.data()) EXPECT_LE(std::abs(v), 1.0);
  EXPECT_THROW(positional_encoding<double>(4, 7), ShapeError);
}

TEST(ConvEncoder, PaperPlanAndShape) {
  EXPECT_EQ(conv_channel_plan(), (std::vector<std::size_t>{64, 128, 512}));
  ParamStore<float> s;
  Rng rng(13);
  ConvFrameEncoder<float> enc(s, "c", conv_channel_plan(), rng);
  NoGradGuard g;
  auto out = enc(Tensor<float>::full({40, 3, 128, 128}, 0.3f));
  EXPECT_EQ(out.shape(), (Shape{40, 512}));
  for (std::size_t f = 1; f < 40; ++f) {
    for (std::size_t c = 0; c < 512; ++c) EXPECT_EQ(out.data()[f * 512 + c], out.data()[c]);
  }
}

TEST(ConvEncoder, FramesAreIndependent) {
  ParamStore<double> s;
  Rng rng(14);
  ConvFrameEncoder<double> enc(s, "c", {4, 8, 16}, rng);
  auto x = vmt::detail::random_tensor({5, 3, 32, 32}, rng);
  const std::vector<std::size_t> perm{3, 0, 4, 1, 2};
  std::vector<Tensor<double>> frames;
  for (std::size_t p : perm) frames.push_back(slice(x, 0, p, p + 1));
  auto a = enc(x), b = enc(concat(frames, 0));
  for (std::size_t i = 0; i < perm.size(); ++i) {
    for (std::size_t c = 0; c < 16; ++c) EXPECT_NEAR(b.data()[i * 16 + c], a.data()[perm[i] * 16 + c], 1e-12);
  }
  EXPECT_THROW(enc(Tensor<double>::zeros({2, 4, 32, 32})), ShapeError);
}

TEST(GradCheck, EveryLayerMatchesFiniteDifferences) {
  for (const auto& r : models::layer_gradient_checks(21)) EXPECT_TRUE(r.passed) << r.name << " " << r.max_rel_error << " " << r.worst;
}

TEST(GradCheck, OneSidedFallbackSeesPastNearbyKink) {
  // |x - 1e-7| at x = 0: every central step straddles the kink, the
  // one-sided difference from the left does not.
  auto f = [](const std::vector<Tensor<double>>& in) { return sum(relu(scale(add_scalar(in[0], -1e-7), -1.0)) + relu(add_scalar(in[0], -1e-7))); };
  GradCheckOptions o;
  o.step = 1e-5;
  o.retry_steps = {1e-6};
  EXPECT_FALSE(gradcheck("abs", {Tensor<double>::zeros({1})}, f, o).passed);
  o.one_sided = true;
  EXPECT_TRUE(gradcheck("abs", {Tensor<double>::zeros({1})}, f, o).passed);
}
