#include <gtest/gtest.h>

#include <cmath>

#include "expose/adapter.hpp"
#include "expose/errors.hpp"
#include "expose/model.hpp"
#include "test_util.hpp"

namespace expose {
namespace {

using testing::random_matrix;
using testing::tiny_config;

MatrixD vanilla_attention(const MatrixD& q, const MatrixD& k, const MatrixD& v, int heads) {
  const Eigen::Index len = q.rows(), dh = q.cols() / heads;
  MatrixD out(len, q.cols());
  for (int h = 0; h < heads; ++h) {
    for (Eigen::Index i = 0; i < len; ++i) {
      std::vector<double> w(len);
      double mx = -1e300, sum = 0.0;
      for (Eigen::Index j = 0; j < len; ++j) {
        w[j] = q.row(i).segment(h * dh, dh).dot(k.row(j).segment(h * dh, dh)) / std::sqrt(double(dh));
        mx = std::max(mx, w[j]);
      }
      for (auto& x : w) sum += (x = std::exp(x - mx));
      for (Eigen::Index c = 0; c < dh; ++c) {
        double acc = 0.0;
        for (Eigen::Index j = 0; j < len; ++j) acc += w[j] / sum * v(j, h * dh + c);
        out(i, h * dh + c) = acc;
      }
    }
  }
  return out;
}

TEST(AdapterCount, KnownValues) {
  EXPECT_EQ(count_adapter_params(512, 8), 528384);
  EXPECT_EQ(count_adapter_params(1, 1), 3);
  EXPECT_EQ(count_adapter_params(64, 8), 8704);
  EXPECT_EQ(count_adapter_params(0, 0), 0);
}

TEST(AdapterInit, DeterministicAndCounted) {
  ModelConfig c = tiny_config(3, 8);
  c.adapter_tokens = 5;
  Rng r1(42), r2(42);
  const AdapterParams a = init_adapter(c, r1);
  const AdapterParams b = init_adapter(c, r2);
  EXPECT_EQ(a.tokens, b.tokens);
  EXPECT_EQ(a.key_proj, b.key_proj);
  EXPECT_EQ(a.value_proj, b.value_proj);
  EXPECT_EQ(a.parameter_count(), count_adapter_params(8, 5));
  EXPECT_TRUE(a.value_proj.isZero(0.0f));
  EXPECT_FALSE(a.key_proj.isZero(0.0f));
  EXPECT_LT(a.tokens.cwiseAbs().maxCoeff(), 0.2f);
}

TEST(AdaptedAttention, EmptyAdapterIsVanilla) {
  Rng rng(1);
  for (int heads : {1, 2, 4}) {
    const MatrixD q = random_matrix<double>(5, 8, rng), k = random_matrix<double>(5, 8, rng),
                  v = random_matrix<double>(5, 8, rng);
    const MatrixD empty(0, 8);
    MatrixD out(5, 8), probs(heads * 5, 5);
    extended_attention<double>(q, k, v, empty, empty, heads, out, probs);
    EXPECT_LT((out - vanilla_attention(q, k, v, heads)).cwiseAbs().maxCoeff(), 1e-12) << heads;

    const AdapterParams none = AdapterParams::zeros(0, 8);
    const MatrixF outf = adapted_attention(q.cast<float>(), k.cast<float>(), v.cast<float>(), none, heads);
    EXPECT_LT((outf.cast<double>() - out).cwiseAbs().maxCoeff(), 1e-5);
  }
}

TEST(AdaptedAttention, WeightsSumToOne) {
  Rng rng(2);
  AdapterParams a = AdapterParams::zeros(3, 8);
  testing::randomize(a, rng, 1.0);
  const MatrixF q = random_matrix<float>(6, 8, rng, 3.0), k = random_matrix<float>(6, 8, rng, 3.0),
                v = random_matrix<float>(6, 8, rng);
  MatrixF probs;
  adapted_attention(q, k, v, a, 2, &probs);
  ASSERT_EQ(probs.rows(), 12);
  ASSERT_EQ(probs.cols(), 9);
  EXPECT_TRUE((probs.array() >= 0.0f).all());
  for (Eigen::Index r = 0; r < probs.rows(); ++r) EXPECT_NEAR(probs.row(r).sum(), 1.0f, 1e-6f);
}

TEST(AdaptedAttention, HandComputedSingleToken) {
  AdapterParams a = AdapterParams::zeros(1, 2);
  a.tokens << 1.0f, 2.0f;
  a.key_proj << 0.5f, 0.0f, 0.0f, 1.0f;
  a.value_proj << 1.0f, 1.0f, 0.0f, -1.0f;
  MatrixF q(1, 2), k(1, 2), v(1, 2);
  q << 1.0f, -0.5f;
  k << 2.0f, -1.0f;
  v << 4.0f, 1.0f;
  MatrixF probs;
  const MatrixF out = adapted_attention(q, k, v, a, 1, &probs);
  // extra key (0.5, 2), extra value (3, -2); logits 2.5/sqrt2 and -0.5/sqrt2
  EXPECT_NEAR(probs(0, 0), 0.89295819853482961, 1e-6);
  EXPECT_NEAR(probs(0, 1), 0.10704180146517044, 1e-6);
  EXPECT_NEAR(out(0, 0), 3.8929581985348296, 1e-5);
  EXPECT_NEAR(out(0, 1), 0.67887459560448871, 1e-5);
}

TEST(AdaptedAttention, RejectsWidthMismatch) {
  const AdapterParams a = AdapterParams::zeros(2, 4);
  const MatrixF q = MatrixF::Zero(3, 6);
  EXPECT_THROW(adapted_attention(q, q, q, a, 1), ShapeError);
  EXPECT_THROW(adapted_attention(q, q, q, AdapterParams::zeros(0, 6), 4), ShapeError);
}

TEST(AdaptedAttention, ZeroValueProjectionIsConvexShrink) {
  // W_v = 0: output is the vanilla output scaled by the mass left on the real keys.
  Rng rng(3);
  AdapterParams a = AdapterParams::zeros(4, 6);
  testing::randomize(a, rng, 1.0);
  a.value_proj.setZero();
  const MatrixF q = random_matrix<float>(5, 6, rng), k = random_matrix<float>(5, 6, rng),
                v = random_matrix<float>(5, 6, rng);
  MatrixF probs;
  const MatrixF out = adapted_attention(q, k, v, a, 1, &probs);
  const MatrixD plain = vanilla_attention(q.cast<double>(), k.cast<double>(), v.cast<double>(), 1);
  for (Eigen::Index i = 0; i < 5; ++i) {
    const double kept = probs.row(i).head(5).cast<double>().sum();
    EXPECT_LT(kept, 1.0);
    EXPECT_LT((out.row(i).cast<double>() - kept * plain.row(i)).cwiseAbs().maxCoeff(), 1e-5);
  }
}

TEST(AdapterDenoise, ZeroProjectionsMatchNoAdapter) {
  ModelConfig c = tiny_config(6, 8, 2, 2);
  Rng rng(4);
  BaseModelParams base = init_base_params(c, rng);
  testing::randomize(base, rng, 0.2);
  base.uncond_identity.setZero();
  AdapterParams a = init_adapter(c, rng);
  a.key_proj.setZero();
  ExpressionSequence z{random_matrix<float>(6, 53, rng), 25.0};
  AudioFeatures au{random_matrix<float>(6, 3, rng)};
  const MatrixF with = denoise(c, z, 300, au, base, &a);
  const MatrixF without = denoise(c, z, 300, au, base, nullptr);
  EXPECT_EQ(with, without);

  // a fresh adapter only moves softmax mass toward zero values
  const AdapterParams fresh = init_adapter(c, rng);
  EXPECT_LT((denoise(c, z, 300, au, base, &fresh) - without).cwiseAbs().maxCoeff(), 0.5f);
}

TEST(AdapterDenoise, OneInstanceDrivesEveryLayer) {
  ModelConfig c = tiny_config(5, 8, 3, 2);
  Rng rng(5);
  BaseModelParams base = init_base_params(c, rng);
  testing::randomize(base, rng, 0.2);
  AdapterParams a = AdapterParams::zeros(c.adapter_tokens, 8);
  testing::randomize(a, rng, 0.5);
  DenoiseBatch<float> batch{random_matrix<float>(5, 53, rng), random_matrix<float>(5, 3, rng), {10}, {1}, {1}};
  ForwardCache<float> before, after;
  denoise_forward(c, base, &a, batch, before);
  a.key_proj *= 3.0f;
  denoise_forward(c, base, &a, batch, after);
  for (int l = 0; l < c.num_layers; ++l) {
    const auto ext_before = before.layers[l].probs.rightCols(c.adapter_tokens);
    const auto ext_after = after.layers[l].probs.rightCols(c.adapter_tokens);
    EXPECT_GT((ext_before - ext_after).cwiseAbs().maxCoeff(), 1e-4f) << "layer " << l;
  }
}

}  // namespace
}  // namespace expose
