#include <gtest/gtest.h>

#include <algorithm>
#include <cstring>
#include <map>

#include "expose/adapter.hpp"
#include "expose/errors.hpp"
#include "expose/scorer.hpp"
#include "expose/trainer.hpp"
#include "test_util.hpp"

using namespace expose;
using expose::testing::persona_clips;
using expose::testing::tiny_config;

namespace {

ModelConfig small_model() {
  ModelConfig m = tiny_config(8, 8, 1, 2);
  m.audio_dim = 4;
  return m;
}

TrainConfig quick_train(int epochs, int batch = 8, double lr = 3e-3) {
  TrainConfig t;
  t.batch_size = batch;
  t.epochs = epochs;
  t.optimizer = OptimizerConfig::adan(lr);
  t.seed = 5;
  return t;
}

Dataset mixed_dataset(int personas, int per_persona, const ModelConfig& m) {
  Dataset d;
  for (int p = 0; p < personas; ++p)
    for (auto& c : persona_clips(p, per_persona, m.length, m.audio_dim)) d.clips.push_back(std::move(c));
  return d;
}

template <class P>
bool bit_identical(const P& a, const P& b) {
  const auto ta = a.tensors();
  const auto tb = b.tensors();
  if (ta.size() != tb.size()) return false;
  for (std::size_t i = 0; i < ta.size(); ++i) {
    if (ta[i].tensor->size() != tb[i].tensor->size()) return false;
    if (std::memcmp(ta[i].tensor->data(), tb[i].tensor->data(), sizeof(float) * ta[i].tensor->size()) != 0)
      return false;
  }
  return true;
}

}  // namespace

TEST(MseLoss, ZeroForExactPredictionAndShapeChecked) {
  Rng rng(1);
  const MatrixF eps = expose::testing::random_matrix<float>(6, 53, rng);
  EXPECT_EQ(mse_loss(eps, eps), 0.0);
  MatrixF off = eps;
  off.array() += 2.0f;
  EXPECT_NEAR(mse_loss(off, eps), 4.0, 1e-6);
  EXPECT_THROW(mse_loss(eps, MatrixF::Zero(5, 53)), ShapeError);
}

TEST(DiffusionBatch, TimestepsInRangeAndShapes) {
  const ModelConfig m = small_model();
  const auto clips = persona_clips(0, 40, m.length, m.audio_dim);
  std::vector<const Clip*> ptrs;
  for (const auto& c : clips) ptrs.push_back(&c);
  const NoiseSchedule s = make_linear_schedule();
  Rng rng(3);
  const DiffusionBatch b = make_diffusion_batch(ptrs, s, 0.25, rng);
  EXPECT_EQ(b.inputs.batch_size(), 40);
  EXPECT_EQ(b.inputs.noisy.rows(), 40 * m.length);
  EXPECT_EQ(b.noise.rows(), b.inputs.noisy.rows());
  EXPECT_EQ(b.inputs.audio.cols(), m.audio_dim);
  for (int t : b.inputs.timesteps) {
    EXPECT_GE(t, 1);
    EXPECT_LE(t, 1000);
  }
  // noisy = sqrt(ab) z + sqrt(1 - ab) eps, clip by clip
  const int t0 = b.inputs.timesteps[0];
  const MatrixF expect = std::sqrt(static_cast<float>(s.alpha_bar(t0))) * clips[0].expression.values +
                         std::sqrt(static_cast<float>(1 - s.alpha_bar(t0))) * b.noise.topRows(m.length);
  EXPECT_LT((expect - b.inputs.noisy.topRows(m.length)).cwiseAbs().maxCoeff(), 1e-5f);

  Rng r0(3);
  const DiffusionBatch none = make_diffusion_batch(ptrs, s, 0.0, r0);
  for (auto f : none.inputs.audio_on) EXPECT_EQ(f, 1);
  for (auto f : none.inputs.identity_on) EXPECT_EQ(f, 1);

  std::vector<const Clip*> empty;
  EXPECT_THROW(make_diffusion_batch(empty, s, 0.25, rng), InputError);
  auto odd = persona_clips(0, 1, m.length + 1, m.audio_dim);
  ptrs.push_back(&odd[0]);
  EXPECT_THROW(make_diffusion_batch(ptrs, s, 0.25, rng), ShapeError);
}

TEST(PretrainStep, NonNegativeLossAndNonFiniteAborts) {
  const ModelConfig m = small_model();
  const auto clips = persona_clips(1, 4, m.length, m.audio_dim);
  std::vector<const Clip*> ptrs;
  for (const auto& c : clips) ptrs.push_back(&c);
  Rng rng(9);
  BaseModelParams p = init_base_params(m, rng);
  const TrainConfig tc = quick_train(1);
  AdaptiveOptimizer<float> opt(tc.optimizer);
  const NoiseSchedule s = make_linear_schedule();
  for (int i = 0; i < 5; ++i) EXPECT_GE(pretrain_step(ptrs, m, p, opt, s, tc, rng), 0.0f);
  EXPECT_EQ(opt.steps_taken(), 5);

  p.out_w(0, 0) = std::numeric_limits<float>::quiet_NaN();
  EXPECT_THROW(pretrain_step(ptrs, m, p, opt, s, tc, rng), TrainingError);
}

TEST(Pretraining, ZeroEpochsReturnsInitAndEmptyDatasetRejected) {
  const ModelConfig m = small_model();
  const Dataset d = mixed_dataset(2, 4, m);
  Rng rng(2);
  const BaseModelParams init = init_base_params(m, rng);
  const auto r = run_pretraining(d, m, quick_train(0), make_linear_schedule(), init);
  EXPECT_TRUE(bit_identical(r.params, init));
  EXPECT_TRUE(r.curve.empty());
  EXPECT_THROW(run_pretraining(Dataset{}, m, quick_train(1), make_linear_schedule()), InputError);
  auto bad = quick_train(1);
  bad.batch_size = 0;
  EXPECT_THROW(run_pretraining(d, m, bad, make_linear_schedule()), ConfigError);
}

TEST(Pretraining, LossDecreasesAndRunsReproducibly) {
  const ModelConfig m = small_model();
  const Dataset d = mixed_dataset(8, 16, m);
  std::vector<EpochLog> seen;
  const auto a = run_pretraining(d, m, quick_train(15, 16), make_linear_schedule(),
                                 [&](const EpochLog& e) { seen.push_back(e); });
  ASSERT_EQ(a.curve.size(), 15u);
  ASSERT_EQ(seen.size(), 15u);
  for (int e = 0; e < 15; ++e) EXPECT_EQ(a.curve[e].epoch, e);
  EXPECT_LT(a.curve.back().mean_loss, a.curve.front().mean_loss);

  const auto b = run_pretraining(d, m, quick_train(15, 16), make_linear_schedule());
  EXPECT_NEAR(a.curve.back().mean_loss, b.curve.back().mean_loss, 1e-6);
  EXPECT_TRUE(bit_identical(a.params, b.params));
}

// Identity metadata never reaches the optimizer.
TEST(Pretraining, IgnoresIdentityLabels) {
  const ModelConfig m = small_model();
  Dataset d = mixed_dataset(3, 4, m);
  Dataset relabeled = d;
  for (std::size_t i = 0; i < relabeled.clips.size(); ++i) {
    relabeled.clips[i].info.persona = static_cast<int>(99 - i);
    relabeled.clips[i].info.actor = -7;
    relabeled.clips[i].info.genuine = i % 2 == 0;
    relabeled.clips[i].info.id = "anon" + std::to_string(i);
  }
  const auto a = run_pretraining(d, m, quick_train(2, 4), make_linear_schedule());
  const auto b = run_pretraining(relabeled, m, quick_train(2, 4), make_linear_schedule());
  EXPECT_TRUE(bit_identical(a.params, b.params));
}

TEST(Oversample, RoundsArePermutationsOfTheReferenceSet) {
  Rng rng(4);
  for (int n : {1, 3, 8}) {
    for (int size : {1, 5, 8, 64}) {
      const auto idx = oversample_indices(n, size, rng);
      ASSERT_EQ(static_cast<int>(idx.size()), size);
      std::map<int, int> count;
      for (int i : idx) {
        ASSERT_GE(i, 0);
        ASSERT_LT(i, n);
        ++count[i];
      }
      for (const auto& [i, c] : count) {
        EXPECT_GE(c, size / n);
        EXPECT_LE(c, size / n + 1);
      }
      for (int round = 0; round + n <= size; round += n) {
        std::vector<int> chunk(idx.begin() + round, idx.begin() + round + n);
        std::sort(chunk.begin(), chunk.end());
        for (int i = 0; i < n; ++i) EXPECT_EQ(chunk[i], i);
      }
    }
  }
  EXPECT_THROW(oversample_indices(0, 4, rng), InputError);
}

TEST(ReferenceSet, ValidationAndDuration) {
  const ModelConfig m = small_model();
  ReferenceSet refs{"s0", persona_clips(0, 3, m.length, m.audio_dim)};
  EXPECT_NO_THROW(refs.validate());
  EXPECT_NEAR(refs.seconds(), 3.0 * m.length / 25.0, 1e-12);
  EXPECT_THROW((ReferenceSet{"s0", {}}.validate()), InputError);
  refs.clips.push_back(persona_clips(1, 1, m.length, m.audio_dim)[0]);
  EXPECT_THROW(refs.validate(), InputError);
}

TEST(Personalize, ZeroEpochsGivesInitAdapter) {
  const ModelConfig m = small_model();
  Rng rng(1);
  const BaseModelParams base = init_base_params(m, rng);
  const ReferenceSet refs{"s0", persona_clips(0, 3, m.length, m.audio_dim)};
  const TrainConfig tc = quick_train(0);
  const auto r = personalize(base, refs, m, tc, make_linear_schedule());
  Rng same(tc.seed);
  EXPECT_TRUE(bit_identical(r.adapter, init_adapter(m, same)));
  EXPECT_EQ(r.iterations, 0);
}

TEST(Personalize, FrozenBaseAndIterationCount) {
  const ModelConfig m = small_model();
  Rng rng(1);
  const BaseModelParams base = init_base_params(m, rng);
  const BaseModelParams before = base;
  const ReferenceSet refs{"s0", persona_clips(0, 3, m.length, m.audio_dim)};
  const auto r = personalize(base, refs, m, quick_train(4, 5), make_linear_schedule());
  EXPECT_EQ(r.iterations, 3 * 4);
  EXPECT_EQ(r.losses.size(), 12u);
  EXPECT_TRUE(bit_identical(base, before));
  Rng same(5);
  EXPECT_FALSE(bit_identical(r.adapter, init_adapter(m, same)));
  EXPECT_THROW(personalize(base, ReferenceSet{"s0", {}}, m, quick_train(1), make_linear_schedule()), InputError);
}

// A subject-conditioned model reconstructs held-out clips of its own subject
// better than the unadapted model does.
TEST(Personalize, AdaptedErrorBelowUnadaptedOnHeldOutClip) {
  ModelConfig m = tiny_config(16, 16, 1, 2);
  m.audio_dim = 4;
  m.adapter_tokens = 4;
  const Dataset d = mixed_dataset(12, 24, m);
  const auto pre = run_pretraining(d, m, quick_train(25, 32, 3e-3), make_linear_schedule());
  // A persona outside the pre-training pool.
  auto clips = persona_clips(40, 16, m.length, m.audio_dim);
  const ReferenceSet refs{"s40", std::vector<Clip>(clips.begin(), clips.begin() + 8)};
  const auto ad = personalize(pre.params, refs, m, quick_train(40, 16, 3e-3), make_linear_schedule());
  ScoringConfig sc;
  sc.points = 10;
  sc.noise_count = 8;
  double d1 = 0.0, d2 = 0.0;
  for (std::size_t i = 8; i < clips.size(); ++i) {
    const AuthScore a = authenticate(m, clips[i].expression, clips[i].audio, pre.params, ad.adapter, sc,
                                     GuidanceConfig{}, make_linear_schedule());
    d1 += a.denominator;
    d2 += a.numerator;
  }
  EXPECT_LT(d2, d1);
}
