#include <gtest/gtest.h>

#include <random>

#include "expose/bench.hpp"
#include "expose/errors.hpp"

using namespace expose;

namespace {

double brute_auc(const std::vector<double>& real, const std::vector<double>& fake) {
  double s = 0.0;
  for (double f : fake)
    for (double r : real) s += f > r ? 1.0 : (f == r ? 0.5 : 0.0);
  return s / static_cast<double>(real.size() * fake.size());
}

CorpusConfig small_corpus() {
  CorpusConfig c;
  c.personas = 5;
  c.subjects = 2;
  c.pretrain_clips = 4;
  c.reference_clips = 2;
  c.validation_clips = 3;
  c.test_genuine = 4;
  c.test_forged = 4;
  c.length = 10;
  return c;
}

}  // namespace

TEST(Auc, WorkedExamples) {
  EXPECT_DOUBLE_EQ(auc({0.1, 0.4}, {0.3, 0.9}), 0.75);
  EXPECT_DOUBLE_EQ(auc({0.1, 0.2}, {0.8, 0.9}), 1.0);
  EXPECT_DOUBLE_EQ(auc({0.8, 0.9}, {0.1, 0.2}), 0.0);
  EXPECT_DOUBLE_EQ(auc({0.5, 0.5}, {0.5}), 0.5);
  EXPECT_DOUBLE_EQ(auc({1.0}, {1.0, 2.0}), 0.75);
  EXPECT_THROW(auc({}, {1.0}), InputError);
  EXPECT_THROW(auc({1.0}, {}), InputError);
  EXPECT_THROW(auc({std::nan("")}, {1.0}), InputError);
}

TEST(Auc, MatchesPairwiseCountOnRandomSets) {
  std::mt19937_64 rng(3);
  std::uniform_int_distribution<int> size(1, 30), level(0, 9);
  for (int trial = 0; trial < 1000; ++trial) {
    std::vector<double> real(size(rng)), fake(size(rng));
    // coarse levels force plenty of ties
    for (double& v : real) v = level(rng) * 0.1;
    for (double& v : fake) v = level(rng) * 0.1;
    const double a = auc(real, fake);
    ASSERT_NEAR(a, brute_auc(real, fake), 1e-12);
    ASSERT_GE(a, 0.0);
    ASSERT_LE(a, 1.0);
    ASSERT_NEAR(auc(fake, real), 1.0 - a, 1e-12);
  }
}

TEST(Auc, InvariantUnderStrictlyIncreasingMaps) {
  std::mt19937_64 rng(4);
  std::normal_distribution<double> n;
  std::vector<double> real(40), fake(35);
  for (double& v : real) v = n(rng);
  for (double& v : fake) v = n(rng) + 0.7;
  auto map = [](std::vector<double> v) {
    for (double& x : v) x = std::exp(3.0 * x) + 2.0;
    return v;
  };
  EXPECT_DOUBLE_EQ(auc(real, fake), auc(map(real), map(fake)));
}

TEST(AverageAuc, UnweightedMean) {
  EXPECT_DOUBLE_EQ(average_auc({{"a", 0.9}, {"b", 0.7}, {"c", 0.5}}), 0.7);
  EXPECT_THROW(average_auc({}), InputError);
}

TEST(Roc, EndpointsAndMonotone) {
  const auto roc = roc_curve({0.1, 0.4, 0.35}, {0.3, 0.9, 0.8, 0.2});
  ASSERT_GE(roc.size(), 2u);
  EXPECT_EQ(roc.front().fpr, 0.0);
  EXPECT_EQ(roc.front().tpr, 0.0);
  EXPECT_EQ(roc.back().fpr, 1.0);
  EXPECT_EQ(roc.back().tpr, 1.0);
  for (std::size_t i = 1; i < roc.size(); ++i) {
    EXPECT_GE(roc[i].fpr, roc[i - 1].fpr);
    EXPECT_GE(roc[i].tpr, roc[i - 1].tpr);
  }
}

TEST(Perturb, NamesAndMagnitudes) {
  for (PerturbKind k : all_perturb_kinds()) {
    EXPECT_EQ(parse_perturb_kind(to_string(k)), k);
    EXPECT_EQ(perturb_magnitude(k, 0), 0.0);
    for (int s = 1; s <= kMaxSeverity; ++s) EXPECT_GT(perturb_magnitude(k, s), perturb_magnitude(k, s - 1));
    EXPECT_THROW(perturb_magnitude(k, 6), DomainError);
    EXPECT_THROW(perturb_magnitude(k, -1), DomainError);
  }
  EXPECT_THROW(parse_perturb_kind("jpeg"), ConfigError);
}

TEST(Perturb, SeverityZeroIsIdentityAndRunsAreDeterministic) {
  const Corpus corpus = build_corpus(small_corpus());
  const Clip& clip = corpus.subjects[0].test[0];
  for (PerturbKind k : all_perturb_kinds()) {
    Rng r0(1);
    const Clip same = perturb(clip, k, 0, r0);
    EXPECT_EQ(same.expression.values, clip.expression.values);
    EXPECT_EQ(same.audio.values, clip.audio.values);
    Rng a(9), b(9);
    const Clip pa = perturb(clip, k, 5, a), pb = perturb(clip, k, 5, b);
    EXPECT_EQ(pa.expression.values, pb.expression.values) << to_string(k);
    EXPECT_EQ(pa.audio.values, pb.audio.values) << to_string(k);
    EXPECT_EQ(pa.info, clip.info);
    const bool changed = pa.expression.values != clip.expression.values || pa.audio.values != clip.audio.values;
    EXPECT_TRUE(changed) << to_string(k);
  }
}

TEST(Perturb, ExpressionNoiseGrowsWithSeverity) {
  const Corpus corpus = build_corpus(small_corpus());
  const Clip& clip = corpus.subjects[1].test[2];
  double prev = 0.0;
  for (int s = 1; s <= kMaxSeverity; ++s) {
    Rng rng(2);
    const double d = (perturb(clip, PerturbKind::ExpressionNoise, s, rng).expression.values - clip.expression.values)
                         .squaredNorm();
    EXPECT_GT(d, prev);
    prev = d;
  }
}

TEST(Benchmark, OracleScorerIsPerfect) {
  const Corpus corpus = build_corpus(small_corpus());
  BenchConfig cfg;
  cfg.perturbations.kinds = {PerturbKind::ExpressionNoise};
  cfg.perturbations.severities = {0, 3};
  const BenchReport r = run_benchmark(evaluation_split(corpus), oracle_scorer(), cfg);
  EXPECT_EQ(r.auc_ratio, 1.0);
  EXPECT_EQ(r.average_auc, 1.0);
  EXPECT_EQ(r.dataset_auc.at("synthetic"), 1.0);
  EXPECT_EQ(r.clips.size(), 16u);
  EXPECT_EQ(r.validation.size(), 6u);
  ASSERT_EQ(r.subjects.size(), 2u);
  for (const auto& s : r.subjects) {
    EXPECT_EQ(s.auc, 1.0);
    ASSERT_EQ(s.accuracy.size(), 3u);
    for (double a : s.accuracy) EXPECT_EQ(a, 1.0);
  }
  ASSERT_EQ(r.sweep.size(), 2u);
  for (const auto& p : r.sweep) EXPECT_EQ(p.auc, 1.0);
  EXPECT_EQ(r.metadata.at("subjects"), "2");
}

TEST(Benchmark, Errors) {
  CorpusConfig c = small_corpus();
  const Corpus corpus = build_corpus(c);
  EXPECT_THROW(run_benchmark(EvaluationSplit{}, oracle_scorer(), {}), InputError);
  EXPECT_THROW(run_benchmark(evaluation_split(corpus), ScorerFactory{}, {}), ConfigError);
  BenchConfig bad;
  bad.perturbations.severities = {7};
  EXPECT_THROW(run_benchmark(evaluation_split(corpus), oracle_scorer(), bad), DomainError);

  c.validation_clips = 1;
  EXPECT_THROW(run_benchmark(evaluation_split(build_corpus(c)), oracle_scorer(), {}), InputError);
  BenchConfig no_thresholds;
  no_thresholds.threshold_ks.clear();
  EXPECT_NO_THROW(run_benchmark(evaluation_split(build_corpus(c)), oracle_scorer(), no_thresholds));

  c = small_corpus();
  c.test_forged = 0;
  EXPECT_THROW(run_benchmark(evaluation_split(build_corpus(c)), oracle_scorer(), {}), InputError);
}
