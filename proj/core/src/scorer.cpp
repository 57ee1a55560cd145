#include "expose/scorer.hpp"

#include <cmath>

#include "expose/errors.hpp"

namespace expose {

void GuidanceConfig::validate() const {
  if (!std::isfinite(audio_scale) || !std::isfinite(identity_scale)) throw ConfigError("guidance scales must be finite");
}

void ScoringConfig::validate() const {
  if (noise_count < 1) throw ConfigError("noise_count must be >= 1");
  if (points < 1) throw ConfigError("timestep points must be >= 1");
  if (batch_size < 1) throw ConfigError("scoring batch_size must be >= 1");
  if (grid.t_start < 1 || grid.t_end < grid.t_start) throw GridError("invalid scoring timestep range");
}

NoisePredictor model_predictor(const ModelConfig& config, const BaseModelParams& base, const AdapterParams* adapter) {
  return [&config, &base, adapter](const DenoiseBatch<float>& batch, bool identity) {
    if (identity && !adapter) throw ConfigError("identity branch requested without an adapter");
    thread_local ForwardCache<float> cache;
    return denoise_forward<float>(config, base, identity ? adapter : nullptr, batch, cache);
  };
}

MatrixF combine_guidance(const GuidanceBranches& b, const GuidanceConfig& g, bool with_identity) {
  const float sa = static_cast<float>(g.audio_scale);
  MatrixF out = b.uncond + sa * (b.audio - b.uncond);
  if (with_identity) out += static_cast<float>(g.identity_scale) * (b.full - b.audio);
  return out;
}

MatrixF guided_denoise(const ModelConfig& config, const ExpressionSequence& noisy, int t, const AudioFeatures& audio,
                       const BaseModelParams& base, const AdapterParams* adapter, const GuidanceConfig& g) {
  if (noisy.length() != config.length || audio.length() != config.length)
    throw ShapeError("clip length differs from model length " + std::to_string(config.length));
  const NoisePredictor predict = model_predictor(config, base, adapter);
  DenoiseBatch<float> batch{noisy.values, audio.values, {t}, {0}, {0}};
  GuidanceBranches b;
  b.uncond = predict(batch, false);
  batch.audio_on[0] = 1;
  b.audio = predict(batch, false);
  if (adapter) {
    batch.identity_on[0] = 1;
    b.full = predict(batch, true);
  }
  return combine_guidance(b, g, adapter != nullptr);
}

double ScoreTable::mean_d1() const {
  double s = 0.0;
  for (const auto& x : samples) s += x.d1;
  return samples.empty() ? 0.0 : s / static_cast<double>(samples.size());
}

double ScoreTable::mean_d2() const {
  double s = 0.0;
  for (const auto& x : samples) s += x.d2;
  return samples.empty() ? 0.0 : s / static_cast<double>(samples.size());
}

ScoreTable score_table(const ExpressionSequence& z, const AudioFeatures& audio, const NoisePredictor& predict,
                       bool with_identity, const ScoringConfig& cfg, const GuidanceConfig& g,
                       const NoiseSchedule& schedule) {
  cfg.validate();
  g.validate();
  if (cfg.grid.t_end > schedule.steps()) throw GridError("scoring range exceeds the schedule length");
  const int L = z.length();
  const Eigen::Index F = z.values.cols();
  if (audio.length() != L) throw ShapeError("audio and expression lengths differ");
  if (!z.values.allFinite() || !audio.values.allFinite()) throw NumericError("non-finite clip values");

  Rng grid_rng(cfg.seed ^ 0x67726964ULL);  // only used by the uniform mode
  const std::vector<int> ts = sample_timesteps(cfg.grid, cfg.points, grid_rng);
  const long total = static_cast<long>(ts.size()) * cfg.noise_count;

  ScoreTable table;
  table.samples.reserve(total);
  table.frame_d1.assign(L, 0.0);
  table.frame_d2.assign(L, 0.0);

  Rng rng(cfg.seed);
  std::normal_distribution<float> normal;
  DenoiseBatch<float> batch;
  MatrixF noise;
  for (long start = 0; start < total; start += cfg.batch_size) {
    const int B = static_cast<int>(std::min<long>(cfg.batch_size, total - start));
    batch.noisy.resize(static_cast<Eigen::Index>(B) * L, F);
    batch.audio = audio.values.replicate(B, 1);
    batch.timesteps.assign(B, 0);
    batch.audio_on.assign(B, 0);
    batch.identity_on.assign(B, 0);
    noise.resize(static_cast<Eigen::Index>(B) * L, F);
    for (int b = 0; b < B; ++b) {
      const long s = start + b;
      const int t = ts[s / cfg.noise_count];
      auto eps = noise.middleRows(static_cast<Eigen::Index>(b) * L, L);
      for (Eigen::Index i = 0; i < eps.size(); ++i) eps.data()[i] = normal(rng);
      const float a = static_cast<float>(std::sqrt(schedule.alpha_bar(t)));
      const float c = static_cast<float>(std::sqrt(1.0 - schedule.alpha_bar(t)));
      batch.noisy.middleRows(static_cast<Eigen::Index>(b) * L, L) = a * z.values + c * eps;
      batch.timesteps[b] = t;
    }
    GuidanceBranches br;
    br.uncond = predict(batch, false);
    batch.audio_on.assign(B, 1);
    br.audio = predict(batch, false);
    MatrixF guided_sa = combine_guidance(br, g, false);
    MatrixF guided_full;
    if (with_identity) {
      batch.identity_on.assign(B, 1);
      br.full = predict(batch, true);
      guided_full = combine_guidance(br, g, true);
    }
    for (int b = 0; b < B; ++b) {
      const long s = start + b;
      ScoreSample sample{ts[s / cfg.noise_count], static_cast<int>(s % cfg.noise_count), 0.0, 0.0};
      for (int l = 0; l < L; ++l) {
        const Eigen::Index r = static_cast<Eigen::Index>(b) * L + l;
        const double e1 = (noise.row(r) - guided_sa.row(r)).template cast<double>().squaredNorm();
        sample.d1 += e1;
        table.frame_d1[l] += e1;
        if (with_identity) {
          const double e2 = (noise.row(r) - guided_full.row(r)).template cast<double>().squaredNorm();
          sample.d2 += e2;
          table.frame_d2[l] += e2;
        }
      }
      if (!std::isfinite(sample.d1) || !std::isfinite(sample.d2))
        throw ScoringError("non-finite reconstruction error at t=" + std::to_string(sample.t));
      table.samples.push_back(sample);
    }
  }
  for (int l = 0; l < L; ++l) {
    table.frame_d1[l] /= static_cast<double>(total);
    table.frame_d2[l] /= static_cast<double>(total);
  }
  return table;
}

double reconstruction_distance(const ModelConfig& config, const ExpressionSequence& z, const AudioFeatures& audio,
                               const BaseModelParams& base, const AdapterParams* adapter, const ScoringConfig& cfg,
                               const GuidanceConfig& g, const NoiseSchedule& schedule) {
  const ScoreTable t = score_table(z, audio, model_predictor(config, base, adapter), adapter != nullptr, cfg, g,
                                   schedule);
  return adapter ? t.mean_d2() : t.mean_d1();
}

AuthScore auth_score(const ScoreTable& table) {
  AuthScore s;
  s.numerator = table.mean_d2();
  s.denominator = table.mean_d1();
  if (!(s.denominator > 0.0)) throw DegenerateModelError("unadapted reconstruction error is zero; ratio undefined");
  s.value = s.numerator / s.denominator;
  if (!std::isfinite(s.value)) throw ScoringError("non-finite authentication score");
  s.samples = table.samples;
  return s;
}

AuthScore authenticate(const ModelConfig& config, const ExpressionSequence& z, const AudioFeatures& audio,
                       const BaseModelParams& base, const AdapterParams& adapter, const ScoringConfig& cfg,
                       const GuidanceConfig& g, const NoiseSchedule& schedule) {
  return auth_score(score_table(z, audio, model_predictor(config, base, &adapter), true, cfg, g, schedule));
}

std::vector<double> moving_average(const std::vector<double>& series, int window) {
  if (window < 1) throw ConfigError("window must be >= 1");
  const int n = static_cast<int>(series.size());
  const int before = (window - 1) / 2, after = window / 2;
  std::vector<double> out(n);
  for (int i = 0; i < n; ++i) {
    const int lo = std::max(0, i - before), hi = std::min(n - 1, i + after);
    double s = 0.0;
    for (int j = lo; j <= hi; ++j) s += series[j];
    out[i] = s / (hi - lo + 1);
  }
  return out;
}

TemporalScores temporal_scores(const ScoreTable& table, int window) {
  TemporalScores out;
  out.raw.resize(table.frame_d1.size());
  for (std::size_t l = 0; l < out.raw.size(); ++l) {
    if (!(table.frame_d1[l] > 0.0)) throw DegenerateModelError("zero unadapted error at frame " + std::to_string(l));
    out.raw[l] = table.frame_d2[l] / table.frame_d1[l];
  }
  out.smoothed = moving_average(out.raw, window);
  double s = 0.0;
  for (double v : out.smoothed) s += v;
  out.mean = out.smoothed.empty() ? 0.0 : s / static_cast<double>(out.smoothed.size());
  return out;
}

TemporalScores temporal_scores(const ModelConfig& config, const ExpressionSequence& z, const AudioFeatures& audio,
                               const BaseModelParams& base, const AdapterParams& adapter, const ScoringConfig& cfg,
                               const GuidanceConfig& g, const NoiseSchedule& schedule, int window) {
  if (window < 1) throw ConfigError("window must be >= 1");
  return temporal_scores(score_table(z, audio, model_predictor(config, base, &adapter), true, cfg, g, schedule), window);
}

DecisionRule fit_decision_rule(const std::vector<double>& scores, double k) {
  if (scores.size() < 2) throw InsufficientDataError("need at least two validation scores to fit a threshold");
  double mean = 0.0;
  for (double s : scores) mean += s;
  mean /= static_cast<double>(scores.size());
  double ss = 0.0;
  for (double s : scores) ss += (s - mean) * (s - mean);
  return {mean, std::sqrt(ss / static_cast<double>(scores.size() - 1)), k};
}

Verdict decide(double score, const DecisionRule& rule) { return score > rule.threshold() ? Verdict::Fake : Verdict::Real; }

}  // namespace expose
