#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "expose/adapter.hpp"
#include "expose/model.hpp"
#include "expose/schedule.hpp"

namespace expose {

struct GuidanceConfig {
  double audio_scale = 0.5;     // s_a
  double identity_scale = 0.25;  // s_c
  void validate() const;
  bool operator==(const GuidanceConfig&) const = default;
};

struct ScoringConfig {
  TimestepGrid grid;       // [201, 800], equally spaced
  int points = 60;
  int noise_count = 64;    // draws per timestep
  std::uint64_t seed = 0;
  int batch_size = 64;     // samples per denoiser call; does not change results
  void validate() const;
  bool operator==(const ScoringConfig&) const = default;
};

/// Batched noise prediction. audio_on flags in the batch pick the audio branch;
/// `identity` selects the subject-conditioned branch.
using NoisePredictor = std::function<MatrixF(const DenoiseBatch<float>& batch, bool identity)>;

/// The denoiser in evaluation mode. identity=true runs with `adapter`, false without.
NoisePredictor model_predictor(const ModelConfig& config, const BaseModelParams& base, const AdapterParams* adapter);

/// Three branch predictions for one batch.
struct GuidanceBranches {
  MatrixF uncond, audio, full;  // full is empty when there is no identity branch
};

/// eps_sa = uncond + s_a (audio - uncond); with identity, eps_sa + s_c (full - audio).
MatrixF combine_guidance(const GuidanceBranches& b, const GuidanceConfig& g, bool with_identity);

/// Guided noise prediction for a single noisy clip.
MatrixF guided_denoise(const ModelConfig& config, const ExpressionSequence& noisy, int t, const AudioFeatures& audio,
                       const BaseModelParams& base, const AdapterParams* adapter, const GuidanceConfig& g);

struct ScoreSample {
  int t = 0;
  int draw = 0;
  double d1 = 0.0;  // unadapted squared error
  double d2 = 0.0;  // adapted squared error (0 when no identity branch)
};

/// Every (t, draw) evaluation of one clip plus per-frame error sums.
struct ScoreTable {
  std::vector<ScoreSample> samples;
  std::vector<double> frame_d1, frame_d2;  // summed over channels, averaged over samples
  double mean_d1() const;
  double mean_d2() const;
};

/// Evaluates the guided predictions on the shared (t, eps) sample set of cfg.
ScoreTable score_table(const ExpressionSequence& z, const AudioFeatures& audio, const NoisePredictor& predict,
                       bool with_identity, const ScoringConfig& cfg, const GuidanceConfig& g,
                       const NoiseSchedule& schedule);

/// Mean squared noise-prediction error; adapted when `adapter` is given.
double reconstruction_distance(const ModelConfig& config, const ExpressionSequence& z, const AudioFeatures& audio,
                               const BaseModelParams& base, const AdapterParams* adapter, const ScoringConfig& cfg,
                               const GuidanceConfig& g, const NoiseSchedule& schedule);

struct AuthScore {
  double value = 0.0;        // numerator / denominator
  double numerator = 0.0;    // d2
  double denominator = 0.0;  // d1
  std::vector<ScoreSample> samples;
};

/// Ratio of mean adapted to mean unadapted error over one shared sample set.
AuthScore auth_score(const ScoreTable& table);
AuthScore authenticate(const ModelConfig& config, const ExpressionSequence& z, const AudioFeatures& audio,
                       const BaseModelParams& base, const AdapterParams& adapter, const ScoringConfig& cfg,
                       const GuidanceConfig& g, const NoiseSchedule& schedule);

/// Centered moving average, window truncated at the edges.
std::vector<double> moving_average(const std::vector<double>& series, int window);

struct TemporalScores {
  std::vector<double> raw;       // per-frame ratio
  std::vector<double> smoothed;
  double mean = 0.0;             // mean of the smoothed series
};

inline constexpr int kTemporalWindow = 15;

TemporalScores temporal_scores(const ScoreTable& table, int window = kTemporalWindow);
TemporalScores temporal_scores(const ModelConfig& config, const ExpressionSequence& z, const AudioFeatures& audio,
                               const BaseModelParams& base, const AdapterParams& adapter, const ScoringConfig& cfg,
                               const GuidanceConfig& g, const NoiseSchedule& schedule, int window = kTemporalWindow);

struct DecisionRule {
  double mu = 0.0;
  double sigma = 0.0;
  double k = 2.0;
  double threshold() const { return mu + k * sigma; }
};

inline constexpr double kThresholdPresets[] = {1.0, 2.0, 3.0};

/// Sample mean and unbiased standard deviation of at least two validation scores.
DecisionRule fit_decision_rule(const std::vector<double>& validation_scores, double k = 2.0);

enum class Verdict { Real, Fake };

/// Fake iff the score exceeds the threshold; equality counts as real.
Verdict decide(double score, const DecisionRule& rule);
inline Verdict decide(const AuthScore& score, const DecisionRule& rule) { return decide(score.value, rule); }

}  // namespace expose
