#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "expose/clip.hpp"
#include "expose/scorer.hpp"
#include "expose/synthdata.hpp"
#include "expose/trainer.hpp"

namespace expose {

/// Mann-Whitney statistic with fake as the higher-scoring positive class; ties count 0.5.
double auc(const std::vector<double>& real_scores, const std::vector<double>& fake_scores);

/// Unweighted mean over datasets.
double average_auc(const std::map<std::string, double>& per_dataset);

struct RocPoint {
  double fpr = 0.0;
  double tpr = 0.0;
};

/// Empirical ROC, thresholds swept from high to low, starting at (0,0) and ending at (1,1).
std::vector<RocPoint> roc_curve(const std::vector<double>& real_scores, const std::vector<double>& fake_scores);

// ---------------------------------------------------------------------------
// Feature-level corruptions

enum class PerturbKind { ExpressionNoise, AudioNoise, TemporalBlur, Quantization, FrameHold };

inline constexpr int kMaxSeverity = 5;

std::string to_string(PerturbKind kind);
PerturbKind parse_perturb_kind(const std::string& name);
std::vector<PerturbKind> all_perturb_kinds();

/// Magnitude of a kind at a severity; 0 at severity 0, increasing over 1..5.
/// Noise and quantization are fractions of the per-channel std, blur is a window
/// radius in frames, frame hold is a drop probability.
double perturb_magnitude(PerturbKind kind, int severity);

Clip perturb(const Clip& clip, PerturbKind kind, int severity, Rng& rng);

// ---------------------------------------------------------------------------
// Harness

struct EvaluationSplit {
  std::string name = "synthetic";
  std::vector<SubjectSplit> subjects;
  void validate() const;
};

struct ClipScore {
  std::string subject;
  ClipInfo info;
  double value = 0.0;  // A
  double d1 = 0.0;
  double d2 = 0.0;
  std::vector<double> temporal;  // smoothed per-frame ratio, may be empty
  bool operator==(const ClipScore&) const = default;
};

/// Scores clips of one subject.
using ClipScoreFn = std::function<ClipScore(const Clip&)>;
/// Prepares a scorer for a subject (personalizes on its references).
using ScorerFactory = std::function<ClipScoreFn(const SubjectSplit&)>;

/// Emits 0 for genuine and 1 for forged clips.
ScorerFactory oracle_scorer();

/// Personalization settings for one subject; the seed is derived from the persona.
TrainConfig subject_personalization(const TrainConfig& base, int persona);

/// A, d1, d2 and the smoothed per-frame series of one clip under a trained adapter.
ClipScore score_clip(const ModelConfig& model, const BaseModelParams& base, const AdapterParams& adapter,
                     const Clip& clip, const std::string& subject, const ScoringConfig& scoring,
                     const GuidanceConfig& guidance, const NoiseSchedule& schedule,
                     int temporal_window = kTemporalWindow);

/// The diffusion scorer. Adapters are trained on first use per subject and kept,
/// so re-scoring with other settings reuses them.
class ModelScorer {
 public:
  ModelScorer(ModelConfig model, const BaseModelParams& base, TrainConfig personalization, NoiseSchedule schedule);

  void set_scoring(const ScoringConfig& cfg, const GuidanceConfig& g, int temporal_window);
  const AdapterParams& adapter_for(const SubjectSplit& subject);
  void set_adapter(const std::string& subject, AdapterParams adapter);
  const std::map<std::string, AdapterParams>& adapters() const { return adapters_; }
  ScorerFactory factory();

 private:
  ModelConfig model_;
  const BaseModelParams& base_;
  TrainConfig personalization_;
  NoiseSchedule schedule_;
  ScoringConfig scoring_;
  GuidanceConfig guidance_;
  int window_ = kTemporalWindow;
  std::map<std::string, AdapterParams> adapters_;
};

struct PerturbPlan {
  std::vector<PerturbKind> kinds;
  std::vector<int> severities{1, 2, 3, 4, 5};
};

struct BenchConfig {
  std::vector<double> threshold_ks{kThresholdPresets[0], kThresholdPresets[1], kThresholdPresets[2]};
  PerturbPlan perturbations;
  std::uint64_t seed = 0;
};

struct SubjectAccuracy {
  std::string subject;
  double auc = 0.0;
  double mu = 0.0;
  double sigma = 0.0;
  std::vector<double> ks;
  std::vector<double> thresholds;
  std::vector<double> accuracy;  // one per k
};

struct SweepPoint {
  std::string kind;
  int severity = 0;
  double magnitude = 0.0;
  double auc = 0.0;
};

struct BenchReport {
  std::string dataset;
  double auc_ratio = 0.0;  // pooled over subjects
  double auc_d1 = 0.0;
  double auc_d2 = 0.0;
  std::map<std::string, double> dataset_auc;
  double average_auc = 0.0;
  std::vector<SubjectAccuracy> subjects;
  std::vector<SweepPoint> sweep;
  std::vector<ClipScore> clips;       // clean test clips
  std::vector<ClipScore> validation;  // validation clips
  std::map<std::string, std::string> metadata;
};

/// Prepares each subject, fits thresholds on validation clips, scores test clips
/// (clean and per the perturbation plan) and aggregates.
BenchReport run_benchmark(const EvaluationSplit& split, const ScorerFactory& scorer, const BenchConfig& config);

/// Splits of a generated corpus in benchmark form.
EvaluationSplit evaluation_split(const Corpus& corpus, std::string name = "synthetic");

}  // namespace expose
