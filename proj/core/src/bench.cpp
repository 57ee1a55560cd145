#include "expose/bench.hpp"

#include <algorithm>
#include <cmath>

#include "expose/errors.hpp"

namespace expose {

double auc(const std::vector<double>& real_scores, const std::vector<double>& fake_scores) {
  if (real_scores.empty() || fake_scores.empty()) throw InputError("auc needs at least one real and one fake score");
  std::vector<double> real = real_scores;
  for (double r : real)
    if (std::isnan(r)) throw InputError("auc got a NaN score");
  std::sort(real.begin(), real.end());
  // twice the pairwise count keeps the sum integral
  long long twice = 0;
  for (double f : fake_scores) {
    if (std::isnan(f)) throw InputError("auc got a NaN score");
    const auto lo = std::lower_bound(real.begin(), real.end(), f);
    const auto hi = std::upper_bound(lo, real.end(), f);
    twice += 2 * (lo - real.begin()) + (hi - lo);
  }
  return static_cast<double>(twice) / (2.0 * static_cast<double>(real.size()) * static_cast<double>(fake_scores.size()));
}

double average_auc(const std::map<std::string, double>& per_dataset) {
  if (per_dataset.empty()) throw InputError("average_auc needs at least one dataset");
  double s = 0.0;
  for (const auto& [name, v] : per_dataset) s += v;
  return s / static_cast<double>(per_dataset.size());
}

std::vector<RocPoint> roc_curve(const std::vector<double>& real_scores, const std::vector<double>& fake_scores) {
  if (real_scores.empty() || fake_scores.empty()) throw InputError("roc needs at least one real and one fake score");
  std::vector<double> thresholds = real_scores;
  thresholds.insert(thresholds.end(), fake_scores.begin(), fake_scores.end());
  std::sort(thresholds.begin(), thresholds.end(), std::greater<>());
  thresholds.erase(std::unique(thresholds.begin(), thresholds.end()), thresholds.end());
  std::vector<RocPoint> out{{0.0, 0.0}};
  for (double th : thresholds) {
    const auto above = [th](const std::vector<double>& v) {
      return static_cast<double>(std::count_if(v.begin(), v.end(), [th](double x) { return x >= th; })) / v.size();
    };
    out.push_back({above(real_scores), above(fake_scores)});
  }
  return out;
}

// ---------------------------------------------------------------------------

std::string to_string(PerturbKind kind) {
  switch (kind) {
    case PerturbKind::ExpressionNoise: return "expression_noise";
    case PerturbKind::AudioNoise: return "audio_noise";
    case PerturbKind::TemporalBlur: return "temporal_blur";
    case PerturbKind::Quantization: return "quantization";
    case PerturbKind::FrameHold: return "frame_hold";
  }
  return "unknown";
}

std::vector<PerturbKind> all_perturb_kinds() {
  return {PerturbKind::ExpressionNoise, PerturbKind::AudioNoise, PerturbKind::TemporalBlur, PerturbKind::Quantization,
          PerturbKind::FrameHold};
}

PerturbKind parse_perturb_kind(const std::string& name) {
  for (PerturbKind k : all_perturb_kinds())
    if (to_string(k) == name) return k;
  throw ConfigError("unknown perturbation kind '" + name + "'");
}

double perturb_magnitude(PerturbKind kind, int severity) {
  if (severity < 0 || severity > kMaxSeverity) throw DomainError("severity must lie in [0, 5]");
  static constexpr double noise[] = {0.0, 0.01, 0.02, 0.05, 0.1, 0.2};
  static constexpr double blur[] = {0.0, 1.0, 2.0, 3.0, 5.0, 8.0};
  static constexpr double quant[] = {0.0, 0.02, 0.05, 0.1, 0.2, 0.5};
  static constexpr double hold[] = {0.0, 0.02, 0.05, 0.1, 0.2, 0.4};
  switch (kind) {
    case PerturbKind::ExpressionNoise:
    case PerturbKind::AudioNoise: return noise[severity];
    case PerturbKind::TemporalBlur: return blur[severity];
    case PerturbKind::Quantization: return quant[severity];
    case PerturbKind::FrameHold: return hold[severity];
  }
  throw ConfigError("unknown perturbation kind");
}

namespace {

Eigen::RowVectorXf channel_std(const MatrixF& m) {
  if (m.rows() < 2) return Eigen::RowVectorXf::Ones(m.cols());
  const Eigen::RowVectorXf mean = m.colwise().mean();
  return ((m.rowwise() - mean).array().square().colwise().sum() / static_cast<float>(m.rows() - 1)).sqrt();
}

void add_channel_noise(MatrixF& m, double fraction, Rng& rng) {
  const Eigen::RowVectorXf sd = channel_std(m) * static_cast<float>(fraction);
  std::normal_distribution<float> n;
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) += sd[c] * n(rng);
}

}  // namespace

Clip perturb(const Clip& clip, PerturbKind kind, int severity, Rng& rng) {
  const double mag = perturb_magnitude(kind, severity);
  Clip out = clip;
  if (severity == 0) return out;
  MatrixF& z = out.expression.values;
  switch (kind) {
    case PerturbKind::ExpressionNoise: add_channel_noise(z, mag, rng); break;
    case PerturbKind::AudioNoise: add_channel_noise(out.audio.values, mag, rng); break;
    case PerturbKind::TemporalBlur: {
      const int r = static_cast<int>(mag);
      const Eigen::Index n = z.rows();
      for (Eigen::Index t = 0; t < n; ++t) {
        const Eigen::Index lo = std::max<Eigen::Index>(0, t - r), hi = std::min<Eigen::Index>(n - 1, t + r);
        z.row(t) = clip.expression.values.middleRows(lo, hi - lo + 1).colwise().mean();
      }
      break;
    }
    case PerturbKind::Quantization: {
      const Eigen::RowVectorXf step = channel_std(clip.expression.values) * static_cast<float>(mag);
      for (Eigen::Index r = 0; r < z.rows(); ++r)
        for (Eigen::Index c = 0; c < z.cols(); ++c)
          if (step[c] > 0) z(r, c) = std::round(z(r, c) / step[c]) * step[c];
      break;
    }
    case PerturbKind::FrameHold: {
      std::bernoulli_distribution drop(mag);
      for (Eigen::Index t = 1; t < z.rows(); ++t)
        if (drop(rng)) z.row(t) = z.row(t - 1);
      break;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------

void EvaluationSplit::validate() const {
  if (subjects.empty()) throw InputError("evaluation split '" + name + "' has no subjects");
  for (const auto& s : subjects) {
    if (s.reference.empty()) throw InputError("subject '" + s.subject + "' has no reference clips");
    if (s.test.empty()) throw InputError("subject '" + s.subject + "' has no test clips");
  }
}

ScorerFactory oracle_scorer() {
  return [](const SubjectSplit& s) {
    return [subject = s.subject](const Clip& c) {
      ClipScore r;
      r.subject = subject;
      r.info = c.info;
      r.value = c.info.genuine ? 0.0 : 1.0;
      r.d1 = 1.0;
      r.d2 = r.value;
      return r;
    };
  };
}

ModelScorer::ModelScorer(ModelConfig model, const BaseModelParams& base, TrainConfig personalization,
                         NoiseSchedule schedule)
    : model_(model), base_(base), personalization_(personalization), schedule_(std::move(schedule)) {}

void ModelScorer::set_scoring(const ScoringConfig& cfg, const GuidanceConfig& g, int temporal_window) {
  cfg.validate();
  g.validate();
  if (temporal_window < 1) throw ConfigError("temporal window must be >= 1");
  scoring_ = cfg;
  guidance_ = g;
  window_ = temporal_window;
}

TrainConfig subject_personalization(const TrainConfig& base, int persona) {
  TrainConfig tc = base;
  tc.seed = derive_seed(base.seed, static_cast<std::uint64_t>(persona + 1));
  return tc;
}

ClipScore score_clip(const ModelConfig& model, const BaseModelParams& base, const AdapterParams& adapter,
                     const Clip& clip, const std::string& subject, const ScoringConfig& scoring,
                     const GuidanceConfig& guidance, const NoiseSchedule& schedule, int temporal_window) {
  const ScoreTable t = score_table(clip.expression, clip.audio, model_predictor(model, base, &adapter), true, scoring,
                                   guidance, schedule);
  const AuthScore a = auth_score(t);
  ClipScore r;
  r.subject = subject;
  r.info = clip.info;
  r.value = a.value;
  r.d1 = a.denominator;
  r.d2 = a.numerator;
  r.temporal = temporal_scores(t, temporal_window).smoothed;
  return r;
}

const AdapterParams& ModelScorer::adapter_for(const SubjectSplit& subject) {
  auto it = adapters_.find(subject.subject);
  if (it != adapters_.end()) return it->second;
  ReferenceSet refs{subject.subject, subject.reference};
  const TrainConfig tc = subject_personalization(personalization_, subject.persona);
  return adapters_.emplace(subject.subject, personalize(base_, refs, model_, tc, schedule_).adapter).first->second;
}

void ModelScorer::set_adapter(const std::string& subject, AdapterParams adapter) {
  adapters_[subject] = std::move(adapter);
}

ScorerFactory ModelScorer::factory() {
  return [this](const SubjectSplit& s) -> ClipScoreFn {
    const AdapterParams& ad = adapter_for(s);
    return [this, &ad, subject = s.subject](const Clip& c) {
      return score_clip(model_, base_, ad, c, subject, scoring_, guidance_, schedule_, window_);
    };
  };
}

namespace {

struct Pooled {
  std::vector<double> real_a, fake_a, real_d1, fake_d1, real_d2, fake_d2;
  void add(const ClipScore& s) {
    (s.info.genuine ? real_a : fake_a).push_back(s.value);
    (s.info.genuine ? real_d1 : fake_d1).push_back(s.d1);
    (s.info.genuine ? real_d2 : fake_d2).push_back(s.d2);
  }
};

}  // namespace

BenchReport run_benchmark(const EvaluationSplit& split, const ScorerFactory& scorer, const BenchConfig& config) {
  split.validate();
  if (!scorer) throw ConfigError("benchmark needs a scorer");
  for (int sev : config.perturbations.severities)
    if (sev < 0 || sev > kMaxSeverity) throw DomainError("severity must lie in [0, 5]");

  BenchReport report;
  report.dataset = split.name;
  std::vector<ClipScoreFn> fns;
  Pooled pooled;
  for (const auto& subject : split.subjects) {
    fns.push_back(scorer(subject));
    const ClipScoreFn& fn = fns.back();
    SubjectAccuracy acc;
    acc.subject = subject.subject;
    std::vector<double> val;
    for (const auto& c : subject.validation) {
      report.validation.push_back(fn(c));
      val.push_back(report.validation.back().value);
    }
    std::vector<ClipScore> scored;
    Pooled mine;
    for (const auto& c : subject.test) {
      scored.push_back(fn(c));
      mine.add(scored.back());
      pooled.add(scored.back());
    }
    if (!mine.real_a.empty() && !mine.fake_a.empty()) acc.auc = auc(mine.real_a, mine.fake_a);
    if (!config.threshold_ks.empty()) {
      if (val.size() < 2)
        throw InputError("subject '" + subject.subject + "' needs at least two validation clips for thresholds");
      for (double k : config.threshold_ks) {
        const DecisionRule rule = fit_decision_rule(val, k);
        acc.mu = rule.mu;
        acc.sigma = rule.sigma;
        int correct = 0;
        for (const auto& s : scored)
          correct += (decide(s.value, rule) == Verdict::Real) == s.info.genuine ? 1 : 0;
        acc.ks.push_back(k);
        acc.thresholds.push_back(rule.threshold());
        acc.accuracy.push_back(static_cast<double>(correct) / static_cast<double>(scored.size()));
      }
    }
    report.subjects.push_back(std::move(acc));
    report.clips.insert(report.clips.end(), scored.begin(), scored.end());
  }
  if (pooled.real_a.empty() || pooled.fake_a.empty()) throw InputError("test clips must include both classes");
  report.auc_ratio = auc(pooled.real_a, pooled.fake_a);
  report.auc_d1 = auc(pooled.real_d1, pooled.fake_d1);
  report.auc_d2 = auc(pooled.real_d2, pooled.fake_d2);
  report.dataset_auc[split.name] = report.auc_ratio;
  report.average_auc = average_auc(report.dataset_auc);

  for (PerturbKind kind : config.perturbations.kinds) {
    for (int sev : config.perturbations.severities) {
      Pooled p;
      std::uint64_t clip_index = 0;
      for (std::size_t s = 0; s < split.subjects.size(); ++s) {
        for (const auto& c : split.subjects[s].test) {
          Rng rng(derive_seed(config.seed, static_cast<std::uint64_t>(kind) + 1, static_cast<std::uint64_t>(sev),
                              clip_index++));
          p.add(fns[s](perturb(c, kind, sev, rng)));
        }
      }
      report.sweep.push_back({to_string(kind), sev, perturb_magnitude(kind, sev), auc(p.real_a, p.fake_a)});
    }
  }
  report.metadata["dataset"] = split.name;
  report.metadata["bench_seed"] = std::to_string(config.seed);
  report.metadata["subjects"] = std::to_string(split.subjects.size());
  return report;
}

EvaluationSplit evaluation_split(const Corpus& corpus, std::string name) {
  return {std::move(name), corpus.subjects};
}

}  // namespace expose
