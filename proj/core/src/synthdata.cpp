#include "expose/synthdata.hpp"

#include <cmath>
#include <numbers>

#include "expose/errors.hpp"
#include "expose/optimizer.hpp"

namespace expose {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

std::uint64_t splitmix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

MatrixF gaussian(Eigen::Index rows, Eigen::Index cols, double sd, Rng& rng) {
  std::normal_distribution<double> n(0.0, sd);
  MatrixF m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<float>(n(rng));
  return m;
}

double log_uniform_gain(double spread, Rng& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  return std::exp(spread * u(rng));
}

}  // namespace

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b, std::uint64_t c) {
  std::uint64_t h = splitmix(base);
  h = splitmix(h ^ a);
  h = splitmix(h ^ b);
  return splitmix(h ^ c);
}

void PersonaConfig::validate() const {
  if (audio_dim < 1) throw ConfigError("persona audio_dim must be >= 1");
  if (shared_scale < 0 || identity_scale < 0 || bias_scale < 0 || oscillation_scale < 0 || noise < 0)
    throw ConfigError("persona scales must be non-negative");
  if (!(smoothing_min >= 0 && smoothing_min <= smoothing_max && smoothing_max < 1))
    throw ConfigError("persona smoothing range must satisfy 0 <= min <= max < 1");
  if (audio_gain_spread < 0 || noise_spread < 0) throw ConfigError("per-clip spreads must be non-negative");
}

PersonaSpec generate_persona(std::uint64_t seed, const PersonaConfig& config) {
  config.validate();
  const int d = config.audio_dim;
  Rng world(derive_seed(config.world_seed, 0x5752));
  Rng rng(derive_seed(seed, 0x5045));
  PersonaSpec p;
  p.id = static_cast<int>(seed);
  p.seed = seed;
  const double unit = 1.0 / std::sqrt(static_cast<double>(d));
  p.response = gaussian(d, kFeatureDim, config.shared_scale * unit, world) +
               gaussian(d, kFeatureDim, config.identity_scale * unit, rng);
  p.bias = gaussian(1, kFeatureDim, config.bias_scale, rng);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  p.smoothing = config.smoothing_min + (config.smoothing_max - config.smoothing_min) * u(rng);
  p.osc_amp = gaussian(1, kFeatureDim, config.oscillation_scale, rng);
  p.osc_freq = 0.03 + 0.09 * u(rng);
  p.osc_phase = kTwoPi * u(rng);
  p.noise = config.noise;
  return p;
}

double response_distance(const PersonaSpec& a, const PersonaSpec& b) {
  if (a.response.rows() != b.response.rows()) throw ShapeError("personas use different audio widths");
  return (a.response.cast<double>() - b.response.cast<double>()).norm();
}

PersonaSpec blend_personas(const PersonaSpec& a, const PersonaSpec& b, double w) {
  PersonaSpec out = a;
  const float wf = static_cast<float>(w);
  out.response = (1.0f - wf) * a.response + wf * b.response;
  out.bias = (1.0f - wf) * a.bias + wf * b.bias;
  out.osc_amp = (1.0f - wf) * a.osc_amp + wf * b.osc_amp;
  out.smoothing = (1.0 - w) * a.smoothing + w * b.smoothing;
  out.osc_freq = (1.0 - w) * a.osc_freq + w * b.osc_freq;
  out.osc_phase = (1.0 - w) * a.osc_phase + w * b.osc_phase;
  out.noise = (1.0 - w) * a.noise + w * b.noise;
  return out;
}

AudioFeatures synthesize_audio(std::uint64_t audio_seed, int length, const PersonaConfig& config) {
  if (length < 1) throw ConfigError("clip length must be >= 1");
  const int d = config.audio_dim;
  Rng rng(derive_seed(audio_seed, 0xA0D1));
  const double gain = log_uniform_gain(config.audio_gain_spread, rng);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double env_freq = 0.02 + 0.04 * u(rng);
  const double env_phase = kTwoPi * u(rng);
  constexpr double rho = 0.85;
  const double innov = std::sqrt(1.0 - rho * rho);
  std::normal_distribution<double> n;
  AudioFeatures a{MatrixF(length, d)};
  Eigen::VectorXd state(d);
  for (int k = 0; k < d; ++k) state[k] = n(rng);
  for (int t = 0; t < length; ++t) {
    if (t > 0)
      for (int k = 0; k < d; ++k) state[k] = rho * state[k] + innov * n(rng);
    const double env = 0.55 + 0.45 * std::sin(kTwoPi * env_freq * t + env_phase);
    for (int k = 0; k < d; ++k) a.values(t, k) = static_cast<float>(gain * env * state[k]);
  }
  return a;
}

MatrixF persona_response(const PersonaSpec& p, const AudioFeatures& audio) {
  if (audio.dim() != p.response.rows())
    throw ShapeError("audio width " + std::to_string(audio.dim()) + " differs from persona response");
  const int len = audio.length();
  const MatrixD u = audio.values.cast<double>() * p.response.cast<double>();
  MatrixD y = u;
  const double r = p.smoothing;
  for (int pass = 0; pass < 2; ++pass)
    for (int t = 1; t < len; ++t) y.row(t) = r * y.row(t - 1) + (1.0 - r) * y.row(t);
  for (int t = 0; t < len; ++t) {
    const double s = std::sin(kTwoPi * p.osc_freq * t + p.osc_phase);
    y.row(t) += p.bias.cast<double>() + s * p.osc_amp.cast<double>();
  }
  return y.cast<float>();
}

std::pair<AudioFeatures, ExpressionSequence> forge_clip(const PersonaSpec& target, const PersonaSpec& actor,
                                                        std::uint64_t audio_seed, int length,
                                                        const PersonaConfig& config) {
  // The audio depends on the seed alone; `target` only names whose content it is.
  (void)target;
  AudioFeatures audio = synthesize_audio(audio_seed, length, config);
  ExpressionSequence expr{persona_response(actor, audio), kFrameRate};
  if (actor.noise > 0.0) {
    Rng rng(derive_seed(audio_seed, 0x401E));
    const double sd = actor.noise * log_uniform_gain(config.noise_spread, rng);
    expr.values += gaussian(length, kFeatureDim, sd, rng);
  }
  return {std::move(audio), std::move(expr)};
}

std::pair<AudioFeatures, ExpressionSequence> synthesize_clip(const PersonaSpec& p, std::uint64_t audio_seed, int length,
                                                             const PersonaConfig& config) {
  return forge_clip(p, p, audio_seed, length, config);
}

// ---------------------------------------------------------------------------

void CorpusConfig::validate() const {
  persona.validate();
  if (personas < 2) throw ConfigError("need at least two personas");
  if (subjects < 1 || subjects > personas) throw ConfigError("subjects must lie in [1, personas]");
  if (pretrain_clips < 1) throw ConfigError("pretrain_clips must be >= 1");
  if (reference_count() < 1) throw ConfigError("reference set would be empty");
  if (validation_clips < 0 || test_genuine < 0 || test_forged < 0) throw ConfigError("clip counts must be >= 0");
  if (length < 1) throw ConfigError("clip length must be >= 1");
  if (reference_seconds < 0) throw ConfigError("reference_seconds must be >= 0");
}

int CorpusConfig::reference_count() const {
  if (reference_seconds > 0.0) return static_cast<int>(std::ceil(reference_seconds * kFrameRate / length - 1e-9));
  return reference_clips;
}

namespace {

Clip make_clip(const PersonaSpec& target, const PersonaSpec& actor, std::uint64_t audio_seed, int length,
               const PersonaConfig& pc, std::string id) {
  auto [audio, expr] = forge_clip(target, actor, audio_seed, length, pc);
  Clip c;
  c.info = {std::move(id), target.id, actor.id, target.id == actor.id};
  c.audio = std::move(audio);
  c.expression = std::move(expr);
  return c;
}

std::string numbered(const std::string& prefix, int i) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%04d", i);
  return prefix + buf;
}

}  // namespace

Corpus build_corpus(const CorpusConfig& config) {
  config.validate();
  Corpus corpus;
  for (int p = 0; p < config.personas; ++p) {
    PersonaSpec spec = generate_persona(derive_seed(config.seed, 1, p), config.persona);
    spec.id = p;
    corpus.personas.push_back(std::move(spec));
  }
  std::vector<int> pool;
  for (int p = config.subjects; p < config.personas; ++p) pool.push_back(p);
  if (pool.empty())
    for (int p = 0; p < config.personas; ++p) pool.push_back(p);

  const auto& P = corpus.personas;
  const int L = config.length;
  for (int i = 0; i < config.pretrain_clips; ++i) {
    const auto& spec = P[pool[i % pool.size()]];
    corpus.pretrain.push_back(make_clip(spec, spec, derive_seed(config.seed, 2, i), L, config.persona,
                                        numbered("pre", i)));
  }
  for (int s = 0; s < config.subjects; ++s) {
    SubjectSplit split;
    split.persona = s;
    split.subject = numbered("subject", s);
    const auto& me = P[s];
    for (int j = 0; j < config.reference_count(); ++j)
      split.reference.push_back(make_clip(me, me, derive_seed(config.seed, 3, s, j), L, config.persona,
                                          split.subject + numbered("_ref", j)));
    for (int j = 0; j < config.validation_clips; ++j)
      split.validation.push_back(make_clip(me, me, derive_seed(config.seed, 4, s, j), L, config.persona,
                                           split.subject + numbered("_val", j)));
    for (int j = 0; j < config.test_genuine; ++j)
      split.test.push_back(make_clip(me, me, derive_seed(config.seed, 5, s, j), L, config.persona,
                                     split.subject + numbered("_real", j)));
    for (int j = 0; j < config.test_forged; ++j) {
      Rng pick(derive_seed(config.seed, 7, s, j));
      int actor = static_cast<int>(pick() % (config.personas - 1));
      if (actor >= s) ++actor;
      split.test.push_back(make_clip(me, P[actor], derive_seed(config.seed, 6, s, j), L, config.persona,
                                     split.subject + numbered("_fake", j)));
    }
    corpus.subjects.push_back(std::move(split));
  }
  return corpus;
}

// ---------------------------------------------------------------------------

bool FlameSequence::shape_shared() const {
  for (Eigen::Index r = 1; r < shape.rows(); ++r)
    if (shape.row(r) != shape.row(0)) return false;
  return true;
}

RowVec<double> singularize_shape(const MatrixD& shapes) {
  if (shapes.rows() == 0) throw InputError("cannot singularize an empty shape sequence");
  return shapes.colwise().mean();
}

RefineResult refine_coeffs(const FlameSequence& init, const RefinementObjective& objective, const RefineConfig& config) {
  if (!objective.evaluate) throw ConfigError("refinement objective is empty");
  if (config.iterations < 0 || !(config.learning_rate > 0.0)) throw ConfigError("bad refinement settings");
  if (init.shape.rows() != init.frames() || init.pose.rows() != init.frames())
    throw ShapeError("shape, expression and pose must have one row per frame");
  if (!init.shape_shared()) throw InputError("refinement expects a singularized (shared) shape");

  RefineResult out{init, {}};
  FlameSequence& x = out.coeffs;
  MatrixD alpha = x.shape.rows() > 0 ? MatrixD(x.shape.topRows(1)) : MatrixD(1, x.shape.cols());
  AdaptiveOptimizer<double> opt(OptimizerConfig::adam(config.learning_rate));

  auto evaluate = [&](FlameSequence* grad) {
    const double v = objective.evaluate(x, grad);
    if (!std::isfinite(v)) throw RefinementError("refinement objective returned a non-finite value");
    return v;
  };
  for (int it = 0; it < config.iterations; ++it) {
    FlameSequence g{MatrixD::Zero(x.shape.rows(), x.shape.cols()), MatrixD::Zero(x.expression.rows(),
                    x.expression.cols()), MatrixD::Zero(x.pose.rows(), x.pose.cols())};
    out.trace.push_back(evaluate(&g));
    if (g.shape.rows() != x.shape.rows() || g.shape.cols() != x.shape.cols() ||
        g.expression.rows() != x.expression.rows() || g.expression.cols() != x.expression.cols() ||
        g.pose.rows() != x.pose.rows() || g.pose.cols() != x.pose.cols())
      throw ShapeError("objective gradient does not match the optimized blocks");
    if (!g.shape.allFinite() || !g.expression.allFinite() || !g.pose.allFinite())
      throw RefinementError("refinement objective returned a non-finite gradient");
    // one shared shape: its gradient is the sum of the per-frame gradients
    MatrixD g_alpha = config.shape_mode == ShapeMode::PerClip ? MatrixD(g.shape.colwise().sum())
                                                                : MatrixD::Zero(1, alpha.cols());
    opt.step({&alpha, &x.expression, &x.pose}, {&g_alpha, &g.expression, &g.pose});
    x.shape = alpha.replicate(x.shape.rows(), 1);
  }
  out.trace.push_back(evaluate(nullptr));
  return out;
}

FilterDecision filter_clip(double duration_s, double quality) {
  return duration_s >= kMinClipSeconds && quality > kMinQuality ? FilterDecision::Keep : FilterDecision::Drop;
}

FilterDecision filter_clip_frames(int frames, int min_frames, double quality) {
  return frames >= min_frames && quality > kMinQuality ? FilterDecision::Keep : FilterDecision::Drop;
}

}  // namespace expose
