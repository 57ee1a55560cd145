#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "expose/clip.hpp"
#include "expose/types.hpp"

namespace expose {

/// Knobs of the synthetic persona family. Every persona shares one response
/// component drawn from world_seed and adds its own scaled deviation.
struct PersonaConfig {
  int audio_dim = 16;
  std::uint64_t world_seed = 7;
  double shared_scale = 1.0;
  double identity_scale = 0.8;
  double bias_scale = 0.3;
  double oscillation_scale = 0.3;
  double noise = 0.15;
  double smoothing_min = 0.3;
  double smoothing_max = 0.7;
  double audio_gain_spread = 0.7;    // per-clip log-gain spread (content difficulty)
  double noise_spread = 0.7;         // per-clip log-noise spread
  void validate() const;
  bool operator==(const PersonaConfig&) const = default;
};

/// Subject-specific audio-to-expression map.
struct PersonaSpec {
  int id = 0;
  std::uint64_t seed = 0;
  MatrixF response;    // D x 53
  RowVecF bias;        // 1 x 53
  double smoothing = 0.5;   // two-pass exponential smoother coefficient
  RowVecF osc_amp;     // 1 x 53
  double osc_freq = 0.05;   // cycles per frame
  double osc_phase = 0.0;
  double noise = 0.0;
};

PersonaSpec generate_persona(std::uint64_t seed, const PersonaConfig& config = {});

/// Frobenius distance between response matrices.
double response_distance(const PersonaSpec& a, const PersonaSpec& b);

/// Parameter-wise interpolation (1 - w) a + w b; keeps a's id and seed.
PersonaSpec blend_personas(const PersonaSpec& a, const PersonaSpec& b, double w);

/// Smooth random audio features for a clip; depends on the seed only.
AudioFeatures synthesize_audio(std::uint64_t audio_seed, int length, const PersonaConfig& config = {});

/// Noise-free expressions of a persona driven by the given audio.
MatrixF persona_response(const PersonaSpec& p, const AudioFeatures& audio);

std::pair<AudioFeatures, ExpressionSequence> synthesize_clip(const PersonaSpec& p, std::uint64_t audio_seed, int length,
                                                             const PersonaConfig& config = {});

/// Target's audio, actor's talking identity.
std::pair<AudioFeatures, ExpressionSequence> forge_clip(const PersonaSpec& target, const PersonaSpec& actor,
                                                        std::uint64_t audio_seed, int length,
                                                        const PersonaConfig& config = {});

/// Deterministic seed mixing (splitmix64 over the parts).
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b = 0, std::uint64_t c = 0);

// ---------------------------------------------------------------------------
// Corpus

struct SubjectSplit {
  std::string subject;
  int persona = -1;
  std::vector<Clip> reference, validation, test;
};

struct CorpusConfig {
  int personas = 16;
  int subjects = 4;           // personas 0..subjects-1 are evaluated, the rest feed pre-training
  int pretrain_clips = 512;
  int reference_clips = 8;
  double reference_seconds = 0.0;  // when > 0 overrides reference_clips
  int validation_clips = 4;
  int test_genuine = 8;
  int test_forged = 8;
  int length = 50;
  std::uint64_t seed = 1;
  PersonaConfig persona;
  void validate() const;
  int reference_count() const;
  bool operator==(const CorpusConfig&) const = default;
};

struct Corpus {
  std::vector<PersonaSpec> personas;
  std::vector<Clip> pretrain;
  std::vector<SubjectSplit> subjects;
};

Corpus build_corpus(const CorpusConfig& config);

// ---------------------------------------------------------------------------
// Curation

/// Shape, expression and pose coefficients of one tracked clip.
struct FlameSequence {
  MatrixD shape;       // frames x shape_dim (all rows equal once singularized)
  MatrixD expression;  // frames x 50
  MatrixD pose;        // frames x pose_dim, jaw in the last 3 columns
  int frames() const { return static_cast<int>(expression.rows()); }
  bool shape_shared() const;
};

/// Arithmetic mean over frames.
RowVec<double> singularize_shape(const MatrixD& shapes);

/// Value and (optionally) gradient w.r.t. every block of the sequence.
struct RefinementObjective {
  std::function<double(const FlameSequence& x, FlameSequence* grad)> evaluate;
  std::string description;
};

enum class ShapeMode {
  PerClip,  // one shared shape per clip, optimized
  Fixed,    // shape supplied from outside (shared between clips) and left untouched
};

struct RefineConfig {
  int iterations = 10;
  double learning_rate = 5e-5;
  ShapeMode shape_mode = ShapeMode::PerClip;
};

struct RefineResult {
  FlameSequence coeffs;
  std::vector<double> trace;  // objective before each step and after the last
};

RefineResult refine_coeffs(const FlameSequence& init, const RefinementObjective& objective,
                           const RefineConfig& config = {});

inline constexpr double kMinClipSeconds = 8.0;
inline constexpr double kMinQuality = 40.0;

enum class FilterDecision { Keep, Drop };

FilterDecision filter_clip(double duration_s, double quality);
/// Same rule with duration counted in frames against a frame budget.
FilterDecision filter_clip_frames(int frames, int min_frames, double quality);

}  // namespace expose
