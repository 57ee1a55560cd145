#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "expose/adapter.hpp"
#include "expose/clip.hpp"
#include "expose/model.hpp"
#include "expose/optimizer.hpp"
#include "expose/schedule.hpp"

namespace expose {

/// Unlabeled pre-training corpus.
struct Dataset {
  std::vector<Clip> clips;
  bool empty() const { return clips.empty(); }
  std::size_t size() const { return clips.size(); }
};

/// Trusted clips of one subject.
struct ReferenceSet {
  std::string subject;
  std::vector<Clip> clips;
  double seconds() const;
  /// Throws InputError when empty or when a clip is attributed to another subject.
  void validate() const;
};

inline constexpr double kDefaultLearningRate = 1e-4;
inline constexpr double kAltLearningRate = 4e-4;

struct TrainConfig {
  int batch_size = 256;
  int epochs = 100;
  OptimizerConfig optimizer = OptimizerConfig::adan(kDefaultLearningRate);
  double cfg_dropout = 0.25;
  std::uint64_t seed = 0;
  void validate() const;
  bool operator==(const TrainConfig&) const = default;
};

/// Mean of squared differences over all elements.
double mse_loss(const MatrixF& prediction, const MatrixF& target);

/// Noised batch with per-clip timesteps and condition flags, ready for the denoiser.
struct DiffusionBatch {
  DenoiseBatch<float> inputs;
  MatrixF noise;
};

/// Draws t ~ U[1, T], eps ~ N(0, I) and two condition coins per clip.
DiffusionBatch make_diffusion_batch(const std::vector<const Clip*>& clips, const NoiseSchedule& schedule,
                                    double cfg_dropout, Rng& rng);

/// One optimizer update of the base model on the diffusion loss. Returns the batch loss.
float pretrain_step(const std::vector<const Clip*>& batch, const ModelConfig& model, BaseModelParams& params,
                    AdaptiveOptimizer<float>& optimizer, const NoiseSchedule& schedule, const TrainConfig& config,
                    Rng& rng);

struct EpochLog {
  int epoch = 0;
  double mean_loss = 0.0;
};

using EpochCallback = std::function<void(const EpochLog&)>;

struct PretrainResult {
  BaseModelParams params;
  std::vector<EpochLog> curve;
};

/// Shuffled mini-batches over the corpus for config.epochs epochs, starting from init.
PretrainResult run_pretraining(const Dataset& dataset, const ModelConfig& model, const TrainConfig& config,
                               const NoiseSchedule& schedule, BaseModelParams init,
                               const EpochCallback& on_epoch = {});
PretrainResult run_pretraining(const Dataset& dataset, const ModelConfig& model, const TrainConfig& config,
                               const NoiseSchedule& schedule, const EpochCallback& on_epoch = {});

struct PersonalizeResult {
  AdapterParams adapter;
  long iterations = 0;
  std::vector<double> losses;  // one per iteration
};

/// Trains only the adapter for (#clips x epochs) iterations. Each batch repeats the
/// reference clips in shuffled rounds until batch_size clips are drawn.
PersonalizeResult personalize(const BaseModelParams& base, const ReferenceSet& refs, const ModelConfig& model,
                              const TrainConfig& config, const NoiseSchedule& schedule);

/// Batch indices for one personalization step: shuffled passes over [0, n) until size is reached.
std::vector<int> oversample_indices(int n, int size, Rng& rng);

}  // namespace expose
