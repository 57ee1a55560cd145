#include "expose/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "expose/errors.hpp"

namespace expose {

double ReferenceSet::seconds() const {
  double total = 0.0;
  for (const auto& c : clips) total += c.length() / c.expression.frame_rate;
  return total;
}

void ReferenceSet::validate() const {
  if (clips.empty()) throw InputError("reference set for subject '" + subject + "' is empty");
  for (const auto& c : clips)
    if (c.info.persona != clips.front().info.persona)
      throw InputError("reference set for subject '" + subject + "' mixes identities");
}

void TrainConfig::validate() const {
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (epochs < 0) throw ConfigError("epochs must be >= 0");
  if (cfg_dropout < 0.0 || cfg_dropout >= 1.0) throw ConfigError("cfg_dropout must lie in [0, 1)");
  optimizer.validate();
}

double mse_loss(const MatrixF& prediction, const MatrixF& target) {
  if (prediction.rows() != target.rows() || prediction.cols() != target.cols())
    throw ShapeError("loss operands differ in shape");
  if (prediction.size() == 0) return 0.0;
  return (prediction.cast<double>() - target.cast<double>()).squaredNorm() / static_cast<double>(prediction.size());
}

DiffusionBatch make_diffusion_batch(const std::vector<const Clip*>& clips, const NoiseSchedule& schedule,
                                    double cfg_dropout, Rng& rng) {
  if (clips.empty()) throw InputError("empty training batch");
  const int L = clips.front()->length();
  const int F = static_cast<int>(clips.front()->expression.values.cols());
  const int D = clips.front()->audio.dim();
  const int B = static_cast<int>(clips.size());
  DiffusionBatch out;
  out.inputs.noisy.resize(static_cast<Eigen::Index>(B) * L, F);
  out.inputs.audio.resize(static_cast<Eigen::Index>(B) * L, D);
  out.noise.resize(static_cast<Eigen::Index>(B) * L, F);
  std::normal_distribution<float> normal;
  std::uniform_int_distribution<int> step(1, schedule.steps());
  for (int b = 0; b < B; ++b) {
    const Clip& c = *clips[b];
    if (c.length() != L || c.audio.length() != L || c.expression.values.cols() != F || c.audio.dim() != D)
      throw ShapeError("clip '" + c.info.id + "' does not match the batch shape");
    const int t = step(rng);
    auto eps = out.noise.middleRows(static_cast<Eigen::Index>(b) * L, L);
    for (Eigen::Index r = 0; r < eps.rows(); ++r)
      for (Eigen::Index k = 0; k < eps.cols(); ++k) eps(r, k) = normal(rng);
    out.inputs.noisy.middleRows(static_cast<Eigen::Index>(b) * L, L) =
        forward_diffuse(c.expression.values, t, MatrixF(eps), schedule);
    out.inputs.audio.middleRows(static_cast<Eigen::Index>(b) * L, L) = c.audio.values;
    const ConditionCoins coins = draw_condition_coins(cfg_dropout, rng);
    out.inputs.timesteps.push_back(t);
    out.inputs.audio_on.push_back(coins.audio_dropped ? 0 : 1);
    out.inputs.identity_on.push_back(coins.identity_dropped ? 0 : 1);
  }
  return out;
}

namespace {

template <class P>
std::vector<Mat<float>*> tensor_ptrs(P& p) {
  std::vector<Mat<float>*> out;
  for (auto& t : p.tensors()) out.push_back(t.tensor);
  return out;
}

template <class P>
std::vector<const Mat<float>*> const_tensor_ptrs(const P& p) {
  std::vector<const Mat<float>*> out;
  for (const auto& t : p.tensors()) out.push_back(t.tensor);
  return out;
}

}  // namespace

float pretrain_step(const std::vector<const Clip*>& batch, const ModelConfig& model, BaseModelParams& params,
                    AdaptiveOptimizer<float>& optimizer, const NoiseSchedule& schedule, const TrainConfig& config,
                    Rng& rng) {
  const DiffusionBatch db = make_diffusion_batch(batch, schedule, config.cfg_dropout, rng);
  thread_local ForwardCache<float> cache;
  BaseModelParams grad = params.zeros_like();
  const DropoutContext drop{model.dropout > 0.0 ? &rng : nullptr};
  const float loss = denoise_loss_and_grad<float>(model, params, nullptr, db.inputs, db.noise, cache, &grad, nullptr,
                                                  drop);
  if (!std::isfinite(loss)) throw TrainingError("non-finite pre-training loss (" + std::to_string(loss) + ") at step " +
                                                std::to_string(optimizer.steps_taken() + 1));
  optimizer.step(tensor_ptrs(params), const_tensor_ptrs(grad));
  return loss;
}

PretrainResult run_pretraining(const Dataset& dataset, const ModelConfig& model, const TrainConfig& config,
                               const NoiseSchedule& schedule, BaseModelParams init, const EpochCallback& on_epoch) {
  if (dataset.empty()) throw InputError("pre-training dataset is empty");
  model.validate();
  config.validate();
  if (schedule.steps() != model.diffusion_steps) throw ConfigError("schedule length differs from model config");
  PretrainResult result{std::move(init), {}};
  Rng rng(config.seed);
  AdaptiveOptimizer<float> opt(config.optimizer);
  std::vector<int> order(dataset.size());
  std::iota(order.begin(), order.end(), 0);
  for (int e = 0; e < config.epochs; ++e) {
    std::shuffle(order.begin(), order.end(), rng);
    double total = 0.0;
    int batches = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t stop = std::min(order.size(), start + static_cast<std::size_t>(config.batch_size));
      std::vector<const Clip*> batch;
      for (std::size_t i = start; i < stop; ++i) batch.push_back(&dataset.clips[order[i]]);
      total += pretrain_step(batch, model, result.params, opt, schedule, config, rng);
      ++batches;
    }
    EpochLog log{e, total / batches};
    result.curve.push_back(log);
    if (on_epoch) on_epoch(log);
  }
  return result;
}

PretrainResult run_pretraining(const Dataset& dataset, const ModelConfig& model, const TrainConfig& config,
                               const NoiseSchedule& schedule, const EpochCallback& on_epoch) {
  model.validate();
  Rng init_rng(config.seed ^ 0x9e3779b97f4a7c15ULL);
  return run_pretraining(dataset, model, config, schedule, init_base_params(model, init_rng), on_epoch);
}

std::vector<int> oversample_indices(int n, int size, Rng& rng) {
  if (n < 1) throw InputError("cannot over-sample an empty reference set");
  std::vector<int> round(n), out;
  std::iota(round.begin(), round.end(), 0);
  while (static_cast<int>(out.size()) < size) {
    std::shuffle(round.begin(), round.end(), rng);
    for (int i = 0; i < n && static_cast<int>(out.size()) < size; ++i) out.push_back(round[i]);
  }
  return out;
}

PersonalizeResult personalize(const BaseModelParams& base, const ReferenceSet& refs, const ModelConfig& model,
                              const TrainConfig& config, const NoiseSchedule& schedule) {
  refs.validate();
  model.validate();
  config.validate();
  if (schedule.steps() != model.diffusion_steps) throw ConfigError("schedule length differs from model config");
  Rng rng(config.seed);
  PersonalizeResult result{init_adapter(model, rng), 0, {}};
  AdaptiveOptimizer<float> opt(config.optimizer);
  ForwardCache<float> cache;
  const long iterations = static_cast<long>(refs.clips.size()) * config.epochs;
  for (long it = 0; it < iterations; ++it) {
    std::vector<const Clip*> batch;
    for (int i : oversample_indices(static_cast<int>(refs.clips.size()), config.batch_size, rng))
      batch.push_back(&refs.clips[i]);
    const DiffusionBatch db = make_diffusion_batch(batch, schedule, config.cfg_dropout, rng);
    AdapterParams grad = AdapterParams::zeros(result.adapter.token_count(), result.adapter.dim());
    const DropoutContext drop{model.dropout > 0.0 ? &rng : nullptr};
    const float loss = denoise_loss_and_grad<float>(model, base, &result.adapter, db.inputs, db.noise, cache, nullptr,
                                                    &grad, drop);
    if (!std::isfinite(loss))
      throw TrainingError("non-finite personalization loss at iteration " + std::to_string(it + 1));
    opt.step(tensor_ptrs(result.adapter), const_tensor_ptrs(grad));
    result.losses.push_back(loss);
    ++result.iterations;
  }
  return result;
}

}  // namespace expose
