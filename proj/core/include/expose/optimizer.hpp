#pragma once

#include <string>
#include <vector>

#include "expose/types.hpp"

namespace expose {

enum class OptimizerKind { Adan, Adam };

std::string to_string(OptimizerKind kind);
OptimizerKind parse_optimizer_kind(const std::string& name);

/// Betas follow each method's own convention: Adam decays with beta (0.9, 0.999),
/// Adan mixes new information with beta (0.02, 0.08, 0.01).
struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::Adan;
  double learning_rate = 1e-4;
  double beta1 = 0.02;
  double beta2 = 0.08;
  double beta3 = 0.01;
  double eps = 1e-8;
  double weight_decay = 0.0;
  double grad_clip = 0.0;  // global norm, 0 = off

  static OptimizerConfig adan(double lr);
  static OptimizerConfig adam(double lr);
  void validate() const;
  bool operator==(const OptimizerConfig&) const = default;
};

/// Adaptive first-order optimizer over a fixed list of tensors.
/// State is allocated on the first step from the parameter shapes.
template <class S>
class AdaptiveOptimizer {
 public:
  explicit AdaptiveOptimizer(OptimizerConfig config);

  void step(const std::vector<Mat<S>*>& params, const std::vector<const Mat<S>*>& grads);
  long steps_taken() const { return step_; }
  const OptimizerConfig& config() const { return config_; }

 private:
  OptimizerConfig config_;
  long step_ = 0;
  std::vector<Mat<S>> m_, v_, n_, prev_grad_;
};

}  // namespace expose
