#pragma once

#include <vector>

#include "expose/types.hpp"

namespace expose {

/// Linear-beta DDPM schedule. Timesteps are 1-indexed: t in {1..T}.
class NoiseSchedule {
 public:
  NoiseSchedule() = default;

  int steps() const { return static_cast<int>(betas_.size()); }
  double beta(int t) const;
  double alpha_bar(int t) const;
  const std::vector<double>& betas() const { return betas_; }
  const std::vector<double>& alpha_bars() const { return alpha_bars_; }

  double beta_start() const { return betas_.empty() ? 0.0 : betas_.front(); }
  double beta_end() const { return betas_.empty() ? 0.0 : betas_.back(); }

 private:
  friend NoiseSchedule make_linear_schedule(int steps, double beta_start, double beta_end);
  void check(int t) const;

  std::vector<double> betas_;
  std::vector<double> alpha_bars_;
};

inline constexpr int kDefaultDiffusionSteps = 1000;
inline constexpr double kDefaultBetaStart = 1e-4;
inline constexpr double kDefaultBetaEnd = 0.02;

NoiseSchedule make_linear_schedule(int steps = kDefaultDiffusionSteps,
                                   double beta_start = kDefaultBetaStart,
                                   double beta_end = kDefaultBetaEnd);

/// sqrt(abar_t) * z + sqrt(1 - abar_t) * eps, elementwise.
MatrixF forward_diffuse(const MatrixF& z, int t, const MatrixF& eps, const NoiseSchedule& schedule);
ExpressionSequence forward_diffuse(const ExpressionSequence& z, int t, const MatrixF& eps,
                                   const NoiseSchedule& schedule);

enum class GridMode { UniformRandom, EquallySpaced };

struct TimestepGrid {
  int t_start = 201;
  int t_end = 800;
  GridMode mode = GridMode::EquallySpaced;
  bool operator==(const TimestepGrid&) const = default;
};

/// Equally spaced: round(t_start + j (t_end - t_start) / (n - 1)), j = 0..n-1.
/// Uniform: n independent draws from [t_start, t_end].
std::vector<int> sample_timesteps(const TimestepGrid& grid, int n, Rng& rng);

}  // namespace expose
