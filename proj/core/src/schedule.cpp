#include "expose/schedule.hpp"

#include <cmath>
#include <string>

#include "expose/errors.hpp"

namespace expose {

void NoiseSchedule::check(int t) const {
  if (t < 1 || t > steps())
    throw DomainError("timestep " + std::to_string(t) + " outside [1, " + std::to_string(steps()) + "]");
}

double NoiseSchedule::beta(int t) const {
  check(t);
  return betas_[t - 1];
}

double NoiseSchedule::alpha_bar(int t) const {
  check(t);
  return alpha_bars_[t - 1];
}

NoiseSchedule make_linear_schedule(int steps, double beta_start, double beta_end) {
  if (steps < 1) throw ConfigError("schedule needs at least one step");
  if (!(beta_start > 0.0) || !(beta_start <= beta_end) || !(beta_end < 1.0))
    throw ConfigError("schedule requires 0 < beta_start <= beta_end < 1");

  NoiseSchedule s;
  s.betas_.resize(steps);
  s.alpha_bars_.resize(steps);
  double running = 1.0;
  for (int i = 0; i < steps; ++i) {
    const double frac = steps == 1 ? 0.0 : static_cast<double>(i) / (steps - 1);
    s.betas_[i] = beta_start + frac * (beta_end - beta_start);
    running *= 1.0 - s.betas_[i];
    s.alpha_bars_[i] = running;
  }
  return s;
}

MatrixF forward_diffuse(const MatrixF& z, int t, const MatrixF& eps, const NoiseSchedule& schedule) {
  const double abar = schedule.alpha_bar(t);
  if (eps.rows() != z.rows() || eps.cols() != z.cols()) throw ShapeError("noise shape differs from data shape");
  const float a = static_cast<float>(std::sqrt(abar));
  const float b = static_cast<float>(std::sqrt(1.0 - abar));
  return a * z + b * eps;
}

ExpressionSequence forward_diffuse(const ExpressionSequence& z, int t, const MatrixF& eps,
                                   const NoiseSchedule& schedule) {
  return {forward_diffuse(z.values, t, eps, schedule), z.frame_rate};
}

std::vector<int> sample_timesteps(const TimestepGrid& grid, int n, Rng& rng) {
  if (n < 1) throw GridError("need at least one timestep");
  if (grid.t_start < 1 || grid.t_end < grid.t_start) throw GridError("invalid timestep range");

  std::vector<int> out;
  out.reserve(n);
  if (grid.mode == GridMode::UniformRandom) {
    std::uniform_int_distribution<int> dist(grid.t_start, grid.t_end);
    for (int i = 0; i < n; ++i) out.push_back(dist(rng));
    return out;
  }

  if (n == 1) {
    // A single point only covers both endpoints on a degenerate range.
    if (grid.t_start != grid.t_end) throw GridError("one equally spaced point cannot include both endpoints");
    return {grid.t_start};
  }
  const double span = grid.t_end - grid.t_start;
  for (int j = 0; j < n; ++j) {
    const int t = static_cast<int>(std::lround(grid.t_start + j * span / (n - 1)));
    if (out.empty() || out.back() != t) out.push_back(t);
  }
  if (static_cast<int>(out.size()) != n)
    throw GridError(std::to_string(n) + " equally spaced points collide inside [" + std::to_string(grid.t_start) +
                    ", " + std::to_string(grid.t_end) + "]");
  return out;
}

}  // namespace expose
