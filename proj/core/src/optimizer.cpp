#include "expose/optimizer.hpp"

#include <cmath>

#include "expose/errors.hpp"

namespace expose {

std::string to_string(OptimizerKind kind) { return kind == OptimizerKind::Adan ? "adan" : "adam"; }

OptimizerKind parse_optimizer_kind(const std::string& name) {
  if (name == "adan") return OptimizerKind::Adan;
  if (name == "adam") return OptimizerKind::Adam;
  throw ConfigError("unknown optimizer '" + name + "' (expected adan or adam)");
}

OptimizerConfig OptimizerConfig::adan(double lr) {
  OptimizerConfig c;
  c.learning_rate = lr;
  return c;
}

OptimizerConfig OptimizerConfig::adam(double lr) {
  OptimizerConfig c;
  c.kind = OptimizerKind::Adam;
  c.learning_rate = lr;
  c.beta1 = 0.9;
  c.beta2 = 0.999;
  c.beta3 = 0.0;
  return c;
}

void OptimizerConfig::validate() const {
  auto unit = [](double b) { return b >= 0.0 && b < 1.0; };
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) throw ConfigError("learning rate must be positive");
  if (!unit(beta1) || !unit(beta2) || !unit(beta3)) throw ConfigError("optimizer betas must lie in [0, 1)");
  if (kind == OptimizerKind::Adan && (beta1 == 0.0 || beta2 == 0.0 || beta3 == 0.0))
    throw ConfigError("adan betas must be positive");
  if (!(eps > 0.0)) throw ConfigError("optimizer eps must be positive");
  if (weight_decay < 0.0 || grad_clip < 0.0) throw ConfigError("weight decay and clip must be non-negative");
}

template <class S>
AdaptiveOptimizer<S>::AdaptiveOptimizer(OptimizerConfig config) : config_(config) {
  config_.validate();
}

template <class S>
void AdaptiveOptimizer<S>::step(const std::vector<Mat<S>*>& params, const std::vector<const Mat<S>*>& grads) {
  if (params.size() != grads.size()) throw ShapeError("optimizer got mismatched parameter and gradient lists");
  if (step_ == 0) {
    for (auto* p : params) {
      m_.push_back(Mat<S>::Zero(p->rows(), p->cols()));
      v_.push_back(Mat<S>::Zero(p->rows(), p->cols()));
      n_.push_back(Mat<S>::Zero(p->rows(), p->cols()));
      prev_grad_.push_back(Mat<S>::Zero(p->rows(), p->cols()));
    }
  }
  if (params.size() != m_.size()) throw ShapeError("optimizer parameter list changed between steps");
  for (std::size_t i = 0; i < params.size(); ++i)
    if (params[i]->rows() != m_[i].rows() || params[i]->cols() != m_[i].cols() ||
        grads[i]->rows() != m_[i].rows() || grads[i]->cols() != m_[i].cols())
      throw ShapeError("optimizer tensor " + std::to_string(i) + " changed shape");

  S clip = S(1);
  if (config_.grad_clip > 0.0) {
    double sq = 0.0;
    for (auto* g : grads) sq += static_cast<double>(g->squaredNorm());
    const double norm = std::sqrt(sq);
    if (norm > config_.grad_clip) clip = static_cast<S>(config_.grad_clip / norm);
  }

  ++step_;
  const double k = static_cast<double>(step_);
  const S lr = static_cast<S>(config_.learning_rate);
  const S eps = static_cast<S>(config_.eps);
  const S decay = static_cast<S>(config_.weight_decay);

  if (config_.kind == OptimizerKind::Adam) {
    const S b1 = static_cast<S>(config_.beta1), b2 = static_cast<S>(config_.beta2);
    const S c1 = static_cast<S>(1.0 - std::pow(config_.beta1, k));
    const S c2 = static_cast<S>(1.0 - std::pow(config_.beta2, k));
    for (std::size_t i = 0; i < params.size(); ++i) {
      auto g = (*grads[i]).array() * clip;
      m_[i].array() = b1 * m_[i].array() + (S(1) - b1) * g;
      v_[i].array() = b2 * v_[i].array() + (S(1) - b2) * g.square();
      auto& p = *params[i];
      if (decay > 0) p *= S(1) - lr * decay;
      p.array() -= lr * (m_[i].array() / c1) / ((v_[i].array() / c2).sqrt() + eps);
    }
    return;
  }

  // Adan: Nesterov-style extrapolation with a gradient-difference moment.
  const S b1 = static_cast<S>(config_.beta1), b2 = static_cast<S>(config_.beta2), b3 = static_cast<S>(config_.beta3);
  const S c1 = static_cast<S>(1.0 - std::pow(1.0 - config_.beta1, k));
  const S c2 = static_cast<S>(1.0 - std::pow(1.0 - config_.beta2, k));
  const S c3 = static_cast<S>(1.0 - std::pow(1.0 - config_.beta3, k));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Mat<S> g = *grads[i] * clip;
    const Mat<S> diff = step_ == 1 ? Mat<S>::Zero(g.rows(), g.cols()) : Mat<S>(g - prev_grad_[i]);
    m_[i] = (S(1) - b1) * m_[i] + b1 * g;
    v_[i] = (S(1) - b2) * v_[i] + b2 * diff;
    const auto look = g.array() + (S(1) - b2) * diff.array();
    n_[i].array() = (S(1) - b3) * n_[i].array() + b3 * look.square();
    auto& p = *params[i];
    p.array() -= lr * (m_[i].array() / c1 + (S(1) - b2) * v_[i].array() / c2) / ((n_[i].array() / c3).sqrt() + eps);
    if (decay > 0) p /= S(1) + lr * decay;
    prev_grad_[i] = g;
  }
}

template class AdaptiveOptimizer<float>;
template class AdaptiveOptimizer<double>;

}  // namespace expose
