#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "kamim/error.hpp"
#include "kamim/tensor.hpp"

namespace kamim {

struct OptimConfig {
  double lr = 8e-4;
  double weight_decay = 0.05;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  int epochs = 30;
  int warmup_epochs = 3;
  int batch_size = 64;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(lr > 0.0)) throw InvalidArgument("OptimConfig: lr must be > 0");
    if (weight_decay < 0.0) throw InvalidArgument("OptimConfig: weight_decay must be >= 0");
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
      throw InvalidArgument("OptimConfig: betas must be in [0, 1)");
    }
    if (!(eps > 0.0)) throw InvalidArgument("OptimConfig: eps must be > 0");
    if (epochs < 0 || warmup_epochs < 0 || warmup_epochs > epochs) {
      throw InvalidArgument("OptimConfig: need 0 <= warmup_epochs <= epochs");
    }
    if (batch_size < 1) throw InvalidArgument("OptimConfig: batch_size must be >= 1");
  }
};

/// Linear warmup from 0 to peak, then half-cosine decay to 0. `step` may be
/// fractional.
inline double lr_at(double step, std::int64_t total_steps, std::int64_t warmup_steps, double peak_lr) {
  if (total_steps < 1 || warmup_steps < 0 || warmup_steps > total_steps) {
    throw InvalidArgument("lr_at: need 0 <= warmup_steps <= total_steps, total_steps >= 1");
  }
  if (!(step >= 0.0) || step >= static_cast<double>(total_steps)) {
    throw InvalidArgument("lr_at: step " + std::to_string(step) + " outside [0, " +
                          std::to_string(total_steps) + ")");
  }
  const auto warm = static_cast<double>(warmup_steps);
  if (step < warm) return peak_lr * step / warm;
  const double progress = (step - warm) / static_cast<double>(total_steps - warmup_steps);
  return peak_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

inline double lr_at(std::int64_t step, std::int64_t total_steps, std::int64_t warmup_steps, double peak_lr) {
  return lr_at(static_cast<double>(step), total_steps, warmup_steps, peak_lr);
}

struct AdamMoments {
  std::vector<double> m;
  std::vector<double> v;
};

/// One AdamW update of a single parameter at step t (1-based): decoupled
/// decay p -= lr*wd*p, then p -= lr * m_hat / (sqrt(v_hat) + eps).
inline void adamw_step(std::span<float> param, std::span<const float> grad, AdamMoments& state,
                       std::int64_t t, double lr_t, const OptimConfig& cfg, bool decay = true,
                       const std::string& name = "parameter") {
  if (grad.size() != param.size()) throw ShapeError("adamw_step: gradient size mismatch for " + name);
  if (state.m.empty() && state.v.empty()) {
    state.m.assign(param.size(), 0.0);
    state.v.assign(param.size(), 0.0);
  }
  if (state.m.size() != param.size() || state.v.size() != param.size()) {
    throw ShapeError("adamw_step: optimizer state size mismatch for " + name);
  }
  if (t < 1) throw InvalidArgument("adamw_step: step index is 1-based");
  for (std::size_t i = 0; i < grad.size(); ++i) {
    if (!std::isfinite(grad[i])) {
      throw NumericError("adamw_step: non-finite gradient in " + name + " at element " + std::to_string(i));
    }
  }
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
  const double shrink = decay ? 1.0 - lr_t * cfg.weight_decay : 1.0;
  for (std::size_t i = 0; i < param.size(); ++i) {
    const double g = grad[i];
    state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
    state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g * g;
    const double m_hat = state.m[i] / bc1;
    const double v_hat = state.v[i] / bc2;
    double p = static_cast<double>(param[i]) * shrink;
    p -= lr_t * m_hat / (std::sqrt(v_hat) + cfg.eps);
    param[i] = static_cast<float>(p);
  }
}

/// Weight decay applies to matrices only; biases, norm parameters, position
/// embeddings and the mask token are exempt.
inline bool decays(const std::string& name) {
  return name.size() >= 7 && name.compare(name.size() - 7, 7, ".weight") == 0;
}

class AdamW {
 public:
  AdamW(std::vector<std::pair<std::string, Tensor*>> params, const OptimConfig& cfg)
      : params_(std::move(params)), cfg_(cfg), state_(params_.size()) {
    cfg_.validate();
  }

  /// Applies one update with learning rate lr_t to every parameter that has
  /// a gradient.
  void step(double lr_t) {
    ++t_;
    for (std::size_t i = 0; i < params_.size(); ++i) {
      auto& [name, p] = params_[i];
      if (!p->has_grad()) continue;
      adamw_step(p->mutable_data(), p->grad(), state_[i], t_, lr_t, cfg_, decays(name), name);
    }
  }

  void zero_grad() {
    for (auto& [name, p] : params_) p->zero_grad();
  }

  std::int64_t steps() const { return t_; }

 private:
  std::vector<std::pair<std::string, Tensor*>> params_;
  OptimConfig cfg_;
  std::vector<AdamMoments> state_;
  std::int64_t t_ = 0;
};

}  // namespace kamim
