#pragma once

// Adam with bias correction plus the warmup/inverse-sqrt learning-rate
// schedule. Templated so the hand-computed recurrence tests can run in
// double while training runs in float.

#include <cmath>
#include <map>
#include <string>

#include "lexstress/tensor.hpp"
#include "lexstress/util.hpp"

namespace lexstress::train {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.997;
  double eps = 1e-9;

  void validate() const {
    if (!(beta1 > 0.0 && beta1 < 1.0 && beta2 > 0.0 && beta2 < 1.0))
      throw InputError("adam betas must lie in (0,1)");
    if (!(eps > 0.0)) throw InputError("adam eps must be positive");
  }
};

// lr(s) = factor * d_model^-0.5 * min(s^-0.5, s * warmup^-1.5); peaks at
// s = warmup. A positive constant_lr bypasses the schedule entirely.
struct LrSchedule {
  double factor = 0.15;
  int warmup_steps = 4000;
  double constant_lr = 0.0;

  void validate() const {
    if (warmup_steps < 1) throw InputError("warmup_steps must be >= 1");
    if (factor < 0.0 || constant_lr < 0.0)
      throw InputError("learning rates must be non-negative");
  }

  double at(int64_t step, int d_model) const {
    if (constant_lr > 0.0) return constant_lr;
    const double s = static_cast<double>(step);
    const double w = static_cast<double>(warmup_steps);
    return factor / std::sqrt(static_cast<double>(d_model)) *
           std::min(1.0 / std::sqrt(s), s / (w * std::sqrt(w)));
  }
};

template <class Real>
struct AdamState {
  std::map<std::string, nn::Tensor<Real>> m;
  std::map<std::string, nn::Tensor<Real>> v;
  int64_t step = 0;

  static AdamState zeros_like(
      const std::map<std::string, nn::Tensor<Real>>& params) {
    AdamState s;
    for (const auto& [name, t] : params) {
      s.m.emplace(name, nn::Tensor<Real>(t.shape));
      s.v.emplace(name, nn::Tensor<Real>(t.shape));
    }
    return s;
  }
};

// One Adam update over every named parameter. `step` is 1-based and must
// already include this step (bias correction uses it).
template <class Real>
void adam_step(std::map<std::string, nn::Tensor<Real>>& params,
               const std::map<std::string, nn::Tensor<Real>>& grads,
               AdamState<Real>& state, int64_t step, double lr,
               const AdamConfig& cfg) {
  cfg.validate();
  if (step < 1) throw ComputeError("adam step index must be >= 1");
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step));
  for (auto& [name, p] : params) {
    auto git = grads.find(name);
    if (git == grads.end())
      throw ComputeError(cat("adam_step: no gradient for ", name));
    const auto& g = git->second;
    auto& m = state.m.at(name);
    auto& v = state.v.at(name);
    if (!(g.shape == p.shape) || !(m.shape == p.shape))
      throw ComputeError(cat("adam_step: shape mismatch for ", name, ": ",
                             p.shape.str(), " vs ", g.shape.str()));
    for (int64_t i = 0; i < p.size(); ++i) {
      const double gi = static_cast<double>(g.v[i]);
      const double mi =
          cfg.beta1 * static_cast<double>(m.v[i]) + (1.0 - cfg.beta1) * gi;
      const double vi = cfg.beta2 * static_cast<double>(v.v[i]) +
                        (1.0 - cfg.beta2) * gi * gi;
      m.v[i] = static_cast<Real>(mi);
      v.v[i] = static_cast<Real>(vi);
      const double mhat = mi / bc1;
      const double vhat = vi / bc2;
      p.v[i] = static_cast<Real>(static_cast<double>(p.v[i]) -
                                 lr * mhat / (std::sqrt(vhat) + cfg.eps));
    }
  }
  state.step = step;
}

}  // namespace lexstress::train
