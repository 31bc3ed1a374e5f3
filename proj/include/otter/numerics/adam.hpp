#pragma once

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "otter/error.hpp"
#include "otter/numerics/tensor.hpp"

namespace otter::num {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Moment estimates per named parameter. Parameters may appear after the
/// first step (vocabulary growth); each keeps its own step count.
struct AdamState {
  struct Moments {
    Tensor m;
    Tensor v;
    long step = 0;
  };
  std::map<std::string, Moments> slots;
};

/// A parameter tensor paired with its gradient for one optimizer step.
struct ParamGrad {
  std::string name;
  Tensor* param;
  const Tensor* grad;
};

inline void adam_step(const std::vector<ParamGrad>& items, AdamState& state, const AdamConfig& cfg) {
  for (const ParamGrad& it : items) {
    if (it.param->shape() != it.grad->shape()) {
      throw Error(Errc::ShapeMismatch, "adam: parameter " + it.name + " " +
                                           shape_str(it.param->shape()) + " vs gradient " +
                                           shape_str(it.grad->shape()));
    }
  }
  for (const ParamGrad& it : items) {
    auto& slot = state.slots[it.name];
    if (slot.m.shape() != it.param->shape()) {
      slot.m = Tensor::zeros_like(*it.param);
      slot.v = Tensor::zeros_like(*it.param);
      slot.step = 0;
    }
    ++slot.step;
    const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(slot.step));
    const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(slot.step));
    Tensor& p = *it.param;
    const Tensor& g = *it.grad;
    for (std::size_t i = 0; i < p.size(); ++i) {
      slot.m[i] = cfg.beta1 * slot.m[i] + (1.0 - cfg.beta1) * g[i];
      slot.v[i] = cfg.beta2 * slot.v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
      const double mhat = slot.m[i] / c1;
      const double vhat = slot.v[i] / c2;
      p[i] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
    }
  }
}

}  // namespace otter::num
