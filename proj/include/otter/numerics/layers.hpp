#pragma once

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "otter/numerics/adam.hpp"
#include "otter/numerics/autodiff.hpp"
#include "otter/rng.hpp"

namespace otter::num {

/// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) fill, the usual dense-layer
/// default for both weights and biases.
inline Tensor uniform_fan_in(Shape shape, std::size_t fan_in, Rng& rng) {
  Tensor t(std::move(shape));
  const double bound = 1.0 / std::sqrt(static_cast<double>(std::max<std::size_t>(fan_in, 1)));
  for (double& x : t.values()) x = rng.uniform(-bound, bound);
  return t;
}

/// Puts named parameters on a tape once per step and hands their gradients
/// back to the optimizer afterwards.
class Binder {
 public:
  explicit Binder(Tape& tape, bool track = true) : tape_(tape), track_(track) {}

  Var operator()(const std::string& name, Tensor& p) {
    if (auto it = preset_.find(name); it != preset_.end()) return it->second;
    auto it = bound_.find(name);
    if (it != bound_.end()) return it->second.var;
    Var v = track_ ? tape_.param(p) : tape_.constant(p);
    bound_.emplace(name, Entry{&p, v});
    return v;
  }

  /// Read-only parameters can only be bound as constants.
  Var operator()(const std::string& name, const Tensor& p) {
    if (auto it = preset_.find(name); it != preset_.end()) return it->second;
    if (track_) throw Error(Errc::InvalidConfig, "cannot track gradients of read-only parameter " + name);
    auto it = constants_.find(name);
    if (it != constants_.end()) return it->second;
    return constants_.emplace(name, tape_.constant(p)).first->second;
  }

  /// Substitutes an existing tape value for the named parameter. Used to
  /// drive a model from externally created leaves, e.g. in gradient checks.
  void preset(const std::string& name, Var v) { preset_.insert_or_assign(name, v); }

  Tape& tape() { return tape_; }

  /// Gradients of every bound parameter, in name order. Valid after
  /// tape.backward().
  std::vector<ParamGrad> gradients() {
    std::vector<ParamGrad> out;
    out.reserve(bound_.size());
    for (auto& [name, e] : bound_) out.push_back({name, e.param, &tape_.grad(e.var)});
    return out;
  }

 private:
  struct Entry {
    Tensor* param;
    Var var;
  };
  Tape& tape_;
  bool track_;
  std::map<std::string, Entry> bound_;
  std::map<std::string, Var> constants_;
  std::map<std::string, Var> preset_;
};

/// y = x W + b with W stored [in x out].
struct Linear {
  Tensor weight;
  Tensor bias;

  static Linear init(std::size_t in, std::size_t out, Rng& rng) {
    return {uniform_fan_in({in, out}, in, rng), uniform_fan_in({out}, in, rng)};
  }

  std::size_t in_dim() const { return weight.rows(); }
  std::size_t out_dim() const { return weight.cols(); }

  Var forward(Binder& b, const std::string& name, Var x) {
    return add_bias(matmul(x, b(name + ".W", weight)), b(name + ".b", bias));
  }
  Var forward(Binder& b, const std::string& name, Var x) const {
    return add_bias(matmul(x, b(name + ".W", weight)), b(name + ".b", bias));
  }

  template <typename F>
  void visit(const std::string& name, F&& f) {
    f(name + ".W", weight);
    f(name + ".b", bias);
  }
  template <typename F>
  void visit(const std::string& name, F&& f) const {
    f(name + ".W", weight);
    f(name + ".b", bias);
  }
};

/// Stack of Linear layers with relu between them (none after the last).
struct Mlp {
  std::vector<Linear> layers;

  static Mlp init(std::size_t in, const std::vector<std::size_t>& hidden, std::size_t out, Rng& rng) {
    Mlp m;
    std::size_t prev = in;
    for (std::size_t h : hidden) {
      m.layers.push_back(Linear::init(prev, h, rng));
      prev = h;
    }
    m.layers.push_back(Linear::init(prev, out, rng));
    return m;
  }

  Var forward(Binder& b, const std::string& name, Var x) { return forward_impl(*this, b, name, x); }
  Var forward(Binder& b, const std::string& name, Var x) const { return forward_impl(*this, b, name, x); }

  template <typename F>
  void visit(const std::string& name, F&& f) {
    for (std::size_t i = 0; i < layers.size(); ++i) layers[i].visit(name + "." + std::to_string(i), f);
  }
  template <typename F>
  void visit(const std::string& name, F&& f) const {
    for (std::size_t i = 0; i < layers.size(); ++i) layers[i].visit(name + "." + std::to_string(i), f);
  }

 private:
  template <typename Self>
  static Var forward_impl(Self& self, Binder& b, const std::string& name, Var x) {
    for (std::size_t i = 0; i < self.layers.size(); ++i) {
      x = self.layers[i].forward(b, name + "." + std::to_string(i), x);
      if (i + 1 < self.layers.size()) x = relu(x);
    }
    return x;
  }
};

}  // namespace otter::num
