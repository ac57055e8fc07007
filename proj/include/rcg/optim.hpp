#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>

#include "rcg/autograd.hpp"
#include "rcg/rng.hpp"

namespace rcg {

struct AdamConfig {
  double lr = 2e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adam with bias correction. Moments are keyed by parameter name so they
/// survive a checkpoint round trip.
class Adam {
 public:
  explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}

  /// Throws NumericalError if any gradient is non-finite; no parameter is
  /// touched in that case.
  void step(std::span<Parameter* const> params);

  void set_lr(double lr) { cfg_.lr = lr; }
  double lr() const { return cfg_.lr; }
  std::int64_t steps() const { return t_; }

  struct Moments {
    Tensor m;
    Tensor v;
  };
  const std::map<std::string, Moments>& moments() const { return moments_; }
  void restore(std::int64_t steps, std::map<std::string, Moments> moments) {
    t_ = steps;
    moments_ = std::move(moments);
  }

 private:
  AdamConfig cfg_;
  std::int64_t t_ = 0;
  std::map<std::string, Moments> moments_;
};

/// Rescales gradients so their global L2 norm is at most max_norm.
/// Returns the norm before clipping.
double clip_grad_norm(std::span<Parameter* const> params, double max_norm);

/// base * factor^(epoch / every), epochs counted from 0.
double step_decay_lr(double base, int epoch, double factor, int every);

/// Uniform in +-sqrt(6 / (fan_in + fan_out)).
Tensor xavier_uniform(Shape shape, std::size_t fan_in, std::size_t fan_out, Rng& rng);

}  // namespace rcg
