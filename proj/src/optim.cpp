#include "rcg/optim.hpp"

#include <cmath>

namespace rcg {

void Adam::step(std::span<Parameter* const> params) {
  for (const Parameter* p : params) {
    if (!p->grad.all_finite()) throw NumericalError("adam: non-finite gradient in '" + p->name + "'");
  }
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (Parameter* p : params) {
    auto [it, inserted] = moments_.try_emplace(p->name);
    Moments& mo = it->second;
    if (inserted || mo.m.shape() != p->value.shape()) {
      mo.m = Tensor(p->value.shape());
      mo.v = Tensor(p->value.shape());
    }
    for (std::size_t i = 0; i < p->value.numel(); ++i) {
      const double g = p->grad[i];
      mo.m[i] = cfg_.beta1 * mo.m[i] + (1.0 - cfg_.beta1) * g;
      mo.v[i] = cfg_.beta2 * mo.v[i] + (1.0 - cfg_.beta2) * g * g;
      const double mhat = mo.m[i] / bc1;
      const double vhat = mo.v[i] / bc2;
      p->value[i] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
    }
  }
}

double clip_grad_norm(std::span<Parameter* const> params, double max_norm) {
  double ss = 0.0;
  for (const Parameter* p : params) {
    for (double g : p->grad.data()) ss += g * g;
  }
  const double norm = std::sqrt(ss);
  if (max_norm > 0.0 && norm > max_norm) {
    const double scale = max_norm / norm;
    for (Parameter* p : params) {
      for (double& g : p->grad.storage()) g *= scale;
    }
  }
  return norm;
}

double step_decay_lr(double base, int epoch, double factor, int every) {
  if (every <= 0) return base;
  return base * std::pow(factor, epoch / every);
}

Tensor xavier_uniform(Shape shape, std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  Tensor t(std::move(shape));
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  for (double& v : t.storage()) v = rng.uniform(-bound, bound);
  return t;
}

}  // namespace rcg
