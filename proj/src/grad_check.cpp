#include "rcg/grad_check.hpp"

#include <cmath>
#include <vector>

namespace rcg {

GradCheckReport grad_check(std::span<Parameter* const> params, const std::function<Var(Tape&)>& build,
                           double tolerance, double eps) {
  GradCheckReport report;
  for (Parameter* p : params) p->zero_grad();
  {
    Tape tape;
    Var loss = build(tape);
    tape.backward(loss);
  }
  std::vector<Tensor> analytic;
  analytic.reserve(params.size());
  for (Parameter* p : params) analytic.push_back(p->grad);

  auto eval = [&]() {
    Tape tape;
    return build(tape).value().item();
  };

  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Parameter& p = *params[pi];
    for (std::size_t i = 0; i < p.value.numel(); ++i) {
      const double orig = p.value[i];
      p.value[i] = orig + eps;
      const double fp = eval();
      p.value[i] = orig - eps;
      const double fm = eval();
      p.value[i] = orig;
      const double numeric = (fp - fm) / (2.0 * eps);
      const double a = analytic[pi][i];
      ++report.checked;
      if (!std::isfinite(a) || !std::isfinite(numeric)) {
        report.passed = false;
        report.failure = "non-finite gradient at " + p.name + "[" + std::to_string(i) + "]";
        report.worst_parameter = p.name;
        report.worst_index = i;
        report.analytic = a;
        report.numeric = numeric;
        return report;
      }
      const double rel = std::abs(a - numeric) / std::max(1e-8, std::abs(a) + std::abs(numeric));
      if (rel > report.max_rel_error || report.checked == 1) {
        report.max_rel_error = rel;
        report.worst_parameter = p.name;
        report.worst_index = i;
        report.analytic = a;
        report.numeric = numeric;
      }
    }
  }
  report.passed = report.max_rel_error <= tolerance;
  return report;
}

}  // namespace rcg
