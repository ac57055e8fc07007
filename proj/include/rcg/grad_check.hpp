#pragma once

#include <functional>
#include <span>
#include <string>

#include "rcg/autograd.hpp"

namespace rcg {

struct GradCheckReport {
  bool passed = false;
  double max_rel_error = 0.0;
  std::string worst_parameter;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  std::size_t checked = 0;
  std::string failure;  // set when a non-finite gradient was met
};

/// Compares backward() against central differences (f(x+eps)-f(x-eps))/2eps
/// for every element of every listed parameter. Relative error is
/// |a-n| / max(1e-8, |a|+|n|). `build` must be a pure function of the
/// parameter values.
GradCheckReport grad_check(std::span<Parameter* const> params, const std::function<Var(Tape&)>& build,
                           double tolerance, double eps = 1e-5);

}  // namespace rcg
