#pragma once

#include "json.hpp"
#include "rcg/grad_check.hpp"

namespace rcg {

/// Finite-difference checks over every layer, the retriever pipeline, the
/// full caption loss and the joint retriever-to-caption path, on small
/// fixed fixtures.
/// {"passed", "max_rel_error", "tolerance", "eps", "checks": [{"name", "passed", "max_rel_error", "checked", "worst"}]}
nlohmann::ordered_json gradient_suite(double tolerance = 1e-4, double eps = 1e-5);

}  // namespace rcg
