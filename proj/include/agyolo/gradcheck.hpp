#pragma once

#include <cstddef>
#include <functional>
#include <span>

namespace agyolo {

struct GradientReport {
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  std::size_t checked = 0;
};

// Compares `analytic` (d loss / d params) with central finite differences.
// `params` is perturbed in place and restored; `loss` must read it. Relative
// error uses max(|a|, |n|, floor) as denominator so that entries whose true
// gradient is ~0 are judged on absolute error.
GradientReport check_gradient(std::span<double> params, const std::function<double()>& loss,
                              std::span<const double> analytic, double step = 1e-5,
                              double floor = 1e-4);

}  // namespace agyolo
