#include "agyolo/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "agyolo/error.hpp"

namespace agyolo {

GradientReport check_gradient(std::span<double> params, const std::function<double()>& loss,
                              std::span<const double> analytic, double step, double floor) {
  if (params.size() != analytic.size()) throw DimensionError("gradient check: size mismatch");
  GradientReport report;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double saved = params[i];
    params[i] = saved + step;
    const double up = loss();
    params[i] = saved - step;
    const double down = loss();
    params[i] = saved;
    const double numeric = (up - down) / (2 * step);
    const double abs_err = std::abs(numeric - analytic[i]);
    const double denom = std::max({std::abs(numeric), std::abs(analytic[i]), floor});
    report.max_abs_error = std::max(report.max_abs_error, abs_err);
    report.max_rel_error = std::max(report.max_rel_error, abs_err / denom);
    ++report.checked;
  }
  return report;
}

}  // namespace agyolo
