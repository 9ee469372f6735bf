#include "score/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace score {

double grad_check(const ScalarFn& f, const GradientFn& gradient, const Tensor64& x, double eps) {
  if (!(eps >= 1e-7 && eps <= 1e-3)) {
    throw ConfigError("grad_check: eps " + std::to_string(eps) + " outside [1e-7, 1e-3]");
  }
  const Tensor64 analytic = gradient(x);
  if (analytic.shape() != x.shape()) {
    throw DimensionError("grad_check: gradient shape " + shape_string(analytic.shape()) +
                         " differs from input " + shape_string(x.shape()));
  }
  require_finite(analytic, "grad_check analytic gradient");

  Tensor64 probe = x;
  double worst = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double saved = probe[i];
    probe[i] = saved + eps;
    const double up = f(probe);
    probe[i] = saved - eps;
    const double down = f(probe);
    probe[i] = saved;
    if (!std::isfinite(up) || !std::isfinite(down)) {
      throw NumericError("grad_check: non-finite function value at coordinate " + std::to_string(i));
    }
    const double numeric = (up - down) / (2.0 * eps);
    const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), 1e-8});
    worst = std::max(worst, std::abs(analytic[i] - numeric) / denom);
  }
  return worst;
}

}  // namespace score
