#pragma once

#include <functional>

#include "score/tensor.hpp"

namespace score {

using ScalarFn = std::function<double(const Tensor64&)>;
using GradientFn = std::function<Tensor64(const Tensor64&)>;

/// Compares an analytic gradient against central finite differences.
///
/// Returns max_i |a_i - n_i| / max(|a_i|, |n_i|, 1e-8). `eps` must lie in
/// [1e-7, 1e-3]. Throws NumericError if f or the gradient is non-finite.
double grad_check(const ScalarFn& f, const GradientFn& gradient, const Tensor64& x, double eps = 1e-6);

}  // namespace score
