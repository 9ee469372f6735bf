#pragma once

#include "score/rng.hpp"
#include "score/tensor.hpp"

namespace score::bench {

template <typename T = float>
BasicTensor<T> random_tensor(Shape shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  BasicTensor<T> t(std::move(shape));
  Rng rng(seed);
  for (auto& v : t.data()) v = static_cast<T>(rng.uniform(lo, hi));
  return t;
}

}  // namespace score::bench
