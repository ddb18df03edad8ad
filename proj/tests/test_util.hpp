#pragma once

#include <cstdint>
#include <random>

#include "ldct/tensor.hpp"

namespace ldct::testing {

/// Uniform values in [lo, hi); when `gap` > 0, values within `gap` of zero are
/// pushed away so kinked functions are probed away from their kinks.
template <class T>
Tensor<T> random_tensor(const Shape& shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0,
                        double gap = 0.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor<T> t(shape);
  for (auto& v : t.values()) {
    double x = u(rng);
    if (gap > 0.0 && std::abs(x) < gap) x = x < 0 ? x - gap : x + gap;
    v = static_cast<T>(x);
  }
  return t;
}

}  // namespace ldct::testing
