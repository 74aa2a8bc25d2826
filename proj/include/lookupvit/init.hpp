#pragma once

#include <random>

#include "lookupvit/tensor.hpp"

namespace lookupvit {

using Rng = std::mt19937_64;

/// Normal(0, stddev) samples drawn in double and narrowed, so both precisions
/// see the same initial values for a given seed.
template <typename T>
Tensor<T> normal_tensor(Shape shape, double stddev, Rng& rng) {
  Tensor<T> t(std::move(shape));
  std::normal_distribution<double> dist(0.0, stddev);
  for (auto& v : t.data()) v = static_cast<T>(dist(rng));
  return t;
}

}  // namespace lookupvit
