#pragma once

#include <cmath>
#include <cstdint>
#include <random>

#include <boost/random/normal_distribution.hpp>

#include "lit/tensor.hpp"

namespace lit {

using Rng = std::mt19937_64;

// Normal(0, std) samples redrawn until they fall inside ±2·std.
template <typename T>
Tensor<T> trunc_normal(Shape shape, Rng& rng, double stddev = 0.02) {
  Tensor<T> t(std::move(shape));
  boost::random::normal_distribution<double> dist(0.0, 1.0);  // ziggurat
  for (auto& v : t.mutable_data()) {
    double z;
    do {
      z = dist(rng);
    } while (std::abs(z) > 2.0);
    v = static_cast<T>(z * stddev);
  }
  return t;
}

template <typename T>
Tensor<T> uniform(Shape shape, Rng& rng, double lo, double hi) {
  Tensor<T> t(std::move(shape));
  std::uniform_real_distribution<double> dist(lo, hi);
  for (auto& v : t.mutable_data()) v = static_cast<T>(dist(rng));
  return t;
}

}  // namespace lit
