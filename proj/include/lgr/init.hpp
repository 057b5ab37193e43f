#pragma once

#include <cmath>

#include "lgr/rng.hpp"
#include "lgr/tensor.hpp"

namespace lgr {

/// Glorot-uniform draw in +-sqrt(6 / (fan_in + fan_out)).
inline Tensor glorot_uniform(Shape shape, std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  Tensor t(std::move(shape));
  const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  for (double& x : t.data()) x = rng.uniform(-a, a);
  return t;
}

}  // namespace lgr
