#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <vector>

#include "proflow/grid_field.hpp"
#include "proflow/rng.hpp"

namespace proflow::testing {

inline Field random_field(const Grid& g, int channels, std::uint64_t seed, double scale = 1.0,
                          double offset = 0.0) {
  CounterRng rng(seed);
  Field u(g, channels);
  for (double& v : u.values) v = offset + scale * rng.normal();
  return u;
}

/// Central-difference directional derivative of a scalar functional.
inline double fd_directional(const std::function<double(const Field&)>& fn, const Field& u,
                             const Field& dir, double eps) {
  Field up = u, um = u;
  up.axpy(eps, dir);
  um.axpy(-eps, dir);
  return (fn(up) - fn(um)) / (2.0 * eps);
}

inline double rel_err(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-300});
}

inline double max_abs(const std::vector<double>& v) {
  double m = 0.0;
  for (double x : v) m = std::max(m, std::abs(x));
  return m;
}

}  // namespace proflow::testing
