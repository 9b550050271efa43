#pragma once

// Stationary Gaussian random fields by spectral filtering of white noise.
//
// For every Fourier mode k (signed integer frequencies on the unit period) two
// standard normals (re, im) are drawn in row-major mode order, multiplied by
//   amplitude * (1 + (2 pi |k| length_scale)^2)^(-power / 2),
// and the real part of the inverse transform (no 1/N factor) is returned. The
// pointwise variance is therefore the sum of squared filter values.

#include <cmath>
#include <cstdint>
#include <numbers>
#include <vector>

#include "proflow/errors.hpp"
#include "proflow/grid_field.hpp"
#include "proflow/rng.hpp"

namespace proflow {

struct GrfConfig {
  double length_scale = 0.1;
  double power = 2.0;
  double amplitude = 1.0;

  void validate() const {
    if (!(length_scale > 0.0) || !std::isfinite(length_scale)) {
      throw ConfigError("grf length_scale must be positive");
    }
    if (!std::isfinite(power)) throw ConfigError("grf power must be finite");
    if (!(amplitude >= 0.0) || !std::isfinite(amplitude)) {
      throw ConfigError("grf amplitude must be nonnegative");
    }
  }

  double filter(double freq_norm) const {
    const double r = 2.0 * std::numbers::pi * freq_norm * length_scale;
    return amplitude * std::pow(1.0 + r * r, -0.5 * power);
  }

  friend bool operator==(const GrfConfig&, const GrfConfig&) = default;
};

namespace detail {

inline int signed_frequency(int k, int n) { return k < (n + 1) / 2 ? k : k - n; }

/// cos/sin of 2 pi k j / n for all k, j with the phase reduced mod n first.
struct Twiddles {
  int n = 0;
  std::vector<double> c, s;
  explicit Twiddles(int n_) : n(n_), c(static_cast<std::size_t>(n_) * n_), s(c.size()) {
    for (int k = 0; k < n; ++k) {
      for (int j = 0; j < n; ++j) {
        const double ph = 2.0 * std::numbers::pi * ((static_cast<long>(k) * j) % n) / n;
        c[static_cast<std::size_t>(k) * n + j] = std::cos(ph);
        s[static_cast<std::size_t>(k) * n + j] = std::sin(ph);
      }
    }
  }
};

/// Writes one filtered-noise realization into `out` (n0 * n1 values).
inline void grf_fill(int n0, int n1, const GrfConfig& cfg, std::uint64_t seed, double* out) {
  CounterRng rng(seed);
  std::vector<double> re(static_cast<std::size_t>(n0) * n1), im(re.size());
  for (int k0 = 0; k0 < n0; ++k0) {
    const double f0 = signed_frequency(k0, n0);
    for (int k1 = 0; k1 < n1; ++k1) {
      const double f1 = signed_frequency(k1, n1);
      const double phi = cfg.filter(std::sqrt(f0 * f0 + f1 * f1));
      const std::size_t i = static_cast<std::size_t>(k0) * n1 + k1;
      re[i] = phi * rng.normal();
      im[i] = phi * rng.normal();
    }
  }
  const Twiddles t0(n0), t1(n1);
  // Inverse transform along axis 1, then the real part along axis 0.
  std::vector<double> bre(re.size(), 0.0), bim(re.size(), 0.0);
  for (int k0 = 0; k0 < n0; ++k0) {
    for (int j1 = 0; j1 < n1; ++j1) {
      double sr = 0.0, si = 0.0;
      for (int k1 = 0; k1 < n1; ++k1) {
        const std::size_t i = static_cast<std::size_t>(k0) * n1 + k1;
        const std::size_t w = static_cast<std::size_t>(k1) * n1 + j1;
        sr += re[i] * t1.c[w] - im[i] * t1.s[w];
        si += re[i] * t1.s[w] + im[i] * t1.c[w];
      }
      bre[static_cast<std::size_t>(k0) * n1 + j1] = sr;
      bim[static_cast<std::size_t>(k0) * n1 + j1] = si;
    }
  }
  for (int j0 = 0; j0 < n0; ++j0) {
    for (int j1 = 0; j1 < n1; ++j1) {
      double s = 0.0;
      for (int k0 = 0; k0 < n0; ++k0) {
        const std::size_t i = static_cast<std::size_t>(k0) * n1 + j1;
        const std::size_t w = static_cast<std::size_t>(k0) * n0 + j0;
        s += bre[i] * t0.c[w] - bim[i] * t0.s[w];
      }
      out[static_cast<std::size_t>(j0) * n1 + j1] = s;
    }
  }
}

}  // namespace detail

/// One GRF realization per channel; channel c uses sub-seed derive_seed(seed, c).
inline Field grf_sample(const Grid& grid, const GrfConfig& cfg, std::uint64_t seed,
                        int channels = 1) {
  grid.validate();
  cfg.validate();
  Field out(grid, channels);
  for (int c = 0; c < channels; ++c) {
    detail::grf_fill(grid.n0, grid.n1, cfg, derive_seed(seed, static_cast<std::uint64_t>(c)),
                     out.channel(c).data());
  }
  return out;
}

/// Periodic 1D realization on n points (initial conditions for Burgers).
inline std::vector<double> grf_line(int n, const GrfConfig& cfg, std::uint64_t seed) {
  if (n < 4) throw ConfigError("grf_line needs at least 4 points");
  cfg.validate();
  CounterRng rng(seed);
  std::vector<double> re(n), im(n);
  for (int k = 0; k < n; ++k) {
    const double phi = cfg.filter(std::abs(detail::signed_frequency(k, n)));
    re[k] = phi * rng.normal();
    im[k] = phi * rng.normal();
  }
  const detail::Twiddles tw(n);
  std::vector<double> out(n, 0.0);
  for (int j = 0; j < n; ++j) {
    double s = 0.0;
    for (int k = 0; k < n; ++k) {
      const std::size_t w = static_cast<std::size_t>(k) * n + j;
      s += re[k] * tw.c[w] - im[k] * tw.s[w];
    }
    out[j] = s;
  }
  return out;
}

/// Pointwise variance of grf_sample on this grid.
inline double grf_variance(const Grid& grid, const GrfConfig& cfg) {
  double v = 0.0;
  for (int k0 = 0; k0 < grid.n0; ++k0) {
    const double f0 = detail::signed_frequency(k0, grid.n0);
    for (int k1 = 0; k1 < grid.n1; ++k1) {
      const double f1 = detail::signed_frequency(k1, grid.n1);
      const double phi = cfg.filter(std::sqrt(f0 * f0 + f1 * f1));
      v += phi * phi;
    }
  }
  return v;
}

/// Reference measure mu0: independent zero-mean Gaussian fields per channel,
/// either spectrally filtered (grf) or pointwise white with std `white_std`.
struct ReferenceMeasure {
  enum class Kind : std::uint32_t { grf = 0, white = 1 };

  Kind kind = Kind::white;
  GrfConfig grf;
  double white_std = 1.0;

  static ReferenceMeasure gaussian_field(const GrfConfig& cfg) { return {Kind::grf, cfg, 1.0}; }
  static ReferenceMeasure white(double std = 1.0) { return {Kind::white, {}, std}; }

  void validate() const {
    if (kind == Kind::grf) grf.validate();
    if (!(white_std >= 0.0) || !std::isfinite(white_std)) {
      throw ConfigError("reference white_std must be finite and nonnegative");
    }
  }

  /// Channel c uses sub-seed derive_seed(seed, c).
  Field sample(const Grid& grid, int channels, std::uint64_t seed) const {
    validate();
    if (kind == Kind::grf) return grf_sample(grid, grf, seed, channels);
    Field out(grid, channels);
    for (int c = 0; c < channels; ++c) {
      CounterRng rng(derive_seed(seed, static_cast<std::uint64_t>(c)));
      for (double& v : out.channel(c)) v = white_std * rng.normal();
    }
    return out;
  }

  double pointwise_variance(const Grid& grid) const {
    return kind == Kind::grf ? grf_variance(grid, grf) : white_std * white_std;
  }

  friend bool operator==(const ReferenceMeasure&, const ReferenceMeasure&) = default;
};

}  // namespace proflow
