#pragma once

// Regular grids, multi-channel fields and point observations.
//
// Storage is row-major everywhere: value (c, i0, i1) lives at
// (c * n0 + i0) * n1 + i1. Axis 0 is y for spatial grids and physical time for
// space-time grids; axis 1 is x in both cases.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "proflow/errors.hpp"
#include "proflow/rng.hpp"

namespace proflow {

enum class GridKind : std::uint32_t { spatial2d = 0, spacetime1d = 1 };

inline std::string to_string(GridKind k) {
  return k == GridKind::spatial2d ? "spatial2d" : "spacetime1d";
}

/// Regular tensor grid on [0, extent0] x [0, extent1].
///
/// spatial2d: both axes carry boundary nodes, h = extent / (n - 1).
/// spacetime1d: axis 0 is time with both endpoints stored, h = extent / (n - 1);
/// axis 1 is periodic in x, h = extent / n.
struct Grid {
  GridKind kind = GridKind::spatial2d;
  int n0 = 32;
  int n1 = 32;
  double extent0 = 1.0;
  double extent1 = 1.0;

  static Grid spatial(int ny, int nx) {
    Grid g{GridKind::spatial2d, ny, nx, 1.0, 1.0};
    g.validate();
    return g;
  }

  /// `duration` is the physical time span covered by the nt stored levels.
  static Grid spacetime(int nt, int nx, double duration = 1.0) {
    Grid g{GridKind::spacetime1d, nt, nx, duration, 1.0};
    g.validate();
    return g;
  }

  void validate() const {
    if (n0 < 4 || n1 < 4) {
      throw ConfigError("grid dimensions must be >= 4, got " + std::to_string(n0) + "x" +
                        std::to_string(n1));
    }
    if (!(extent0 > 0.0) || !(extent1 > 0.0) || !std::isfinite(extent0) ||
        !std::isfinite(extent1)) {
      throw ConfigError("grid extents must be finite and positive");
    }
  }

  bool periodic0() const { return false; }
  bool periodic1() const { return kind == GridKind::spacetime1d; }
  double h0() const { return extent0 / (n0 - 1); }
  double h1() const { return periodic1() ? extent1 / n1 : extent1 / (n1 - 1); }
  std::size_t points() const { return static_cast<std::size_t>(n0) * n1; }

  /// Normalized coordinate in [0, 1] of node i along each axis.
  double coord0(int i) const { return static_cast<double>(i) / (n0 - 1); }
  double coord1(int j) const {
    return periodic1() ? static_cast<double>(j) / n1 : static_cast<double>(j) / (n1 - 1);
  }

  friend bool operator==(const Grid&, const Grid&) = default;
};

/// Real-valued multi-channel field on a Grid.
struct Field {
  Grid grid;
  int channels = 1;
  std::vector<double> values;

  Field() = default;
  Field(const Grid& g, int c, double fill = 0.0) : grid(g), channels(c) {
    g.validate();
    if (c < 1) throw ShapeError("field needs at least one channel");
    values.assign(static_cast<std::size_t>(c) * g.points(), fill);
  }
  Field(const Grid& g, int c, std::vector<double> v) : grid(g), channels(c), values(std::move(v)) {
    g.validate();
    if (c < 1) throw ShapeError("field needs at least one channel");
    if (values.size() != static_cast<std::size_t>(c) * g.points()) {
      throw ShapeError("field value count does not match grid and channels");
    }
  }

  std::size_t size() const { return values.size(); }
  std::size_t index(int c, int i0, int i1) const {
    return (static_cast<std::size_t>(c) * grid.n0 + i0) * grid.n1 + i1;
  }
  double& at(int c, int i0, int i1) { return values[index(c, i0, i1)]; }
  double at(int c, int i0, int i1) const { return values[index(c, i0, i1)]; }

  std::span<double> channel(int c) {
    return {values.data() + static_cast<std::size_t>(c) * grid.points(), grid.points()};
  }
  std::span<const double> channel(int c) const {
    return {values.data() + static_cast<std::size_t>(c) * grid.points(), grid.points()};
  }

  bool same_shape(const Field& o) const { return grid == o.grid && channels == o.channels; }

  bool all_finite() const {
    for (double v : values) {
      if (!std::isfinite(v)) return false;
    }
    return true;
  }

  Field& operator+=(const Field& o) {
    require_same_shape(o);
    for (std::size_t i = 0; i < values.size(); ++i) values[i] += o.values[i];
    return *this;
  }
  Field& operator-=(const Field& o) {
    require_same_shape(o);
    for (std::size_t i = 0; i < values.size(); ++i) values[i] -= o.values[i];
    return *this;
  }
  Field& operator*=(double s) {
    for (double& v : values) v *= s;
    return *this;
  }
  /// this += s * o
  Field& axpy(double s, const Field& o) {
    require_same_shape(o);
    for (std::size_t i = 0; i < values.size(); ++i) values[i] += s * o.values[i];
    return *this;
  }

  void require_same_shape(const Field& o) const {
    if (!same_shape(o)) throw ShapeError("field shapes differ");
  }
};

inline Field operator+(Field a, const Field& b) { return a += b; }
inline Field operator-(Field a, const Field& b) { return a -= b; }
inline Field operator*(double s, Field a) { return a *= s; }

inline double dot(const Field& a, const Field& b) {
  a.require_same_shape(b);
  double s = 0.0;
  for (std::size_t i = 0; i < a.values.size(); ++i) s += a.values[i] * b.values[i];
  return s;
}

inline double squared_norm(const Field& a) { return dot(a, a); }

/// Stacks single- or multi-channel fields on one grid along the channel axis.
inline Field stack_channels(const std::vector<const Field*>& parts) {
  if (parts.empty()) throw ShapeError("nothing to stack");
  int channels = 0;
  for (const Field* p : parts) {
    if (!(p->grid == parts.front()->grid)) throw ShapeError("stacked fields must share a grid");
    channels += p->channels;
  }
  Field out(parts.front()->grid, channels);
  std::size_t offset = 0;
  for (const Field* p : parts) {
    std::copy(p->values.begin(), p->values.end(), out.values.begin() + offset);
    offset += p->values.size();
  }
  return out;
}

inline Field extract_channel(const Field& u, int c) {
  if (c < 0 || c >= u.channels) throw ShapeError("channel index out of range");
  auto ch = u.channel(c);
  return Field(u.grid, 1, std::vector<double>(ch.begin(), ch.end()));
}

/// Linear flow-matching interpolant (1 - t) u0 + t u1.
///
/// Evaluated with std::lerp, which is exact at both endpoints and returns u0
/// unchanged wherever u0 == u1.
inline Field interpolant(const Field& u0, const Field& u1, double t) {
  if (!u0.same_shape(u1)) throw ShapeError("interpolant: endpoint shapes differ");
  Field out(u0.grid, u0.channels);
  for (std::size_t i = 0; i < out.values.size(); ++i) {
    out.values[i] = std::lerp(u0.values[i], u1.values[i], t);
  }
  return out;
}

/// Point observations: a binary mask over every field value, the observed
/// values in row-major mask order, and the noise level they were drawn with.
struct ObservationSpec {
  Grid grid;
  int channels = 1;
  std::vector<std::uint8_t> mask;
  std::vector<double> y;
  double sigma_obs = 0.05;

  std::size_t observed_count() const { return y.size(); }
  bool empty() const { return y.empty(); }

  void validate() const {
    grid.validate();
    if (mask.size() != static_cast<std::size_t>(channels) * grid.points()) {
      throw ShapeError("observation mask does not match grid and channels");
    }
    std::size_t n = 0;
    for (auto m : mask) {
      if (m > 1) throw ConfigError("observation mask must be binary");
      n += m;
    }
    if (n != y.size()) throw ShapeError("observed value count does not match mask");
    if (!(sigma_obs >= 0.0)) throw ConfigError("sigma_obs must be nonnegative");
  }

  void require_matches(const Field& u) const {
    if (!(u.grid == grid) || u.channels != channels) {
      throw ShapeError("observation spec does not match field shape");
    }
  }

  /// Full-size array with y scattered onto the mask and zeros elsewhere.
  std::vector<double> scattered() const {
    std::vector<double> c(mask.size(), 0.0);
    std::size_t k = 0;
    for (std::size_t i = 0; i < mask.size(); ++i) {
      if (mask[i]) c[i] = y[k++];
    }
    return c;
  }

  /// Observes `truth` on `mask`. With noise_seed set, adds sigma_obs-scaled
  /// standard normal noise to each observed value.
  static ObservationSpec observe(const Field& truth, std::vector<std::uint8_t> mask,
                                 double sigma_obs, const std::uint64_t* noise_seed = nullptr) {
    ObservationSpec obs;
    obs.grid = truth.grid;
    obs.channels = truth.channels;
    obs.mask = std::move(mask);
    obs.sigma_obs = sigma_obs;
    if (obs.mask.size() != truth.values.size()) {
      throw ShapeError("observation mask does not match field");
    }
    CounterRng rng(noise_seed ? *noise_seed : 0);
    for (std::size_t i = 0; i < obs.mask.size(); ++i) {
      if (!obs.mask[i]) continue;
      double v = truth.values[i];
      if (noise_seed) v += sigma_obs * rng.normal();
      obs.y.push_back(v);
    }
    obs.validate();
    return obs;
  }
};

/// Values of u at mask = 1 points in row-major order.
inline std::vector<double> apply_mask(const Field& u, const ObservationSpec& obs) {
  obs.require_matches(u);
  if (obs.mask.size() != u.values.size()) throw ShapeError("mask size mismatch");
  std::vector<double> out;
  out.reserve(obs.y.size());
  for (std::size_t i = 0; i < u.values.size(); ++i) {
    if (obs.mask[i]) out.push_back(u.values[i]);
  }
  return out;
}

/// sum over observed points of (u - y)^2
inline double observation_misfit(const Field& u, const ObservationSpec& obs) {
  const auto hu = apply_mask(u, obs);
  double s = 0.0;
  for (std::size_t k = 0; k < hu.size(); ++k) s += (hu[k] - obs.y[k]) * (hu[k] - obs.y[k]);
  return s;
}

}  // namespace proflow
