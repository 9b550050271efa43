#pragma once

// Ground-truth forward solvers and dataset generation.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "proflow/errors.hpp"
#include "proflow/field_io.hpp"
#include "proflow/grf.hpp"
#include "proflow/grid_field.hpp"
#include "proflow/pde_ops.hpp"
#include "proflow/rng.hpp"

namespace proflow {

struct EllipticSolveReport {
  int iterations = 0;
  double relative_residual = 0.0;
  std::vector<double> residual_history;  // ||b - A x_k|| per iteration, k = 0 first
};

namespace detail {

inline int interior_count(const Grid& g) { return (g.n0 - 2) * (g.n1 - 2); }

/// A x for x given on interior nodes (zero Dirichlet data implied).
inline std::vector<double> elliptic_apply(const PdeProblem& p, const std::vector<double>& x) {
  const int n0 = p.grid.n0, n1 = p.grid.n1;
  const Faces faces(p.grid);
  const double kappa = p.family == PdeFamily::helmholtz ? p.kappa : 0.0;
  const double* a = p.family == PdeFamily::helmholtz ? nullptr : p.a.values.data();
  auto val = [&](int i, int j) -> double {
    if (i <= 0 || j <= 0 || i >= n0 - 1 || j >= n1 - 1) return 0.0;
    return x[static_cast<std::size_t>(i - 1) * (n1 - 2) + (j - 1)];
  };
  std::vector<double> y(x.size(), 0.0);
  for (int i = 1; i < n0 - 1; ++i) {
    for (int j = 1; j < n1 - 1; ++j) {
      const int c = i * n1 + j;
      const double uc = val(i, j);
      double s = kappa * uc;
      for (int k = 0; k < 4; ++k) {
        const int qi = i + faces.di[k], qj = j + faces.dj[k];
        const double af = a ? 0.5 * (a[c] + a[qi * n1 + qj]) : 1.0;
        s += af * (uc - val(qi, qj)) * faces.inv_h2[k];
      }
      y[static_cast<std::size_t>(i - 1) * (n1 - 2) + (j - 1)] = s;
    }
  }
  return y;
}

inline double dotv(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

}  // namespace detail

/// Solves A u = f on the interior with zero Dirichlet boundary values.
///
/// Uses the conjugate residual variant of CG (symmetric A), so the reported
/// residual norms are non-increasing. Iteration cap: 10 x grid points unless
/// max_iterations > 0.
inline Field solve_elliptic(const PdeProblem& p, double tol = 1e-10,
                            EllipticSolveReport* report = nullptr, int max_iterations = 0) {
  p.validate();
  if (!p.elliptic()) throw ConfigError("solve_elliptic: burgers is not elliptic");
  if (!(tol > 0.0)) throw ConfigError("solve_elliptic: tol must be positive");
  const int n0 = p.grid.n0, n1 = p.grid.n1;
  const std::size_t m = static_cast<std::size_t>(detail::interior_count(p.grid));

  std::vector<double> b(m);
  for (int i = 1; i < n0 - 1; ++i) {
    for (int j = 1; j < n1 - 1; ++j) {
      b[static_cast<std::size_t>(i - 1) * (n1 - 2) + (j - 1)] = p.f.values[i * n1 + j];
    }
  }
  const double bnorm = std::sqrt(detail::dotv(b, b));
  std::vector<double> x(m, 0.0);
  EllipticSolveReport local;
  EllipticSolveReport& rep = report ? *report : local;
  rep = {};
  rep.residual_history.push_back(bnorm);

  if (bnorm > 0.0) {
    std::vector<double> r = b, pdir = b;
    std::vector<double> ar = detail::elliptic_apply(p, r);
    std::vector<double> ap = ar;
    double rar = detail::dotv(r, ar);
    const int cap = max_iterations > 0 ? max_iterations : 10 * static_cast<int>(p.grid.points());
    double rnorm = bnorm;
    int it = 0;
    while (rnorm > tol * bnorm) {
      if (it >= cap) {
        throw SolverError("solve_elliptic: no convergence after " + std::to_string(it) +
                              " iterations (relative residual " +
                              std::to_string(rnorm / bnorm) + ")",
                          it);
      }
      const double alpha = rar / detail::dotv(ap, ap);
      for (std::size_t i = 0; i < m; ++i) {
        x[i] += alpha * pdir[i];
        r[i] -= alpha * ap[i];
      }
      ++it;
      rnorm = std::sqrt(detail::dotv(r, r));
      if (!std::isfinite(rnorm)) {
        throw SolverError("solve_elliptic: breakdown at iteration " + std::to_string(it), it);
      }
      rep.residual_history.push_back(rnorm);
      if (rnorm <= tol * bnorm) break;
      ar = detail::elliptic_apply(p, r);
      const double rar_new = detail::dotv(r, ar);
      const double beta = rar_new / rar;
      rar = rar_new;
      for (std::size_t i = 0; i < m; ++i) {
        pdir[i] = r[i] + beta * pdir[i];
        ap[i] = ar[i] + beta * ap[i];
      }
    }
    rep.iterations = it;
    rep.relative_residual = rnorm / bnorm;
  }

  Field u(p.grid, 1);
  for (int i = 1; i < n0 - 1; ++i) {
    for (int j = 1; j < n1 - 1; ++j) {
      u.at(0, i, j) = x[static_cast<std::size_t>(i - 1) * (n1 - 2) + (j - 1)];
    }
  }
  return u;
}

/// Largest stable explicit step for the Burgers scheme given max |u0|.
inline double burgers_max_step(double h, double nu, double umax, double safety) {
  double dt = h * h / (2.0 * nu);
  if (umax > 0.0) dt = std::min(dt, h / umax);
  return dt * safety;
}

/// Explicit forward-Euler evolution on the problem's space-time grid, using
/// the same stencils (and advection form) as the residual, so stored
/// trajectories have zero residual up to rounding.
inline Field solve_burgers(const PdeProblem& p, const std::vector<double>& u0,
                           double safety = 0.9) {
  p.validate();
  if (p.family != PdeFamily::burgers) throw ConfigError("solve_burgers: family is not burgers");
  const int nt = p.grid.n0, nx = p.grid.n1;
  if (static_cast<int>(u0.size()) != nx) throw ShapeError("solve_burgers: u0 length != nx");
  const double dt = p.grid.h0(), h = p.grid.h1();
  double umax = 0.0;
  for (double v : u0) {
    if (!std::isfinite(v)) throw ConfigError("solve_burgers: non-finite initial condition");
    umax = std::max(umax, std::abs(v));
  }
  const double limit = burgers_max_step(h, p.nu, umax, safety);
  if (dt > limit) {
    throw ConfigError("solve_burgers: time step " + std::to_string(dt) +
                      " exceeds stability bound " + std::to_string(limit));
  }
  const bool conservative = p.advection == AdvectionForm::conservative;
  Field u(p.grid, 1);
  std::copy(u0.begin(), u0.end(), u.values.begin());
  for (int n = 0; n < nt - 1; ++n) {
    const double* un = u.values.data() + static_cast<std::size_t>(n) * nx;
    double* up = u.values.data() + static_cast<std::size_t>(n + 1) * nx;
    for (int j = 0; j < nx; ++j) {
      const double ul = un[detail::wrap(j - 1, nx)], ur = un[detail::wrap(j + 1, nx)];
      const double adv = conservative ? (ur * ur - ul * ul) / (4.0 * h)
                                      : un[j] * (ur - ul) / (2.0 * h);
      up[j] = un[j] - dt * (adv - p.nu * (ur - 2.0 * un[j] + ul) / (h * h));
    }
  }
  return u;
}

struct DatasetOptions {
  GrfConfig grf{0.1, 2.0, 1.0};  // forcing, permeability seed field or initial condition
  double kappa = 1.0;
  double a_lo = 1.0;  // darcy permeability where grf <= 0
  double a_hi = 4.0;  // darcy permeability where grf > 0
  double nu = 0.02;
  double ic_peak = 1.0;  // burgers: initial conditions rescaled to this max |u0|
  double tol = 1e-10;
  double stability_safety = 0.9;
  AdvectionForm advection = AdvectionForm::conservative;

  friend bool operator==(const DatasetOptions&, const DatasetOptions&) = default;
};

/// Stacked samples: (coefficient, u) for elliptic families, the trajectory for
/// burgers. The coefficient is the forcing for poisson/helmholtz and the
/// permeability for darcy.
struct Dataset {
  PdeFamily family = PdeFamily::poisson;
  Grid grid;
  std::uint64_t seed = 0;
  DatasetOptions options;
  std::vector<Field> samples;

  std::size_t size() const { return samples.size(); }
};

/// Problem whose residual applies to stacked dataset samples.
inline PdeProblem problem_for(PdeFamily family, const Grid& grid, const DatasetOptions& opt) {
  switch (family) {
    case PdeFamily::poisson: return PdeProblem::poisson(grid, Field(grid, 1));
    case PdeFamily::helmholtz: return PdeProblem::helmholtz(grid, opt.kappa, Field(grid, 1));
    case PdeFamily::darcy: return PdeProblem::darcy(grid, Field(grid, 1, 1.0));
    case PdeFamily::burgers: return PdeProblem::burgers(grid, opt.nu, opt.advection);
  }
  throw ConfigError("unknown family");
}

inline PdeProblem problem_for(const Dataset& d) { return problem_for(d.family, d.grid, d.options); }

/// Draws one sample (coefficient + solve) with the given per-sample seed.
inline Field draw_solution(PdeFamily family, const Grid& grid, const DatasetOptions& opt,
                           std::uint64_t sample_seed) {
  if (family == PdeFamily::burgers) {
    auto ic = grf_line(grid.n1, opt.grf, sample_seed);
    double peak = 0.0;
    for (double v : ic) peak = std::max(peak, std::abs(v));
    if (peak > 0.0) {
      for (double& v : ic) v *= opt.ic_peak / peak;
    }
    return solve_burgers(PdeProblem::burgers(grid, opt.nu, opt.advection), ic,
                         opt.stability_safety);
  }
  Field g = grf_sample(grid, opt.grf, sample_seed);
  PdeProblem p;
  if (family == PdeFamily::darcy) {
    Field a(grid, 1);
    for (std::size_t i = 0; i < a.values.size(); ++i) {
      a.values[i] = g.values[i] > 0.0 ? opt.a_hi : opt.a_lo;
    }
    p = PdeProblem::darcy(grid, a);
    g = std::move(a);
  } else if (family == PdeFamily::poisson) {
    p = PdeProblem::poisson(grid, g);
  } else {
    p = PdeProblem::helmholtz(grid, opt.kappa, g);
  }
  const Field u = solve_elliptic(p, opt.tol);
  return stack_channels({&g, &u});
}

inline Dataset generate_dataset(PdeFamily family, int count, const Grid& grid,
                                std::uint64_t seed, const DatasetOptions& opt = {}) {
  if (count < 1) throw ConfigError("generate_dataset: count must be >= 1");
  grid.validate();
  opt.grf.validate();
  if (family == PdeFamily::darcy && !(opt.a_lo > 0.0 && opt.a_hi > 0.0)) {
    throw ConfigError("darcy permeability levels must be positive");
  }
  Dataset d{family, grid, seed, opt, {}};
  d.samples.reserve(count);
  for (int i = 0; i < count; ++i) {
    try {
      d.samples.push_back(draw_solution(family, grid, opt, derive_seed(seed, "pair", i)));
    } catch (const SolverError& e) {
      throw SolverError("pair " + std::to_string(i) + ": " + e.what(), e.iterations());
    } catch (const ConfigError& e) {
      throw ConfigError("pair " + std::to_string(i) + ": " + e.what());
    }
  }
  return d;
}

// Dataset file: char[4] "PDST", u32 version, u32 family, u32 count, u64 seed,
// f64 kappa, a_lo, a_hi, nu, ic_peak, tol, stability_safety, u32 advection,
// f64 grf length_scale, power, amplitude, then `count` field blobs.
constexpr std::uint32_t kDatasetFormatVersion = 1;

inline void write_dataset(std::ostream& os, const Dataset& d) {
  os.write("PDST", 4);
  io::put_u32(os, kDatasetFormatVersion);
  io::put_u32(os, static_cast<std::uint32_t>(d.family));
  io::put_u32(os, static_cast<std::uint32_t>(d.samples.size()));
  io::put_u64(os, d.seed);
  const auto& o = d.options;
  for (double v : {o.kappa, o.a_lo, o.a_hi, o.nu, o.ic_peak, o.tol, o.stability_safety}) {
    io::put_f64(os, v);
  }
  io::put_u32(os, static_cast<std::uint32_t>(o.advection));
  io::put_f64(os, o.grf.length_scale);
  io::put_f64(os, o.grf.power);
  io::put_f64(os, o.grf.amplitude);
  for (const auto& s : d.samples) write_field(os, s);
}

inline Dataset read_dataset(std::istream& is) {
  char magic[4];
  is.read(magic, 4);
  io::need(is, "dataset magic");
  if (std::string(magic, 4) != "PDST") throw IoError("not a dataset file (bad magic)");
  if (io::get_u32(is) != kDatasetFormatVersion) throw IoError("unsupported dataset version");
  Dataset d;
  const auto fam = io::get_u32(is);
  if (fam > 3) throw IoError("unknown family in dataset file");
  d.family = static_cast<PdeFamily>(fam);
  const auto count = io::get_u32(is);
  d.seed = io::get_u64(is);
  auto& o = d.options;
  for (double* v : {&o.kappa, &o.a_lo, &o.a_hi, &o.nu, &o.ic_peak, &o.tol, &o.stability_safety}) {
    *v = io::get_f64(is);
  }
  o.advection = static_cast<AdvectionForm>(io::get_u32(is));
  o.grf.length_scale = io::get_f64(is);
  o.grf.power = io::get_f64(is);
  o.grf.amplitude = io::get_f64(is);
  for (std::uint32_t i = 0; i < count; ++i) d.samples.push_back(read_field(is));
  if (d.samples.empty()) throw IoError("dataset file holds no samples");
  d.grid = d.samples.front().grid;
  return d;
}

inline void save_dataset(const std::string& path, const Dataset& d) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open " + path + " for writing");
  write_dataset(os, d);
}

inline Dataset load_dataset(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("missing dataset file " + path);
  return read_dataset(is);
}

}  // namespace proflow
