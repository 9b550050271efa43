#pragma once

// Discrete residual operators for the four PDE families.
//
// Elliptic families live on spatial2d grids with zero Dirichlet data stored in
// the boundary nodes; residuals are evaluated at interior nodes only:
//   poisson / darcy:  R = sum_faces a_face (u_i - u_q) / h^2 - f_i
//                     (the 5-point flux form of -div(a grad u) - f, face
//                     coefficient a_face = (a_i + a_q) / 2)
//   helmholtz:        R = -lap_h u + kappa u - f
// Burgers lives on spacetime1d grids (rows are time levels, x periodic) and the
// residual is defined on time levels 0 .. nt-2 at every x:
//   R = (u^{n+1} - u^n) / dt + N(u^n) - nu D_xx u^n
// with N = u D_x u (advective) or D_x(u^2 / 2) (conservative), centered.
//
// Elliptic problems accept either a single-channel u (coefficients taken from
// the problem) or a stacked two-channel field (coefficient, u). The coefficient
// channel is the forcing f for poisson/helmholtz and the permeability a for
// darcy; derivatives are then taken with respect to both channels.

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "proflow/errors.hpp"
#include "proflow/grid_field.hpp"

namespace proflow {

enum class PdeFamily { poisson, helmholtz, darcy, burgers };
enum class Boundary { dirichlet_zero, periodic_in_space };
enum class AdvectionForm { advective, conservative };

inline std::string to_string(PdeFamily f) {
  switch (f) {
    case PdeFamily::poisson: return "poisson";
    case PdeFamily::helmholtz: return "helmholtz";
    case PdeFamily::darcy: return "darcy";
    case PdeFamily::burgers: return "burgers";
  }
  return "?";
}

inline PdeFamily parse_family(const std::string& s) {
  if (s == "poisson") return PdeFamily::poisson;
  if (s == "helmholtz") return PdeFamily::helmholtz;
  if (s == "darcy") return PdeFamily::darcy;
  if (s == "burgers") return PdeFamily::burgers;
  throw ConfigError("unknown PDE family '" + s + "'");
}

inline bool is_elliptic(PdeFamily f) { return f != PdeFamily::burgers; }

/// Channels of a dataset sample / generated field for this family.
inline int state_channels(PdeFamily f) { return is_elliptic(f) ? 2 : 1; }

struct PdeProblem {
  PdeFamily family = PdeFamily::poisson;
  Grid grid;
  Field a;  // diffusivity / permeability (poisson, darcy)
  Field f;  // forcing (elliptic)
  double kappa = 1.0;
  double nu = 0.01;
  Boundary boundary = Boundary::dirichlet_zero;
  AdvectionForm advection = AdvectionForm::conservative;

  static PdeProblem poisson(const Grid& g, Field forcing, std::optional<Field> diffusivity = {}) {
    PdeProblem p;
    p.family = PdeFamily::poisson;
    p.grid = g;
    p.f = std::move(forcing);
    p.a = diffusivity ? std::move(*diffusivity) : Field(g, 1, 1.0);
    p.validate();
    return p;
  }
  static PdeProblem helmholtz(const Grid& g, double kappa, Field forcing) {
    PdeProblem p;
    p.family = PdeFamily::helmholtz;
    p.grid = g;
    p.kappa = kappa;
    p.f = std::move(forcing);
    p.validate();
    return p;
  }
  static PdeProblem darcy(const Grid& g, Field permeability, std::optional<Field> forcing = {}) {
    PdeProblem p;
    p.family = PdeFamily::darcy;
    p.grid = g;
    p.a = std::move(permeability);
    p.f = forcing ? std::move(*forcing) : Field(g, 1, 1.0);
    p.validate();
    return p;
  }
  static PdeProblem burgers(const Grid& g, double nu,
                            AdvectionForm form = AdvectionForm::conservative) {
    PdeProblem p;
    p.family = PdeFamily::burgers;
    p.grid = g;
    p.nu = nu;
    p.boundary = Boundary::periodic_in_space;
    p.advection = form;
    p.validate();
    return p;
  }

  bool elliptic() const { return is_elliptic(family); }

  void validate() const {
    grid.validate();
    if (elliptic()) {
      if (grid.kind != GridKind::spatial2d) {
        throw ConfigError(to_string(family) + " needs a spatial2d grid");
      }
      if (boundary != Boundary::dirichlet_zero) {
        throw ConfigError("elliptic families use zero Dirichlet boundaries");
      }
      if (!(f.grid == grid) || f.channels != 1) {
        throw ConfigError("forcing must be a single-channel field on the problem grid");
      }
      if (family == PdeFamily::helmholtz) {
        if (!(kappa > 0.0)) throw ConfigError("helmholtz needs kappa > 0");
      } else {
        if (!(a.grid == grid) || a.channels != 1) {
          throw ConfigError("coefficient a must be a single-channel field on the problem grid");
        }
        for (double v : a.values) {
          if (!(v > 0.0)) throw ConfigError("coefficient a must be strictly positive");
        }
      }
    } else {
      if (grid.kind != GridKind::spacetime1d) throw ConfigError("burgers needs a spacetime1d grid");
      if (boundary != Boundary::periodic_in_space) {
        throw ConfigError("burgers uses periodic boundaries in space");
      }
      if (!(nu > 0.0)) throw ConfigError("burgers needs nu > 0");
    }
  }
};

/// Residual values on the stencil support, row-major.
struct Residual {
  int rows = 0;
  int cols = 0;
  std::vector<double> values;

  std::size_t size() const { return values.size(); }
  double squared_norm() const {
    double s = 0.0;
    for (double v : values) s += v * v;
    return s;
  }
};

namespace detail {

/// Which arrays the residual reads, and whether each is a differentiable input.
struct PdeView {
  const double* coef = nullptr;   // a (poisson/darcy); null for helmholtz
  const double* force = nullptr;  // f
  const double* u = nullptr;
  int coef_channel = -1;   // channel index of a in the input field, or -1 if fixed
  int force_channel = -1;  // channel index of f in the input field, or -1 if fixed
  int u_channel = 0;
};

inline PdeView make_view(const PdeProblem& p, const Field& u) {
  if (!(u.grid == p.grid)) {
    if (u.grid.kind != p.grid.kind) {
      throw ConfigError(to_string(p.family) + ": field grid kind does not match the problem");
    }
    throw ShapeError(to_string(p.family) + ": field grid does not match the problem grid");
  }
  PdeView v;
  if (!p.elliptic()) {
    if (u.channels != 1) throw ConfigError("burgers residual expects a single-channel field");
    v.u = u.values.data();
    return v;
  }
  const bool has_a = p.family != PdeFamily::helmholtz;
  if (u.channels == 1) {
    v.coef = has_a ? p.a.values.data() : nullptr;
    v.force = p.f.values.data();
    v.u = u.values.data();
    v.u_channel = 0;
  } else if (u.channels == 2) {
    v.u = u.channel(1).data();
    v.u_channel = 1;
    if (p.family == PdeFamily::darcy) {
      v.coef = u.channel(0).data();
      v.coef_channel = 0;
      v.force = p.f.values.data();
    } else {
      v.coef = has_a ? p.a.values.data() : nullptr;
      v.force = u.channel(0).data();
      v.force_channel = 0;
    }
  } else {
    throw ConfigError(to_string(p.family) + " residual expects 1 or 2 channels");
  }
  return v;
}

inline Residual make_residual(const PdeProblem& p) {
  Residual r;
  if (p.elliptic()) {
    r.rows = p.grid.n0 - 2;
    r.cols = p.grid.n1 - 2;
  } else {
    r.rows = p.grid.n0 - 1;
    r.cols = p.grid.n1;
  }
  r.values.assign(static_cast<std::size_t>(r.rows) * r.cols, 0.0);
  return r;
}

// Interior node (i, j) has four faces; each entry is (di, dj, 1/h^2).
struct Faces {
  int di[4], dj[4];
  double inv_h2[4];
  explicit Faces(const Grid& g) {
    const double i0 = 1.0 / (g.h0() * g.h0()), i1 = 1.0 / (g.h1() * g.h1());
    const int d_i[4] = {-1, 1, 0, 0}, d_j[4] = {0, 0, -1, 1};
    const double w[4] = {i0, i0, i1, i1};
    for (int k = 0; k < 4; ++k) {
      di[k] = d_i[k];
      dj[k] = d_j[k];
      inv_h2[k] = w[k];
    }
  }
};

inline int wrap(int j, int n) { return j < 0 ? j + n : (j >= n ? j - n : j); }

}  // namespace detail

inline Residual residual(const PdeProblem& p, const Field& u) {
  const auto v = detail::make_view(p, u);
  auto r = detail::make_residual(p);
  const int n0 = p.grid.n0, n1 = p.grid.n1;
  if (p.elliptic()) {
    const detail::Faces faces(p.grid);
    const double kappa = p.family == PdeFamily::helmholtz ? p.kappa : 0.0;
    for (int i = 1; i < n0 - 1; ++i) {
      for (int j = 1; j < n1 - 1; ++j) {
        const int c = i * n1 + j;
        double s = kappa * v.u[c] - v.force[c];
        for (int k = 0; k < 4; ++k) {
          const int q = (i + faces.di[k]) * n1 + (j + faces.dj[k]);
          const double af = v.coef ? 0.5 * (v.coef[c] + v.coef[q]) : 1.0;
          s += af * (v.u[c] - v.u[q]) * faces.inv_h2[k];
        }
        r.values[static_cast<std::size_t>(i - 1) * r.cols + (j - 1)] = s;
      }
    }
    return r;
  }
  const double dt = p.grid.h0(), h = p.grid.h1();
  const bool conservative = p.advection == AdvectionForm::conservative;
  for (int n = 0; n < n0 - 1; ++n) {
    const double* un = v.u + static_cast<std::size_t>(n) * n1;
    const double* up = un + n1;
    for (int j = 0; j < n1; ++j) {
      const double ul = un[detail::wrap(j - 1, n1)], ur = un[detail::wrap(j + 1, n1)];
      const double adv = conservative ? (ur * ur - ul * ul) / (4.0 * h)
                                      : un[j] * (ur - ul) / (2.0 * h);
      r.values[static_cast<std::size_t>(n) * n1 + j] =
          (up[j] - un[j]) / dt + adv - p.nu * (ur - 2.0 * un[j] + ul) / (h * h);
    }
  }
  return r;
}

/// Directional derivative of the residual at u along du.
inline Residual residual_jvp(const PdeProblem& p, const Field& u, const Field& du) {
  if (!u.same_shape(du)) throw ShapeError("residual_jvp: direction shape differs");
  const auto v = detail::make_view(p, u);
  auto r = detail::make_residual(p);
  const int n0 = p.grid.n0, n1 = p.grid.n1;
  if (p.elliptic()) {
    const detail::Faces faces(p.grid);
    const double kappa = p.family == PdeFamily::helmholtz ? p.kappa : 0.0;
    const double* dU = du.channel(v.u_channel).data();
    const double* dA = v.coef_channel >= 0 ? du.channel(v.coef_channel).data() : nullptr;
    const double* dF = v.force_channel >= 0 ? du.channel(v.force_channel).data() : nullptr;
    for (int i = 1; i < n0 - 1; ++i) {
      for (int j = 1; j < n1 - 1; ++j) {
        const int c = i * n1 + j;
        double s = kappa * dU[c] - (dF ? dF[c] : 0.0);
        for (int k = 0; k < 4; ++k) {
          const int q = (i + faces.di[k]) * n1 + (j + faces.dj[k]);
          const double af = v.coef ? 0.5 * (v.coef[c] + v.coef[q]) : 1.0;
          s += af * (dU[c] - dU[q]) * faces.inv_h2[k];
          if (dA) s += 0.5 * (dA[c] + dA[q]) * (v.u[c] - v.u[q]) * faces.inv_h2[k];
        }
        r.values[static_cast<std::size_t>(i - 1) * r.cols + (j - 1)] = s;
      }
    }
    return r;
  }
  const double dt = p.grid.h0(), h = p.grid.h1();
  const bool conservative = p.advection == AdvectionForm::conservative;
  for (int n = 0; n < n0 - 1; ++n) {
    const double* un = v.u + static_cast<std::size_t>(n) * n1;
    const double* dn = du.values.data() + static_cast<std::size_t>(n) * n1;
    const double* dp = dn + n1;
    for (int j = 0; j < n1; ++j) {
      const int l = detail::wrap(j - 1, n1), rr = detail::wrap(j + 1, n1);
      const double adv = conservative
                             ? (un[rr] * dn[rr] - un[l] * dn[l]) / (2.0 * h)
                             : (dn[j] * (un[rr] - un[l]) + un[j] * (dn[rr] - dn[l])) / (2.0 * h);
      r.values[static_cast<std::size_t>(n) * n1 + j] =
          (dp[j] - dn[j]) / dt + adv - p.nu * (dn[rr] - 2.0 * dn[j] + dn[l]) / (h * h);
    }
  }
  return r;
}

/// Adjoint of residual_jvp: returns J(u)^T w, shaped like u.
inline Field residual_vjp(const PdeProblem& p, const Field& u, const Residual& w) {
  const auto v = detail::make_view(p, u);
  const auto shape = detail::make_residual(p);
  if (w.rows != shape.rows || w.cols != shape.cols || w.values.size() != shape.values.size()) {
    throw ShapeError("residual_vjp: cotangent does not match the residual support");
  }
  Field g(u.grid, u.channels);
  const int n0 = p.grid.n0, n1 = p.grid.n1;
  if (p.elliptic()) {
    const detail::Faces faces(p.grid);
    const double kappa = p.family == PdeFamily::helmholtz ? p.kappa : 0.0;
    double* gU = g.channel(v.u_channel).data();
    double* gA = v.coef_channel >= 0 ? g.channel(v.coef_channel).data() : nullptr;
    double* gF = v.force_channel >= 0 ? g.channel(v.force_channel).data() : nullptr;
    for (int i = 1; i < n0 - 1; ++i) {
      for (int j = 1; j < n1 - 1; ++j) {
        const int c = i * n1 + j;
        const double wc = w.values[static_cast<std::size_t>(i - 1) * w.cols + (j - 1)];
        gU[c] += kappa * wc;
        if (gF) gF[c] -= wc;
        for (int k = 0; k < 4; ++k) {
          const int q = (i + faces.di[k]) * n1 + (j + faces.dj[k]);
          const double af = v.coef ? 0.5 * (v.coef[c] + v.coef[q]) : 1.0;
          const double t = wc * af * faces.inv_h2[k];
          gU[c] += t;
          gU[q] -= t;
          if (gA) {
            const double ta = 0.5 * wc * (v.u[c] - v.u[q]) * faces.inv_h2[k];
            gA[c] += ta;
            gA[q] += ta;
          }
        }
      }
    }
    return g;
  }
  const double dt = p.grid.h0(), h = p.grid.h1();
  const bool conservative = p.advection == AdvectionForm::conservative;
  for (int n = 0; n < n0 - 1; ++n) {
    const double* un = v.u + static_cast<std::size_t>(n) * n1;
    double* gn = g.values.data() + static_cast<std::size_t>(n) * n1;
    double* gp = gn + n1;
    for (int j = 0; j < n1; ++j) {
      const int l = detail::wrap(j - 1, n1), rr = detail::wrap(j + 1, n1);
      const double wc = w.values[static_cast<std::size_t>(n) * n1 + j];
      gp[j] += wc / dt;
      gn[j] -= wc / dt;
      if (conservative) {
        gn[rr] += wc * un[rr] / (2.0 * h);
        gn[l] -= wc * un[l] / (2.0 * h);
      } else {
        gn[j] += wc * (un[rr] - un[l]) / (2.0 * h);
        gn[rr] += wc * un[j] / (2.0 * h);
        gn[l] -= wc * un[j] / (2.0 * h);
      }
      const double vis = p.nu * wc / (h * h);
      gn[rr] -= vis;
      gn[l] -= vis;
      gn[j] += 2.0 * vis;
    }
  }
  return g;
}

/// Gradient of ||R(u)||^2 with respect to every differentiable channel of u.
inline Field residual_sq_grad(const PdeProblem& p, const Field& u) {
  auto r = residual(p, u);
  for (double& x : r.values) x *= 2.0;
  return residual_vjp(p, u, r);
}

inline double residual_sq_norm(const PdeProblem& p, const Field& u) {
  return residual(p, u).squared_norm();
}

/// Mean squared residual over the stencil support.
inline double pde_error(const PdeProblem& p, const Field& u) {
  const auto r = residual(p, u);
  return r.squared_norm() / static_cast<double>(r.size());
}

}  // namespace proflow
