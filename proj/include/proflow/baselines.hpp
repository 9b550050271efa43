#pragma once

// Comparison samplers sharing the flow model and seed streams of samplers.hpp:
// extrapolate-correct-interpolate (ECI), gradient-guided Euler (DiffusionPDE),
// source-noise optimization through the flow (D-Flow) and Gauss-Newton
// constraint projection (PCFM).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "proflow/errors.hpp"
#include "proflow/grid_field.hpp"
#include "proflow/pde_ops.hpp"
#include "proflow/samplers.hpp"

namespace proflow {

/// Observed entries replaced by the observed values.
inline Field replace_observed(Field u, const ObservationSpec& obs) {
  obs.require_matches(u);
  std::size_t k = 0;
  for (std::size_t i = 0; i < u.values.size(); ++i) {
    if (obs.mask[i]) u.values[i] = obs.y[k++];
  }
  return u;
}

/// 2 m . (u - c), the gradient of the observation misfit.
inline Field observation_grad(const Field& u, const ObservationSpec& obs) {
  obs.require_matches(u);
  Field g(u.grid, u.channels);
  std::size_t k = 0;
  for (std::size_t i = 0; i < u.values.size(); ++i) {
    if (obs.mask[i]) g.values[i] = 2.0 * (u.values[i] - obs.y[k++]);
  }
  return g;
}

// ---------------------------------------------------------------------------
// ECI: mix with the terminal prediction projected onto the observations.
// Inner mixes re-noise at the current time; the last mix moves to t_{n+1}
// along u' = t' P(u1) + (1 - t') (u + v dt). Mixing noise uses its own stream
// derive_seed(seed, "eci_noise", k).

template <VelocityField V>
Field eci_sample(const V& model, const ObservationSpec& obs, const SamplerConfig& cfg) {
  cfg.validate();
  obs.validate();
  Field u = reference_draw(cfg, obs.grid, obs.channels, 0);
  const double dt = 1.0 / cfg.steps;
  const int M = cfg.eci.mix;
  for (int n = 0; n < cfg.steps; ++n) {
    const double t = step_time(n, cfg.steps);
    const double tn = step_time(n + 1, cfg.steps);
    for (int j = 0; j < M; ++j) {
      const Field v = model.velocity(u, t);
      const Field pu1 = replace_observed(terminal_from_velocity(u, v, t), obs);
      if (j + 1 < M) {
        const std::uint64_t k = cfg.eci.resample_every_mix
                                    ? static_cast<std::uint64_t>(n) * M + j
                                    : static_cast<std::uint64_t>(n);
        const Field eps = cfg.reference.sample(obs.grid, obs.channels,
                                               derive_seed(cfg.seed, "eci_noise", k));
        u = interpolant(eps, pu1, t);
      } else {
        u = interpolant(euler_update(u, v, dt), pu1, tn);
      }
    }
    if (!u.all_finite()) throw NumericalError("eci: non-finite state at step " + std::to_string(n), n);
  }
  return u;
}

// ---------------------------------------------------------------------------
// DiffusionPDE-style guidance: Euler step plus gradient descent on the
// observation misfit at the current state and on |R(u1_hat)|^2 pulled back
// through the terminal prediction u1_hat = u + (1 - t) v(u, t).

/// Gradient of |R(u + (1 - t) v(u, t))|^2 with respect to u, given v = v(u, t).
template <DifferentiableVelocityField V>
Field pde_guidance_grad(const V& model, const PdeProblem& p, const Field& u, const Field& v,
                        double t) {
  const Field g = residual_sq_grad(p, terminal_from_velocity(u, v, t));
  Field out = g;
  out.axpy(1.0 - t, model.velocity_vjp(u, t, g));
  return out;
}

template <DifferentiableVelocityField V>
Field diffusionpde_sample(const V& model, const ObservationSpec& obs, const PdeProblem* p,
                          const SamplerConfig& cfg) {
  cfg.validate();
  obs.validate();
  const double alpha = cfg.diffusionpde.alpha, beta = p ? cfg.diffusionpde.beta : 0.0;
  Field u = reference_draw(cfg, obs.grid, obs.channels, 0);
  const double dt = 1.0 / cfg.steps;
  for (int n = 0; n < cfg.steps; ++n) {
    const double t = step_time(n, cfg.steps);
    const Field v = model.velocity(u, t);
    Field next = euler_update(u, v, dt);
    if (alpha != 0.0 && !obs.empty()) next.axpy(-alpha, observation_grad(u, obs));
    if (beta != 0.0) next.axpy(-beta, pde_guidance_grad(model, *p, u, v, t));
    u = std::move(next);
    if (!u.all_finite()) {
      throw NumericalError("diffusionpde: non-finite state at step " + std::to_string(n), n);
    }
  }
  return u;
}

template <DifferentiableVelocityField V>
Field diffusionpde_sample(const V& model, const ObservationSpec& obs, const PdeProblem& p,
                          const SamplerConfig& cfg) {
  return diffusionpde_sample(model, obs, &p, cfg);
}

// ---------------------------------------------------------------------------
// D-Flow: optimize the source draw u0 so that the Euler flow map lands on the
// observations, J(u0) = |H Phi(u0) - y|^2 + gamma |R(Phi(u0))|^2. Gradients
// come from the discrete adjoint of the Euler recursion; the optimizer is heavy
// ball momentum.

struct DflowGradient {
  double objective = 0.0;
  Field grad;
  Field terminal;
};

template <DifferentiableVelocityField V>
DflowGradient dflow_objective(const V& model, const Field& u0, const ObservationSpec& obs,
                              const PdeProblem* p, const SamplerConfig& cfg) {
  const int S = cfg.steps;
  const double dt = 1.0 / S;
  std::vector<Field> path;
  path.reserve(static_cast<std::size_t>(S));
  Field u = u0;
  for (int s = 0; s < S; ++s) {
    path.push_back(u);
    u = euler_update(u, model.velocity(u, step_time(s, S)), dt);
  }
  const double gamma = p ? cfg.dflow.gamma : 0.0;
  DflowGradient out;
  out.objective = observation_misfit(u, obs);
  Field lam = observation_grad(u, obs);
  if (gamma > 0.0) {
    out.objective += gamma * residual_sq_norm(*p, u);
    lam.axpy(gamma, residual_sq_grad(*p, u));
  }
  out.terminal = std::move(u);
  for (int s = S - 1; s >= 0; --s) {
    lam.axpy(dt, model.velocity_vjp(path[static_cast<std::size_t>(s)], step_time(s, S), lam));
  }
  out.grad = std::move(lam);
  return out;
}

struct DflowReport {
  std::vector<double> objective;  // per iteration, before the update
};

template <DifferentiableVelocityField V>
Field dflow_sample(const V& model, const ObservationSpec& obs, const PdeProblem* p,
                   const SamplerConfig& cfg, DflowReport* report = nullptr) {
  cfg.validate();
  obs.validate();
  Field z = reference_draw(cfg, obs.grid, obs.channels, 0);
  Field buf(z.grid, z.channels);
  if (report) report->objective.clear();
  for (int k = 0; k < cfg.dflow.iterations; ++k) {
    DflowGradient g = dflow_objective(model, z, obs, p, cfg);
    if (report) report->objective.push_back(g.objective);
    buf *= cfg.dflow.momentum;
    buf += g.grad;
    z.axpy(-cfg.dflow.learning_rate, buf);
    if (!z.all_finite()) {
      throw NumericalError("dflow: non-finite source at iteration " + std::to_string(k), k);
    }
  }
  return euler_sample_from(model, std::move(z), cfg.steps);
}

template <DifferentiableVelocityField V>
Field dflow_sample(const V& model, const ObservationSpec& obs, const PdeProblem& p,
                   const SamplerConfig& cfg, DflowReport* report = nullptr) {
  return dflow_sample(model, obs, &p, cfg, report);
}

// ---------------------------------------------------------------------------
// PCFM: constraint C(u) = [H u - y ; R(u)] (the residual block only when
// pde_constraint is set). Each step projects the terminal prediction with one
// Gauss-Newton step, relaxes it with a few penalized gradient steps, and moves
// the Euler update by the displacement of the projection,
// u' = u + dt v + t' (z - u1_hat). The output gets Gauss-Newton steps until
// |C| <= final_tol.

class ConstraintMap {
 public:
  ConstraintMap(const ObservationSpec& obs, const PdeProblem* p, bool with_pde)
      : obs_(obs), p_(with_pde ? p : nullptr) {}

  bool empty() const { return obs_.empty() && !p_; }
  bool has_pde() const { return p_ != nullptr; }

  /// Upper estimate of |J|^2: 1 for the selection block plus the residual block.
  double jacobian_norm_sq(const Field& u) const {
    return (obs_.empty() ? 0.0 : 1.0) + (p_ ? 1.1 * residual_jacobian_norm_sq(*p_, u) : 0.0);
  }
  std::size_t obs_rows() const { return obs_.y.size(); }

  std::vector<double> value(const Field& u) const {
    std::vector<double> c = apply_mask(u, obs_);
    for (std::size_t k = 0; k < c.size(); ++k) c[k] -= obs_.y[k];
    if (p_) {
      const Residual r = residual(*p_, u);
      c.insert(c.end(), r.values.begin(), r.values.end());
    }
    return c;
  }

  std::vector<double> jvp(const Field& u, const Field& du) const {
    std::vector<double> c = apply_mask(du, obs_);
    if (p_) {
      const Residual r = residual_jvp(*p_, u, du);
      c.insert(c.end(), r.values.begin(), r.values.end());
    }
    return c;
  }

  Field vjp(const Field& u, const std::vector<double>& w) const {
    Field out(u.grid, u.channels);
    if (p_) {
      Residual r = residual(*p_, u);
      std::copy(w.begin() + static_cast<std::ptrdiff_t>(obs_rows()), w.end(), r.values.begin());
      out = residual_vjp(*p_, u, r);
    }
    std::size_t k = 0;
    for (std::size_t i = 0; i < out.values.size(); ++i) {
      if (obs_.mask[i]) out.values[i] += w[k++];
    }
    return out;
  }

 private:
  const ObservationSpec& obs_;
  const PdeProblem* p_;
};

inline double norm2(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return s;
}

/// delta = -J^T (J J^T + mu I)^{-1} C(u), with the inner system by CG.
inline Field gauss_newton_step(const ConstraintMap& C, const Field& u, const PcfmOptions& o) {
  const std::vector<double> b = C.value(u);
  std::vector<double> x(b.size(), 0.0), r = b, d = b, q(b.size());
  double rr = norm2(r);
  const double stop = o.cg_tol * o.cg_tol * std::max(rr, 1e-300);
  for (int it = 0; it < o.cg_iters && rr > stop; ++it) {
    const std::vector<double> jd = C.jvp(u, C.vjp(u, d));
    double dq = 0.0;
    for (std::size_t i = 0; i < q.size(); ++i) {
      q[i] = jd[i] + o.mu * d[i];
      dq += d[i] * q[i];
    }
    if (!(dq > 0.0)) break;
    const double a = rr / dq;
    for (std::size_t i = 0; i < x.size(); ++i) {
      x[i] += a * d[i];
      r[i] -= a * q[i];
    }
    const double rr_new = norm2(r);
    const double beta = rr_new / rr;
    rr = rr_new;
    for (std::size_t i = 0; i < d.size(); ++i) d[i] = r[i] + beta * d[i];
  }
  Field step = C.vjp(u, x);
  step *= -1.0;
  return step;
}

struct PcfmReport {
  double final_violation = 0.0;  // |C| of the output
  int final_iterations = 0;
};

template <VelocityField V>
Field pcfm_sample(const V& model, const ObservationSpec& obs, const PdeProblem* p,
                  const SamplerConfig& cfg, PcfmReport* report = nullptr) {
  cfg.validate();
  obs.validate();
  const PcfmOptions& o = cfg.pcfm;
  const ConstraintMap C(obs, p, o.pde_constraint);
  Field u = reference_draw(cfg, obs.grid, obs.channels, 0);
  const double dt = 1.0 / cfg.steps;
  double cap = 0.0;
  for (int n = 0; n < cfg.steps; ++n) {
    const double t = step_time(n, cfg.steps);
    const double tn = step_time(n + 1, cfg.steps);
    const Field v = model.velocity(u, t);
    Field next = euler_update(u, v, dt);
    if (!C.empty()) {
      const Field u1 = terminal_from_velocity(u, v, t);
      const Field bar = u1 + gauss_newton_step(C, u1, o);
      // The configured step is capped at 1 / L of the relaxed objective; with
      // residual rows L grows like h^-4 and the raw step would diverge.
      double step = o.step;
      if (C.has_pde() && (n == 0 || !p->elliptic())) {
        cap = 1.0 / (2.0 + 2.0 * o.penalty * C.jacobian_norm_sq(bar));
      }
      if (C.has_pde()) step = std::min(step, cap);
      Field z = bar;
      for (int k = 0; k < o.refine_iters; ++k) {
        Field g = z - bar;
        g *= 2.0;
        const std::vector<double> c = C.value(z);
        g.axpy(2.0 * o.penalty, C.vjp(z, c));
        z.axpy(-step, g);
      }
      next.axpy(tn, z - u1);
    }
    u = std::move(next);
    if (!u.all_finite()) throw NumericalError("pcfm: non-finite state at step " + std::to_string(n), n);
  }
  int it = 0;
  if (!C.empty()) {
    while (it < o.final_max_iters && std::sqrt(norm2(C.value(u))) > o.final_tol) {
      u += gauss_newton_step(C, u, o);
      ++it;
    }
  }
  if (report) {
    report->final_violation = C.empty() ? 0.0 : std::sqrt(norm2(C.value(u)));
    report->final_iterations = it;
  }
  return u;
}

template <VelocityField V>
Field pcfm_sample(const V& model, const ObservationSpec& obs, const PdeProblem& p,
                  const SamplerConfig& cfg, PcfmReport* report = nullptr) {
  return pcfm_sample(model, obs, &p, cfg, report);
}

}  // namespace proflow
