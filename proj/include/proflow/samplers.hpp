#pragma once

// Flow samplers: unconditional Euler and proximal flow guidance (terminal
// prediction, proximal refinement, re-noised interpolation).
//
// Seed streams: for a run keyed by cfg.seed, reference draw k is
// cfg.reference.sample(grid, C, derive_seed(cfg.seed, "noise", k)). Draw 0 is
// the initial state; draw n + 1 is the fresh noise used after step n.

#include <cmath>
#include <concepts>
#include <cstdint>
#include <string>
#include <vector>

#include "proflow/errors.hpp"
#include "proflow/grf.hpp"
#include "proflow/grid_field.hpp"
#include "proflow/pde_ops.hpp"
#include "proflow/rng.hpp"

namespace proflow {

template <class V>
concept VelocityField = requires(const V& v, const Field& u, double t) {
  { v.velocity(u, t) } -> std::convertible_to<Field>;
};

/// Velocity fields that can also pull a cotangent back to their input.
template <class V>
concept DifferentiableVelocityField =
    VelocityField<V> && requires(const V& v, const Field& u, double t, const Field& c) {
      { v.velocity_vjp(u, t, c) } -> std::convertible_to<Field>;
    };

struct EciOptions {
  int mix = 5;
  bool resample_every_mix = true;  // false: one noise draw per outer step

  friend bool operator==(const EciOptions&, const EciOptions&) = default;
};

// Defaults from the 3x3 grid search on 32x32 Poisson forward. The residual
// step needs beta below ~1 / ||J||^2, so beta shrinks like h^4 on finer grids.
struct DiffusionPdeOptions {
  double alpha = 0.01;  // observation guidance weight
  double beta = 4e-9;   // residual guidance weight

  friend bool operator==(const DiffusionPdeOptions&, const DiffusionPdeOptions&) = default;
};

struct DflowOptions {
  int iterations = 20;
  double learning_rate = 0.1;
  double momentum = 0.9;
  double gamma = 0.0;  // residual weight in the objective

  friend bool operator==(const DflowOptions&, const DflowOptions&) = default;
};

struct PcfmOptions {
  double penalty = 1.0;      // lambda of the relaxed refinement
  double step = 0.01;
  int refine_iters = 20;
  double mu = 1e-8;          // Gauss-Newton regularization
  bool pde_constraint = false;
  int cg_iters = 500;
  double cg_tol = 1e-12;
  double final_tol = 1e-10;  // terminal projection target for |C|
  int final_max_iters = 50;

  friend bool operator==(const PcfmOptions&, const PcfmOptions&) = default;
};

struct SamplerConfig {
  int steps = 100;
  double lambda_obs = 80.0;
  double lambda_pde = 1e-3;
  int prox_iters = 3;
  double eta0 = 0.0;  // <= 0 selects 1 / (Lipschitz bound of the prox gradient)
  bool sigma_modulation = false;  // scale both lambdas by sigma_t^2
  std::uint64_t seed = 0;
  ReferenceMeasure reference = ReferenceMeasure::white();
  EciOptions eci;
  DiffusionPdeOptions diffusionpde;
  DflowOptions dflow;
  PcfmOptions pcfm;

  void validate() const {
    if (steps < 1) throw ConfigError("sampler: steps must be >= 1");
    if (prox_iters < 0) throw ConfigError("sampler: prox_iters must be >= 0");
    if (!(lambda_obs >= 0.0) || !(lambda_pde >= 0.0)) {
      throw ConfigError("sampler: lambda weights must be nonnegative");
    }
    if (!std::isfinite(eta0)) throw ConfigError("sampler: eta0 must be finite");
    if (eci.mix < 1) throw ConfigError("sampler: eci mix must be >= 1");
    if (dflow.iterations < 0 || !(dflow.gamma >= 0.0)) {
      throw ConfigError("sampler: invalid dflow options");
    }
    if (pcfm.refine_iters < 0 || !(pcfm.mu >= 0.0) || pcfm.cg_iters < 1) {
      throw ConfigError("sampler: invalid pcfm options");
    }
    reference.validate();
  }

  friend bool operator==(const SamplerConfig&, const SamplerConfig&) = default;
};

/// (1 - t) / sqrt(t^2 + (1 - t)^2)
inline double sigma_t(double t) {
  const double s = 1.0 - t;
  return s / std::sqrt(t * t + s * s);
}

inline double step_time(int n, int steps) { return static_cast<double>(n) / steps; }

inline Field reference_draw(const SamplerConfig& cfg, const Grid& g, int channels,
                            std::uint64_t k) {
  return cfg.reference.sample(g, channels, derive_seed(cfg.seed, "noise", k));
}

/// u + (1 - t) v for an already evaluated velocity v.
inline Field terminal_from_velocity(const Field& u, const Field& v, double t) {
  Field out = u;
  out.axpy(1.0 - t, v);
  return out;
}

template <VelocityField V>
Field terminal_predict(const V& model, const Field& u, double t) {
  return terminal_from_velocity(u, model.velocity(u, t), t);
}

/// One explicit Euler update u + dt v.
inline Field euler_update(const Field& u, const Field& v, double dt) {
  Field out = u;
  out.axpy(dt, v);
  return out;
}

/// N explicit Euler steps of the flow from a given source field.
template <VelocityField V>
Field euler_sample_from(const V& model, Field u, int steps, std::vector<Field>* path = nullptr) {
  if (steps < 1) throw ConfigError("sampler: steps must be >= 1");
  const double dt = 1.0 / steps;
  if (path) path->assign(1, u);
  for (int n = 0; n < steps; ++n) {
    u = euler_update(u, model.velocity(u, step_time(n, steps)), dt);
    if (path) path->push_back(u);
  }
  return u;
}

/// Plain N-step explicit Euler integration of the flow from a reference draw.
template <VelocityField V>
Field euler_sample(const V& model, const Grid& grid, int channels, const SamplerConfig& cfg,
                   std::vector<Field>* path = nullptr) {
  cfg.validate();
  return euler_sample_from(model, reference_draw(cfg, grid, channels, 0), cfg.steps, path);
}

// ---------------------------------------------------------------------------
// Proximal refinement

/// |u - anchor|^2 + l_obs |(u - c) . m|^2 + l_pde |R(u)|^2
inline double proximal_objective(const Field& u, const Field& anchor, const ObservationSpec& obs,
                                 const PdeProblem* p, double lambda_obs, double lambda_pde) {
  double s = squared_norm(u - anchor);
  if (lambda_obs > 0.0) s += lambda_obs * observation_misfit(u, obs);
  if (lambda_pde > 0.0 && p) s += lambda_pde * residual_sq_norm(*p, u);
  return s;
}

/// Largest eigenvalue of J^T J for the residual Jacobian at u, by power
/// iteration (an estimate from below; callers add a margin).
inline double residual_jacobian_norm_sq(const PdeProblem& p, const Field& u, int iters = 40) {
  Field x(u.grid, u.channels);
  CounterRng rng(0x5eed);
  for (double& v : x.values) v = rng.normal();
  double lam = 0.0;
  for (int k = 0; k < iters; ++k) {
    const double nx = std::sqrt(squared_norm(x));
    if (nx == 0.0) return 0.0;
    x *= 1.0 / nx;
    Field y = residual_vjp(p, u, residual_jvp(p, u, x));
    lam = dot(x, y);
    x = std::move(y);
  }
  return lam;
}

/// Step size 1 / L with L = 2 + 2 l_obs + 2 l_pde |J|^2 (10% margin on the
/// power-iteration estimate), the descent-lemma step for the prox objective.
inline double prox_auto_step(const Field& anchor, const ObservationSpec& obs, const PdeProblem* p,
                             double lambda_obs, double lambda_pde) {
  double L = 2.0;
  if (lambda_obs > 0.0 && !obs.empty()) L += 2.0 * lambda_obs;
  if (lambda_pde > 0.0 && p) L += 2.0 * lambda_pde * 1.1 * residual_jacobian_norm_sq(*p, anchor);
  return 1.0 / L;
}

struct ProxReport {
  std::vector<double> objective;  // value before each iteration and after the last
  int increases = 0;
  double step = 0.0;
};

/// K gradient steps on the proximal objective starting at the anchor, with
/// step eta0 * (1 - t).
inline Field proximal_refine(const Field& anchor, const ObservationSpec& obs, const PdeProblem* p,
                             const SamplerConfig& cfg, double t, ProxReport* report = nullptr) {
  obs.require_matches(anchor);
  double lo = cfg.lambda_obs, lp = cfg.lambda_pde;
  if (cfg.sigma_modulation) {
    const double s2 = sigma_t(t) * sigma_t(t);
    lo *= s2;
    lp *= s2;
  }
  if (!p) lp = 0.0;
  Field u = anchor;
  if (cfg.prox_iters == 0) return u;
  const double eta0 = cfg.eta0 > 0.0 ? cfg.eta0 : prox_auto_step(anchor, obs, p, lo, lp);
  const double eta = eta0 * (1.0 - t);
  const std::vector<double> c = lo > 0.0 ? obs.scattered() : std::vector<double>{};
  if (report) {
    *report = {};
    report->step = eta;
    report->objective.push_back(proximal_objective(u, anchor, obs, p, lo, lp));
  }
  for (int k = 0; k < cfg.prox_iters; ++k) {
    Field g = u - anchor;
    g *= 2.0;
    if (lo > 0.0) {
      for (std::size_t i = 0; i < g.values.size(); ++i) {
        if (obs.mask[i]) g.values[i] += 2.0 * lo * (u.values[i] - c[i]);
      }
    }
    if (lp > 0.0) g.axpy(lp, residual_sq_grad(*p, u));
    u.axpy(-eta, g);
    if (!u.all_finite()) {
      throw NumericalError("proximal_refine: non-finite iterate at iteration " + std::to_string(k),
                           k);
    }
    if (report) {
      report->objective.push_back(proximal_objective(u, anchor, obs, p, lo, lp));
      if (report->objective.back() > report->objective[report->objective.size() - 2]) {
        ++report->increases;
      }
    }
  }
  return u;
}

inline Field proximal_refine(const Field& anchor, const ObservationSpec& obs, const PdeProblem& p,
                             const SamplerConfig& cfg, double t, ProxReport* report = nullptr) {
  return proximal_refine(anchor, obs, &p, cfg, t, report);
}

// ---------------------------------------------------------------------------
// Proximal flow guidance

/// (1 - t) eps + t u1 evaluated literally, so a logged (eps, u1, state) triple
/// satisfies the formula bit for bit. interpolant() uses std::lerp instead.
inline Field renoise(const Field& eps, const Field& u1, double t) {
  eps.require_same_shape(u1);
  Field out(eps.grid, eps.channels);
  for (std::size_t i = 0; i < out.values.size(); ++i) {
    out.values[i] = (1.0 - t) * eps.values[i] + t * u1.values[i];
  }
  return out;
}

struct ProflowStep {
  double t_next = 0.0;
  Field eps;    // fresh reference draw
  Field u1;     // refined terminal field
  Field state;  // u_{t_{n+1}}
};

struct ProflowTrace {
  Field initial;
  std::vector<ProflowStep> steps;
  int prox_increases = 0;  // inner objective increases (only counted when requested)
  bool record_prox = false;
};

template <VelocityField V>
Field proflow_sample(const V& model, const ObservationSpec& obs, const PdeProblem* p,
                     const SamplerConfig& cfg, ProflowTrace* trace = nullptr) {
  cfg.validate();
  obs.validate();
  const Grid& g = obs.grid;
  const int C = obs.channels;
  Field u = reference_draw(cfg, g, C, 0);
  if (trace) {
    trace->initial = u;
    trace->steps.clear();
    trace->prox_increases = 0;
  }
  for (int n = 0; n < cfg.steps; ++n) {
    const double t = step_time(n, cfg.steps);
    const double tn = step_time(n + 1, cfg.steps);
    const Field anchor = terminal_predict(model, u, t);
    ProxReport rep;
    const bool want = trace && trace->record_prox;
    Field u1 = proximal_refine(anchor, obs, p, cfg, t, want ? &rep : nullptr);
    if (want) trace->prox_increases += rep.increases;
    Field eps = reference_draw(cfg, g, C, static_cast<std::uint64_t>(n) + 1);
    u = renoise(eps, u1, tn);
    if (!u.all_finite()) throw NumericalError("proflow: non-finite state at step " + std::to_string(n), n);
    if (trace) trace->steps.push_back({tn, std::move(eps), std::move(u1), u});
  }
  return u;
}

template <VelocityField V>
Field proflow_sample(const V& model, const ObservationSpec& obs, const PdeProblem& p,
                     const SamplerConfig& cfg, ProflowTrace* trace = nullptr) {
  return proflow_sample(model, obs, &p, cfg, trace);
}

/// E samples with seeds base, base + 1, ..., base + E - 1.
template <class Fn>
std::vector<Field> sample_ensemble(int count, std::uint64_t base_seed, const SamplerConfig& cfg,
                                   Fn&& sampler) {
  if (count < 1) throw ConfigError("ensemble size must be >= 1");
  std::vector<Field> out;
  out.reserve(static_cast<std::size_t>(count));
  for (int e = 0; e < count; ++e) {
    SamplerConfig c = cfg;
    c.seed = base_seed + static_cast<std::uint64_t>(e);
    out.push_back(sampler(c));
  }
  return out;
}

}  // namespace proflow
