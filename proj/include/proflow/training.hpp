#pragma once

// Flow-matching training: loss, gradient, Adam and the training loop.

#include <cmath>
#include <concepts>
#include <cstdint>
#include <fstream>
#include <functional>
#include <iomanip>
#include <numeric>
#include <string>
#include <vector>

#include "proflow/classical_solvers.hpp"
#include "proflow/errors.hpp"
#include "proflow/grf.hpp"
#include "proflow/grid_field.hpp"
#include "proflow/rng.hpp"
#include "proflow/velocity_model.hpp"

namespace proflow {

/// Anything with a taped forward pass and a parameter VJP.
template <class M>
concept TrainableVelocity = requires(const M& m, const Field& u, double t,
                                     typename M::Tape* tape, const typename M::Tape& ctape) {
  { m.forward(u, t, tape) } -> std::convertible_to<Field>;
  { m.vjp_params(ctape, u) } -> std::convertible_to<std::vector<double>>;
  { m.parameter_count() } -> std::convertible_to<std::size_t>;
};

struct TrainConfig {
  double learning_rate = 3e-4;
  int batch_size = 16;
  int iterations = 2000;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::uint64_t seed = 0;
  int checkpoint_every = 0;  // 0 disables periodic checkpoints

  void validate() const {
    if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) {
      throw ConfigError("train: learning_rate must be finite and nonnegative");
    }
    if (batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
    if (iterations < 0) throw ConfigError("train: iterations must be >= 0");
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
      throw ConfigError("train: adam betas must lie in [0, 1)");
    }
    if (!(eps > 0.0)) throw ConfigError("train: eps must be positive");
    if (checkpoint_every < 0) throw ConfigError("train: checkpoint_every must be >= 0");
  }

  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

class Adam {
 public:
  Adam(std::size_t n, double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : lr_(lr), b1_(beta1), b2_(beta2), eps_(eps), m_(n, 0.0), v_(n, 0.0) {}

  void step(std::vector<double>& params, const std::vector<double>& grad) {
    if (params.size() != m_.size() || grad.size() != m_.size()) {
      throw ShapeError("adam: parameter/gradient size mismatch");
    }
    ++t_;
    const double c1 = 1.0 - std::pow(b1_, t_), c2 = 1.0 - std::pow(b2_, t_);
    for (std::size_t i = 0; i < params.size(); ++i) {
      m_[i] = b1_ * m_[i] + (1.0 - b1_) * grad[i];
      v_[i] = b2_ * v_[i] + (1.0 - b2_) * grad[i] * grad[i];
      params[i] -= lr_ * (m_[i] / c1) / (std::sqrt(v_[i] / c2) + eps_);
    }
  }

  int steps() const { return t_; }

 private:
  double lr_, b1_, b2_, eps_;
  std::vector<double> m_, v_;
  int t_ = 0;
};

/// Per-sample reference draw and interpolation time.
struct FfmDraw {
  Field u0;
  double t = 0.0;
};

/// Draw i of a loss evaluation keyed by `seed`.
inline FfmDraw ffm_draw(const ReferenceMeasure& mu0, const Grid& grid, int channels,
                        std::uint64_t seed, std::uint64_t i) {
  FfmDraw d;
  d.u0 = mu0.sample(grid, channels, derive_seed(seed, "u0", i));
  d.t = CounterRng(derive_seed(seed, "t", i)).uniform();
  return d;
}

struct LossAndGrad {
  double loss = 0.0;
  std::vector<double> grad;
};

/// Mean over batch, channels and grid points of |v(u_t, t) - (u1 - u0)|^2 and
/// its parameter gradient, for explicit (u0, t) draws.
template <TrainableVelocity M>
LossAndGrad ffm_loss(const M& m, const std::vector<const Field*>& batch,
                     const std::vector<FfmDraw>& draws) {
  if (batch.empty()) throw ShapeError("ffm_loss: empty batch");
  if (draws.size() != batch.size()) throw ShapeError("ffm_loss: one draw per batch member");
  LossAndGrad out;
  out.grad.assign(m.parameter_count(), 0.0);
  const double norm = static_cast<double>(batch.size()) * static_cast<double>(batch[0]->size());
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const Field& u1 = *batch[b];
    const Field& u0 = draws[b].u0;
    if (!u1.same_shape(*batch[0]) || !u0.same_shape(u1)) {
      throw ShapeError("ffm_loss: batch member " + std::to_string(b) + " has a different shape");
    }
    const Field ut = interpolant(u0, u1, draws[b].t);
    typename M::Tape tape;
    Field r = m.forward(ut, draws[b].t, &tape);
    r -= u1 - u0;
    out.loss += squared_norm(r) / norm;
    r *= 2.0 / norm;
    const auto g = m.vjp_params(tape, r);
    for (std::size_t i = 0; i < g.size(); ++i) out.grad[i] += g[i];
  }
  return out;
}

/// Same loss with draws i = 0..B-1 taken from `seed`.
template <TrainableVelocity M>
LossAndGrad ffm_loss(const M& m, const std::vector<const Field*>& batch,
                     const ReferenceMeasure& mu0, std::uint64_t seed) {
  if (batch.empty()) throw ShapeError("ffm_loss: empty batch");
  std::vector<FfmDraw> draws;
  draws.reserve(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    draws.push_back(ffm_draw(mu0, batch[0]->grid, batch[0]->channels, seed, i));
  }
  return ffm_loss(m, batch, draws);
}

struct TrainResult {
  std::vector<double> losses;  // one entry per step
};

/// Called every checkpoint_every steps with the 1-based step count.
using CheckpointHook = std::function<void(int step, const VelocityModel&)>;

/// Mean of the first and last `window` entries of a loss trace.
inline std::pair<double, double> smoothed_endpoints(const std::vector<double>& losses,
                                                    std::size_t window = 100) {
  if (losses.empty()) throw ConfigError("smoothed_endpoints: empty trace");
  const std::size_t w = std::min(window, losses.size());
  const double head = std::accumulate(losses.begin(), losses.begin() + w, 0.0) / w;
  const double tail = std::accumulate(losses.end() - w, losses.end(), 0.0) / w;
  return {head, tail};
}

/// Adam on the flow-matching loss. Batches walk through per-epoch
/// permutations of the dataset; step k uses loss draws keyed by
/// derive_seed(cfg.seed, "step", k).
inline TrainResult train(VelocityModel& m, const Dataset& data, const TrainConfig& cfg,
                         const ReferenceMeasure& mu0, const CheckpointHook& hook = {}) {
  cfg.validate();
  if (data.samples.empty()) throw ConfigError("train: dataset is empty");
  if (!(data.grid == m.config().grid) || data.samples[0].channels != m.config().channels) {
    throw ShapeError("train: dataset grid/channels do not match the model");
  }
  const std::size_t n = data.samples.size();
  std::vector<std::size_t> order;
  std::size_t cursor = n;
  std::uint64_t epoch = 0;
  auto next_index = [&]() {
    if (cursor == n) {
      order.resize(n);
      std::iota(order.begin(), order.end(), std::size_t{0});
      CounterRng rng(derive_seed(cfg.seed, "epoch", epoch++));
      for (std::size_t i = n - 1; i > 0; --i) std::swap(order[i], order[rng.below(i + 1)]);
      cursor = 0;
    }
    return order[cursor++];
  };

  Adam opt(m.parameter_count(), cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.eps);
  TrainResult res;
  res.losses.reserve(static_cast<std::size_t>(cfg.iterations));
  std::vector<const Field*> batch(static_cast<std::size_t>(cfg.batch_size));
  for (int step = 0; step < cfg.iterations; ++step) {
    for (auto& b : batch) b = &data.samples[next_index()];
    auto lg = ffm_loss(m, batch, mu0, derive_seed(cfg.seed, "step", step));
    if (!std::isfinite(lg.loss)) {
      throw NumericalError("train: non-finite loss at step " + std::to_string(step), step);
    }
    res.losses.push_back(lg.loss);
    opt.step(m.params(), lg.grad);
    if (hook && cfg.checkpoint_every > 0 && (step + 1) % cfg.checkpoint_every == 0) {
      hook(step + 1, m);
    }
  }
  return res;
}

inline void write_loss_csv(std::ostream& os, const std::vector<double>& losses) {
  os << "step,loss\n" << std::setprecision(17);
  for (std::size_t i = 0; i < losses.size(); ++i) os << i << ',' << losses[i] << '\n';
}

inline void save_loss_csv(const std::string& path, const std::vector<double>& losses) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot open " + path + " for writing");
  write_loss_csv(os, losses);
}

}  // namespace proflow
