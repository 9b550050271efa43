#pragma once

// Ensemble metrics: reconstruction error (RE), error of the ensemble mean
// (MMSE), error of the ensemble std (SMSE) and mean PDE residual. Std uses the
// population (1/E) convention. Scores can be restricted to a channel subset.

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "proflow/errors.hpp"
#include "proflow/grid_field.hpp"
#include "proflow/pde_ops.hpp"

namespace proflow {

class SampleEnsemble {
 public:
  explicit SampleEnsemble(std::vector<Field> samples, std::optional<PdeProblem> problem = {})
      : samples_(std::move(samples)), problem_(std::move(problem)) {
    if (samples_.empty()) throw ConfigError("ensemble: need at least one sample");
    for (const auto& s : samples_) samples_.front().require_same_shape(s);
    const Field& f = samples_.front();
    mean_ = Field(f.grid, f.channels);
    std_ = Field(f.grid, f.channels);
    const double inv = 1.0 / static_cast<double>(samples_.size());
    for (const auto& s : samples_) mean_ += s;
    mean_ *= inv;
    // one correction pass: makes the mean exact for identical samples
    Field corr(f.grid, f.channels);
    for (const auto& s : samples_) corr += s - mean_;
    mean_.axpy(inv, corr);
    for (const auto& s : samples_) {
      for (std::size_t i = 0; i < s.size(); ++i) {
        const double d = s.values[i] - mean_.values[i];
        std_.values[i] += inv * d * d;
      }
    }
    for (double& v : std_.values) v = std::sqrt(v);
  }

  std::size_t size() const { return samples_.size(); }
  const std::vector<Field>& samples() const { return samples_; }
  const Field& mean() const { return mean_; }
  const Field& stddev() const { return std_; }
  const Grid& grid() const { return mean_.grid; }
  int channels() const { return mean_.channels; }
  const std::optional<PdeProblem>& problem() const { return problem_; }

 private:
  std::vector<Field> samples_;
  std::optional<PdeProblem> problem_;
  Field mean_, std_;
};

namespace detail {

inline std::vector<int> resolve_channels(const std::vector<int>& channels, int total) {
  if (channels.empty()) {
    std::vector<int> all(static_cast<std::size_t>(total));
    for (int c = 0; c < total; ++c) all[static_cast<std::size_t>(c)] = c;
    return all;
  }
  for (int c : channels) {
    if (c < 0 || c >= total) throw ShapeError("metrics: channel " + std::to_string(c) + " out of range");
  }
  return channels;
}

/// Mean over the selected channels and points of (a - b)^2.
inline double channel_mse(const Field& a, const Field& b, const std::vector<int>& channels) {
  a.require_same_shape(b);
  const auto cs = resolve_channels(channels, a.channels);
  double s = 0.0;
  for (int c : cs) {
    const auto x = a.channel(c), y = b.channel(c);
    for (std::size_t i = 0; i < x.size(); ++i) s += (x[i] - y[i]) * (x[i] - y[i]);
  }
  return s / static_cast<double>(cs.size() * a.grid.points());
}

}  // namespace detail

/// Mean over samples of the mean squared pointwise error.
inline double reconstruction_error(const SampleEnsemble& ens, const Field& truth,
                                   const std::vector<int>& channels = {}) {
  double s = 0.0;
  for (const auto& x : ens.samples()) s += detail::channel_mse(x, truth, channels);
  return s / static_cast<double>(ens.size());
}

inline double mean_mse(const SampleEnsemble& ens, const Field& truth,
                       const std::vector<int>& channels = {}) {
  return detail::channel_mse(ens.mean(), truth, channels);
}

inline double std_mse(const SampleEnsemble& ens, const Field& ref_std,
                      const std::vector<int>& channels = {}) {
  return detail::channel_mse(ens.stddev(), ref_std, channels);
}

/// Mean over the selected channels and points of the ensemble variance.
inline double mean_variance(const SampleEnsemble& ens, const std::vector<int>& channels = {}) {
  const Field zero(ens.grid(), ens.channels());
  return detail::channel_mse(ens.stddev(), zero, channels);
}

inline double ensemble_pde_error(const SampleEnsemble& ens) {
  if (!ens.problem()) throw ConfigError("ensemble_pde_error: ensemble has no problem attached");
  double s = 0.0;
  for (const auto& x : ens.samples()) s += pde_error(*ens.problem(), x);
  return s / static_cast<double>(ens.size());
}

struct MetricSet {
  double re = 0.0, mmse = 0.0, smse = 0.0, pde_err = 0.0;
};

inline MetricSet evaluate_ensemble(const SampleEnsemble& ens, const Field& truth, const Field& ref_std,
                                   const std::vector<int>& channels) {
  MetricSet m;
  m.re = reconstruction_error(ens, truth, channels);
  m.mmse = mean_mse(ens, truth, channels);
  m.smse = std_mse(ens, ref_std, channels);
  if (ens.problem()) m.pde_err = ensemble_pde_error(ens);
  return m;
}

}  // namespace proflow
