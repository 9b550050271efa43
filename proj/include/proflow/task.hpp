#pragma once

// Observation regimes: which entries of a stacked field are revealed.

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "proflow/errors.hpp"
#include "proflow/grid_field.hpp"
#include "proflow/pde_ops.hpp"
#include "proflow/rng.hpp"

namespace proflow {

enum class Regime { forward, inverse, joint_sparse, ic, bc, sparse_time };

inline std::string to_string(Regime r) {
  switch (r) {
    case Regime::forward: return "forward";
    case Regime::inverse: return "inverse";
    case Regime::joint_sparse: return "joint_sparse";
    case Regime::ic: return "ic";
    case Regime::bc: return "bc";
    case Regime::sparse_time: return "sparse_time";
  }
  return "?";
}

inline Regime parse_regime(const std::string& s) {
  for (auto r : {Regime::forward, Regime::inverse, Regime::joint_sparse, Regime::ic, Regime::bc,
                 Regime::sparse_time}) {
    if (to_string(r) == s) return r;
  }
  throw ConfigError("unknown task regime '" + s + "'");
}

/// forward: coefficient channel fully observed (elliptic).
/// inverse: solution channel fully observed (elliptic).
/// joint_sparse: `fraction` of the points of every channel, drawn per channel.
/// ic: first axis-0 row (t = 0 for space-time grids, y = 0 otherwise).
/// bc: the x = 0 column.
/// sparse_time: `time_rows` distinct random axis-0 rows.
struct TaskSpec {
  Regime regime = Regime::forward;
  double fraction = 0.5;
  int time_rows = 5;
  double sigma_obs = 0.05;

  void validate(PdeFamily family, const Grid& grid) const {
    if (!(fraction > 0.0 && fraction <= 1.0)) throw ConfigError("task: fraction must be in (0, 1]");
    if (!(sigma_obs >= 0.0)) throw ConfigError("task: sigma_obs must be nonnegative");
    if ((regime == Regime::forward || regime == Regime::inverse) && !is_elliptic(family)) {
      throw ConfigError("task: " + to_string(regime) + " needs a two-channel elliptic family");
    }
    if (regime == Regime::sparse_time && (time_rows < 1 || time_rows > grid.n0)) {
      throw ConfigError("task: time_rows must lie in [1, n0]");
    }
  }

  /// Channels scored by the reconstruction metrics.
  std::vector<int> target_channels(PdeFamily family) const {
    if (!is_elliptic(family)) return {0};
    switch (regime) {
      case Regime::forward: return {1};
      case Regime::inverse: return {0};
      default: return {0, 1};
    }
  }

  std::vector<std::uint8_t> make_mask(PdeFamily family, const Grid& grid,
                                      std::uint64_t seed) const {
    validate(family, grid);
    const int C = state_channels(family);
    const int n0 = grid.n0, n1 = grid.n1;
    const std::size_t P = grid.points();
    std::vector<std::uint8_t> mask(static_cast<std::size_t>(C) * P, 0);
    auto set_row = [&](int c, int i) {
      std::fill_n(mask.begin() + static_cast<std::ptrdiff_t>(c * P + static_cast<std::size_t>(i) * n1),
                  n1, 1);
    };
    switch (regime) {
      case Regime::forward:
        std::fill_n(mask.begin(), P, 1);
        break;
      case Regime::inverse:
        std::fill_n(mask.begin() + static_cast<std::ptrdiff_t>(P), P, 1);
        break;
      case Regime::joint_sparse:
        for (int c = 0; c < C; ++c) {
          std::vector<std::size_t> idx(P);
          std::iota(idx.begin(), idx.end(), std::size_t{0});
          CounterRng rng(derive_seed(seed, "joint_sparse", static_cast<std::uint64_t>(c)));
          for (std::size_t i = P - 1; i > 0; --i) std::swap(idx[i], idx[rng.below(i + 1)]);
          const auto k = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(P)));
          for (std::size_t i = 0; i < k; ++i) mask[c * P + idx[i]] = 1;
        }
        break;
      case Regime::ic:
        for (int c = 0; c < C; ++c) set_row(c, 0);
        break;
      case Regime::bc:
        for (int c = 0; c < C; ++c)
          for (int i = 0; i < n0; ++i) mask[c * P + static_cast<std::size_t>(i) * n1] = 1;
        break;
      case Regime::sparse_time: {
        std::vector<int> rows(n0);
        std::iota(rows.begin(), rows.end(), 0);
        CounterRng rng(derive_seed(seed, "sparse_time"));
        for (int i = n0 - 1; i > 0; --i) std::swap(rows[i], rows[rng.below(i + 1)]);
        for (int r = 0; r < time_rows; ++r)
          for (int c = 0; c < C; ++c) set_row(c, rows[r]);
        break;
      }
    }
    return mask;
  }

  /// Mask from derive_seed(seed, "mask"), noise from derive_seed(seed, "obs_noise").
  ObservationSpec observe(PdeFamily family, const Field& truth, std::uint64_t seed) const {
    auto mask = make_mask(family, truth.grid, derive_seed(seed, "mask"));
    const std::uint64_t noise = derive_seed(seed, "obs_noise");
    return ObservationSpec::observe(truth, std::move(mask), sigma_obs,
                                    sigma_obs > 0.0 ? &noise : nullptr);
  }

  friend bool operator==(const TaskSpec&, const TaskSpec&) = default;
};

}  // namespace proflow
