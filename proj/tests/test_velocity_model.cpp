#include <gtest/gtest.h>

#include <complex>
#include <numbers>
#include <sstream>

#include "proflow/velocity_model.hpp"
#include "test_util.hpp"

using namespace proflow;
using proflow::testing::random_field;
using proflow::testing::rel_err;

namespace {

ModelConfig tiny(int n = 8, Activation act = Activation::gelu) {
  ModelConfig c;
  c.grid = Grid::spatial(n, n);
  c.channels = 2;
  c.width = 4;
  c.layers = 2;
  c.modes = 2;
  c.time_emb_dim = 4;
  c.activation = act;
  return c;
}

/// Linear configuration: one layer, identity activation, all biases zero.
VelocityModel stripped_linear(int n, std::uint64_t seed) {
  auto cfg = tiny(n, Activation::identity);
  cfg.layers = 1;
  auto m = init_model(cfg, seed);
  for (const auto& b : m.blocks()) {
    if (b.bias) std::fill_n(m.params().begin() + b.offset, b.size, 0.0);
  }
  return m;
}

double norm_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

}  // namespace

TEST(VelocityInit, DeterministicGivenSeed) {
  const auto a = init_model(tiny(), 5), b = init_model(tiny(), 5), c = init_model(tiny(), 6);
  EXPECT_EQ(a.params(), b.params());
  EXPECT_EQ(a.time_frequencies(), b.time_frequencies());
  EXPECT_NE(a.params(), c.params());
}

TEST(VelocityInit, ParameterCountMatchesShapes) {
  // W=3, C=2, E=2, M=2, L=1: C_in = 6
  // lift 3*6 + 3, layer 2*3*3*(4*2) + 3*3 + 3, project 2*3 + 2
  ModelConfig c;
  c.grid = Grid::spatial(8, 8);
  c.channels = 2;
  c.width = 3;
  c.layers = 1;
  c.modes = 2;
  c.time_emb_dim = 2;
  const auto m = init_model(c, 1);
  EXPECT_EQ(m.parameter_count(), 21u + 156u + 8u);
  EXPECT_EQ(c.parameter_count(), 185u);
  std::size_t sum = 0;
  for (const auto& b : m.blocks()) sum += b.size;
  EXPECT_EQ(sum, 185u);
  // desk defaults on a 32x32 two-channel grid
  const ModelConfig d;
  EXPECT_EQ(d.parameter_count(), 16u * 12 + 16 + 2 * (2 * 16 * 16 * 16 * 8 + 256 + 16) + 32 + 2);
}

TEST(VelocityInit, ModesAboveNyquistRejected) {
  auto c = tiny(8);
  c.modes = 5;
  EXPECT_THROW(init_model(c, 1), ConfigError);
  c.modes = 4;
  EXPECT_NO_THROW(init_model(c, 1));
  c.grid = Grid::spacetime(16, 6, 0.5);
  EXPECT_THROW(init_model(c, 1), ConfigError);
}

TEST(VelocityInit, ZeroSeedOutputOnZeroInputIsBounded) {
  const ModelConfig cfg;
  const auto m = init_model(cfg, 0);
  const auto out = m.forward(Field(cfg.grid, cfg.channels), 0.0);
  ASSERT_TRUE(out.all_finite());
  std::vector<double> biases;
  for (const auto& b : m.blocks()) {
    if (b.bias) biases.insert(biases.end(), m.params().begin() + b.offset,
                              m.params().begin() + b.offset + b.size);
  }
  const double rms = norm_of(out.values) / std::sqrt(double(out.size()));
  EXPECT_LE(rms, 10.0 * norm_of(biases));
}

TEST(VelocityForward, OutputShapeMatchesState) {
  for (auto g : {Grid::spatial(8, 12), Grid::spacetime(10, 8, 0.5)}) {
    auto c = tiny();
    c.grid = g;
    c.channels = g.kind == GridKind::spatial2d ? 2 : 1;
    const auto m = init_model(c, 3);
    const auto out = m.forward(random_field(g, c.channels, 1), 0.4);
    EXPECT_TRUE(out.same_shape(random_field(g, c.channels, 1)));
  }
}

TEST(VelocityForward, ZeroWeightsGiveZeroOutput) {
  const VelocityModel m(tiny());
  const auto out = m.forward(random_field(tiny().grid, 2, 4), 0.7);
  for (double v : out.values) EXPECT_EQ(v, 0.0);
}

TEST(VelocityForward, ShapeMismatchThrows) {
  const auto m = init_model(tiny(8), 1);
  EXPECT_THROW(m.forward(Field(Grid::spatial(8, 10), 2), 0.1), ShapeError);
  EXPECT_THROW(m.forward(Field(Grid::spatial(8, 8), 1), 0.1), ShapeError);
}

TEST(VelocityForward, DoublingLiftDoublesOutputInLinearConfig) {
  auto m = stripped_linear(8, 11);
  const auto u = random_field(m.config().grid, 2, 2);
  const auto y1 = m.forward(u, 0.3);
  for (double& w : m.block_values("lift.weight")) w *= 2.0;
  const auto y2 = m.forward(u, 0.3);
  for (std::size_t i = 0; i < y1.size(); ++i) EXPECT_NEAR(y2.values[i], 2.0 * y1.values[i], 1e-13);
}

// A single-channel identity network keeps exactly the retained modes; compare
// with direct evaluation of the truncated synthesis formula using std::complex.
TEST(VelocityForward, SpectralLayerIsTheStatedLowPass) {
  ModelConfig c;
  c.grid = Grid::spatial(8, 10);
  c.channels = 1;
  c.width = 1;
  c.layers = 1;
  c.modes = 3;
  c.time_emb_dim = 0;
  c.activation = Activation::identity;
  VelocityModel m(c);
  m.block_values("lift.weight")[0] = 1.0;
  for (double& w : m.block_values("layer0.spectral_re")) w = 1.0;
  m.block_values("project.weight")[0] = 1.0;
  const auto u = random_field(c.grid, 1, 9);
  const auto y = m.forward(u, 0.5);

  const int n0 = 8, n1 = 10, M = 3;
  const double tau = 2 * std::numbers::pi;
  for (int i = 0; i < n0; ++i) {
    for (int j = 0; j < n1; ++j) {
      double acc = 0.0;
      for (int k0 = -M; k0 < M; ++k0) {
        for (int k1 = 0; k1 < M; ++k1) {
          std::complex<double> X = 0.0;
          for (int a = 0; a < n0; ++a)
            for (int b = 0; b < n1; ++b)
              X += u.at(0, a, b) * std::polar(1.0, -tau * (double(k0) * a / n0 + double(k1) * b / n1));
          const double ck = k1 == 0 ? 1.0 : 2.0;
          acc += ck * (X * std::polar(1.0, tau * (double(k0) * i / n0 + double(k1) * j / n1))).real();
        }
      }
      EXPECT_NEAR(y.at(0, i, j), acc / (n0 * n1), 1e-12);
    }
  }
}

TEST(VelocityForward, NoEnergyAboveRetainedModesWithoutPointwisePath) {
  auto c = tiny(16, Activation::identity);
  c.layers = 1;
  c.modes = 3;
  auto m = init_model(c, 21);
  for (double& w : m.block_values("layer0.weight")) w = 0.0;
  for (double& w : m.block_values("layer0.bias")) w = 0.0;
  for (double& w : m.block_values("project.bias")) w = 0.0;
  const auto y = m.forward(random_field(c.grid, 2, 5), 0.2);
  const int n = 16;
  const double tau = 2 * std::numbers::pi;
  double low = 0.0, high = 0.0;
  for (int ch = 0; ch < 2; ++ch) {
    for (int k0 = -n / 2 + 1; k0 <= n / 2; ++k0) {
      for (int k1 = -n / 2 + 1; k1 <= n / 2; ++k1) {
        std::complex<double> X = 0.0;
        for (int a = 0; a < n; ++a)
          for (int b = 0; b < n; ++b)
            X += y.at(ch, a, b) * std::polar(1.0, -tau * (double(k0) * a + double(k1) * b) / n);
        (std::abs(k0) > c.modes || std::abs(k1) >= c.modes ? high : low) += std::norm(X);
      }
    }
  }
  EXPECT_GT(low, 1e-6);
  EXPECT_LE(high, 1e-24 * low);
}

TEST(VelocityVjp, InputGradientMatchesFiniteDifferences) {
  const auto m = init_model(tiny(8), 13);
  const auto g = m.config().grid;
  for (int trial = 0; trial < 5; ++trial) {
    const auto u = random_field(g, 2, 100 + trial);
    const auto cot = random_field(g, 2, 200 + trial);
    const auto dir = random_field(g, 2, 300 + trial);
    const double t = 0.1 + 0.15 * trial;
    const double analytic = dot(vjp_input(m, u, t, cot), dir);
    const double fd = proflow::testing::fd_directional(
        [&](const Field& x) { return dot(cot, m.forward(x, t)); }, u, dir, 1e-5);
    EXPECT_LT(rel_err(analytic, fd), 1e-5) << "trial " << trial;
  }
}

TEST(VelocityVjp, ZeroCotangentGivesZeroGradients) {
  const auto m = init_model(tiny(8), 13);
  const auto u = random_field(m.config().grid, 2, 1);
  const Field zero(m.config().grid, 2);
  for (double v : vjp_input(m, u, 0.5, zero).values) EXPECT_EQ(v, 0.0);
  for (double v : vjp_params(m, u, 0.5, zero)) EXPECT_EQ(v, 0.0);
}

TEST(VelocityVjp, LinearConfigMatchesExplicitJacobian) {
  const auto m = stripped_linear(4, 17);
  const auto g = m.config().grid;
  const std::size_t n = 2 * g.points();
  const double t = 0.6;
  const auto base = m.forward(Field(g, 2), t);
  // J[:, k] = f(e_k) - f(0)
  std::vector<std::vector<double>> cols(n);
  for (std::size_t k = 0; k < n; ++k) {
    Field e(g, 2);
    e.values[k] = 1.0;
    const auto fk = m.forward(e, t);
    cols[k].resize(n);
    for (std::size_t i = 0; i < n; ++i) cols[k][i] = fk.values[i] - base.values[i];
  }
  const auto cot = random_field(g, 2, 3);
  const auto gin = vjp_input(m, random_field(g, 2, 4), t, cot);
  for (std::size_t k = 0; k < n; ++k) {
    double expect = 0.0;
    for (std::size_t i = 0; i < n; ++i) expect += cols[k][i] * cot.values[i];
    EXPECT_NEAR(gin.values[k], expect, 1e-12) << "column " << k;
  }
}

TEST(VelocityVjp, ParameterGradientMatchesFiniteDifferencesPerBlock) {
  auto m = init_model(tiny(8), 23);
  const auto g = m.config().grid;
  const auto u = random_field(g, 2, 31), cot = random_field(g, 2, 32);
  const double t = 0.37;
  const auto grad = vjp_params(m, u, t, cot);
  ASSERT_EQ(grad.size(), m.parameter_count());
  CounterRng rng(77);
  for (const auto& b : m.blocks()) {
    std::vector<double> dir(b.size);
    for (double& d : dir) d = rng.normal();
    double analytic = 0.0;
    for (std::size_t i = 0; i < b.size; ++i) analytic += grad[b.offset + i] * dir[i];
    const double eps = 1e-5;
    auto shifted = [&](double s) {
      auto mm = m;
      for (std::size_t i = 0; i < b.size; ++i) mm.params()[b.offset + i] += s * dir[i];
      return dot(cot, mm.forward(u, t));
    };
    const double fd = (shifted(eps) - shifted(-eps)) / (2 * eps);
    EXPECT_LT(rel_err(analytic, fd), 1e-5) << b.name;
  }
}

TEST(VelocityVjp, TimeFrequenciesAreNotTrainable) {
  const auto m = init_model(tiny(8), 2);
  for (const auto& b : m.blocks()) EXPECT_NE(b.name, "time_frequencies");
  EXPECT_EQ(vjp_params(m, random_field(m.config().grid, 2, 1), 0.2,
                       random_field(m.config().grid, 2, 2))
                .size(),
            m.parameter_count());
}

TEST(VelocityVjp, AdjointIdentityWithForwardDifferences) {
  const auto m = init_model(tiny(8), 41);
  const auto g = m.config().grid;
  const auto u = random_field(g, 2, 1);
  for (int trial = 0; trial < 4; ++trial) {
    const auto c = random_field(g, 2, 10 + trial), d = random_field(g, 2, 20 + trial);
    Field up = u, um = u;
    up.axpy(1e-5, d);
    um.axpy(-1e-5, d);
    auto jvp = m.forward(up, 0.8) - m.forward(um, 0.8);
    jvp *= 1.0 / 2e-5;
    EXPECT_LT(rel_err(dot(vjp_input(m, u, 0.8, c), d), dot(c, jvp)), 1e-5);
  }
}

TEST(VelocityVjp, EmptyTapeIsAStateError) {
  const auto m = init_model(tiny(8), 1);
  ModelTape tape;
  EXPECT_THROW(m.vjp_input(tape, Field(m.config().grid, 2)), StateError);
  EXPECT_THROW(m.vjp_params(tape, Field(m.config().grid, 2)), StateError);
}

TEST(VelocityVjp, BitReproducible) {
  const auto m = init_model(tiny(8), 8);
  const auto u = random_field(m.config().grid, 2, 1), c = random_field(m.config().grid, 2, 2);
  EXPECT_EQ(m.forward(u, 0.3).values, m.forward(u, 0.3).values);
  EXPECT_EQ(vjp_input(m, u, 0.3, c).values, vjp_input(m, u, 0.3, c).values);
  EXPECT_EQ(vjp_params(m, u, 0.3, c), vjp_params(m, u, 0.3, c));
}

TEST(Checkpoint, RoundTripIsBitExact) {
  const auto m = init_model(tiny(8), 4);
  std::stringstream ss;
  write_model(ss, m);
  const auto r = read_model(ss);
  EXPECT_TRUE(r.config() == m.config());
  EXPECT_EQ(r.params(), m.params());
  EXPECT_EQ(r.time_frequencies(), m.time_frequencies());
  const auto u = random_field(m.config().grid, 2, 3);
  EXPECT_EQ(r.forward(u, 0.25).values, m.forward(u, 0.25).values);
}

TEST(Checkpoint, CorruptInputRejected) {
  std::stringstream bad("PFLDxxxx");
  EXPECT_THROW(read_model(bad), IoError);
  std::stringstream ss;
  write_model(ss, init_model(tiny(8), 4));
  auto s = ss.str();
  s.resize(s.size() / 2);
  std::stringstream half(s);
  EXPECT_THROW(read_model(half), IoError);
}
