#pragma once

// Spectral velocity network v(u_t, t).
//
// Input channels: the state (C), Gaussian Fourier time features (E), and the
// two normalized grid coordinates. Pipeline:
//   lift (pointwise C_in -> W)
//   L x [ spectral conv + pointwise W -> W + bias, activation ]
//   project (pointwise W -> C)
//
// The spectral conv keeps row frequencies k0 in [-M, M) and column
// frequencies k1 in [0, M) of a 2D DFT, multiplies each retained mode by a
// complex W x W matrix and maps back with the real inverse transform
//   y = (1 / N) sum_{k0, k1} c_k1 Re(Y[k0, k1] exp(i theta)),  c_0 = 1, c_k1 = 2.
// Transforms are dense partial DFTs over precomputed cos/sin tables; every
// stage is a real-linear map with a hand-written adjoint.
//
// All trainable values live in one flat vector; `blocks()` names the slices.
// The time-feature frequencies are fixed at init and kept outside it.

#include <cmath>
#include <cstdint>
#include <fstream>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "proflow/dense.hpp"
#include "proflow/errors.hpp"
#include "proflow/field_io.hpp"
#include "proflow/grid_field.hpp"
#include "proflow/rng.hpp"

namespace proflow {

enum class Activation : std::uint32_t { gelu = 0, identity = 1 };

inline std::string to_string(Activation a) { return a == Activation::gelu ? "gelu" : "identity"; }

inline Activation parse_activation(const std::string& s) {
  if (s == "gelu") return Activation::gelu;
  if (s == "identity") return Activation::identity;
  throw ConfigError("unknown activation '" + s + "'");
}

struct ModelConfig {
  Grid grid = Grid::spatial(32, 32);
  int channels = 2;
  int width = 16;
  int layers = 2;
  int modes = 8;
  int time_emb_dim = 8;
  double time_frequency_scale = 4.0;  // std of the Gaussian time frequencies
  Activation activation = Activation::gelu;

  int input_channels() const { return channels + time_emb_dim + 2; }

  void validate() const {
    grid.validate();
    if (channels < 1) throw ConfigError("model: channels must be >= 1");
    if (width < 1) throw ConfigError("model: width must be >= 1");
    if (layers < 0) throw ConfigError("model: layers must be >= 0");
    if (time_emb_dim < 0 || time_emb_dim % 2 != 0) {
      throw ConfigError("model: time_emb_dim must be even and nonnegative");
    }
    if (modes < 1 || modes > grid.n0 / 2 || modes > grid.n1 / 2) {
      throw ConfigError("model: modes " + std::to_string(modes) + " exceed the Nyquist limit " +
                        std::to_string(std::min(grid.n0, grid.n1) / 2) + " of a " +
                        std::to_string(grid.n0) + "x" + std::to_string(grid.n1) + " grid");
    }
    if (!(time_frequency_scale >= 0.0) || !std::isfinite(time_frequency_scale)) {
      throw ConfigError("model: time_frequency_scale must be finite and nonnegative");
    }
  }

  /// Closed-form trainable parameter count.
  std::size_t parameter_count() const {
    const std::size_t w = width, cin = input_channels(), c = channels;
    const std::size_t spec = 2 * w * w * (2 * static_cast<std::size_t>(modes)) * modes;
    return w * cin + w + static_cast<std::size_t>(layers) * (spec + w * w + w) + c * w + c;
  }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

struct ParamBlock {
  std::string name;
  std::vector<std::size_t> shape;
  std::size_t offset = 0;
  std::size_t size = 0;
  std::size_t fan_in = 1;
  bool bias = false;
};

/// Activations recorded by a forward pass and consumed by the VJPs.
struct ModelTape {
  bool filled = false;
  Grid grid;
  int channels = 0;
  double t = 0.0;
  std::vector<double> input;                // C_in x P
  std::vector<std::vector<double>> hidden;  // L + 1 entries, W x P (post-activation)
  std::vector<std::vector<double>> pre;     // L entries, W x P (pre-activation)
  std::vector<std::vector<double>> spec_re, spec_im;  // L entries, W x 2M x M
};

namespace detail {

constexpr double kGeluC = 0.7978845608028654;  // sqrt(2 / pi)
constexpr double kGeluA = 0.044715;

inline double gelu(double x) {
  return 0.5 * x * (1.0 + std::tanh(kGeluC * (x + kGeluA * x * x * x)));
}

inline double gelu_grad(double x) {
  const double th = std::tanh(kGeluC * (x + kGeluA * x * x * x));
  return 0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * kGeluC * (1.0 + 3.0 * kGeluA * x * x);
}

}  // namespace detail

class VelocityModel {
 public:
  using Tape = ModelTape;

  VelocityModel() = default;

  /// All-zero parameters, zero time frequencies.
  explicit VelocityModel(const ModelConfig& cfg) : cfg_(cfg) {
    cfg_.validate();
    build_layout();
    params_.assign(cfg_.parameter_count(), 0.0);
    freqs_.assign(static_cast<std::size_t>(cfg_.time_emb_dim / 2), 0.0);
    build_tables();
  }

  const ModelConfig& config() const { return cfg_; }
  std::size_t parameter_count() const { return params_.size(); }
  std::vector<double>& params() { return params_; }
  const std::vector<double>& params() const { return params_; }
  std::vector<double>& time_frequencies() { return freqs_; }
  const std::vector<double>& time_frequencies() const { return freqs_; }
  const std::vector<ParamBlock>& blocks() const { return blocks_; }

  const ParamBlock& block(const std::string& name) const {
    for (const auto& b : blocks_) {
      if (b.name == name) return b;
    }
    throw ConfigError("model has no parameter block '" + name + "'");
  }
  std::span<double> block_values(const std::string& name) {
    const auto& b = block(name);
    return {params_.data() + b.offset, b.size};
  }
  std::span<const double> block_values(const std::string& name) const {
    const auto& b = block(name);
    return {params_.data() + b.offset, b.size};
  }

  /// Weights and biases uniform on [-1/sqrt(fan_in), 1/sqrt(fan_in)], real and
  /// imaginary spectral parts drawn independently; time frequencies
  /// N(0, time_frequency_scale^2).
  void initialize(std::uint64_t seed) {
    CounterRng rng(derive_seed(seed, "model_init"));
    for (const auto& b : blocks_) {
      const double k = 1.0 / std::sqrt(static_cast<double>(b.fan_in));
      for (std::size_t i = 0; i < b.size; ++i) params_[b.offset + i] = k * (2.0 * rng.uniform() - 1.0);
    }
    CounterRng frng(derive_seed(seed, "time_frequencies"));
    for (double& f : freqs_) f = cfg_.time_frequency_scale * frng.normal();
  }

  /// [sin(2 pi f_i t)..., cos(2 pi f_i t)...]
  std::vector<double> time_features(double t) const {
    std::vector<double> e(static_cast<std::size_t>(cfg_.time_emb_dim));
    const std::size_t h = freqs_.size();
    for (std::size_t i = 0; i < h; ++i) {
      const double a = 2.0 * std::numbers::pi * freqs_[i] * t;
      e[i] = std::sin(a);
      e[h + i] = std::cos(a);
    }
    return e;
  }

  Field forward(const Field& u, double t, ModelTape* tape = nullptr) const {
    check_input(u, "forward");
    if (!std::isfinite(t)) throw ConfigError("forward: t must be finite");
    const std::size_t P = cfg_.grid.points();
    const std::size_t W = cfg_.width, C = cfg_.channels, Cin = cfg_.input_channels();

    std::vector<double> x(Cin * P);
    std::copy(u.values.begin(), u.values.end(), x.begin());
    const auto emb = time_features(t);
    for (std::size_t e = 0; e < emb.size(); ++e) {
      std::fill_n(x.begin() + static_cast<std::ptrdiff_t>((C + e) * P), P, emb[e]);
    }
    double* c0 = x.data() + (C + emb.size()) * P;
    double* c1 = c0 + P;
    for (int i = 0; i < cfg_.grid.n0; ++i) {
      for (int j = 0; j < cfg_.grid.n1; ++j) {
        c0[i * cfg_.grid.n1 + j] = cfg_.grid.coord0(i);
        c1[i * cfg_.grid.n1 + j] = cfg_.grid.coord1(j);
      }
    }

    std::vector<double> h(W * P);
    affine(W, Cin, p("lift.weight"), p("lift.bias"), x.data(), h.data());

    ModelTape local;
    ModelTape& tp = tape ? *tape : local;
    const bool keep = tape != nullptr;
    if (keep) {
      tp = ModelTape{};
      tp.grid = u.grid;
      tp.channels = u.channels;
      tp.t = t;
      tp.input = x;
    }

    for (int l = 0; l < cfg_.layers; ++l) {
      std::vector<double> xr, xi;
      analyze(h.data(), xr, xi);
      std::vector<double> z(W * P);
      spectral_apply(l, xr, xi, z.data());
      affine(W, W, p(layer_name(l, "weight")), p(layer_name(l, "bias")), h.data(), z.data(), true);
      std::vector<double> hn(W * P);
      if (cfg_.activation == Activation::gelu) {
        for (std::size_t i = 0; i < z.size(); ++i) hn[i] = detail::gelu(z[i]);
      } else {
        hn = z;
      }
      if (keep) {
        tp.hidden.push_back(std::move(h));
        tp.pre.push_back(std::move(z));
        tp.spec_re.push_back(std::move(xr));
        tp.spec_im.push_back(std::move(xi));
      }
      h = std::move(hn);
    }

    Field out(u.grid, u.channels);
    affine(C, W, p("project.weight"), p("project.bias"), h.data(), out.values.data());
    if (keep) {
      tp.hidden.push_back(std::move(h));
      tp.filled = true;
    }
    return out;
  }

  /// Reverse sweep over a stored tape. Either output pointer may be null.
  void vjp(const ModelTape& tape, const Field& cotangent, Field* grad_input,
           std::vector<double>* grad_params) const {
    if (!tape.filled) throw StateError("vjp: forward tape is empty; run forward with a tape first");
    if (!(tape.grid == cfg_.grid) || tape.channels != cfg_.channels) {
      throw StateError("vjp: tape was recorded for a different model shape");
    }
    check_input(cotangent, "vjp cotangent");
    const std::size_t P = cfg_.grid.points();
    const std::size_t W = cfg_.width, C = cfg_.channels, Cin = cfg_.input_channels();

    std::vector<double> g;
    if (grad_params) g.assign(params_.size(), 0.0);
    auto gp = [&](const std::string& name) { return g.data() + block(name).offset; };

    // project
    const auto& hl = tape.hidden.back();
    std::vector<double> gh(W * P, 0.0);
    dense::gemm_tn(W, P, C, 1.0, p("project.weight"), cotangent.values.data(), gh.data());
    if (grad_params) {
      dense::gemm_nt(C, W, P, 1.0, cotangent.values.data(), hl.data(), gp("project.weight"));
      row_sums(C, P, cotangent.values.data(), gp("project.bias"));
    }

    for (int l = cfg_.layers - 1; l >= 0; --l) {
      const auto& z = tape.pre[l];
      const auto& hin = tape.hidden[l];
      std::vector<double> gz(W * P);
      if (cfg_.activation == Activation::gelu) {
        for (std::size_t i = 0; i < gz.size(); ++i) gz[i] = gh[i] * detail::gelu_grad(z[i]);
      } else {
        gz = gh;
      }
      std::vector<double> ghin(W * P, 0.0);
      dense::gemm_tn(W, P, W, 1.0, p(layer_name(l, "weight")), gz.data(), ghin.data());
      if (grad_params) {
        dense::gemm_nt(W, W, P, 1.0, gz.data(), hin.data(), gp(layer_name(l, "weight")));
        row_sums(W, P, gz.data(), gp(layer_name(l, "bias")));
      }
      std::vector<double> gyr, gyi;
      synthesize_adjoint(gz.data(), gyr, gyi);
      if (grad_params) {
        spectral_weight_grad(tape.spec_re[l], tape.spec_im[l], gyr, gyi,
                             gp(layer_name(l, "spectral_re")), gp(layer_name(l, "spectral_im")));
      }
      std::vector<double> gxr, gxi;
      spectral_apply_adjoint(l, gyr, gyi, gxr, gxi);
      analyze_adjoint(gxr, gxi, ghin.data());
      gh = std::move(ghin);
    }

    // lift
    if (grad_params) {
      dense::gemm_nt(W, Cin, P, 1.0, gh.data(), tape.input.data(), gp("lift.weight"));
      row_sums(W, P, gh.data(), gp("lift.bias"));
      *grad_params = std::move(g);
    }
    if (grad_input) {
      std::vector<double> gx(Cin * P, 0.0);
      dense::gemm_tn(Cin, P, W, 1.0, p("lift.weight"), gh.data(), gx.data());
      gx.resize(C * P);
      *grad_input = Field(cfg_.grid, cfg_.channels, std::move(gx));
    }
  }

  Field vjp_input(const ModelTape& tape, const Field& cotangent) const {
    Field g;
    vjp(tape, cotangent, &g, nullptr);
    return g;
  }

  std::vector<double> vjp_params(const ModelTape& tape, const Field& cotangent) const {
    std::vector<double> g;
    vjp(tape, cotangent, nullptr, &g);
    return g;
  }

  // Interface shared with sampler test doubles.
  Field velocity(const Field& u, double t) const { return forward(u, t); }
  Field velocity_vjp(const Field& u, double t, const Field& cotangent) const {
    ModelTape tape;
    forward(u, t, &tape);
    return vjp_input(tape, cotangent);
  }

  bool all_finite() const {
    for (double v : params_) {
      if (!std::isfinite(v)) return false;
    }
    return true;
  }

 private:
  ModelConfig cfg_;
  std::vector<double> params_;
  std::vector<double> freqs_;
  std::vector<ParamBlock> blocks_;
  // cos/sin tables: axis 1 (M x n1, plus copies scaled by c_k / N), axis 0 (2M x n0)
  std::vector<double> cos1_, sin1_, cos1s_, sin1s_, cos0_, sin0_;

  static std::string layer_name(int l, const char* what) {
    return "layer" + std::to_string(l) + "." + what;
  }

  const double* p(const std::string& name) const { return params_.data() + block(name).offset; }

  void build_layout() {
    blocks_.clear();
    const std::size_t W = cfg_.width, C = cfg_.channels, Cin = cfg_.input_channels();
    const std::size_t R = 2 * static_cast<std::size_t>(cfg_.modes), M = cfg_.modes;
    std::size_t off = 0;
    auto add = [&](std::string name, std::vector<std::size_t> shape, std::size_t fan_in, bool bias) {
      std::size_t n = 1;
      for (auto s : shape) n *= s;
      blocks_.push_back({std::move(name), std::move(shape), off, n, fan_in, bias});
      off += n;
    };
    add("lift.weight", {W, Cin}, Cin, false);
    add("lift.bias", {W}, Cin, true);
    for (int l = 0; l < cfg_.layers; ++l) {
      add(layer_name(l, "spectral_re"), {W, W, R, M}, W, false);
      add(layer_name(l, "spectral_im"), {W, W, R, M}, W, false);
      add(layer_name(l, "weight"), {W, W}, W, false);
      add(layer_name(l, "bias"), {W}, W, true);
    }
    add("project.weight", {C, W}, W, false);
    add("project.bias", {C}, W, true);
  }

  void build_tables() {
    const int n0 = cfg_.grid.n0, n1 = cfg_.grid.n1, M = cfg_.modes;
    const double N = static_cast<double>(n0) * n1;
    const double tau = 2.0 * std::numbers::pi;
    cos1_.assign(static_cast<std::size_t>(M) * n1, 0.0);
    sin1_ = cos1_;
    cos1s_ = cos1_;
    sin1s_ = cos1_;
    for (int k = 0; k < M; ++k) {
      const double ck = (k == 0 ? 1.0 : 2.0) / N;
      for (int j = 0; j < n1; ++j) {
        // reduce k*j mod n1 first so the angle stays small and exact
        const double a = tau * static_cast<double>((k * j) % n1) / n1;
        cos1_[k * n1 + j] = std::cos(a);
        sin1_[k * n1 + j] = std::sin(a);
        cos1s_[k * n1 + j] = ck * std::cos(a);
        sin1s_[k * n1 + j] = ck * std::sin(a);
      }
    }
    cos0_.assign(static_cast<std::size_t>(2 * M) * n0, 0.0);
    sin0_ = cos0_;
    for (int r = 0; r < 2 * M; ++r) {
      const int k0 = r < M ? r : n0 - 2 * M + r;
      for (int i = 0; i < n0; ++i) {
        const double a = tau * static_cast<double>((static_cast<long>(k0) * i) % n0) / n0;
        cos0_[r * n0 + i] = std::cos(a);
        sin0_[r * n0 + i] = std::sin(a);
      }
    }
  }

  void check_input(const Field& u, const char* what) const {
    if (!(u.grid == cfg_.grid) || u.channels != cfg_.channels) {
      throw ShapeError(std::string(what) + ": field is " + std::to_string(u.channels) + "x" +
                       std::to_string(u.grid.n0) + "x" + std::to_string(u.grid.n1) +
                       ", model expects " + std::to_string(cfg_.channels) + "x" +
                       std::to_string(cfg_.grid.n0) + "x" + std::to_string(cfg_.grid.n1));
    }
  }

  /// out (rows x P) (+)= weight (rows x cols) * in (cols x P) + bias
  void affine(std::size_t rows, std::size_t cols, const double* weight, const double* bias,
              const double* in, double* out, bool accumulate = false) const {
    const std::size_t P = cfg_.grid.points();
    for (std::size_t r = 0; r < rows; ++r) {
      double* o = out + r * P;
      for (std::size_t q = 0; q < P; ++q) o[q] = (accumulate ? o[q] : 0.0) + bias[r];
    }
    dense::gemm_nn(rows, P, cols, 1.0, weight, in, out);
  }

  static void row_sums(std::size_t rows, std::size_t P, const double* a, double* out) {
    for (std::size_t r = 0; r < rows; ++r) {
      double s = 0.0;
      for (std::size_t q = 0; q < P; ++q) s += a[r * P + q];
      out[r] += s;
    }
  }

  std::size_t mode_count() const { return 2 * static_cast<std::size_t>(cfg_.modes) * cfg_.modes; }

  /// Retained DFT coefficients X = sum x exp(-i theta) of each of W channels.
  void analyze(const double* h, std::vector<double>& xr, std::vector<double>& xi) const {
    const std::size_t n0 = cfg_.grid.n0, n1 = cfg_.grid.n1, M = cfg_.modes, R = 2 * M;
    const std::size_t W = cfg_.width;
    std::vector<double> ar(W * n0 * M, 0.0), ai(W * n0 * M, 0.0);
    dense::gemm_nt(W * n0, M, n1, 1.0, h, cos1_.data(), ar.data());
    dense::gemm_nt(W * n0, M, n1, -1.0, h, sin1_.data(), ai.data());
    xr.assign(W * R * M, 0.0);
    xi.assign(W * R * M, 0.0);
    for (std::size_t c = 0; c < W; ++c) {
      const double* arc = ar.data() + c * n0 * M;
      const double* aic = ai.data() + c * n0 * M;
      double* xrc = xr.data() + c * R * M;
      double* xic = xi.data() + c * R * M;
      dense::gemm_nn(R, M, n0, 1.0, cos0_.data(), arc, xrc);
      dense::gemm_nn(R, M, n0, 1.0, sin0_.data(), aic, xrc);
      dense::gemm_nn(R, M, n0, 1.0, cos0_.data(), aic, xic);
      dense::gemm_nn(R, M, n0, -1.0, sin0_.data(), arc, xic);
    }
  }

  void analyze_adjoint(const std::vector<double>& gxr, const std::vector<double>& gxi,
                       double* gh) const {
    const std::size_t n0 = cfg_.grid.n0, n1 = cfg_.grid.n1, M = cfg_.modes, R = 2 * M;
    const std::size_t W = cfg_.width;
    std::vector<double> gar(W * n0 * M, 0.0), gai(W * n0 * M, 0.0);
    for (std::size_t c = 0; c < W; ++c) {
      const double* gxrc = gxr.data() + c * R * M;
      const double* gxic = gxi.data() + c * R * M;
      double* garc = gar.data() + c * n0 * M;
      double* gaic = gai.data() + c * n0 * M;
      dense::gemm_tn(n0, M, R, 1.0, cos0_.data(), gxrc, garc);
      dense::gemm_tn(n0, M, R, -1.0, sin0_.data(), gxic, garc);
      dense::gemm_tn(n0, M, R, 1.0, sin0_.data(), gxrc, gaic);
      dense::gemm_tn(n0, M, R, 1.0, cos0_.data(), gxic, gaic);
    }
    dense::gemm_nn(W * n0, n1, M, 1.0, gar.data(), cos1_.data(), gh);
    dense::gemm_nn(W * n0, n1, M, -1.0, gai.data(), sin1_.data(), gh);
  }

  /// Multiplies retained modes by the layer's complex weights and writes the
  /// real inverse transform into z (overwriting it).
  void spectral_apply(int l, const std::vector<double>& xr, const std::vector<double>& xi,
                      double* z) const {
    const std::size_t W = cfg_.width, K = mode_count();
    const double* wr = p(layer_name(l, "spectral_re"));
    const double* wi = p(layer_name(l, "spectral_im"));
    std::vector<double> yr(W * K, 0.0), yi(W * K, 0.0);
    for (std::size_t o = 0; o < W; ++o) {
      double* yro = yr.data() + o * K;
      double* yio = yi.data() + o * K;
      for (std::size_t c = 0; c < W; ++c) {
        const double* a = wr + (o * W + c) * K;
        const double* b = wi + (o * W + c) * K;
        const double* xrc = xr.data() + c * K;
        const double* xic = xi.data() + c * K;
        for (std::size_t k = 0; k < K; ++k) {
          yro[k] += a[k] * xrc[k] - b[k] * xic[k];
          yio[k] += a[k] * xic[k] + b[k] * xrc[k];
        }
      }
    }
    synthesize(yr, yi, z);
  }

  void spectral_apply_adjoint(int l, const std::vector<double>& gyr,
                              const std::vector<double>& gyi, std::vector<double>& gxr,
                              std::vector<double>& gxi) const {
    const std::size_t W = cfg_.width, K = mode_count();
    const double* wr = p(layer_name(l, "spectral_re"));
    const double* wi = p(layer_name(l, "spectral_im"));
    gxr.assign(W * K, 0.0);
    gxi.assign(W * K, 0.0);
    for (std::size_t o = 0; o < W; ++o) {
      const double* gro = gyr.data() + o * K;
      const double* gio = gyi.data() + o * K;
      for (std::size_t c = 0; c < W; ++c) {
        const double* a = wr + (o * W + c) * K;
        const double* b = wi + (o * W + c) * K;
        double* gxrc = gxr.data() + c * K;
        double* gxic = gxi.data() + c * K;
        for (std::size_t k = 0; k < K; ++k) {
          gxrc[k] += a[k] * gro[k] + b[k] * gio[k];
          gxic[k] += a[k] * gio[k] - b[k] * gro[k];
        }
      }
    }
  }

  void spectral_weight_grad(const std::vector<double>& xr, const std::vector<double>& xi,
                            const std::vector<double>& gyr, const std::vector<double>& gyi,
                            double* gwr, double* gwi) const {
    const std::size_t W = cfg_.width, K = mode_count();
    for (std::size_t o = 0; o < W; ++o) {
      const double* gro = gyr.data() + o * K;
      const double* gio = gyi.data() + o * K;
      for (std::size_t c = 0; c < W; ++c) {
        double* a = gwr + (o * W + c) * K;
        double* b = gwi + (o * W + c) * K;
        const double* xrc = xr.data() + c * K;
        const double* xic = xi.data() + c * K;
        for (std::size_t k = 0; k < K; ++k) {
          a[k] += gro[k] * xrc[k] + gio[k] * xic[k];
          b[k] += gio[k] * xrc[k] - gro[k] * xic[k];
        }
      }
    }
  }

  void synthesize(const std::vector<double>& yr, const std::vector<double>& yi, double* z) const {
    const std::size_t n0 = cfg_.grid.n0, n1 = cfg_.grid.n1, M = cfg_.modes, R = 2 * M;
    const std::size_t W = cfg_.width;
    std::vector<double> br(W * n0 * M, 0.0), bi(W * n0 * M, 0.0);
    for (std::size_t c = 0; c < W; ++c) {
      const double* yrc = yr.data() + c * R * M;
      const double* yic = yi.data() + c * R * M;
      double* brc = br.data() + c * n0 * M;
      double* bic = bi.data() + c * n0 * M;
      dense::gemm_tn(n0, M, R, 1.0, cos0_.data(), yrc, brc);
      dense::gemm_tn(n0, M, R, -1.0, sin0_.data(), yic, brc);
      dense::gemm_tn(n0, M, R, 1.0, sin0_.data(), yrc, bic);
      dense::gemm_tn(n0, M, R, 1.0, cos0_.data(), yic, bic);
    }
    std::fill_n(z, W * n0 * n1, 0.0);
    dense::gemm_nn(W * n0, n1, M, 1.0, br.data(), cos1s_.data(), z);
    dense::gemm_nn(W * n0, n1, M, -1.0, bi.data(), sin1s_.data(), z);
  }

  void synthesize_adjoint(const double* gz, std::vector<double>& gyr,
                          std::vector<double>& gyi) const {
    const std::size_t n0 = cfg_.grid.n0, n1 = cfg_.grid.n1, M = cfg_.modes, R = 2 * M;
    const std::size_t W = cfg_.width;
    std::vector<double> gbr(W * n0 * M, 0.0), gbi(W * n0 * M, 0.0);
    dense::gemm_nt(W * n0, M, n1, 1.0, gz, cos1s_.data(), gbr.data());
    dense::gemm_nt(W * n0, M, n1, -1.0, gz, sin1s_.data(), gbi.data());
    gyr.assign(W * R * M, 0.0);
    gyi.assign(W * R * M, 0.0);
    for (std::size_t c = 0; c < W; ++c) {
      const double* gbrc = gbr.data() + c * n0 * M;
      const double* gbic = gbi.data() + c * n0 * M;
      double* gyrc = gyr.data() + c * R * M;
      double* gyic = gyi.data() + c * R * M;
      dense::gemm_nn(R, M, n0, 1.0, cos0_.data(), gbrc, gyrc);
      dense::gemm_nn(R, M, n0, 1.0, sin0_.data(), gbic, gyrc);
      dense::gemm_nn(R, M, n0, -1.0, sin0_.data(), gbrc, gyic);
      dense::gemm_nn(R, M, n0, 1.0, cos0_.data(), gbic, gyic);
    }
  }

};

inline VelocityModel init_model(const ModelConfig& cfg, std::uint64_t seed) {
  VelocityModel m(cfg);
  m.initialize(seed);
  return m;
}

inline Field forward(const VelocityModel& m, const Field& u, double t) { return m.forward(u, t); }

inline Field vjp_input(const VelocityModel& m, const Field& u, double t, const Field& cotangent) {
  ModelTape tape;
  m.forward(u, t, &tape);
  return m.vjp_input(tape, cotangent);
}

inline std::vector<double> vjp_params(const VelocityModel& m, const Field& u, double t,
                                      const Field& cotangent) {
  ModelTape tape;
  m.forward(u, t, &tape);
  return m.vjp_params(tape, cotangent);
}

// Checkpoint layout (little-endian):
//   char[4] "PFMC", u32 version, u32 grid kind, u32 n0, u32 n1, f64 extent0,
//   f64 extent1, u32 channels, width, layers, modes, time_emb_dim, activation,
//   f64 time_frequency_scale, u32 block count, then per block: string name,
//   u32 rank, u64 dims[rank], f64 values. The last block is "time_frequencies".

constexpr std::uint32_t kCheckpointVersion = 1;

inline void write_model(std::ostream& os, const VelocityModel& m) {
  const auto& c = m.config();
  os.write("PFMC", 4);
  io::put_u32(os, kCheckpointVersion);
  io::put_u32(os, static_cast<std::uint32_t>(c.grid.kind));
  io::put_u32(os, static_cast<std::uint32_t>(c.grid.n0));
  io::put_u32(os, static_cast<std::uint32_t>(c.grid.n1));
  io::put_f64(os, c.grid.extent0);
  io::put_f64(os, c.grid.extent1);
  for (int v : {c.channels, c.width, c.layers, c.modes, c.time_emb_dim}) {
    io::put_u32(os, static_cast<std::uint32_t>(v));
  }
  io::put_u32(os, static_cast<std::uint32_t>(c.activation));
  io::put_f64(os, c.time_frequency_scale);
  io::put_u32(os, static_cast<std::uint32_t>(m.blocks().size() + 1));
  for (const auto& b : m.blocks()) {
    io::put_string(os, b.name);
    io::put_u32(os, static_cast<std::uint32_t>(b.shape.size()));
    for (auto d : b.shape) io::put_u64(os, d);
    io::put_f64s(os, m.params().data() + b.offset, b.size);
  }
  io::put_string(os, "time_frequencies");
  io::put_u32(os, 1);
  io::put_u64(os, m.time_frequencies().size());
  io::put_f64s(os, m.time_frequencies().data(), m.time_frequencies().size());
  if (!os) throw IoError("failed writing model checkpoint");
}

inline VelocityModel read_model(std::istream& is) {
  char magic[4];
  is.read(magic, 4);
  io::need(is, "checkpoint magic");
  if (std::string(magic, 4) != "PFMC") throw IoError("not a model checkpoint (bad magic)");
  const auto version = io::get_u32(is);
  if (version != kCheckpointVersion) {
    throw IoError("unsupported checkpoint version " + std::to_string(version));
  }
  ModelConfig c;
  const auto kind = io::get_u32(is);
  if (kind > 1) throw IoError("corrupt checkpoint: grid kind");
  c.grid.kind = static_cast<GridKind>(kind);
  c.grid.n0 = static_cast<int>(io::get_u32(is));
  c.grid.n1 = static_cast<int>(io::get_u32(is));
  c.grid.extent0 = io::get_f64(is);
  c.grid.extent1 = io::get_f64(is);
  c.channels = static_cast<int>(io::get_u32(is));
  c.width = static_cast<int>(io::get_u32(is));
  c.layers = static_cast<int>(io::get_u32(is));
  c.modes = static_cast<int>(io::get_u32(is));
  c.time_emb_dim = static_cast<int>(io::get_u32(is));
  const auto act = io::get_u32(is);
  if (act > 1) throw IoError("corrupt checkpoint: activation");
  c.activation = static_cast<Activation>(act);
  c.time_frequency_scale = io::get_f64(is);
  if (c.width > 4096 || c.layers > 64 || c.channels > 64) throw IoError("corrupt checkpoint: dims");
  VelocityModel m;
  try {
    m = VelocityModel(c);
  } catch (const std::exception& e) {
    throw IoError(std::string("corrupt checkpoint config: ") + e.what());
  }
  const auto nblocks = io::get_u32(is);
  if (nblocks != m.blocks().size() + 1) throw IoError("checkpoint block count mismatch");
  for (std::uint32_t b = 0; b < nblocks; ++b) {
    const auto name = io::get_string(is);
    const auto rank = io::get_u32(is);
    if (rank > 8) throw IoError("corrupt checkpoint: block rank");
    std::vector<std::size_t> shape(rank);
    std::size_t n = 1;
    for (auto& d : shape) {
      d = io::get_u64(is);
      n *= d;
    }
    if (name == "time_frequencies") {
      if (n != m.time_frequencies().size()) throw IoError("checkpoint: time_frequencies size");
      io::get_f64s(is, m.time_frequencies().data(), n);
      continue;
    }
    const ParamBlock* pb = nullptr;
    for (const auto& blk : m.blocks()) {
      if (blk.name == name) pb = &blk;
    }
    if (!pb) throw IoError("checkpoint: unknown block '" + name + "'");
    if (pb->shape != shape) throw IoError("checkpoint: shape mismatch for block '" + name + "'");
    io::get_f64s(is, m.params().data() + pb->offset, n);
  }
  return m;
}

inline void save_model(const std::string& path, const VelocityModel& m) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open " + path + " for writing");
  write_model(os, m);
}

inline VelocityModel load_model(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path);
  return read_model(is);
}

}  // namespace proflow
