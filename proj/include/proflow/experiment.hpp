#pragma once

// Experiment configuration: a versioned JSON tree. Every key is optional and
// falls back to the documented default; unknown keys are errors that name
// their path (e.g. "samplers.proflow.lamda_obs").
//
// Seeds: stage seed = derive_seed(master_seed, stage name) unless overridden
// on the command line; everything a stage draws comes from its stage seed.

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "proflow/classical_solvers.hpp"
#include "proflow/errors.hpp"
#include "proflow/grf.hpp"
#include "proflow/rng.hpp"
#include "proflow/samplers.hpp"
#include "proflow/task.hpp"
#include "proflow/training.hpp"
#include "proflow/velocity_model.hpp"

namespace proflow {

using json = nlohmann::ordered_json;

inline constexpr int kConfigSchemaVersion = 1;

inline const std::vector<std::string>& stage_names() {
  static const std::vector<std::string> names{"generate-data", "train", "sample", "evaluate",
                                              "report"};
  return names;
}

inline const std::vector<std::string>& sampler_names() {
  static const std::vector<std::string> names{"euler", "proflow", "eci",
                                              "diffusionpde", "dflow", "pcfm"};
  return names;
}

struct ExperimentConfig {
  int schema_version = kConfigSchemaVersion;
  PdeFamily family = PdeFamily::poisson;
  int n0 = 32;
  int n1 = 32;
  double duration = 1.0;  // physical time span of space-time grids
  std::uint64_t master_seed = 1;
  std::string output_dir = "run";
  std::vector<std::string> stages;
  int dataset_size = 64;
  DatasetOptions dataset;
  ModelConfig model;  // grid and channels follow family and grid size
  TrainConfig train;  // seed comes from the train stage seed
  ReferenceMeasure reference = ReferenceMeasure::white();
  TaskSpec task;
  int ensemble_size = 16;
  std::map<std::string, SamplerConfig> samplers;  // seed comes from the sample stage seed

  Grid grid() const {
    return is_elliptic(family) ? Grid::spatial(n0, n1) : Grid::spacetime(n0, n1, duration);
  }

  ModelConfig model_config() const {
    ModelConfig m = model;
    m.grid = grid();
    m.channels = state_channels(family);
    return m;
  }

  std::uint64_t stage_seed(const std::string& stage) const { return derive_seed(master_seed, stage); }

  void validate() const {
    if (schema_version != kConfigSchemaVersion) {
      throw ConfigError("schema_version: expected " + std::to_string(kConfigSchemaVersion) +
                        ", got " + std::to_string(schema_version));
    }
    const Grid g = grid();
    if (dataset_size < 1) throw ConfigError("dataset.size must be >= 1");
    if (ensemble_size < 1) throw ConfigError("ensemble_size must be >= 1");
    if (output_dir.empty()) throw ConfigError("output_dir must not be empty");
    dataset.grf.validate();
    model_config().validate();
    train.validate();
    reference.validate();
    task.validate(family, g);
    for (const auto& s : stages) {
      if (std::find(stage_names().begin(), stage_names().end(), s) == stage_names().end()) {
        throw ConfigError("stages: unknown stage '" + s + "'");
      }
    }
    for (const auto& [name, sc] : samplers) {
      if (std::find(sampler_names().begin(), sampler_names().end(), name) == sampler_names().end()) {
        throw ConfigError("samplers: unknown sampler '" + name + "'");
      }
      sc.validate();
    }
  }

  friend bool operator==(const ExperimentConfig&, const ExperimentConfig&) = default;
};

// ---------------------------------------------------------------------------
// JSON reading with unknown-key detection

class ConfigReader {
 public:
  ConfigReader(const json& node, std::string path) : node_(node), path_(std::move(path)) {
    if (!node_.is_object()) throw ConfigError(where() + ": expected an object");
  }

  bool has(const std::string& key) const { return node_.contains(key); }

  template <class T>
  void get(const std::string& key, T& out) {
    if (!node_.contains(key)) return;
    used_.insert(key);
    const json& v = node_.at(key);
    try {
      if constexpr (std::is_same_v<T, bool>) {
        if (!v.is_boolean()) throw ConfigError("expected a boolean");
      } else if constexpr (std::is_integral_v<T>) {
        if (!v.is_number_integer()) throw ConfigError("expected an integer");
        if constexpr (std::is_unsigned_v<T>) {
          if (v.is_number_integer() && !v.is_number_unsigned()) throw ConfigError("expected a nonnegative integer");
        }
      } else if constexpr (std::is_floating_point_v<T>) {
        if (!v.is_number()) throw ConfigError("expected a number");
      } else if constexpr (std::is_same_v<T, std::string>) {
        if (!v.is_string()) throw ConfigError("expected a string");
      }
      out = v.get<T>();
    } catch (const ConfigError& e) {
      throw ConfigError(where(key) + ": " + e.what());
    } catch (const json::exception& e) {
      throw ConfigError(where(key) + ": " + e.what());
    }
  }

  /// Parses a string-valued enum through `parse`, reporting the key path.
  template <class T, class Parse>
  void get_enum(const std::string& key, T& out, Parse parse) {
    std::string s;
    if (!node_.contains(key)) return;
    get(key, s);
    try {
      out = parse(s);
    } catch (const ConfigError& e) {
      throw ConfigError(where(key) + ": " + e.what());
    }
  }

  ConfigReader child(const std::string& key) {
    used_.insert(key);
    return ConfigReader(node_.at(key), where(key));
  }

  const json& raw(const std::string& key) {
    used_.insert(key);
    return node_.at(key);
  }

  std::string where(const std::string& key = {}) const {
    if (key.empty()) return path_.empty() ? "<root>" : path_;
    return path_.empty() ? key : path_ + "." + key;
  }

  void finish() const {
    for (const auto& item : node_.items()) {
      if (!used_.count(item.key())) throw ConfigError(where(item.key()) + ": unknown key");
    }
  }

 private:
  const json& node_;
  std::string path_;
  std::set<std::string> used_;
};

namespace config_detail {

inline void read_grf(ConfigReader r, GrfConfig& g) {
  r.get("length_scale", g.length_scale);
  r.get("power", g.power);
  r.get("amplitude", g.amplitude);
  r.finish();
}

inline json write_grf(const GrfConfig& g) {
  return json{{"length_scale", g.length_scale}, {"power", g.power}, {"amplitude", g.amplitude}};
}

inline AdvectionForm parse_advection(const std::string& s) {
  if (s == "conservative") return AdvectionForm::conservative;
  if (s == "advective") return AdvectionForm::advective;
  throw ConfigError("unknown advection form '" + s + "'");
}

inline std::string advection_name(AdvectionForm a) {
  return a == AdvectionForm::conservative ? "conservative" : "advective";
}

inline ReferenceMeasure::Kind parse_reference_kind(const std::string& s) {
  if (s == "white") return ReferenceMeasure::Kind::white;
  if (s == "grf") return ReferenceMeasure::Kind::grf;
  throw ConfigError("unknown reference kind '" + s + "'");
}

inline void read_sampler(ConfigReader r, SamplerConfig& s) {
  r.get("steps", s.steps);
  r.get("lambda_obs", s.lambda_obs);
  r.get("lambda_pde", s.lambda_pde);
  r.get("prox_iters", s.prox_iters);
  r.get("eta0", s.eta0);
  r.get("sigma_modulation", s.sigma_modulation);
  if (r.has("eci")) {
    auto c = r.child("eci");
    c.get("mix", s.eci.mix);
    c.get("resample_every_mix", s.eci.resample_every_mix);
    c.finish();
  }
  if (r.has("diffusionpde")) {
    auto c = r.child("diffusionpde");
    c.get("alpha", s.diffusionpde.alpha);
    c.get("beta", s.diffusionpde.beta);
    c.finish();
  }
  if (r.has("dflow")) {
    auto c = r.child("dflow");
    c.get("iterations", s.dflow.iterations);
    c.get("learning_rate", s.dflow.learning_rate);
    c.get("momentum", s.dflow.momentum);
    c.get("gamma", s.dflow.gamma);
    c.finish();
  }
  if (r.has("pcfm")) {
    auto c = r.child("pcfm");
    auto& o = s.pcfm;
    c.get("penalty", o.penalty);
    c.get("step", o.step);
    c.get("refine_iters", o.refine_iters);
    c.get("mu", o.mu);
    c.get("pde_constraint", o.pde_constraint);
    c.get("cg_iters", o.cg_iters);
    c.get("cg_tol", o.cg_tol);
    c.get("final_tol", o.final_tol);
    c.get("final_max_iters", o.final_max_iters);
    c.finish();
  }
  r.finish();
}

inline json write_sampler(const SamplerConfig& s) {
  const auto& o = s.pcfm;
  return json{{"steps", s.steps},
              {"lambda_obs", s.lambda_obs},
              {"lambda_pde", s.lambda_pde},
              {"prox_iters", s.prox_iters},
              {"eta0", s.eta0},
              {"sigma_modulation", s.sigma_modulation},
              {"eci", {{"mix", s.eci.mix}, {"resample_every_mix", s.eci.resample_every_mix}}},
              {"diffusionpde", {{"alpha", s.diffusionpde.alpha}, {"beta", s.diffusionpde.beta}}},
              {"dflow",
               {{"iterations", s.dflow.iterations},
                {"learning_rate", s.dflow.learning_rate},
                {"momentum", s.dflow.momentum},
                {"gamma", s.dflow.gamma}}},
              {"pcfm",
               {{"penalty", o.penalty},
                {"step", o.step},
                {"refine_iters", o.refine_iters},
                {"mu", o.mu},
                {"pde_constraint", o.pde_constraint},
                {"cg_iters", o.cg_iters},
                {"cg_tol", o.cg_tol},
                {"final_tol", o.final_tol},
                {"final_max_iters", o.final_max_iters}}}};
}

}  // namespace config_detail

inline ExperimentConfig parse_config(const json& root) {
  using namespace config_detail;
  ExperimentConfig c;
  ConfigReader r(root, "");
  if (!r.has("schema_version")) throw ConfigError("schema_version: required key is missing");
  r.get("schema_version", c.schema_version);
  if (c.schema_version != kConfigSchemaVersion) {
    throw ConfigError("schema_version: expected " + std::to_string(kConfigSchemaVersion) + ", got " +
                      std::to_string(c.schema_version));
  }
  r.get_enum("family", c.family, parse_family);
  if (r.has("grid")) {
    auto g = r.child("grid");
    g.get("n0", c.n0);
    g.get("n1", c.n1);
    g.get("duration", c.duration);
    g.finish();
  }
  r.get("master_seed", c.master_seed);
  r.get("output_dir", c.output_dir);
  r.get("stages", c.stages);
  if (r.has("dataset")) {
    auto d = r.child("dataset");
    d.get("size", c.dataset_size);
    if (d.has("grf")) read_grf(d.child("grf"), c.dataset.grf);
    d.get("kappa", c.dataset.kappa);
    d.get("a_lo", c.dataset.a_lo);
    d.get("a_hi", c.dataset.a_hi);
    d.get("nu", c.dataset.nu);
    d.get("ic_peak", c.dataset.ic_peak);
    d.get("tol", c.dataset.tol);
    d.get("stability_safety", c.dataset.stability_safety);
    d.get_enum("advection", c.dataset.advection, parse_advection);
    d.finish();
  }
  if (r.has("model")) {
    auto m = r.child("model");
    m.get("width", c.model.width);
    m.get("layers", c.model.layers);
    m.get("modes", c.model.modes);
    m.get("time_emb_dim", c.model.time_emb_dim);
    m.get("time_frequency_scale", c.model.time_frequency_scale);
    m.get_enum("activation", c.model.activation, parse_activation);
    m.finish();
  }
  if (r.has("train")) {
    auto t = r.child("train");
    t.get("learning_rate", c.train.learning_rate);
    t.get("batch_size", c.train.batch_size);
    t.get("iterations", c.train.iterations);
    t.get("beta1", c.train.beta1);
    t.get("beta2", c.train.beta2);
    t.get("eps", c.train.eps);
    t.get("checkpoint_every", c.train.checkpoint_every);
    t.finish();
  }
  if (r.has("reference")) {
    auto m = r.child("reference");
    m.get_enum("kind", c.reference.kind, parse_reference_kind);
    m.get("std", c.reference.white_std);
    if (m.has("grf")) read_grf(m.child("grf"), c.reference.grf);
    m.finish();
  }
  if (r.has("task")) {
    auto t = r.child("task");
    t.get_enum("regime", c.task.regime, parse_regime);
    t.get("fraction", c.task.fraction);
    t.get("time_rows", c.task.time_rows);
    t.get("sigma_obs", c.task.sigma_obs);
    t.finish();
  }
  r.get("ensemble_size", c.ensemble_size);
  if (r.has("samplers")) {
    const json& node = r.raw("samplers");
    if (!node.is_object()) throw ConfigError("samplers: expected an object");
    for (const auto& item : node.items()) {
      if (std::find(sampler_names().begin(), sampler_names().end(), item.key()) ==
          sampler_names().end()) {
        throw ConfigError("samplers." + item.key() + ": unknown sampler");
      }
      SamplerConfig s;
      read_sampler(ConfigReader(item.value(), "samplers." + item.key()), s);
      c.samplers[item.key()] = s;
    }
  }
  r.finish();
  c.validate();
  return c;
}

inline json to_json(const ExperimentConfig& c) {
  using namespace config_detail;
  json samplers = json::object();
  for (const auto& [name, s] : c.samplers) samplers[name] = write_sampler(s);
  const auto& d = c.dataset;
  return json{
      {"schema_version", c.schema_version},
      {"family", to_string(c.family)},
      {"grid", {{"n0", c.n0}, {"n1", c.n1}, {"duration", c.duration}}},
      {"master_seed", c.master_seed},
      {"output_dir", c.output_dir},
      {"stages", c.stages},
      {"dataset",
       {{"size", c.dataset_size},
        {"grf", write_grf(d.grf)},
        {"kappa", d.kappa},
        {"a_lo", d.a_lo},
        {"a_hi", d.a_hi},
        {"nu", d.nu},
        {"ic_peak", d.ic_peak},
        {"tol", d.tol},
        {"stability_safety", d.stability_safety},
        {"advection", advection_name(d.advection)}}},
      {"model",
       {{"width", c.model.width},
        {"layers", c.model.layers},
        {"modes", c.model.modes},
        {"time_emb_dim", c.model.time_emb_dim},
        {"time_frequency_scale", c.model.time_frequency_scale},
        {"activation", to_string(c.model.activation)}}},
      {"train",
       {{"learning_rate", c.train.learning_rate},
        {"batch_size", c.train.batch_size},
        {"iterations", c.train.iterations},
        {"beta1", c.train.beta1},
        {"beta2", c.train.beta2},
        {"eps", c.train.eps},
        {"checkpoint_every", c.train.checkpoint_every}}},
      {"reference",
       {{"kind", c.reference.kind == ReferenceMeasure::Kind::white ? "white" : "grf"},
        {"std", c.reference.white_std},
        {"grf", write_grf(c.reference.grf)}}},
      {"task",
       {{"regime", to_string(c.task.regime)},
        {"fraction", c.task.fraction},
        {"time_rows", c.task.time_rows},
        {"sigma_obs", c.task.sigma_obs}}},
      {"ensemble_size", c.ensemble_size},
      {"samplers", samplers}};
}

inline ExperimentConfig parse_config_text(const std::string& text) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  return parse_config(root);
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open config " + path);
  std::stringstream ss;
  ss << is.rdbuf();
  try {
    return parse_config_text(ss.str());
  } catch (const ConfigError& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

/// 16 hex digits of FNV-1a over the bytes.
inline std::string content_hash(std::string_view bytes) {
  static const char* hex = "0123456789abcdef";
  std::uint64_t h = fnv1a(bytes);
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i, h >>= 4) out[static_cast<std::size_t>(i)] = hex[h & 0xf];
  return out;
}

inline std::string config_hash(const ExperimentConfig& c) { return content_hash(to_json(c).dump()); }

}  // namespace proflow
