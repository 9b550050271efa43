#pragma once

// Stage runner: generate-data -> train -> sample -> evaluate -> report.
//
// Layout under output_dir:
//   resolved_config.json
//   data/dataset.bin
//   model/model.pfm, model/loss.csv
//   samples/truth.pff, samples/observations.json, samples/<sampler>/{meta.json, sample_NN.pff}
//   eval/ref_std.pff, eval/summary.csv, eval/<sampler>/{metrics.json, *_cK.csv}
//   stages/<stage>.json   key + output hashes, used to skip up-to-date stages
//   report.json           metrics of every sampler plus a manifest of all files

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "proflow/baselines.hpp"
#include "proflow/classical_solvers.hpp"
#include "proflow/experiment.hpp"
#include "proflow/field_io.hpp"
#include "proflow/metrics.hpp"
#include "proflow/samplers.hpp"
#include "proflow/task.hpp"
#include "proflow/training.hpp"
#include "proflow/velocity_model.hpp"

namespace proflow {

namespace fs = std::filesystem;

/// Stage-qualified failure: what() starts with the stage name.
class StageError : public std::runtime_error {
 public:
  StageError(const std::string& stage, const std::string& what)
      : std::runtime_error(stage + ": " + what), stage_(stage) {}
  const std::string& stage() const noexcept { return stage_; }

 private:
  std::string stage_;
};

struct RunPaths {
  fs::path root;

  fs::path resolved_config() const { return root / "resolved_config.json"; }
  fs::path dataset() const { return root / "data" / "dataset.bin"; }
  fs::path model() const { return root / "model" / "model.pfm"; }
  fs::path loss() const { return root / "model" / "loss.csv"; }
  fs::path truth() const { return root / "samples" / "truth.pff"; }
  fs::path observations() const { return root / "samples" / "observations.json"; }
  fs::path sampler_dir(const std::string& s) const { return root / "samples" / s; }
  fs::path eval_dir(const std::string& s) const { return root / "eval" / s; }
  fs::path ref_std() const { return root / "eval" / "ref_std.pff"; }
  fs::path summary() const { return root / "eval" / "summary.csv"; }
  fs::path report() const { return root / "report.json"; }
  fs::path record(const std::string& stage) const { return root / "stages" / (stage + ".json"); }
};

inline std::string read_bytes(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  if (!is) throw IoError("cannot open " + p.string());
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

inline std::string file_hash(const fs::path& p) { return content_hash(read_bytes(p)); }

inline void write_text(const fs::path& p, const std::string& text) {
  fs::create_directories(p.parent_path());
  std::ofstream os(p, std::ios::binary);
  if (!os) throw IoError("cannot open " + p.string() + " for writing");
  os << text;
}

inline void write_json(const fs::path& p, const json& j) { write_text(p, j.dump(2) + "\n"); }

inline json read_json(const fs::path& p) {
  try {
    return json::parse(read_bytes(p));
  } catch (const json::parse_error& e) {
    throw IoError(p.string() + ": " + e.what());
  }
}

/// Runs fn(i) for i in [0, n) on up to hardware_concurrency threads. Each
/// call writes only its own slot, so results do not depend on scheduling.
template <class Fn>
void parallel_for(int n, Fn&& fn) {
  const int workers = std::max(1, std::min<int>(n, static_cast<int>(std::thread::hardware_concurrency())));
  if (workers <= 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(n));
  std::vector<std::thread> pool;
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      for (int i = w; i < n; i += workers) {
        try {
          fn(i);
        } catch (...) {
          errors[static_cast<std::size_t>(i)] = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

inline Field run_sampler(const std::string& name, const VelocityModel& m, const ObservationSpec& obs,
                         const PdeProblem& p, const SamplerConfig& sc) {
  if (name == "euler") return euler_sample(m, obs.grid, obs.channels, sc);
  if (name == "proflow") return proflow_sample(m, obs, p, sc);
  if (name == "eci") return eci_sample(m, obs, sc);
  if (name == "diffusionpde") return diffusionpde_sample(m, obs, p, sc);
  if (name == "dflow") return dflow_sample(m, obs, p, sc);
  if (name == "pcfm") return pcfm_sample(m, obs, p, sc);
  throw ConfigError("unknown sampler '" + name + "'");
}

// ---------------------------------------------------------------------------
// SMSE reference

/// Zero for regimes whose constrained solution is unique given the data;
/// otherwise the std of an oracle ensemble of classical solves in which the
/// unobserved entries of the coefficient (elliptic) or the initial condition
/// (burgers) are redrawn from the data prior and the observed ones are pinned
/// to the observations.
inline Field smse_reference(const ExperimentConfig& cfg, const ObservationSpec& obs,
                            std::uint64_t seed, int count) {
  const Grid g = cfg.grid();
  const int C = state_channels(cfg.family);
  const auto r = cfg.task.regime;
  if (r != Regime::joint_sparse && r != Regime::bc) return Field(g, C);
  const std::vector<double> c = obs.scattered();
  const auto& opt = cfg.dataset;
  std::vector<Field> draws(static_cast<std::size_t>(count));
  parallel_for(count, [&](int k) {
    const std::uint64_t s = derive_seed(seed, static_cast<std::uint64_t>(k));
    if (cfg.family == PdeFamily::burgers) {
      auto ic = grf_line(g.n1, opt.grf, s);
      double peak = 0.0;
      for (double v : ic) peak = std::max(peak, std::abs(v));
      if (peak > 0.0) {
        for (double& v : ic) v *= opt.ic_peak / peak;
      }
      for (int j = 0; j < g.n1; ++j) {
        if (obs.mask[static_cast<std::size_t>(j)]) ic[static_cast<std::size_t>(j)] = c[static_cast<std::size_t>(j)];
      }
      draws[static_cast<std::size_t>(k)] = solve_burgers(
          PdeProblem::burgers(g, opt.nu, opt.advection), ic, opt.stability_safety);
      return;
    }
    Field coef = grf_sample(g, opt.grf, s);
    if (cfg.family == PdeFamily::darcy) {
      for (double& v : coef.values) v = v > 0.0 ? opt.a_hi : opt.a_lo;
    }
    for (std::size_t i = 0; i < g.points(); ++i) {
      if (obs.mask[i]) coef.values[i] = c[i];
    }
    PdeProblem p = cfg.family == PdeFamily::darcy ? PdeProblem::darcy(g, coef)
                   : cfg.family == PdeFamily::poisson
                       ? PdeProblem::poisson(g, coef)
                       : PdeProblem::helmholtz(g, opt.kappa, coef);
    const Field u = solve_elliptic(p, opt.tol);
    draws[static_cast<std::size_t>(k)] = stack_channels({&coef, &u});
  });
  return SampleEnsemble(std::move(draws)).stddev();
}

// ---------------------------------------------------------------------------
// Stage records

struct StageRecord {
  std::string key;
  std::uint64_t seed = 0;
  std::vector<std::string> outputs;  // relative to the run root
};

class Pipeline {
 public:
  Pipeline(ExperimentConfig cfg, std::ostream& log = std::cerr)
      : cfg_(std::move(cfg)), paths_{fs::path(cfg_.output_dir)}, log_(log) {
    cfg_.validate();
  }

  const RunPaths& paths() const { return paths_; }
  const ExperimentConfig& config() const { return cfg_; }

  std::uint64_t seed_for(const std::string& stage, std::optional<std::uint64_t> override) const {
    return override ? *override : cfg_.stage_seed(stage);
  }

  void write_resolved_config() const { write_json(paths_.resolved_config(), to_json(cfg_)); }

  /// Runs the configured stage list in order.
  void run_all() {
    write_resolved_config();
    for (const auto& s : cfg_.stages) run(s);
  }

  /// Returns false when the stage was already up to date.
  bool run(const std::string& stage, std::optional<std::uint64_t> seed_override = {}) {
    write_resolved_config();
    try {
      const std::uint64_t seed = seed_for(stage, seed_override);
      if (stage == "generate-data") return generate_data(seed);
      if (stage == "train") return train_stage(seed);
      if (stage == "sample") return sample_stage(seed);
      if (stage == "evaluate") return evaluate_stage(seed);
      if (stage == "report") return report_stage();
      throw ConfigError("unknown stage '" + stage + "'");
    } catch (const StageError&) {
      throw;
    } catch (const std::exception& e) {
      throw StageError(stage, e.what());
    }
  }

 private:
  ExperimentConfig cfg_;
  RunPaths paths_;
  std::ostream& log_;

  std::string rel(const fs::path& p) const { return fs::relative(p, paths_.root).generic_string(); }

  void require(const fs::path& p, const std::string& upstream) const {
    if (!fs::exists(p)) {
      throw IoError("missing upstream artifact " + p.string() + " (run " + upstream + " first)");
    }
  }

  std::optional<StageRecord> load_record(const std::string& stage) const {
    const fs::path p = paths_.record(stage);
    if (!fs::exists(p)) return std::nullopt;
    const json j = read_json(p);
    StageRecord r;
    r.key = j.at("key").get<std::string>();
    r.seed = j.at("seed").get<std::uint64_t>();
    for (const auto& o : j.at("outputs")) {
      const std::string path = o.at("path").get<std::string>();
      if (!fs::exists(paths_.root / path) || file_hash(paths_.root / path) != o.at("hash").get<std::string>()) {
        return std::nullopt;
      }
      r.outputs.push_back(path);
    }
    return r;
  }

  std::string record_key(const std::string& stage) const {
    const auto r = load_record(stage);
    return r ? r->key : std::string{};
  }

  bool up_to_date(const std::string& stage, const std::string& key) const {
    const auto r = load_record(stage);
    if (r && r->key == key) {
      log_ << stage << ": up to date, skipped\n";
      return true;
    }
    return false;
  }

  void save_record(const std::string& stage, const std::string& key, std::uint64_t seed,
                   const std::vector<fs::path>& outputs) const {
    json outs = json::array();
    for (const auto& p : outputs) outs.push_back({{"path", rel(p)}, {"hash", file_hash(p)}});
    write_json(paths_.record(stage), {{"stage", stage}, {"key", key}, {"seed", seed}, {"outputs", outs}});
  }

  json data_section() const {
    const json j = to_json(cfg_);
    return {{"family", j["family"]}, {"grid", j["grid"]}, {"dataset", j["dataset"]}};
  }

  bool generate_data(std::uint64_t seed) {
    const std::string key = content_hash(json{{"data", data_section()}, {"seed", seed}}.dump());
    if (up_to_date("generate-data", key)) return false;
    const Dataset d = generate_dataset(cfg_.family, cfg_.dataset_size, cfg_.grid(), seed, cfg_.dataset);
    fs::create_directories(paths_.dataset().parent_path());
    save_dataset(paths_.dataset().string(), d);
    save_record("generate-data", key, seed, {paths_.dataset()});
    log_ << "generate-data: " << d.size() << " samples -> " << paths_.dataset().string() << "\n";
    return true;
  }

  bool train_stage(std::uint64_t seed) {
    require(paths_.dataset(), "generate-data");
    const json j = to_json(cfg_);
    const std::string key = content_hash(json{{"model", j["model"]},
                                              {"train", j["train"]},
                                              {"reference", j["reference"]},
                                              {"dataset_hash", file_hash(paths_.dataset())},
                                              {"seed", seed}}
                                             .dump());
    if (up_to_date("train", key)) return false;
    const Dataset d = load_dataset(paths_.dataset().string());
    VelocityModel m = init_model(cfg_.model_config(), derive_seed(seed, "model_init"));
    TrainConfig tc = cfg_.train;
    tc.seed = seed;
    fs::create_directories(paths_.model().parent_path());
    std::vector<fs::path> outputs{paths_.model(), paths_.loss()};
    CheckpointHook hook;
    if (tc.checkpoint_every > 0) {
      hook = [&](int step, const VelocityModel& cur) {
        char name[64];
        std::snprintf(name, sizeof name, "checkpoint_%06d.pfm", step);
        const fs::path p = paths_.model().parent_path() / name;
        save_model(p.string(), cur);
        outputs.push_back(p);
      };
    }
    const TrainResult r = train(m, d, tc, cfg_.reference, hook);
    save_model(paths_.model().string(), m);
    save_loss_csv(paths_.loss().string(), r.losses);
    save_record("train", key, seed, outputs);
    if (!r.losses.empty()) {
      const auto [head, tail] = smoothed_endpoints(r.losses);
      log_ << "train: " << r.losses.size() << " steps, smoothed loss " << head << " -> " << tail << "\n";
    }
    return true;
  }

  bool sample_stage(std::uint64_t seed) {
    require(paths_.model(), "train");
    const json j = to_json(cfg_);
    const std::string key = content_hash(json{{"data", data_section()},
                                              {"task", j["task"]},
                                              {"reference", j["reference"]},
                                              {"samplers", j["samplers"]},
                                              {"ensemble_size", cfg_.ensemble_size},
                                              {"model_hash", file_hash(paths_.model())},
                                              {"seed", seed}}
                                             .dump());
    if (up_to_date("sample", key)) return false;
    if (cfg_.samplers.empty()) throw ConfigError("no samplers configured");
    const VelocityModel m = load_model(paths_.model().string());
    if (!(m.config().grid == cfg_.grid()) || m.config().channels != state_channels(cfg_.family)) {
      throw ConfigError("checkpoint " + paths_.model().string() + " does not match the configured grid");
    }
    const Grid g = cfg_.grid();
    const PdeProblem p = problem_for(cfg_.family, g, cfg_.dataset);
    const Field truth = draw_solution(cfg_.family, g, cfg_.dataset, derive_seed(seed, "truth"));
    const ObservationSpec obs = cfg_.task.observe(cfg_.family, truth, derive_seed(seed, "task"));
    fs::create_directories(paths_.truth().parent_path());
    save_field(paths_.truth().string(), truth);
    json mask = json::array();
    for (std::size_t i = 0; i < obs.mask.size(); ++i) {
      if (obs.mask[i]) mask.push_back(i);
    }
    write_json(paths_.observations(), {{"regime", to_string(cfg_.task.regime)},
                                       {"sigma_obs", obs.sigma_obs},
                                       {"observed_indices", mask},
                                       {"values", obs.y}});
    std::vector<fs::path> outputs{paths_.truth(), paths_.observations()};
    const std::uint64_t base = derive_seed(seed, "ensemble");
    for (const auto& [name, sc0] : cfg_.samplers) {
      SamplerConfig sc = sc0;
      sc.reference = cfg_.reference;
      const int E = cfg_.ensemble_size;
      std::vector<Field> out(static_cast<std::size_t>(E));
      parallel_for(E, [&](int e) {
        SamplerConfig c = sc;
        c.seed = base + static_cast<std::uint64_t>(e);
        out[static_cast<std::size_t>(e)] = run_sampler(name, m, obs, p, c);
      });
      const fs::path dir = paths_.sampler_dir(name);
      fs::create_directories(dir);
      json seeds = json::array(), files = json::array();
      for (int e = 0; e < E; ++e) {
        char fname[32];
        std::snprintf(fname, sizeof fname, "sample_%02d.pff", e);
        save_field((dir / fname).string(), out[static_cast<std::size_t>(e)]);
        outputs.push_back(dir / fname);
        seeds.push_back(base + static_cast<std::uint64_t>(e));
        files.push_back(fname);
      }
      write_json(dir / "meta.json", {{"sampler", name},
                                     {"ensemble_size", E},
                                     {"seeds", seeds},
                                     {"files", files},
                                     {"config", config_detail::write_sampler(sc0)}});
      outputs.push_back(dir / "meta.json");
      log_ << "sample: " << name << " x" << E << "\n";
    }
    save_record("sample", key, seed, outputs);
    return true;
  }

  bool evaluate_stage(std::uint64_t seed) {
    require(paths_.truth(), "sample");
    require(paths_.observations(), "sample");
    const std::string key =
        content_hash(json{{"sample_key", record_key("sample")}, {"seed", seed}}.dump());
    if (up_to_date("evaluate", key)) return false;
    const Grid g = cfg_.grid();
    const PdeProblem p = problem_for(cfg_.family, g, cfg_.dataset);
    const Field truth = load_field(paths_.truth().string());
    const ObservationSpec obs = load_observations(truth);
    const Field ref = smse_reference(cfg_, obs, derive_seed(seed, "smse_oracle"), cfg_.ensemble_size);
    fs::create_directories(paths_.ref_std().parent_path());
    save_field(paths_.ref_std().string(), ref);
    std::vector<fs::path> outputs{paths_.ref_std()};
    const auto channels = cfg_.task.target_channels(cfg_.family);
    std::ostringstream summary;
    summary << "task,family,sampler,E,RE,MMSE,SMSE,PDE_err\n" << std::setprecision(10);
    for (const auto& [name, sc] : cfg_.samplers) {
      (void)sc;
      const fs::path sdir = paths_.sampler_dir(name);
      require(sdir / "meta.json", "sample");
      const json meta = read_json(sdir / "meta.json");
      std::vector<Field> samples;
      for (const auto& f : meta.at("files")) {
        const fs::path fp = sdir / f.get<std::string>();
        require(fp, "sample");
        samples.push_back(load_field(fp.string()));
      }
      const SampleEnsemble ens(std::move(samples), p);
      const MetricSet ms = evaluate_ensemble(ens, truth, ref, channels);
      const fs::path edir = paths_.eval_dir(name);
      fs::create_directories(edir);
      write_json(edir / "metrics.json", {{"task", to_string(cfg_.task.regime)},
                                         {"family", to_string(cfg_.family)},
                                         {"sampler", name},
                                         {"E", ens.size()},
                                         {"RE", ms.re},
                                         {"MMSE", ms.mmse},
                                         {"SMSE", ms.smse},
                                         {"PDE_err", ms.pde_err},
                                         {"target_channels", channels},
                                         {"config_hash", config_hash(cfg_)},
                                         {"seeds", meta.at("seeds")}});
      outputs.push_back(edir / "metrics.json");
      for (int c : channels) {
        const std::string sfx = "_c" + std::to_string(c) + ".csv";
        const std::pair<const char*, const Field*> maps[] = {
            {"truth", &truth}, {"mean", &ens.mean()}, {"std", &ens.stddev()}, {"sample0", &ens.samples()[0]}};
        for (const auto& [stem, field] : maps) {
          const fs::path fp = edir / (std::string(stem) + sfx);
          save_field_csv(fp.string(), *field, c);
          outputs.push_back(fp);
        }
      }
      summary << to_string(cfg_.task.regime) << ',' << to_string(cfg_.family) << ',' << name << ','
              << ens.size() << ',' << ms.re << ',' << ms.mmse << ',' << ms.smse << ',' << ms.pde_err
              << '\n';
      log_ << "evaluate: " << name << " RE " << ms.re << " MMSE " << ms.mmse << " SMSE " << ms.smse
           << " PDE_err " << ms.pde_err << "\n";
    }
    write_text(paths_.summary(), summary.str());
    outputs.push_back(paths_.summary());
    save_record("evaluate", key, seed, outputs);
    return true;
  }

  ObservationSpec load_observations(const Field& truth) const {
    const json j = read_json(paths_.observations());
    ObservationSpec o;
    o.grid = truth.grid;
    o.channels = truth.channels;
    o.sigma_obs = j.at("sigma_obs").get<double>();
    o.mask.assign(truth.size(), 0);
    for (const auto& i : j.at("observed_indices")) {
      const auto k = i.get<std::size_t>();
      if (k >= o.mask.size()) throw IoError("observation index out of range");
      o.mask[k] = 1;
    }
    o.y = j.at("values").get<std::vector<double>>();
    o.validate();
    return o;
  }

  bool report_stage() {
    json metrics = json::array();
    for (const auto& [name, sc] : cfg_.samplers) {
      (void)sc;
      const fs::path p = paths_.eval_dir(name) / "metrics.json";
      require(p, "evaluate");
      metrics.push_back(read_json(p));
    }
    json seeds = json::object();
    for (const auto& s : stage_names()) {
      const auto r = load_record(s);
      if (r) seeds[s] = r->seed;
    }
    json manifest = json::array();
    std::vector<fs::path> files;
    for (const auto& e : fs::recursive_directory_iterator(paths_.root)) {
      if (e.is_regular_file() && e.path() != paths_.report()) files.push_back(e.path());
    }
    std::sort(files.begin(), files.end(),
              [&](const fs::path& a, const fs::path& b) { return rel(a) < rel(b); });
    for (const auto& f : files) {
      manifest.push_back({{"path", rel(f)}, {"hash", file_hash(f)}, {"bytes", fs::file_size(f)}});
    }
    write_json(paths_.report(), {{"family", to_string(cfg_.family)},
                                 {"task", to_string(cfg_.task.regime)},
                                 {"config_hash", config_hash(cfg_)},
                                 {"master_seed", cfg_.master_seed},
                                 {"stage_seeds", seeds},
                                 {"metrics", metrics},
                                 {"manifest", manifest}});
    log_ << "report: " << paths_.report().string() << "\n";
    return true;
  }
};

/// Writes the resolved config and runs every configured stage.
inline void run_experiment(const ExperimentConfig& cfg, std::ostream& log = std::cerr) {
  Pipeline(cfg, log).run_all();
}

}  // namespace proflow
