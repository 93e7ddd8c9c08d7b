/*
 * Copyright 2026 The goodhart Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 * https://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */
#include "goodhart/harness.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "goodhart/io.hpp"

namespace goodhart {

namespace fs = std::filesystem;
using nlohmann::json;

const char* to_string(Phase p) {
  switch (p) {
    case Phase::train: return "train";
    case Phase::phase1: return "phase1";
    case Phase::two_phase: return "two_phase";
    case Phase::nm_search: return "nm_search";
    case Phase::sweep: return "sweep";
  }
  return "?";
}

Phase phase_from_string(const std::string& s) {
  if (s == "train" || s == "run") return Phase::train;
  if (s == "phase1") return Phase::phase1;
  if (s == "two_phase" || s == "two-phase") return Phase::two_phase;
  if (s == "nm_search" || s == "nm") return Phase::nm_search;
  if (s == "sweep") return Phase::sweep;
  throw ConfigError("phase: unknown value '" + s + "'");
}

// ---- parsing

namespace {

void check_keys(const json& j, const std::set<std::string>& allowed, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + ": expected an object");
  for (const auto& item : j.items())
    if (!allowed.count(item.key())) throw ConfigError(where + ": unknown key '" + item.key() + "'");
}

template <typename T>
T get(const json& j, const std::string& key, const std::string& where) {
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError(where + "." + key + ": wrong type");
  }
}

double get_number(const json& j, const std::string& key, const std::string& where) {
  if (!j.at(key).is_number()) throw ConfigError(where + "." + key + ": expected a number");
  return j.at(key).get<double>();
}

long get_integer(const json& j, const std::string& key, const std::string& where) {
  if (!j.at(key).is_number_integer()) throw ConfigError(where + "." + key + ": expected an integer");
  return j.at(key).get<long>();
}

VectorXd to_vector(const json& j, const std::string& where) {
  if (!j.is_array()) throw ConfigError(where + ": expected an array of numbers");
  VectorXd v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) {
    if (!j[i].is_number()) throw ConfigError(where + "[" + std::to_string(i) + "]: expected a number");
    v(static_cast<Eigen::Index>(i)) = j[i].get<double>();
  }
  return v;
}

MatrixXd to_matrix(const json& j, const std::string& where) {
  if (!j.is_array()) throw ConfigError(where + ": expected an array of rows");
  const Eigen::Index rows = static_cast<Eigen::Index>(j.size());
  MatrixXd m(rows, rows);
  for (Eigen::Index r = 0; r < rows; ++r) {
    const VectorXd row = to_vector(j[static_cast<std::size_t>(r)], where + "[" + std::to_string(r) + "]");
    if (row.size() != rows) throw ConfigError(where + ": must be square");
    m.row(r) = row.transpose();
  }
  return m;
}

GoodhartSpec parse_env(const json& j) {
  const std::string w = "env";
  check_keys(j, {"preset", "peak", "weights", "cross", "targets", "horizon", "vocab", "reference_seed",
                 "reference_scale"},
             w);
  GoodhartSpec base = GoodhartSpec::sequence_default();
  if (j.contains("preset")) {
    const auto p = get<std::string>(j, "preset", w);
    if (p == "bandit") base = GoodhartSpec::bandit_default();
    else if (p != "sequence") throw ConfigError("env.preset: expected 'sequence' or 'bandit'");
  }
  VectorXd peak = j.contains("peak") ? to_vector(j.at("peak"), w + ".peak") : base.gold_peak();
  VectorXd weights = j.contains("weights") ? to_vector(j.at("weights"), w + ".weights") : base.channel_weights();
  MatrixXd cross = j.contains("cross") ? to_matrix(j.at("cross"), w + ".cross") : base.cross_terms();
  if (!j.contains("cross") && cross.rows() != peak.size()) cross = MatrixXd::Zero(peak.size(), peak.size());
  std::vector<std::vector<int>> targets = base.targets();
  if (j.contains("targets")) targets = get<std::vector<std::vector<int>>>(j, "targets", w);
  int horizon = j.contains("horizon") ? static_cast<int>(get_integer(j, "horizon", w)) : base.horizon();
  int vocab = j.contains("vocab") ? static_cast<int>(get_integer(j, "vocab", w)) : base.vocab_size();
  std::uint64_t ref_seed = j.contains("reference_seed") ? static_cast<std::uint64_t>(get_integer(j, "reference_seed", w))
                                                        : base.reference_policy_seed();
  double ref_scale = j.contains("reference_scale") ? get_number(j, "reference_scale", w) : base.reference_scale();
  return GoodhartSpec(peak, weights, cross, targets, horizon, vocab, ref_seed, ref_scale);
}

MethodSpec parse_method(const json& j, const GoodhartSpec& env) {
  const std::string w = "method";
  check_keys(j, {"kind", "fixed_weights", "thresholds", "kl_target", "kl_coef_init", "kl_lr"}, w);
  const MethodKind kind =
      j.contains("kind") ? method_kind_from_string(get<std::string>(j, "kind", w)) : MethodKind::ppo;
  MethodSpec m = MethodSpec::make(kind, env);
  if (j.contains("fixed_weights")) m.fixed_weights = to_vector(j.at("fixed_weights"), w + ".fixed_weights");
  if (j.contains("thresholds")) m.thresholds = to_vector(j.at("thresholds"), w + ".thresholds");
  if (j.contains("kl_target")) m.kl_target = get_number(j, "kl_target", w);
  if (j.contains("kl_coef_init")) m.kl_coef_init = get_number(j, "kl_coef_init", w);
  if (j.contains("kl_lr")) m.kl_lr = get_number(j, "kl_lr", w);
  return m;
}

DualGradient dual_gradient_from_string(const std::string& s) {
  if (s == "chain_rule") return DualGradient::chain_rule;
  if (s == "squash_weighted") return DualGradient::squash_weighted;
  if (s == "unscaled") return DualGradient::unscaled;
  throw ConfigError("train.dual_gradient: expected chain_rule, squash_weighted or unscaled");
}

TrainConfig parse_train(const json& j) {
  const std::string w = "train";
  check_keys(j, {"steps_per_update", "total_steps", "batch_size", "epochs_per_update", "learning_rate",
                 "value_learning_rate", "multiplier_lr", "multiplier_momentum", "dual_gradient", "gamma",
                 "gae_lambda", "clip_ratio", "value_coefficients", "top_k", "probe_every", "probe_episodes",
                 "probe_seed"},
             w);
  TrainConfig c;
  if (j.contains("steps_per_update")) c.steps_per_update = static_cast<int>(get_integer(j, "steps_per_update", w));
  if (j.contains("total_steps")) c.total_steps = get_integer(j, "total_steps", w);
  if (j.contains("batch_size")) c.batch_size = static_cast<int>(get_integer(j, "batch_size", w));
  if (j.contains("epochs_per_update")) c.epochs_per_update = static_cast<int>(get_integer(j, "epochs_per_update", w));
  if (j.contains("learning_rate")) c.learning_rate = get_number(j, "learning_rate", w);
  if (j.contains("value_learning_rate")) c.value_learning_rate = get_number(j, "value_learning_rate", w);
  if (j.contains("multiplier_lr")) c.multiplier_lr = get_number(j, "multiplier_lr", w);
  if (j.contains("multiplier_momentum")) c.multiplier_momentum = get_number(j, "multiplier_momentum", w);
  if (j.contains("dual_gradient")) c.dual_gradient = dual_gradient_from_string(get<std::string>(j, "dual_gradient", w));
  if (j.contains("gamma")) c.gamma = get_number(j, "gamma", w);
  if (j.contains("gae_lambda")) c.gae_lambda = get_number(j, "gae_lambda", w);
  if (j.contains("clip_ratio")) c.clip_ratio = get_number(j, "clip_ratio", w);
  if (j.contains("value_coefficients"))
    c.value_coefficients = to_vector(j.at("value_coefficients"), w + ".value_coefficients");
  if (j.contains("top_k")) c.top_k = static_cast<int>(get_integer(j, "top_k", w));
  if (j.contains("probe_every")) c.probe_every = static_cast<int>(get_integer(j, "probe_every", w));
  if (j.contains("probe_episodes")) c.probe_episodes = static_cast<int>(get_integer(j, "probe_episodes", w));
  if (j.contains("probe_seed")) c.probe_seed = static_cast<std::uint64_t>(get_integer(j, "probe_seed", w));
  return c;
}

}  // namespace

ExperimentConfig parse_config(const json& j) {
  check_keys(j, {"phase", "seeds", "out", "env", "method", "train", "proxyfit", "nm", "sweep", "two_phase"}, "config");
  ExperimentConfig c;
  if (j.contains("env")) c.env = parse_env(j.at("env"));
  c.method = parse_method(j.contains("method") ? j.at("method") : json::object(), c.env);
  if (j.contains("train")) c.train = parse_train(j.at("train"));
  if (j.contains("phase")) c.phase = phase_from_string(get<std::string>(j, "phase", "config"));
  if (j.contains("seeds")) {
    const json& s = j.at("seeds");
    if (!s.is_array()) throw ConfigError("config.seeds: expected an array of integers");
    c.seeds.clear();
    for (const json& x : s) {
      if (!x.is_number_integer() || x.get<long long>() < 0)
        throw ConfigError("config.seeds: expected non-negative integers");
      c.seeds.push_back(static_cast<std::uint64_t>(x.get<long long>()));
    }
  }
  if (j.contains("out")) c.out = get<std::string>(j, "out", "config");
  if (j.contains("proxyfit")) {
    const json& p = j.at("proxyfit");
    check_keys(p, {"degree", "density_threshold", "bandwidth", "grid_resolution"}, "proxyfit");
    if (p.contains("degree")) c.proxyfit.degree = static_cast<int>(get_integer(p, "degree", "proxyfit"));
    if (p.contains("density_threshold")) c.proxyfit.density_threshold = get_number(p, "density_threshold", "proxyfit");
    if (p.contains("bandwidth")) c.proxyfit.bandwidth = to_vector(p.at("bandwidth"), "proxyfit.bandwidth");
    if (p.contains("grid_resolution")) c.proxyfit.grid_resolution = get_number(p, "grid_resolution", "proxyfit");
  }
  if (j.contains("nm")) {
    const json& n = j.at("nm");
    const std::string w = "nm";
    check_keys(n, {"budget", "perturbation", "budget_fraction", "convergence_tolerance", "cache_tolerance",
                   "diameter_tolerance", "max_proposals"},
               w);
    NmOptions& o = c.nm.options;
    if (n.contains("budget")) c.nm.budget = get_integer(n, "budget", w);
    if (n.contains("perturbation")) o.perturbation = get_number(n, "perturbation", w);
    if (n.contains("budget_fraction")) o.budget_fraction = get_number(n, "budget_fraction", w);
    if (n.contains("convergence_tolerance")) o.convergence_tolerance = get_number(n, "convergence_tolerance", w);
    if (n.contains("cache_tolerance")) o.cache_tolerance = get_number(n, "cache_tolerance", w);
    if (n.contains("diameter_tolerance")) o.diameter_tolerance = get_number(n, "diameter_tolerance", w);
    if (n.contains("max_proposals")) o.max_proposals = static_cast<int>(get_integer(n, "max_proposals", w));
  }
  if (j.contains("sweep")) {
    const json& s = j.at("sweep");
    check_keys(s, {"kind", "weights"}, "sweep");
    if (s.contains("kind")) c.sweep.kind = method_kind_from_string(get<std::string>(s, "kind", "sweep"));
    if (s.contains("weights")) {
      if (!s.at("weights").is_array()) throw ConfigError("sweep.weights: expected an array of weight vectors");
      for (std::size_t i = 0; i < s.at("weights").size(); ++i)
        c.sweep.weights.push_back(to_vector(s.at("weights")[i], "sweep.weights[" + std::to_string(i) + "]"));
    }
  }
  if (j.contains("two_phase")) {
    const json& t = j.at("two_phase");
    check_keys(t, {"method"}, "two_phase");
    if (t.contains("method")) c.phase2_method = method_kind_from_string(get<std::string>(t, "method", "two_phase"));
  }
  return c;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError(path + ": " + e.what());
  }
  return parse_config(j);
}

void ExperimentConfig::validate() const {
  const int n = env.num_channels();
  if (seeds.empty()) throw ConfigError("config.seeds: at least one seed required");
  if (out.empty()) throw ConfigError("config.out: output directory required");
  train.validate();
  if (phase == Phase::train || phase == Phase::sweep) method.validate(n);
  if (phase == Phase::phase1 || phase == Phase::two_phase) {
    if (!proxyfit.density_threshold)
      throw ConfigError("proxyfit.density_threshold: required for phase1 and two_phase");
    if (*proxyfit.density_threshold < 0) throw ConfigError("proxyfit.density_threshold: must be >= 0");
    if (proxyfit.degree < 1) throw ConfigError("proxyfit.degree: must be >= 1");
    if (!(proxyfit.grid_resolution > 0)) throw ConfigError("proxyfit.grid_resolution: must be > 0");
    if (proxyfit.bandwidth.size() != 0 &&
        (proxyfit.bandwidth.size() != n || (proxyfit.bandwidth.array() <= 0).any()))
      throw ConfigError("proxyfit.bandwidth: need N positive entries");
  }
  if (phase == Phase::two_phase && phase2_method != MethodKind::xi_ppo && phase2_method != MethodKind::mu_ppo)
    throw ConfigError("two_phase.method: must be xi_ppo or mu_ppo");
  if (phase == Phase::nm_search) {
    const NmOptions& o = nm.options;
    if (nm.budget < 0) throw ConfigError("nm.budget: must be >= 0");
    if (o.perturbation < 0) throw ConfigError("nm.perturbation: must be >= 0");
    if (!(o.budget_fraction > 0 && o.budget_fraction <= 1)) throw ConfigError("nm.budget_fraction: must be in (0, 1]");
    if (!(o.convergence_tolerance > 0)) throw ConfigError("nm.convergence_tolerance: must be > 0");
    if (o.cache_tolerance < 0) throw ConfigError("nm.cache_tolerance: must be >= 0");
    if (o.max_proposals < 0) throw ConfigError("nm.max_proposals: must be >= 0");
  }
  if (phase == Phase::sweep) {
    if (sweep.weights.empty()) throw ConfigError("sweep.weights: at least one weighting required");
    for (std::size_t i = 0; i < sweep.weights.size(); ++i) {
      MethodSpec m = MethodSpec::make(sweep.kind, env);
      m.fixed_weights = sweep.weights[i];
      try {
        m.validate(n);
      } catch (const ConfigError& e) {
        throw ConfigError("sweep.weights[" + std::to_string(i) + "]: " + e.what());
      }
    }
  }
}

// ---- running

std::string constraint_status(const MethodSpec& method, const VectorXd& v) {
  if (!method.constrained()) return "n/a";
  require_same_length(v.size(), method.thresholds.size(), "constraint_status");
  const VectorXd d = v - method.thresholds;
  bool ok = true;
  switch (method.constraint_mode()) {
    case ConstraintMode::inequality_ge: ok = (d.array() >= -0.025).all(); break;
    case ConstraintMode::inequality_le: ok = (d.array() <= 0.025).all(); break;
    case ConstraintMode::equality: ok = (d.array().abs() <= 0.05).all(); break;
  }
  return ok ? "ok" : "violated";
}

namespace {

std::string vec_text(const VectorXd& v) {
  std::ostringstream ss;
  ss << '(';
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.4f", v(i));
    ss << (i ? "," : "") << buf;
  }
  ss << ')';
  return ss.str();
}

json vec_json(const VectorXd& v) {
  json a = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v(i));
  return a;
}

template <typename Writer>
void write_file(const fs::path& path, Writer&& w) {
  std::ostringstream ss;
  w(ss);
  write_text_file(path.string(), ss.str());
}

struct RunContext {
  const ExperimentConfig& cfg;
  fs::path dir;
  std::ostream& summary;
  json runs = json::array();
  bool aborted = false;
};

/// Writes a run's logs and returns its summary entry.
json record_run(RunContext& ctx, const std::string& label, std::uint64_t seed, const RunLog& log,
                const MethodSpec& method, const std::optional<TrainerState>& state) {
  const std::string stem = label + "_seed" + std::to_string(seed);
  write_file(ctx.dir / (stem + ".csv"), [&](std::ostream& os) { write_runlog_csv(os, log); });
  if (method.constrained())
    write_file(ctx.dir / (stem + "_multipliers.csv"), [&](std::ostream& os) { write_multiplier_csv(os, log); });
  if (state)
    write_file(ctx.dir / (stem + "_checkpoint.txt"),
               [&](std::ostream& os) { write_checkpoint(os, *state, log.num_channels); });

  json e;
  e["label"] = label;
  e["seed"] = seed;
  e["method"] = to_string(method.kind);
  e["runlog"] = stem + ".csv";
  e["aborted"] = log.aborted;
  const RunRecord* last = log.last_probe();
  double gold = std::nan("");
  VectorXd values = VectorXd::Constant(log.num_channels, std::nan(""));
  if (last) {
    gold = last->gold;
    values = last->probe_values;
  }
  e["final_gold"] = format_number(gold);
  e["final_values"] = vec_json(values);
  if (method.needs_thresholds()) e["thresholds"] = vec_json(method.thresholds);
  const std::string status = last ? constraint_status(method, values) : "n/a";
  ctx.summary << label << " seed=" << seed << " method=" << to_string(method.kind)
              << " final_gold=" << (last ? format_number(gold) : "nan") << " values=" << vec_text(values)
              << " constraints=" << status << (log.aborted ? " ABORTED: " + log.abort_reason : "") << '\n';
  if (log.aborted) ctx.aborted = true;
  return e;
}

/// Runs a method to completion keeping the trainer for its checkpoint.
std::pair<RunLog, TrainerState> train_with_state(const ExperimentConfig& cfg, const MethodSpec& method,
                                                 std::uint64_t seed) {
  Trainer trainer(cfg.env, method, cfg.train, seed);
  const int k = cfg.train.num_updates();
  try {
    for (int i = 1; i <= k; ++i) trainer.update_round(i == k);
  } catch (const NumericalAbort&) {
    // the log carries the reason
  }
  return {trainer.log(), trainer.state()};
}

VectorXd run_phase1(RunContext& ctx, std::uint64_t seed) {
  const ExperimentConfig& cfg = ctx.cfg;
  std::vector<RunLog> logs;
  MeasurementSet m;
  try {
    m = collect_phase1(cfg.env, cfg.train, seed, &logs);
  } catch (const NumericalAbort&) {
    for (std::size_t i = 0; i < logs.size(); ++i)
      ctx.runs.push_back(record_run(ctx, "phase1_ch" + std::to_string(i + 1), seed, logs[i],
                                    MethodSpec::single_channel(cfg.env, static_cast<int>(i)), std::nullopt));
    throw;
  }
  for (std::size_t i = 0; i < logs.size(); ++i)
    ctx.runs.push_back(record_run(ctx, "phase1_ch" + std::to_string(i + 1), seed, logs[i],
                                  MethodSpec::single_channel(cfg.env, static_cast<int>(i)), std::nullopt));
  const std::string tag = "_seed" + std::to_string(seed);
  write_file(ctx.dir / ("measurements" + tag + ".csv"), [&](std::ostream& os) { write_measurements_csv(os, m); });

  EvalSurface surface = fit_surface(m, cfg.proxyfit.degree);
  const VectorXd h =
      cfg.proxyfit.bandwidth.size() ? cfg.proxyfit.bandwidth : scott_bandwidth(m.values, cfg.proxyfit.grid_resolution);
  attach_mask(surface, m.values, h, *cfg.proxyfit.density_threshold,
              GridSpec::unit(cfg.env.num_channels(), cfg.proxyfit.grid_resolution));
  write_file(ctx.dir / ("surface" + tag + ".txt"), [&](std::ostream& os) { write_surface(os, surface); });
  if (cfg.env.num_channels() == 2)
    write_file(ctx.dir / ("contour" + tag + ".csv"), [&](std::ostream& os) { write_contour_csv(os, surface); });
  const VectorXd theta = argmax_surface(surface);
  ctx.summary << "phase1 seed=" << seed << " rows=" << m.rows() << " mask_nodes=" << surface.mask_count()
              << " proxy_point=" << vec_text(theta) << '\n';
  return theta;
}

}  // namespace

int run(const ExperimentConfig& cfg, std::ostream& summary, std::ostream& diagnostics) {
  try {
    cfg.validate();
    RunContext ctx{cfg, fs::path(cfg.out), summary};
    std::error_code ec;
    fs::create_directories(ctx.dir, ec);
    if (ec) throw ConfigError("cannot create output directory " + cfg.out + ": " + ec.message());

    json top;
    top["phase"] = to_string(cfg.phase);
    top["num_channels"] = cfg.env.num_channels();
    top["gold_peak"] = vec_json(cfg.env.gold_peak());
    json seeds = json::array();
    for (auto s : cfg.seeds) seeds.push_back(s);
    top["seeds"] = seeds;
    json proxy_points = json::array();
    json simplex_files = json::array();

    for (std::uint64_t seed : cfg.seeds) {
      switch (cfg.phase) {
        case Phase::train: {
          auto [log, state] = train_with_state(cfg, cfg.method, seed);
          ctx.runs.push_back(record_run(ctx, "train", seed, log, cfg.method, state));
          break;
        }
        case Phase::phase1: {
          proxy_points.push_back(vec_json(run_phase1(ctx, seed)));
          break;
        }
        case Phase::two_phase: {
          const VectorXd theta = run_phase1(ctx, seed);
          proxy_points.push_back(vec_json(theta));
          MethodSpec method = MethodSpec::make(cfg.phase2_method, cfg.env);
          method.thresholds = theta;
          auto [log, state] = train_with_state(cfg, method, seed);
          ctx.runs.push_back(record_run(ctx, "phase2", seed, log, method, state));
          break;
        }
        case Phase::nm_search: {
          const NmResult r = nm_search(cfg.env, cfg.train, cfg.nm_budget(), seed, cfg.nm.options);
          // The log ends at the last proposal trained on, not at the best vertex.
          MethodSpec method = MethodSpec::make(MethodKind::xi_ppo, cfg.env);
          method.thresholds = r.log.thresholds;
          ctx.runs.push_back(record_run(ctx, "nm", seed, r.log, method, std::nullopt));
          const std::string file = "simplex_seed" + std::to_string(seed) + ".csv";
          write_file(ctx.dir / file, [&](std::ostream& os) { write_simplex_csv(os, r.trajectory); });
          json s;
          s["seed"] = seed;
          s["file"] = file;
          s["best_theta"] = vec_json(r.best_theta);
          s["best_gold"] = format_number(r.best_gold);
          s["proposals"] = r.proposals;
          s["steps_used"] = r.steps_used;
          simplex_files.push_back(s);
          summary << "nm seed=" << seed << " best_theta=" << vec_text(r.best_theta)
                  << " best_gold=" << format_number(r.best_gold) << " proposals=" << r.proposals
                  << " steps=" << r.steps_used << '\n';
          break;
        }
        case Phase::sweep: {
          for (std::size_t k = 0; k < cfg.sweep.weights.size(); ++k) {
            MethodSpec method = MethodSpec::make(cfg.sweep.kind, cfg.env);
            method.fixed_weights = cfg.sweep.weights[k];
            auto [log, state] = train_with_state(cfg, method, seed);
            json e = record_run(ctx, "sweep_w" + std::to_string(k), seed, log, method, std::nullopt);
            e["weights"] = vec_json(method.fixed_weights);
            ctx.runs.push_back(e);
          }
          break;
        }
      }
    }
    top["runs"] = ctx.runs;
    if (!proxy_points.empty()) top["proxy_points"] = proxy_points;
    if (!simplex_files.empty()) top["simplex"] = simplex_files;
    write_text_file((ctx.dir / "summary.json").string(), top.dump(2) + "\n");
    return ctx.aborted ? kExitNumerical : kExitOk;
  } catch (const ConfigError& e) {
    diagnostics << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const UnderdeterminedFit& e) {
    diagnostics << "config error: " << e.what() << " (lower proxyfit.degree or collect more probes)\n";
    return kExitConfig;
  } catch (const LengthMismatch& e) {
    diagnostics << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const NumericalAbort& e) {
    diagnostics << "numerical abort: " << e.what() << '\n';
    return kExitNumerical;
  } catch (const NoFeasibleRegion& e) {
    diagnostics << "infeasible: " << e.what() << '\n';
    return kExitInfeasible;
  }
}

// ---- plot data

std::pair<double, double> mean_stderr(const std::vector<double>& xs) {
  if (xs.empty()) return {std::nan(""), std::nan("")};
  double mean = 0.0;
  for (double x : xs) mean += x;
  mean /= static_cast<double>(xs.size());
  if (xs.size() < 2) return {mean, 0.0};
  double ss = 0.0;
  for (double x : xs) ss += (x - mean) * (x - mean);
  const double sd = std::sqrt(ss / static_cast<double>(xs.size() - 1));
  return {mean, sd / std::sqrt(static_cast<double>(xs.size()))};
}

namespace {

json read_summary(const fs::path& dir) {
  const fs::path p = dir / "summary.json";
  std::ifstream in(p);
  if (!in) throw ConfigError("plotdata: missing " + p.string() + " (run an experiment into this directory first)");
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError(p.string() + ": " + e.what());
  }
}

std::vector<json> runs_with_label(const json& summary, const std::function<bool(const std::string&)>& keep) {
  std::vector<json> out;
  for (const json& r : summary.at("runs"))
    if (keep(r.at("label").get<std::string>())) out.push_back(r);
  return out;
}

/// Per-step series of one column across seeds, restricted to rows where the
/// column is finite; steps must agree across seeds.
struct Series {
  std::vector<long> steps;
  std::vector<std::vector<double>> per_seed;  // [seed][row]
};

Series load_series(const fs::path& dir, const std::vector<json>& runs, const std::string& column,
                   bool probes_only) {
  Series s;
  for (std::size_t k = 0; k < runs.size(); ++k) {
    const std::string file = (dir / runs[k].at("runlog").get<std::string>()).string();
    const CsvTable t = read_csv_file(file);
    const std::size_t col = t.column(column), step = t.column("step"), gold = t.column("gold_eval");
    std::vector<long> steps;
    std::vector<double> vals;
    for (std::size_t r = 0; r < t.rows.size(); ++r) {
      if (probes_only && std::isnan(t.number(r, gold))) continue;
      steps.push_back(static_cast<long>(t.number(r, step)));
      vals.push_back(t.number(r, col));
    }
    if (k == 0) s.steps = steps;
    else if (steps != s.steps) throw ConfigError("plotdata: step schedule differs in " + file);
    s.per_seed.push_back(std::move(vals));
  }
  return s;
}

void write_series(std::ostream& os, const std::vector<json>& runs, const std::vector<std::string>& names,
                  const std::vector<Series>& series, const std::vector<std::pair<std::string, double>>& constants) {
  os << "step";
  for (std::size_t c = 0; c < names.size(); ++c) {
    for (const json& r : runs) os << ',' << names[c] << "_seed" << r.at("seed").get<std::uint64_t>();
    os << ',' << names[c] << "_mean," << names[c] << "_stderr";
  }
  for (const auto& kv : constants) os << ',' << kv.first;
  os << '\n';
  const std::size_t rows = series.empty() ? 0 : series.front().steps.size();
  for (std::size_t r = 0; r < rows; ++r) {
    os << series.front().steps[r];
    for (const Series& s : series) {
      std::vector<double> xs;
      for (const auto& seed_vals : s.per_seed) {
        xs.push_back(seed_vals[r]);
        os << ',' << format_number(seed_vals[r]);
      }
      const auto [m, se] = mean_stderr(xs);
      os << ',' << format_number(m) << ',' << format_number(se);
    }
    for (const auto& kv : constants) os << ',' << format_number(kv.second);
    os << '\n';
  }
}

std::string copy_text_file(const fs::path& from, const fs::path& to) {
  std::ifstream in(from, std::ios::binary);
  if (!in) throw ConfigError("plotdata: missing " + from.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  write_text_file(to.string(), ss.str());
  return to.string();
}

}  // namespace

std::vector<std::string> emit_plotdata(const std::string& dir_str, const std::string& kind) {
  const fs::path dir(dir_str);
  const json summary = read_summary(dir);
  const int n = summary.at("num_channels").get<int>();
  std::vector<std::string> written;
  const auto first_seed = [&]() { return summary.at("seeds").at(0).get<std::uint64_t>(); };

  if (kind == "fig1") {
    const fs::path src = dir / ("contour_seed" + std::to_string(first_seed()) + ".csv");
    written.push_back(copy_text_file(src, dir / "fig1_contour.csv"));
  } else if (kind == "fig2") {
    for (int i = 1; i <= n; ++i) {
      const std::string label = "phase1_ch" + std::to_string(i);
      const auto runs = runs_with_label(summary, [&](const std::string& l) { return l == label; });
      if (runs.empty()) throw ConfigError("plotdata fig2: no phase1 runs in " + dir_str);
      const std::vector<Series> series{load_series(dir, runs, "probe_ch" + std::to_string(i), true),
                                       load_series(dir, runs, "gold_eval", true)};
      const fs::path out = dir / ("fig2_ch" + std::to_string(i) + ".csv");
      write_file(out, [&](std::ostream& os) {
        write_series(os, runs, {"v" + std::to_string(i), "gold"}, series, {});
      });
      written.push_back(out.string());
    }
  } else if (kind == "fig3") {
    const auto runs = runs_with_label(summary, [](const std::string& l) { return l == "train" || l == "phase2"; });
    if (runs.empty()) throw ConfigError("plotdata fig3: no train or phase2 runs in " + dir_str);
    std::vector<Series> series;
    std::vector<std::string> names;
    for (int i = 1; i <= n; ++i) {
      series.push_back(load_series(dir, runs, "v_ch" + std::to_string(i), false));
      names.push_back("v" + std::to_string(i));
    }
    std::vector<std::pair<std::string, double>> constants;
    if (runs.front().contains("thresholds"))
      for (int i = 0; i < n; ++i)
        constants.emplace_back("threshold_" + std::to_string(i + 1),
                               runs.front().at("thresholds").at(static_cast<std::size_t>(i)).get<double>());
    const fs::path out = dir / "fig3.csv";
    write_file(out, [&](std::ostream& os) {
      os << "# method=" << runs.front().at("method").get<std::string>() << '\n';
      write_series(os, runs, names, series, constants);
    });
    written.push_back(out.string());
  } else if (kind == "fig4") {
    std::map<std::string, std::vector<double>> groups;
    std::vector<std::string> order;
    for (const json& r : summary.at("runs")) {
      const std::string label = r.at("label").get<std::string>() + ":" + r.at("method").get<std::string>();
      if (!groups.count(label)) order.push_back(label);
      groups[label].push_back(std::stod(r.at("final_gold").get<std::string>()));
    }
    const fs::path out = dir / "fig4.csv";
    write_file(out, [&](std::ostream& os) {
      os << "setting,seeds,final_gold_mean,final_gold_stderr\n";
      for (const std::string& label : order) {
        const auto [m, se] = mean_stderr(groups[label]);
        os << label << ',' << groups[label].size() << ',' << format_number(m) << ',' << format_number(se) << '\n';
      }
    });
    written.push_back(out.string());
  } else if (kind == "fig5") {
    if (!summary.contains("simplex")) throw ConfigError("plotdata fig5: no simplex trajectories in " + dir_str);
    std::ostringstream merged;
    bool header_done = false;
    for (const json& s : summary.at("simplex")) {
      const fs::path src = dir / s.at("file").get<std::string>();
      std::ifstream in(src);
      if (!in) throw ConfigError("plotdata: missing " + src.string());
      std::string line;
      std::getline(in, line);
      if (!header_done) {
        merged << "seed," << line << '\n';
        header_done = true;
      }
      while (std::getline(in, line))
        if (!line.empty()) merged << s.at("seed").get<std::uint64_t>() << ',' << line << '\n';
    }
    const fs::path out = dir / "fig5_simplex.csv";
    write_text_file(out.string(), merged.str());
    written.push_back(out.string());
  } else {
    throw ConfigError("plotdata: unknown figure kind '" + kind + "' (fig1..fig5)");
  }
  return written;
}

}  // namespace goodhart
