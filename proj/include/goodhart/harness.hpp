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
#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "goodhart/env.hpp"
#include "goodhart/neldermead.hpp"
#include "goodhart/proxyfit.hpp"
#include "goodhart/trainer.hpp"

namespace goodhart {

enum class Phase { train, phase1, two_phase, nm_search, sweep };

const char* to_string(Phase p);
Phase phase_from_string(const std::string& s);

/// Process exit codes.
enum ExitCode : int {
  kExitOk = 0,
  kExitConfig = 1,
  kExitNumerical = 2,
  kExitInfeasible = 3,
};

struct ProxyFitConfig {
  int degree = 4;
  std::optional<double> density_threshold;  ///< required by phase1 and two_phase
  VectorXd bandwidth;                       ///< empty means the Scott rule
  double grid_resolution = 0.01;
};

struct NmConfig {
  long budget = 0;  ///< 0 means twice train.total_steps
  NmOptions options;
};

struct SweepConfig {
  MethodKind kind = MethodKind::ppo;
  std::vector<VectorXd> weights;
};

struct ExperimentConfig {
  GoodhartSpec env = GoodhartSpec::sequence_default();
  MethodSpec method = MethodSpec::make(MethodKind::ppo, GoodhartSpec::sequence_default());
  TrainConfig train;
  Phase phase = Phase::train;
  std::vector<std::uint64_t> seeds{1};
  std::string out = "out";
  ProxyFitConfig proxyfit;
  NmConfig nm;
  SweepConfig sweep;
  MethodKind phase2_method = MethodKind::xi_ppo;

  long nm_budget() const { return nm.budget > 0 ? nm.budget : 2 * train.total_steps; }
  /// Throws ConfigError naming the offending field.
  void validate() const;
};

/**
 * Builds a config from JSON. Recognized top-level keys: phase, seeds, out,
 * env, method, train, proxyfit, nm, sweep, two_phase. Unknown keys are
 * rejected so that typos surface as errors.
 */
ExperimentConfig parse_config(const nlohmann::json& j);
ExperimentConfig load_config(const std::string& path);

/// "ok", "violated" or "n/a" for the final channel values of a run.
std::string constraint_status(const MethodSpec& method, const VectorXd& values);

/**
 * Runs the configured phase for every seed, writes artifacts under
 * config.out and prints one summary line per run to `summary`. Errors are
 * reported on `diagnostics`; the return value is an ExitCode.
 */
int run(const ExperimentConfig& config, std::ostream& summary, std::ostream& diagnostics);

/// Figure kinds: fig1 (contour), fig2 (single-channel curves), fig3
/// (constrained channel values), fig4 (final gold per setting), fig5
/// (simplex trajectories). Reads summary.json from `dir` and writes
/// plot-ready CSVs next to it. Returns the files written.
std::vector<std::string> emit_plotdata(const std::string& dir, const std::string& kind);

/// Mean and standard error (sample sd / sqrt(n)); stderr is 0 for n < 2.
std::pair<double, double> mean_stderr(const std::vector<double>& xs);

}  // namespace goodhart
