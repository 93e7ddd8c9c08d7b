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
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "goodhart/harness.hpp"

namespace {

struct Overrides {
  std::string config;
  std::vector<std::uint64_t> seeds;
  std::string out;
  int probe_every = 0;
  long steps = 0;
};

void add_common(CLI::App* app, Overrides& o) {
  app->add_option("--config", o.config, "JSON experiment config")->check(CLI::ExistingFile);
  app->add_option("--seed", o.seeds, "seed(s); repeat or comma-separate, replaces config seeds")->delimiter(',');
  app->add_option("--out", o.out, "output directory");
  app->add_option("--probe-every", o.probe_every, "gold probe period in update rounds")->check(CLI::PositiveNumber);
  app->add_option("--steps", o.steps, "total environment steps per training run")->check(CLI::PositiveNumber);
}

int run_phase(goodhart::Phase phase, const Overrides& o) {
  using namespace goodhart;
  ExperimentConfig cfg;
  try {
    if (!o.config.empty()) cfg = load_config(o.config);
  } catch (const Error& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  }
  cfg.phase = phase;
  if (!o.seeds.empty()) cfg.seeds = o.seeds;
  if (!o.out.empty()) cfg.out = o.out;
  if (o.probe_every > 0) cfg.train.probe_every = o.probe_every;
  if (o.steps > 0) cfg.train.total_steps = o.steps;
  return run(cfg, std::cout, std::cerr);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Constrained RL against composite reward overoptimization on synthetic environments"};
  app.require_subcommand(1);

  struct Sub {
    const char* name;
    const char* help;
    goodhart::Phase phase;
  };
  const Sub subs[] = {
      {"run", "train one method per seed", goodhart::Phase::train},
      {"phase1", "single-channel runs, surface fit and proxy-point search", goodhart::Phase::phase1},
      {"two-phase", "phase1 then constrained training at the proxy point", goodhart::Phase::two_phase},
      {"nm", "Nelder-Mead threshold search inside one training run", goodhart::Phase::nm_search},
      {"sweep", "fixed-weight runs over a list of weightings", goodhart::Phase::sweep},
  };
  std::vector<Overrides> overrides(std::size(subs));
  std::vector<CLI::App*> apps;
  for (std::size_t i = 0; i < std::size(subs); ++i) {
    apps.push_back(app.add_subcommand(subs[i].name, subs[i].help));
    add_common(apps.back(), overrides[i]);
  }

  std::string kind, dir = "out";
  CLI::App* plot = app.add_subcommand("plotdata", "write plot-ready CSVs from a finished output directory");
  plot->add_option("kind", kind, "fig1 | fig2 | fig3 | fig4 | fig5")->required();
  plot->add_option("--out", dir, "directory holding summary.json");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? goodhart::kExitOk : goodhart::kExitConfig;
  }

  for (std::size_t i = 0; i < apps.size(); ++i)
    if (apps[i]->parsed()) return run_phase(subs[i].phase, overrides[i]);

  try {
    for (const auto& f : goodhart::emit_plotdata(dir, kind)) std::cout << f << '\n';
  } catch (const goodhart::Error& e) {
    std::cerr << "plotdata: " << e.what() << '\n';
    return goodhart::kExitConfig;
  }
  return goodhart::kExitOk;
}
