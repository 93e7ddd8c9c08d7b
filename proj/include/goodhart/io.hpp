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

#include <iosfwd>
#include <string>
#include <vector>

#include "goodhart/neldermead.hpp"
#include "goodhart/proxyfit.hpp"
#include "goodhart/trainer.hpp"

/**
 * Text formats. Every number is written with 17 significant digits so files
 * round-trip exactly and identical runs give identical bytes.
 *
 * RunLog CSV
 *   step, env_steps, v_ch1..v_chN, v_kl, gold_eval, probe_ch1..probe_chN,
 *   weight_1..N, raw_1..N, violation_1..N, alpha_kl, policy_loss,
 *   value_loss_0..value_loss_N
 *   gold_eval and probe_* are "nan" on rounds without a probe.
 *
 * Multiplier CSV (one row per multiplier update)
 *   step, index, raw_1..N, weight_1..N, violation_1..N
 *
 * MeasurementSet CSV
 *   source, step, v_1..v_N, gold
 *
 * EvalSurface text
 *   goodhart-surface 1
 *   dims <N> degree <d> terms <P>
 *   term <e_1> .. <e_N> <coefficient>        (P lines, basis order)
 *   grid <lo_1> <hi_1> .. <lo_N> <hi_N> <resolution>
 *   kde <threshold> <h_1> .. <h_N>           (h empty when no mask)
 *   mask <G> followed by G characters of 0/1 on the next line, axis 0 slowest
 *
 * Contour CSV
 *   v_1..v_N, value, mask
 *
 * Simplex trajectory CSV
 *   iteration, phase, vertex, theta_1..theta_N, gold, capped
 *
 * Checkpoint text
 *   goodhart-checkpoint 1
 *   shape <F> <A> <H> <N>                    (features, actions, heads, channels)
 *   counters <round> <env_steps> <dual_index> <alpha_kl>
 *   policy <F*A values, column-major>
 *   heads <F*H values, column-major>
 *   raw <N values>
 *   momentum <N values>
 */
namespace goodhart {

std::string format_number(double x);

void write_runlog_csv(std::ostream& os, const RunLog& log);
void write_multiplier_csv(std::ostream& os, const RunLog& log);
void write_measurements_csv(std::ostream& os, const MeasurementSet& m);
MeasurementSet read_measurements_csv(std::istream& is);
void write_surface(std::ostream& os, const EvalSurface& s);
EvalSurface read_surface(std::istream& is);
void write_contour_csv(std::ostream& os, const EvalSurface& s);
void write_simplex_csv(std::ostream& os, const std::vector<SimplexRow>& rows);
void write_checkpoint(std::ostream& os, const TrainerState& st, int num_channels);
TrainerState read_checkpoint(std::istream& is);

/// Header plus string cells; enough for the files above.
struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  /// Column index by name; throws ConfigError when absent.
  std::size_t column(const std::string& name) const;
  bool has_column(const std::string& name) const;
  double number(std::size_t row, std::size_t col) const;
};

CsvTable read_csv(std::istream& is);

/// File helpers that name the path in their errors.
CsvTable read_csv_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& content);

}  // namespace goodhart
