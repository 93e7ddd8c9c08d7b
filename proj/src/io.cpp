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
#include "goodhart/io.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <type_traits>

namespace goodhart {

namespace {

constexpr int kSurfaceVersion = 1;
constexpr int kCheckpointVersion = 1;

void put_vector(std::ostream& os, const VectorXd& v) {
  for (Eigen::Index i = 0; i < v.size(); ++i) os << ',' << format_number(v(i));
}

void put_nan(std::ostream& os, int n) {
  for (int i = 0; i < n; ++i) os << ",nan";
}

double parse_number(const std::string& s) {
  if (s == "nan") return std::nan("");
  if (s == "inf") return HUGE_VAL;
  if (s == "-inf") return -HUGE_VAL;
  std::size_t used = 0;
  double x = 0.0;
  try {
    x = std::stod(s, &used);
  } catch (const std::exception&) {
    throw ConfigError("csv: not a number: '" + s + "'");
  }
  if (used != s.size()) throw ConfigError("csv: trailing characters in number '" + s + "'");
  return x;
}

std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, sep)) out.push_back(cell);
  if (!line.empty() && line.back() == sep) out.emplace_back();
  return out;
}

void expect(std::istream& is, const std::string& word) {
  std::string got;
  if (!(is >> got) || got != word) throw ConfigError("expected '" + word + "', found '" + got + "'");
}

template <typename T>
T read_value(std::istream& is, const char* what) {
  std::string tok;
  if (!(is >> tok)) throw ConfigError(std::string("unexpected end of input reading ") + what);
  if constexpr (std::is_same_v<T, double>) {
    return parse_number(tok);
  } else {
    std::size_t used = 0;
    long long x = 0;
    try {
      x = std::stoll(tok, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != tok.size()) throw ConfigError(std::string("bad integer for ") + what + ": " + tok);
    return static_cast<T>(x);
  }
}

void put_matrix(std::ostream& os, const MatrixXd& m) {
  for (Eigen::Index i = 0; i < m.size(); ++i) os << ' ' << format_number(m.data()[i]);
  os << '\n';
}

MatrixXd get_matrix(std::istream& is, Eigen::Index rows, Eigen::Index cols, const char* what) {
  MatrixXd m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = read_value<double>(is, what);
  return m;
}

}  // namespace

std::string format_number(double x) {
  if (std::isnan(x)) return "nan";
  if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

// ---- run logs

void write_runlog_csv(std::ostream& os, const RunLog& log) {
  const int n = log.num_channels;
  os << "step,env_steps";
  for (int i = 1; i <= n; ++i) os << ",v_ch" << i;
  os << ",v_kl,gold_eval";
  for (int i = 1; i <= n; ++i) os << ",probe_ch" << i;
  for (int i = 1; i <= n; ++i) os << ",weight_" << i;
  for (int i = 1; i <= n; ++i) os << ",raw_" << i;
  for (int i = 1; i <= n; ++i) os << ",violation_" << i;
  os << ",alpha_kl,policy_loss";
  for (int i = 0; i <= n; ++i) os << ",value_loss_" << i;
  os << '\n';
  for (const RunRecord& r : log.records) {
    os << r.step << ',' << r.env_steps;
    put_vector(os, r.channel_values);
    os << ',' << format_number(r.kl) << ',' << format_number(r.gold);
    if (r.probe_values.size() == n) put_vector(os, r.probe_values); else put_nan(os, n);
    put_vector(os, r.weights);
    put_vector(os, r.raw);
    if (r.violation.size() == n) put_vector(os, r.violation); else put_nan(os, n);
    os << ',' << format_number(r.alpha_kl) << ',' << format_number(r.policy_loss);
    put_vector(os, r.value_losses);
    os << '\n';
  }
}

void write_multiplier_csv(std::ostream& os, const RunLog& log) {
  const int n = log.num_channels;
  os << "step,index";
  for (int i = 1; i <= n; ++i) os << ",raw_" << i;
  for (int i = 1; i <= n; ++i) os << ",weight_" << i;
  for (int i = 1; i <= n; ++i) os << ",violation_" << i;
  os << '\n';
  for (const DualStep& d : log.dual_steps) {
    os << d.step << ',' << d.index;
    put_vector(os, d.raw);
    put_vector(os, d.weight);
    put_vector(os, d.violation);
    os << '\n';
  }
}

// ---- measurements

void write_measurements_csv(std::ostream& os, const MeasurementSet& m) {
  os << "source,step";
  for (int i = 1; i <= m.num_channels(); ++i) os << ",v_" << i;
  os << ",gold\n";
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    os << m.source(r) << ',' << m.step(r);
    put_vector(os, m.values.row(r).transpose());
    os << ',' << format_number(m.gold(r)) << '\n';
  }
}

MeasurementSet read_measurements_csv(std::istream& is) {
  const CsvTable t = read_csv(is);
  int n = 0;
  while (t.has_column("v_" + std::to_string(n + 1))) ++n;
  if (n == 0) throw ConfigError("measurements: no v_1 column");
  MeasurementSet m;
  m.values.resize(0, n);
  const std::size_t src = t.column("source"), stp = t.column("step"), gold = t.column("gold");
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    VectorXd v(n);
    for (int i = 0; i < n; ++i) v(i) = t.number(r, t.column("v_" + std::to_string(i + 1)));
    m.append(v, t.number(r, gold), static_cast<int>(t.number(r, src)), static_cast<int>(t.number(r, stp)));
  }
  return m;
}

// ---- surfaces

void write_surface(std::ostream& os, const EvalSurface& s) {
  const int n = s.exponents.empty() ? 0 : static_cast<int>(s.exponents.front().size());
  os << "goodhart-surface " << kSurfaceVersion << '\n';
  os << "dims " << n << " degree " << s.degree << " terms " << s.exponents.size() << '\n';
  for (std::size_t j = 0; j < s.exponents.size(); ++j) {
    os << "term";
    for (int i = 0; i < n; ++i) os << ' ' << s.exponents[j](i);
    os << ' ' << format_number(s.coefficients(static_cast<Eigen::Index>(j))) << '\n';
  }
  os << "grid";
  for (int i = 0; i < s.grid.dims(); ++i) os << ' ' << format_number(s.grid.lo(i)) << ' ' << format_number(s.grid.hi(i));
  os << ' ' << format_number(s.grid.resolution) << '\n';
  os << "kde " << format_number(s.density_threshold);
  for (Eigen::Index i = 0; i < s.bandwidth.size(); ++i) os << ' ' << format_number(s.bandwidth(i));
  os << '\n';
  os << "mask " << s.mask.size() << '\n';
  for (char c : s.mask) os << (c ? '1' : '0');
  os << '\n';
}

EvalSurface read_surface(std::istream& is) {
  expect(is, "goodhart-surface");
  const int version = read_value<int>(is, "surface version");
  if (version != kSurfaceVersion) throw ConfigError("surface: unsupported version " + std::to_string(version));
  EvalSurface s;
  expect(is, "dims");
  const int n = read_value<int>(is, "dims");
  expect(is, "degree");
  s.degree = read_value<int>(is, "degree");
  expect(is, "terms");
  const int terms = read_value<int>(is, "terms");
  if (n < 1 || terms < 1) throw ConfigError("surface: bad dims/terms");
  s.coefficients.resize(terms);
  for (int j = 0; j < terms; ++j) {
    expect(is, "term");
    VectorXi e(n);
    for (int i = 0; i < n; ++i) e(i) = read_value<int>(is, "exponent");
    s.exponents.push_back(e);
    s.coefficients(j) = read_value<double>(is, "coefficient");
  }
  // rest of the header line-structured from here
  std::string line;
  std::getline(is, line);
  if (!std::getline(is, line)) throw ConfigError("surface: missing grid line");
  {
    std::istringstream ss(line);
    expect(ss, "grid");
    s.grid.lo.resize(n);
    s.grid.hi.resize(n);
    for (int i = 0; i < n; ++i) {
      s.grid.lo(i) = read_value<double>(ss, "grid lo");
      s.grid.hi(i) = read_value<double>(ss, "grid hi");
    }
    s.grid.resolution = read_value<double>(ss, "grid resolution");
  }
  if (!std::getline(is, line)) throw ConfigError("surface: missing kde line");
  {
    std::istringstream ss(line);
    expect(ss, "kde");
    s.density_threshold = read_value<double>(ss, "density threshold");
    std::vector<double> h;
    std::string tok;
    while (ss >> tok) h.push_back(parse_number(tok));
    s.bandwidth = Eigen::Map<VectorXd>(h.data(), static_cast<Eigen::Index>(h.size()));
  }
  expect(is, "mask");
  const long count = read_value<long>(is, "mask size");
  std::string bits;
  if (count > 0 && !(is >> bits)) throw ConfigError("surface: missing mask bits");
  if (static_cast<long>(bits.size()) != count) throw ConfigError("surface: mask length mismatch");
  s.mask.reserve(bits.size());
  for (char c : bits) {
    if (c != '0' && c != '1') throw ConfigError("surface: mask must be 0/1");
    s.mask.push_back(c == '1');
  }
  return s;
}

void write_contour_csv(std::ostream& os, const EvalSurface& s) {
  const int n = s.grid.dims();
  for (int i = 1; i <= n; ++i) os << (i > 1 ? "," : "") << "v_" << i;
  os << ",value,mask\n";
  const long g = s.grid.size();
  for (long k = 0; k < g; ++k) {
    const VectorXd x = s.grid.node(k);
    for (int i = 0; i < n; ++i) os << (i > 0 ? "," : "") << format_number(x(i));
    const bool m = s.mask.empty() ? true : s.mask[static_cast<std::size_t>(k)] != 0;
    os << ',' << format_number(s(x)) << ',' << (m ? 1 : 0) << '\n';
  }
}

void write_simplex_csv(std::ostream& os, const std::vector<SimplexRow>& rows) {
  const int n = rows.empty() ? 0 : static_cast<int>(rows.front().theta.size());
  os << "iteration,phase,vertex";
  for (int i = 1; i <= n; ++i) os << ",theta_" << i;
  os << ",gold,capped\n";
  for (const SimplexRow& r : rows) {
    os << r.iteration << ',' << to_string(r.phase) << ',' << r.vertex;
    put_vector(os, r.theta);
    os << ',' << format_number(r.gold) << ',' << (r.capped ? 1 : 0) << '\n';
  }
}

// ---- checkpoints

void write_checkpoint(std::ostream& os, const TrainerState& st, int num_channels) {
  os << "goodhart-checkpoint " << kCheckpointVersion << '\n';
  os << "shape " << st.policy_weights.rows() << ' ' << st.policy_weights.cols() << ' ' << st.head_weights.cols()
     << ' ' << num_channels << '\n';
  os << "counters " << st.round << ' ' << st.env_steps << ' ' << st.dual_index << ' ' << format_number(st.alpha_kl)
     << '\n';
  os << "policy";
  put_matrix(os, st.policy_weights);
  os << "heads";
  put_matrix(os, st.head_weights);
  os << "raw";
  put_matrix(os, st.raw);
  os << "momentum";
  put_matrix(os, st.momentum_buffer);
}

TrainerState read_checkpoint(std::istream& is) {
  expect(is, "goodhart-checkpoint");
  const int version = read_value<int>(is, "checkpoint version");
  if (version != kCheckpointVersion)
    throw ConfigError("checkpoint: unsupported version " + std::to_string(version));
  expect(is, "shape");
  const auto f = read_value<Eigen::Index>(is, "features");
  const auto a = read_value<Eigen::Index>(is, "actions");
  const auto h = read_value<Eigen::Index>(is, "heads");
  const auto n = read_value<Eigen::Index>(is, "channels");
  if (f < 1 || a < 1 || h < 1 || n < 1) throw ConfigError("checkpoint: bad shape");
  TrainerState st;
  expect(is, "counters");
  st.round = read_value<int>(is, "round");
  st.env_steps = read_value<long>(is, "env_steps");
  st.dual_index = read_value<long>(is, "dual_index");
  st.alpha_kl = read_value<double>(is, "alpha_kl");
  expect(is, "policy");
  st.policy_weights = get_matrix(is, f, a, "policy");
  expect(is, "heads");
  st.head_weights = get_matrix(is, f, h, "heads");
  expect(is, "raw");
  st.raw = get_matrix(is, n, 1, "raw");
  expect(is, "momentum");
  st.momentum_buffer = get_matrix(is, n, 1, "momentum");
  return st;
}

// ---- generic csv

std::size_t CsvTable::column(const std::string& name) const {
  for (std::size_t i = 0; i < header.size(); ++i)
    if (header[i] == name) return i;
  throw ConfigError("csv: no column '" + name + "'");
}

bool CsvTable::has_column(const std::string& name) const {
  for (const auto& h : header)
    if (h == name) return true;
  return false;
}

double CsvTable::number(std::size_t row, std::size_t col) const {
  if (row >= rows.size() || col >= rows[row].size())
    throw IndexOutOfRange("csv: cell (" + std::to_string(row) + ", " + std::to_string(col) + ")");
  return parse_number(rows[row][col]);
}

CsvTable read_csv(std::istream& is) {
  CsvTable t;
  std::string line;
  if (!std::getline(is, line)) throw ConfigError("csv: empty input");
  t.header = split(line, ',');
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    auto cells = split(line, ',');
    if (cells.size() != t.header.size())
      throw ConfigError("csv: row " + std::to_string(t.rows.size() + 1) + " has " + std::to_string(cells.size()) +
                        " cells, header has " + std::to_string(t.header.size()));
    t.rows.push_back(std::move(cells));
  }
  return t;
}

CsvTable read_csv_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open " + path);
  try {
    return read_csv(in);
  } catch (const ConfigError& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write " + path);
  out << content;
  if (!out) throw ConfigError("write failed for " + path);
}

}  // namespace goodhart
