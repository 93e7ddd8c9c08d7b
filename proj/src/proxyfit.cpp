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
#include "goodhart/proxyfit.hpp"

#include <cmath>
#include <limits>

#include "goodhart/rng.hpp"

namespace goodhart {

void MeasurementSet::append(const Eigen::Ref<const VectorXd>& v, double g, int src, int stp) {
  if (values.rows() > 0) require_same_length(v.size(), values.cols(), "measurement row");
  const Eigen::Index r = values.rows();
  values.conservativeResize(r + 1, v.size());
  values.row(r) = v.transpose();
  gold.conservativeResize(r + 1);
  gold(r) = g;
  source.conservativeResize(r + 1);
  source(r) = src;
  step.conservativeResize(r + 1);
  step(r) = stp;
}

MeasurementSet MeasurementSet::from_source(int channel) const {
  MeasurementSet out;
  out.values.resize(0, values.cols());
  for (Eigen::Index r = 0; r < rows(); ++r)
    if (source(r) == channel) out.append(values.row(r).transpose(), gold(r), source(r), step(r));
  return out;
}

// ---- grid

GridSpec GridSpec::unit(int dims, double resolution) {
  GridSpec g;
  g.lo = VectorXd::Zero(dims);
  g.hi = VectorXd::Ones(dims);
  g.resolution = resolution;
  return g;
}

int GridSpec::nodes_along(int axis) const {
  return static_cast<int>(std::floor((hi(axis) - lo(axis)) / resolution + 1e-9)) + 1;
}

long GridSpec::size() const {
  long n = 1;
  for (int a = 0; a < dims(); ++a) n *= nodes_along(a);
  return n;
}

VectorXd GridSpec::node(long flat) const {
  VectorXd x(dims());
  for (int a = dims() - 1; a >= 0; --a) {
    const int k = nodes_along(a);
    x(a) = lo(a) + resolution * static_cast<double>(flat % k);
    flat /= k;
  }
  return x;
}

void GridSpec::validate() const {
  if (lo.size() == 0 || lo.size() != hi.size()) throw ConfigError("grid: lo/hi must be non-empty and equal length");
  if (!(resolution > 0)) throw ConfigError("grid: resolution must be > 0");
  if ((hi.array() < lo.array()).any()) throw ConfigError("grid: hi < lo");
}

// ---- monomials

namespace {

void exponents_of_degree(int num_vars, int degree, int var, VectorXi& cur, std::vector<VectorXi>& out) {
  if (var == num_vars - 1) {
    cur(var) = degree;
    out.push_back(cur);
    return;
  }
  for (int e = degree; e >= 0; --e) {
    cur(var) = e;
    exponents_of_degree(num_vars, degree - e, var + 1, cur, out);
  }
}

}  // namespace

std::vector<VectorXi> monomial_exponents(int num_vars, int degree) {
  if (num_vars < 1) throw ConfigError("monomials: need at least one variable");
  if (degree < 0) throw ConfigError("monomials: degree must be >= 0");
  std::vector<VectorXi> out;
  VectorXi cur = VectorXi::Zero(num_vars);
  for (int d = 0; d <= degree; ++d) exponents_of_degree(num_vars, d, 0, cur, out);
  return out;
}

std::string monomial_name(const VectorXi& e) {
  std::string s;
  for (Eigen::Index i = 0; i < e.size(); ++i) {
    if (e(i) == 0) continue;
    if (!s.empty()) s += "*";
    s += "v" + std::to_string(i + 1);
    if (e(i) > 1) s += "^" + std::to_string(e(i));
  }
  return s.empty() ? "1" : s;
}

VectorXd monomial_row(const std::vector<VectorXi>& exponents, const Eigen::Ref<const VectorXd>& v) {
  VectorXd row(static_cast<Eigen::Index>(exponents.size()));
  for (std::size_t j = 0; j < exponents.size(); ++j) {
    require_same_length(exponents[j].size(), v.size(), "monomial_row");
    double p = 1.0;
    for (Eigen::Index i = 0; i < v.size(); ++i)
      for (int k = 0; k < exponents[j](i); ++k) p *= v(i);
    row(static_cast<Eigen::Index>(j)) = p;
  }
  return row;
}

// ---- surface

double EvalSurface::operator()(const Eigen::Ref<const VectorXd>& v) const {
  return monomial_row(exponents, v).dot(coefficients);
}

long EvalSurface::mask_count() const {
  long n = 0;
  for (char c : mask) n += c ? 1 : 0;
  return n;
}

EvalSurface fit_surface(const MatrixXd& x, const VectorXd& y, int degree) {
  if (degree < 1) throw ConfigError("fit_surface: degree must be >= 1");
  require_same_length(x.rows(), y.size(), "fit_surface");
  EvalSurface s;
  s.degree = degree;
  s.exponents = monomial_exponents(static_cast<int>(x.cols()), degree);
  const Eigen::Index p = static_cast<Eigen::Index>(s.exponents.size());
  if (x.rows() < p)
    throw UnderdeterminedFit("fit_surface: " + std::to_string(x.rows()) + " rows for " + std::to_string(p) +
                             " coefficients");

  MatrixXd design(x.rows(), p);
  for (Eigen::Index r = 0; r < x.rows(); ++r) design.row(r) = monomial_row(s.exponents, x.row(r).transpose());

  Eigen::ColPivHouseholderQR<MatrixXd> qr(design);
  if (qr.rank() < p) {
    std::string names;
    const auto& perm = qr.colsPermutation().indices();
    for (Eigen::Index j = qr.rank(); j < p; ++j) {
      if (!names.empty()) names += ", ";
      names += monomial_name(s.exponents[static_cast<std::size_t>(perm(j))]);
    }
    throw UnderdeterminedFit("fit_surface: design rank " + std::to_string(qr.rank()) + " < " +
                             std::to_string(p) + "; deficient monomials: " + names);
  }
  s.coefficients = qr.solve(y);
  return s;
}

EvalSurface fit_surface(const MeasurementSet& m, int degree) { return fit_surface(m.values, m.gold, degree); }

// ---- density

VectorXd scott_bandwidth(const MatrixXd& points, double floor) {
  const Eigen::Index n = points.rows();
  const Eigen::Index d = points.cols();
  VectorXd h = VectorXd::Constant(d, floor);
  if (n < 2) return h;
  const double factor = std::pow(static_cast<double>(n), -1.0 / (static_cast<double>(d) + 4.0));
  for (Eigen::Index j = 0; j < d; ++j) {
    const double mean = points.col(j).mean();
    const double var = (points.col(j).array() - mean).square().sum() / static_cast<double>(n - 1);
    const double sd = std::sqrt(var);
    if (sd > 0) h(j) = sd * factor;
  }
  return h;
}

double kde_density(const MatrixXd& points, const VectorXd& bandwidth, const Eigen::Ref<const VectorXd>& x) {
  require_same_length(bandwidth.size(), x.size(), "kde_density");
  if ((bandwidth.array() <= 0).any()) throw ConfigError("kde: bandwidth must be > 0");
  if (points.rows() == 0) return 0.0;
  require_same_length(points.cols(), x.size(), "kde_density");
  const double norm = std::pow(2.0 * M_PI, -0.5 * static_cast<double>(x.size())) / bandwidth.prod();
  double total = 0.0;
  for (Eigen::Index r = 0; r < points.rows(); ++r) {
    const double q = ((points.row(r).transpose() - x).array() / bandwidth.array()).square().sum();
    total += std::exp(-0.5 * q);
  }
  return norm * total;
}

std::vector<char> kde_mask(const MatrixXd& points, const VectorXd& bandwidth, double density_threshold,
                           const GridSpec& grid) {
  grid.validate();
  const long n = grid.size();
  std::vector<char> mask(static_cast<std::size_t>(n), 0);
  for (long i = 0; i < n; ++i)
    mask[static_cast<std::size_t>(i)] = kde_density(points, bandwidth, grid.node(i)) >= density_threshold;
  return mask;
}

void attach_mask(EvalSurface& s, const MatrixXd& points, const VectorXd& bandwidth, double density_threshold,
                 const GridSpec& grid) {
  s.bandwidth = bandwidth;
  s.density_threshold = density_threshold;
  s.grid = grid;
  s.mask = kde_mask(points, bandwidth, density_threshold, grid);
}

// ---- argmax

VectorXd argmax_grid(const std::function<double(const VectorXd&)>& f, const GridSpec& grid,
                     const std::vector<char>* mask) {
  grid.validate();
  const long n = grid.size();
  if (mask && static_cast<long>(mask->size()) != n) throw LengthMismatch("argmax: mask does not match grid");
  long best = -1;
  double best_val = -std::numeric_limits<double>::infinity();
  for (long i = 0; i < n; ++i) {
    if (mask && !(*mask)[static_cast<std::size_t>(i)]) continue;
    const double val = f(grid.node(i));
    if (best < 0 || val > best_val) {
      best = i;
      best_val = val;
    }
  }
  if (best < 0) throw NoFeasibleRegion("argmax: density mask has no admissible node");
  return grid.node(best);
}

VectorXd argmax_surface(const EvalSurface& s) {
  return argmax_grid([&](const VectorXd& v) { return s(v); }, s.grid, &s.mask);
}

VectorXd per_axis_proxy_points(const MeasurementSet& m, const std::function<double(const VectorXd&)>& f) {
  const int n = m.num_channels();
  VectorXd out(n);
  for (int i = 0; i < n; ++i) {
    Eigen::Index best = -1;
    double best_val = -std::numeric_limits<double>::infinity();
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
      if (m.source(r) != i) continue;
      const double val = f(m.values.row(r).transpose());
      if (best < 0 || val > best_val) {
        best = r;
        best_val = val;
      }
    }
    if (best < 0) throw NoFeasibleRegion("per-axis proxy: no rows from channel " + std::to_string(i + 1));
    out(i) = m.values(best, i);
  }
  return out;
}

// ---- phase 1

MeasurementSet measurements_from_logs(const std::vector<RunLog>& logs) {
  MeasurementSet m;
  for (std::size_t i = 0; i < logs.size(); ++i) {
    if (m.values.rows() == 0) m.values.resize(0, logs[i].num_channels);
    for (const RunRecord& r : logs[i].records)
      if (r.has_probe()) m.append(r.probe_values, r.gold, static_cast<int>(i), r.step);
  }
  return m;
}

MeasurementSet collect_phase1(const GoodhartSpec& env, const TrainConfig& config, std::uint64_t seed,
                              std::vector<RunLog>* logs) {
  std::vector<RunLog> runs;
  for (int i = 0; i < env.num_channels(); ++i) {
    runs.push_back(train_run(MethodSpec::single_channel(env, i), config, env,
                             derive_seed(seed, static_cast<std::uint64_t>(i))));
    if (runs.back().aborted) {
      if (logs) logs->insert(logs->end(), runs.begin(), runs.end());
      throw NumericalAbort("phase1: channel " + std::to_string(i + 1) + " run aborted: " +
                           runs.back().abort_reason);
    }
  }
  MeasurementSet m = measurements_from_logs(runs);
  if (logs) logs->insert(logs->end(), runs.begin(), runs.end());
  return m;
}

}  // namespace goodhart
