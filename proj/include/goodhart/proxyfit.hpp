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
#include <functional>
#include <string>
#include <vector>

#include "goodhart/env.hpp"
#include "goodhart/trainer.hpp"
#include "goodhart/types.hpp"

namespace goodhart {

/**
 * Rows of (v_1..v_N, gold) gathered while maximizing one channel at a time.
 * `source` is the channel whose run produced the row, `step` its update round.
 */
struct MeasurementSet {
  MatrixXd values;  ///< rows x N
  VectorXd gold;
  VectorXi source;
  VectorXi step;

  int num_channels() const { return static_cast<int>(values.cols()); }
  Eigen::Index rows() const { return values.rows(); }
  void append(const Eigen::Ref<const VectorXd>& v, double g, int src, int stp);
  /// Rows whose source is `channel`.
  MeasurementSet from_source(int channel) const;
};

/// Regular grid over a box, `resolution` apart, both ends included.
struct GridSpec {
  VectorXd lo;
  VectorXd hi;
  double resolution = 0.01;

  static GridSpec unit(int dims, double resolution = 0.01);
  int dims() const { return static_cast<int>(lo.size()); }
  int nodes_along(int axis) const;
  long size() const;
  /// Node coordinates for a flat index; axis 0 varies slowest.
  VectorXd node(long flat) const;
  void validate() const;
};

/// Exponent vectors of all monomials of total degree <= d, graded: the
/// constant first, then degree 1, and so on.
std::vector<VectorXi> monomial_exponents(int num_vars, int degree);
std::string monomial_name(const VectorXi& exponents);
/// Row of monomial values at v.
VectorXd monomial_row(const std::vector<VectorXi>& exponents, const Eigen::Ref<const VectorXd>& v);

struct EvalSurface {
  int degree = 0;
  std::vector<VectorXi> exponents;
  VectorXd coefficients;
  VectorXd bandwidth;  ///< per axis; empty until a mask is attached
  double density_threshold = 0.0;
  GridSpec grid;
  std::vector<char> mask;  ///< grid.size() entries

  double operator()(const Eigen::Ref<const VectorXd>& v) const;
  long mask_count() const;
};

/// Ordinary least squares over the monomial basis. Throws UnderdeterminedFit
/// when there are too few rows or the design is rank deficient.
EvalSurface fit_surface(const MeasurementSet& m, int degree);
EvalSurface fit_surface(const MatrixXd& x, const VectorXd& y, int degree);

/// Scott-style per-axis bandwidth, sigma_j n^(-1/(N+4)). Falls back to
/// `floor` on an axis with no spread.
VectorXd scott_bandwidth(const MatrixXd& points, double floor = 0.01);

/// Gaussian product-kernel density in points per unit volume.
double kde_density(const MatrixXd& points, const VectorXd& bandwidth, const Eigen::Ref<const VectorXd>& x);

/// True where the density reaches the threshold.
std::vector<char> kde_mask(const MatrixXd& points, const VectorXd& bandwidth, double density_threshold,
                           const GridSpec& grid);

/// Attaches grid, bandwidth, threshold and mask to a fitted surface.
void attach_mask(EvalSurface& s, const MatrixXd& points, const VectorXd& bandwidth, double density_threshold,
                 const GridSpec& grid);

/// Best mask-true grid node; ties go to the lexicographically smallest node.
/// Throws NoFeasibleRegion on an empty mask.
VectorXd argmax_surface(const EvalSurface& s);

/// Best node of `f` over a grid with an optional mask, same tie rule.
VectorXd argmax_grid(const std::function<double(const VectorXd&)>& f, const GridSpec& grid,
                     const std::vector<char>* mask = nullptr);

/**
 * Per-axis proxy points: for each channel i, the v_i of the row from channel
 * i's own run that maximizes `f`, i.e. the proxy point found when that
 * channel is optimized alone with the other coordinate where the run left it.
 */
VectorXd per_axis_proxy_points(const MeasurementSet& m, const std::function<double(const VectorXd&)>& f);

/// One ppo_no_kl run per channel, recording (v, gold) at every probe.
/// Run i uses seed derive_seed(seed, i). Logs are appended when given.
MeasurementSet collect_phase1(const GoodhartSpec& env, const TrainConfig& config, std::uint64_t seed,
                              std::vector<RunLog>* logs = nullptr);

/// Measurements already in a set of single-channel run logs.
MeasurementSet measurements_from_logs(const std::vector<RunLog>& logs);

}  // namespace goodhart
