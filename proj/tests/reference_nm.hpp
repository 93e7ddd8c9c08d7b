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

// Straight-line Nelder-Mead written independently of the ask/tell driver,
// used as the oracle trace in tests. Minimizes f over a box.

#include <Eigen/Dense>
#include <algorithm>
#include <functional>
#include <numeric>
#include <vector>

namespace goodhart::oracle {

struct RefTrace {
  std::vector<Eigen::VectorXd> evaluated;  // every point handed to f, in order
  Eigen::VectorXd best;
  double best_value = 0.0;
};

inline RefTrace reference_nelder_mead(const std::function<double(const Eigen::VectorXd&)>& f,
                                      std::vector<Eigen::VectorXd> x, const Eigen::VectorXd& lo,
                                      const Eigen::VectorXd& hi, int max_evals) {
  using Eigen::VectorXd;
  const int n = static_cast<int>(x.size()) - 1;
  RefTrace tr;
  auto box = [&](const VectorXd& p) { return VectorXd(p.cwiseMax(lo).cwiseMin(hi)); };
  std::vector<double> fx;
  for (auto& p : x) {
    p = box(p);
    fx.push_back(f(p));
  }
  int evals = 0;
  auto eval = [&](const VectorXd& p, double& out) {
    if (evals >= max_evals) return false;
    ++evals;
    tr.evaluated.push_back(p);
    out = f(p);
    return true;
  };
  auto order = [&]() {
    std::vector<int> idx(x.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) { return fx[a] < fx[b]; });
    std::vector<VectorXd> xs;
    std::vector<double> fs;
    for (int i : idx) xs.push_back(x[i]), fs.push_back(fx[i]);
    x = xs;
    fx = fs;
  };

  while (true) {
    order();
    VectorXd c = VectorXd::Zero(x[0].size());
    for (int i = 0; i < n; ++i) c += x[i];
    c /= n;
    const VectorXd xr = box(c + (c - x[n]));
    double fr;
    if (!eval(xr, fr)) break;
    if (fx[0] <= fr && fr < fx[n - 1]) {
      x[n] = xr, fx[n] = fr;
      continue;
    }
    if (fr < fx[0]) {
      const VectorXd xe = box(c + 2.0 * (xr - c));
      double fe;
      if (!eval(xe, fe)) break;
      if (fe < fx[0]) x[n] = xe, fx[n] = fe;
      else x[n] = xr, fx[n] = fr;
      continue;
    }
    const VectorXd xc = box(c + 0.5 * (x[n] - c));
    double fc;
    if (!eval(xc, fc)) break;
    if (fc < fx[n]) {
      x[n] = xc, fx[n] = fc;
      continue;
    }
    bool stop = false;
    for (int i = 1; i <= n && !stop; ++i) {
      const VectorXd xs = box(x[0] + 0.5 * (x[i] - x[0]));
      double fs;
      stop = !eval(xs, fs);
      if (!stop) x[i] = xs, fx[i] = fs;
    }
    if (stop) break;
  }
  order();
  tr.best = x[0];
  tr.best_value = fx[0];
  return tr;
}

}  // namespace goodhart::oracle
