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
#include <vector>

#include "goodhart/env.hpp"
#include "goodhart/rng.hpp"
#include "goodhart/trainer.hpp"
#include "goodhart/types.hpp"

namespace goodhart {

enum class NmPhase { initial, reflect, expand, contract, shrink, reperturb };

const char* to_string(NmPhase p);

struct Vertex {
  VectorXd theta;
  double score = 0.0;  ///< lower is better; the negated gold eval
  bool capped = false;
};

struct ThresholdSimplex {
  std::vector<Vertex> vertices;
  double alpha = 1.0;  ///< reflection
  double gamma = 2.0;  ///< expansion
  double rho = 0.5;    ///< contraction
  double sigma = 0.5;  ///< shrink
  bool degenerate = false;

  int dims() const { return vertices.empty() ? 0 : static_cast<int>(vertices.front().theta.size()); }
  /// Stable sort by score, best first.
  void sort();
  /// Centroid of every vertex but the last (the worst after sort()).
  VectorXd centroid() const;
  /// |det| of the edge matrix from vertex 0; proportional to the volume.
  double volume() const;
  /// Largest distance from the best vertex.
  double diameter() const;
};

/// base plus N+1 seeded uniform perturbations of +-scale relative per
/// coordinate, clipped to [0, 1]. Vertex 0 is perturbed too. Scores are unset.
/// With min_separation > 0 a vertex landing within that relative distance of
/// an earlier one (on every coordinate) is redrawn, up to a fixed number of
/// tries, so cached scores do not flatten the starting simplex.
ThresholdSimplex init_simplex(const VectorXd& base, Rng& rng, double scale = 0.2, double min_separation = 0.0);

struct Proposal {
  VectorXd theta;
  NmPhase phase = NmPhase::reflect;
};

/// Candidate for a given phase on a sorted simplex (pure geometry, no bounds).
/// For shrink, returns the image of vertex `shrink_index`.
Proposal nm_propose(const ThresholdSimplex& s, NmPhase phase, int shrink_index = 1);

/**
 * Ask/tell driver for the branch logic: reflect; accept when it lands between
 * the best and the second worst; expand when it beats the best (keeping the
 * expansion only if that also beats the best); otherwise contract toward the
 * worst and shrink if the contraction fails to beat it.
 *
 * Candidates are clamped to [lo, hi] before they are handed out; the clamped
 * point is what enters the simplex.
 */
class NelderMead {
public:
  NelderMead(ThresholdSimplex evaluated, VectorXd lo, VectorXd hi);

  Proposal ask();
  void tell(double score, bool capped = false);

  /// Replaces every vertex but the best after a volume collapse; the new
  /// vertices come back through ask() with phase `reperturb`.
  void reperturb(Rng& rng, double scale);

  const ThresholdSimplex& simplex() const { return simplex_; }
  bool pending() const { return pending_; }
  int proposals() const { return proposals_; }

private:
  enum class Stage { reflect, expand, contract, shrink, reperturb };

  VectorXd clamp(const VectorXd& x) const;
  void start_iteration();
  void queue_reevaluation(NmPhase phase);

  ThresholdSimplex simplex_;
  VectorXd lo_, hi_;
  Stage stage_ = Stage::reflect;
  bool pending_ = false;
  Proposal current_;
  Vertex reflected_;
  int refill_index_ = 0;
  int proposals_ = 0;
};

/// Thresholds already evaluated, matched within a relative tolerance.
class EvalCache {
public:
  explicit EvalCache(double relative_tolerance = 0.05) : tol_(relative_tolerance) {}

  struct Entry {
    VectorXd theta;
    double gold = 0.0;
    bool capped = false;
  };

  /// First entry with |theta_i - e_i| <= tol |e_i| for every i.
  const Entry* find(const VectorXd& theta) const;
  void insert(const VectorXd& theta, double gold, bool capped);
  std::size_t size() const { return entries_.size(); }

private:
  double tol_;
  std::vector<Entry> entries_;
};

struct NmOptions {
  double perturbation = 0.2;         ///< relative, for the initial simplex
  double budget_fraction = 0.125;    ///< per-evaluation cap as a share of the total
  double convergence_tolerance = 0.02;  ///< |v_i - theta_i| to count as reached
  double cache_tolerance = 0.05;
  double diameter_tolerance = 0.0;   ///< stop once the simplex is this small; 0 runs to budget
  double degeneracy_ratio = 1e-12;   ///< volume collapse, relative to the initial
  int max_proposals = 10000;
};

struct ThresholdEval {
  double gold = 0.0;
  VectorXd values;  ///< channel values at probe time (empty on cache hits)
  bool capped = false;
  bool cached = false;
  long steps = 0;
};

/**
 * Scores one threshold vector. On a cache hit no training happens. Otherwise
 * the trainer's thresholds are replaced and rounds run until every rollout
 * channel value is within `tolerance` of theta or `step_cap` steps are used;
 * gold is then probed wherever the policy is.
 */
ThresholdEval evaluate_thresholds(const VectorXd& theta, Trainer& trainer, EvalCache& cache, long step_cap,
                                  double tolerance, std::uint64_t probe_tag);

/// One row per vertex after every completed proposal.
struct SimplexRow {
  int iteration = 0;
  NmPhase phase = NmPhase::initial;
  int vertex = 0;
  VectorXd theta;
  double gold = 0.0;
  bool capped = false;
};

struct NmResult {
  VectorXd best_theta;
  double best_gold = 0.0;
  std::vector<SimplexRow> trajectory;
  RunLog log;
  int proposals = 0;
  long steps_used = 0;
  int evaluations = 0;
  int cache_hits = 0;
};

/// RL mode: xi-PPO from the reference policy, warm-started across
/// evaluations, with multipliers carried across threshold changes.
NmResult nm_search(const GoodhartSpec& env, const TrainConfig& config, long total_budget, std::uint64_t seed,
                   const NmOptions& options = {});

/// Direct-function mode: `objective` is maximized over [lo, hi] from a given
/// (unevaluated) simplex; each proposal costs one call.
NmResult nm_search_direct(const std::function<double(const VectorXd&)>& objective, ThresholdSimplex start,
                          const VectorXd& lo, const VectorXd& hi, int max_proposals, std::uint64_t seed,
                          const NmOptions& options = {});

}  // namespace goodhart
