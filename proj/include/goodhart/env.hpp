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
#include <vector>

#include "goodhart/rng.hpp"
#include "goodhart/types.hpp"

namespace goodhart {

template <typename Scalar>
class SoftmaxPolicy;

/**
 * Synthetic token environment with N proxy reward channels.
 *
 * Each step appends one token. Channel i pays 1 when the token belongs to
 * its target set and 0 otherwise, so the per-episode channel value (mean of
 * per-step rewards) lies in [0, 1]. Target sets may overlap, which couples
 * the channels the way correlated reward models are coupled.
 *
 * The held-out gold metric is the concave quadratic
 *
 *   g(v) = 1 - sum_i w_i (v_i - p_i)^2 - sum_{i<j} C_ij (v_i - p_i)(v_j - p_j)
 *
 * whose maximizer p (the proxy point) is known in closed form.
 */
class GoodhartSpec {
public:
  GoodhartSpec(VectorXd gold_peak, VectorXd channel_weights, MatrixXd cross_terms,
               std::vector<std::vector<int>> targets, int horizon, int vocab_size,
               std::uint64_t reference_policy_seed = 0, double reference_scale = 0.1);

  /// Two channels, horizon 8, vocabulary 16, peak (0.23, 0.48). Channel
  /// targets {0,1,2} and {0,1,3,4,5} share tokens 0 and 1.
  static GoodhartSpec sequence_default();
  /// Same channels with horizon 1.
  static GoodhartSpec bandit_default();

  int num_channels() const { return static_cast<int>(peak_.size()); }
  int horizon() const { return horizon_; }
  int vocab_size() const { return vocab_; }
  const VectorXd& gold_peak() const { return peak_; }
  const VectorXd& channel_weights() const { return weights_; }
  const MatrixXd& cross_terms() const { return cross_; }
  const std::vector<std::vector<int>>& targets() const { return targets_; }
  std::uint64_t reference_policy_seed() const { return reference_seed_; }
  double reference_scale() const { return reference_scale_; }

  /// Membership matrix (vocab x channels): 1 where token pays channel.
  const MatrixXd& membership() const { return membership_; }

  /// Quadratic form Q with g(v) = 1 - d'Qd, d = v - peak.
  MatrixXd quadratic_form() const;

  /// Gold metric evaluated at channel values v.
  double gold(const Eigen::Ref<const VectorXd>& v) const;

  GoodhartSpec with_cross(const MatrixXd& cross) const;
  GoodhartSpec with_peak(const VectorXd& peak) const;

private:
  VectorXd peak_;
  VectorXd weights_;
  MatrixXd cross_;
  std::vector<std::vector<int>> targets_;
  int horizon_;
  int vocab_;
  std::uint64_t reference_seed_;
  double reference_scale_;
  MatrixXd membership_;
};

struct EnvState {
  std::vector<int> tokens;
  int step_index = 0;
};

struct RewardVector {
  double task = 0.0;
  VectorXd channels;
};

struct StepResult {
  EnvState state;
  RewardVector reward;
  bool done = false;
};

/// Fresh episode. The rng is the episode's only source of randomness.
struct Episode {
  EnvState state;
  Rng rng;
};

Episode reset(const GoodhartSpec& env, std::uint64_t seed);

/// Appends `action`. Throws InvalidAction / EpisodeComplete.
StepResult step(const GoodhartSpec& env, const EnvState& state, int action);

/// Channel values (per-episode means) for a complete token sequence.
VectorXd episode_values(const GoodhartSpec& env, const std::vector<int>& tokens);

struct GoldEstimate {
  double value = 0.0;
  VectorXd channel_values;  ///< mean per-channel episode values
};

/// Rolls out `num_episodes` episodes and returns g at the estimated values.
GoldEstimate gold_probe(const GoodhartSpec& env, const SoftmaxPolicy<double>& policy,
                        int num_episodes, std::uint64_t seed);

double gold_eval(const GoodhartSpec& env, const SoftmaxPolicy<double>& policy, int num_episodes,
                 std::uint64_t seed);

/// Ground-truth argmax of g.
VectorXd proxy_point_truth(const GoodhartSpec& env);

}  // namespace goodhart
