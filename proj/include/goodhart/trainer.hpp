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

#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "goodhart/env.hpp"
#include "goodhart/lagrange.hpp"
#include "goodhart/policy.hpp"
#include "goodhart/types.hpp"

namespace goodhart {

enum class MethodKind { ppo_no_kl, ppo, ppo_sat, mu_ppo, all_ppo, xi_ppo };

const char* to_string(MethodKind k);
MethodKind method_kind_from_string(const std::string& s);

struct MethodSpec {
  MethodKind kind = MethodKind::ppo;
  VectorXd fixed_weights;  ///< alpha, for the reward-weighted objectives
  VectorXd thresholds;     ///< theta, for the constrained and SAT objectives
  double kl_target = 0.5;
  double kl_coef_init = 0.2;
  double kl_lr = 0.1;

  /// Defaults for an N-channel env: alpha = (0.5, 1.0) when N == 2 (ones
  /// otherwise), 1/N each for all_ppo; theta = env gold peak for methods
  /// that need one.
  static MethodSpec make(MethodKind kind, const GoodhartSpec& env);
  /// ppo_no_kl on channel `channel` alone (alpha = e_channel).
  static MethodSpec single_channel(const GoodhartSpec& env, int channel);

  bool constrained() const;        ///< mu_ppo, all_ppo, xi_ppo
  bool needs_thresholds() const;   ///< constrained or ppo_sat
  bool needs_weights() const;      ///< ppo_no_kl, ppo, ppo_sat, all_ppo
  bool uses_kl_penalty() const;    ///< ppo, ppo_sat, all_ppo
  ConstraintMode constraint_mode() const;

  /// Throws ConfigError naming the missing or malformed field.
  void validate(int num_channels) const;
};

struct TrainConfig {
  int steps_per_update = 1280;
  long total_steps = 128000;
  int batch_size = 64;
  int epochs_per_update = 5;
  double learning_rate = 0.005;
  double value_learning_rate = 0.05;
  double multiplier_lr = 0.0;  ///< <= 0 means 10 x learning_rate
  double multiplier_momentum = 0.1;
  DualGradient dual_gradient = DualGradient::chain_rule;
  double gamma = 0.99;
  double gae_lambda = 0.95;
  double clip_ratio = 0.2;
  VectorXd value_coefficients;  ///< N+1 entries; empty means method defaults
  int top_k = 20;
  int probe_every = 5;
  int probe_episodes = 256;
  std::uint64_t probe_seed = 12345;

  int num_updates() const;
  int episodes_per_update(int horizon) const;
  double effective_multiplier_lr() const { return multiplier_lr > 0 ? multiplier_lr : 10.0 * learning_rate; }
  void validate() const;
};

/// Per-head value-loss coefficients used when the config leaves them empty.
VectorXd default_value_coefficients(MethodKind kind, int num_channels);

struct RunRecord {
  int step = 0;          ///< update round k, 1-based
  long env_steps = 0;    ///< cumulative environment steps
  VectorXd channel_values;  ///< rollout-batch mean episode values
  double kl = 0.0;          ///< mean per-episode sampled log-ratio sum
  double gold = std::numeric_limits<double>::quiet_NaN();
  VectorXd probe_values;    ///< channel values measured by the gold probe
  VectorXd raw;
  VectorXd weights;
  VectorXd violation;       ///< mean over the round's multiplier updates
  double alpha_kl = 0.0;
  double policy_loss = 0.0;
  VectorXd value_losses;
  bool has_probe() const { return !std::isnan(gold); }
};

/// One multiplier update.
struct DualStep {
  int step = 0;       ///< update round
  long index = 0;     ///< global multiplier-update counter
  VectorXd raw;       ///< after the update
  VectorXd weight;    ///< squash(raw) after the update
  VectorXd violation; ///< pre-chain-rule violation fed to the update
};

struct RunLog {
  MethodKind method = MethodKind::ppo;
  int num_channels = 0;
  VectorXd thresholds;
  std::vector<RunRecord> records;
  std::vector<DualStep> dual_steps;
  bool aborted = false;
  std::string abort_reason;

  /// Last record carrying a gold probe, if any.
  const RunRecord* last_probe() const;
};

/// Task reward r_0 per method. `log_ratio` is log pi(a|s) - log pi0(a|s).
double build_task_reward(const MethodSpec& method, const RewardVector& reward, double log_ratio,
                         double alpha_kl);
double build_task_reward(const MethodSpec& method, const RewardVector& reward,
                         const SoftmaxPolicy<double>& policy, const ReferencePolicy<double>& reference,
                         const EnvState& state, int action, double alpha_kl);

/// Samples addressed by the surrogate and value losses.
struct SampleBatch {
  MatrixXd features;       ///< F x S, phi(s_t)
  MatrixXd next_features;  ///< F x S, phi(s_{t+1})
  VectorXi actions;
  VectorXd old_log_probs;
  VectorXd terminal;       ///< 1 where s_{t+1} is terminal
  MatrixXd rewards;        ///< S x (N+1), column 0 = task

  Eigen::Index size() const { return actions.size(); }
};

struct LossAndGrad {
  double loss = 0.0;
  MatrixXd gradient;
};

/// Clipped PPO surrogate, loss = -mean(min(rho A, clip(rho, 1-eps, 1+eps) A)).
LossAndGrad ppo_surrogate(const MatrixXd& features, const VectorXi& actions,
                          const SoftmaxPolicy<double>& policy, const VectorXd& old_log_probs,
                          const VectorXd& advantages, double epsilon);

struct ValueLoss {
  VectorXd losses;     ///< per head, mean of delta^2 / 2
  MatrixXd gradients;  ///< F x (N+1); bootstrapped next value held constant
};

ValueLoss value_loss(const SampleBatch& batch, const ValueHeads<double>& heads, double gamma);

/// alpha <- alpha (1 + eta clip((kl - target) / target, -0.2, 0.2)).
double kl_coef_update(double alpha_kl, double measured_kl, double theta_kl, double eta_kl);

/// Everything a resumed trainer needs besides its construction arguments.
struct TrainerState {
  MatrixXd policy_weights;
  MatrixXd head_weights;
  VectorXd raw;
  VectorXd momentum_buffer;
  double alpha_kl = 0.0;
  long env_steps = 0;
  int round = 0;
  long dual_index = 0;
};

/**
 * Owns one training run: policy, frozen reference, value heads, multipliers
 * and KL coefficient. Each update_round() is one outer iteration: collect a
 * fresh buffer, estimate advantages, run the minibatch epochs, drop the
 * buffer.
 */
class Trainer {
public:
  Trainer(GoodhartSpec env, MethodSpec method, TrainConfig config, std::uint64_t seed);

  /// One rollout + update round. Probes gold when due or when forced.
  RunRecord update_round(bool force_probe = false);

  GoldEstimate probe(std::uint64_t tag) const;

  TrainerState state() const;
  /// Loads weights, multipliers and counters; the log is left untouched.
  void restore(const TrainerState& st);

  /// Replaces the constraint thresholds, keeping every other piece of state.
  void set_thresholds(const VectorXd& thresholds);

  const GoodhartSpec& env() const { return env_; }
  const MethodSpec& method() const { return method_; }
  const TrainConfig& config() const { return config_; }
  const SoftmaxPolicy<double>& policy() const { return policy_; }
  SoftmaxPolicy<double>& policy() { return policy_; }
  const ReferencePolicy<double>& reference() const { return reference_; }
  const ValueHeads<double>& heads() const { return heads_; }
  ValueHeads<double>& heads() { return heads_; }
  const LagrangeState<double>& multipliers() const { return multipliers_; }
  double alpha_kl() const { return alpha_kl_; }
  long env_steps() const { return env_steps_; }
  int rounds() const { return round_; }
  const RunLog& log() const { return log_; }
  RunLog& log() { return log_; }

private:
  GoodhartSpec env_;
  MethodSpec method_;
  TrainConfig config_;
  FeatureMap features_;
  SoftmaxPolicy<double> policy_;
  ReferencePolicy<double> reference_;
  ValueHeads<double> heads_;
  LagrangeState<double> multipliers_;
  VectorXd value_coefficients_;
  double alpha_kl_;
  std::uint64_t stream_seed_;
  Rng rng_;
  long env_steps_ = 0;
  long dual_index_ = 0;
  int round_ = 0;
  RunLog log_;
};

/// Runs config.num_updates() rounds; the final round always probes gold.
/// A non-finite loss stops the run with log.aborted set.
RunLog train_run(const MethodSpec& method, const TrainConfig& config, const GoodhartSpec& env,
                 std::uint64_t seed);

}  // namespace goodhart
