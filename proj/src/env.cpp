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
#include "goodhart/env.hpp"

#include <string>

#include "goodhart/policy.hpp"

namespace goodhart {

GoodhartSpec::GoodhartSpec(VectorXd gold_peak, VectorXd channel_weights, MatrixXd cross_terms,
                           std::vector<std::vector<int>> targets, int horizon, int vocab_size,
                           std::uint64_t reference_policy_seed, double reference_scale)
    : peak_(std::move(gold_peak)),
      weights_(std::move(channel_weights)),
      cross_(std::move(cross_terms)),
      targets_(std::move(targets)),
      horizon_(horizon),
      vocab_(vocab_size),
      reference_seed_(reference_policy_seed),
      reference_scale_(reference_scale) {
  const Eigen::Index n = peak_.size();
  if (n < 1) throw ConfigError("env: need at least one channel");
  if (horizon_ < 1) throw ConfigError("env: horizon must be >= 1");
  if (vocab_ < 2) throw ConfigError("env: vocab must be >= 2");
  if (reference_scale_ < 0) throw ConfigError("env: reference scale must be >= 0");
  if (weights_.size() != n) throw ConfigError("env: weights length != channels");
  if ((weights_.array() <= 0).any()) throw ConfigError("env: weights must be positive");
  if (cross_.size() == 0) cross_ = MatrixXd::Zero(n, n);
  if (cross_.rows() != n || cross_.cols() != n) throw ConfigError("env: cross must be N x N");
  if ((cross_ - cross_.transpose()).norm() > 1e-12)
    throw ConfigError("env: cross must be symmetric");
  if (static_cast<Eigen::Index>(targets_.size()) != n)
    throw ConfigError("env: one target set per channel required");

  membership_ = MatrixXd::Zero(vocab_, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    if (targets_[i].empty()) throw ConfigError("env: empty target set for channel " + std::to_string(i + 1));
    for (int tok : targets_[i]) {
      if (tok < 0 || tok >= vocab_)
        throw ConfigError("env: target token " + std::to_string(tok) + " outside vocab");
      membership_(tok, i) = 1.0;
    }
  }

  Eigen::LLT<MatrixXd> llt(quadratic_form());
  if (llt.info() != Eigen::Success) throw ConfigError("env: gold quadratic form is not positive definite");
}

GoodhartSpec GoodhartSpec::sequence_default() {
  VectorXd peak(2), w(2);
  peak << 0.23, 0.48;
  w << 4.0, 4.0;
  return GoodhartSpec(peak, w, MatrixXd::Zero(2, 2), {{0, 1, 2}, {0, 1, 3, 4, 5}}, 8, 16, 0, 0.1);
}

GoodhartSpec GoodhartSpec::bandit_default() {
  GoodhartSpec s = sequence_default();
  s.horizon_ = 1;
  return s;
}

MatrixXd GoodhartSpec::quadratic_form() const {
  MatrixXd q = 0.5 * cross_;
  q.diagonal() = weights_;
  return q;
}

double GoodhartSpec::gold(const Eigen::Ref<const VectorXd>& v) const {
  require_same_length(v.size(), peak_.size(), "gold");
  const VectorXd d = v - peak_;
  double g = 1.0;
  for (Eigen::Index i = 0; i < d.size(); ++i) {
    g -= weights_(i) * d(i) * d(i);
    for (Eigen::Index j = i + 1; j < d.size(); ++j) g -= cross_(i, j) * d(i) * d(j);
  }
  return g;
}

GoodhartSpec GoodhartSpec::with_cross(const MatrixXd& cross) const {
  return GoodhartSpec(peak_, weights_, cross, targets_, horizon_, vocab_, reference_seed_,
                      reference_scale_);
}

GoodhartSpec GoodhartSpec::with_peak(const VectorXd& peak) const {
  return GoodhartSpec(peak, weights_, cross_, targets_, horizon_, vocab_, reference_seed_,
                      reference_scale_);
}

Episode reset(const GoodhartSpec& /*env*/, std::uint64_t seed) { return Episode{EnvState{}, Rng(seed)}; }

StepResult step(const GoodhartSpec& env, const EnvState& state, int action) {
  if (state.step_index >= env.horizon())
    throw EpisodeComplete("step at step_index " + std::to_string(state.step_index) +
                          " of horizon " + std::to_string(env.horizon()));
  if (action < 0 || action >= env.vocab_size())
    throw InvalidAction("action " + std::to_string(action) + " outside vocab of size " +
                        std::to_string(env.vocab_size()));
  StepResult out;
  out.state = state;
  out.state.tokens.push_back(action);
  out.state.step_index = state.step_index + 1;
  out.reward.channels = env.membership().row(action).transpose();
  out.done = out.state.step_index == env.horizon();
  return out;
}

VectorXd episode_values(const GoodhartSpec& env, const std::vector<int>& tokens) {
  VectorXd v = VectorXd::Zero(env.num_channels());
  if (tokens.empty()) return v;
  for (int tok : tokens) v += env.membership().row(tok).transpose();
  return v / static_cast<double>(tokens.size());
}

GoldEstimate gold_probe(const GoodhartSpec& env, const SoftmaxPolicy<double>& policy,
                        int num_episodes, std::uint64_t seed) {
  if (num_episodes < 1) throw ConfigError("gold_eval: num_episodes must be >= 1");
  VectorXd sum = VectorXd::Zero(env.num_channels());
  for (int e = 0; e < num_episodes; ++e) {
    Episode ep = reset(env, derive_seed(seed, static_cast<std::uint64_t>(e)));
    bool done = false;
    while (!done) {
      const int a = policy.act(ep.state, ep.rng).first;
      StepResult r = step(env, ep.state, a);
      sum += r.reward.channels;
      ep.state = std::move(r.state);
      done = r.done;
    }
  }
  GoldEstimate est;
  est.channel_values = sum / (static_cast<double>(num_episodes) * env.horizon());
  est.value = env.gold(est.channel_values);
  return est;
}

double gold_eval(const GoodhartSpec& env, const SoftmaxPolicy<double>& policy, int num_episodes,
                 std::uint64_t seed) {
  return gold_probe(env, policy, num_episodes, seed).value;
}

VectorXd proxy_point_truth(const GoodhartSpec& env) { return env.gold_peak(); }

}  // namespace goodhart
