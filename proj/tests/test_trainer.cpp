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
#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <sstream>

#include "goodhart/io.hpp"
#include "goodhart/trainer.hpp"

using namespace goodhart;

namespace {

VectorXd vec2(double a, double b) { return (VectorXd(2) << a, b).finished(); }

std::vector<std::string> csv_lines(const RunLog& log) {
  std::ostringstream os;
  write_runlog_csv(os, log);
  std::vector<std::string> lines;
  std::istringstream is(os.str());
  for (std::string l; std::getline(is, l);) lines.push_back(l);
  return lines;
}

TrainConfig short_config(long rounds) {
  TrainConfig c;
  c.steps_per_update = 256;
  c.batch_size = 32;
  c.total_steps = rounds * c.steps_per_update;
  c.probe_every = 2;
  c.probe_episodes = 32;
  return c;
}

struct SurrogateCase {
  SoftmaxPolicy<double> policy;
  MatrixXd features;
  VectorXi actions;
  VectorXd old_log_probs;
  VectorXd advantages;
};

SurrogateCase surrogate_case(std::uint64_t seed) {
  const auto env = GoodhartSpec::sequence_default();
  const FeatureMap fm = FeatureMap::for_env(env);
  SurrogateCase c{SoftmaxPolicy<double>::random(fm, env.vocab_size(), seed, 0.5), {}, {}, {}, {}};
  Rng rng(seed + 100);
  const int n = 24;
  c.features.resize(fm.dim(), n);
  c.actions.resize(n);
  c.old_log_probs.resize(n);
  c.advantages.resize(n);
  EnvState s;
  for (int i = 0; i < n; ++i) {
    if (s.step_index == env.horizon()) s = EnvState{};
    const VectorXd phi = fm(s);
    const int a = static_cast<int>(rng.index(static_cast<std::size_t>(env.vocab_size())));
    c.features.col(i) = phi;
    c.actions(i) = a;
    // old policy differs a little so some ratios leave the clip band
    c.old_log_probs(i) = c.policy.log_prob(phi, a) + rng.uniform(-0.4, 0.4);
    c.advantages(i) = rng.normal();
    s = step(env, s, a).state;
  }
  return c;
}

}  // namespace

TEST(KlCoef, Examples) {
  EXPECT_EQ(kl_coef_update(0.3, 0.5, 0.5, 0.1), 0.3);
  EXPECT_NEAR(kl_coef_update(0.2, 1.0, 0.5, 0.1), 0.204, 1e-15);
  EXPECT_NEAR(kl_coef_update(0.2, 0.0, 0.5, 0.1), 0.196, 1e-15);
}

TEST(KlCoef, BitExactFormula) {
  Rng rng(2);
  for (int i = 0; i < 1000; ++i) {
    const double a = rng.uniform(0.01, 2.0), kl = rng.uniform(0.0, 3.0), th = rng.uniform(0.05, 1.0),
                 eta = rng.uniform(0.0, 1.0);
    const double e = std::min(std::max((kl - th) / th, -0.2), 0.2);
    const double expected = a * (1.0 + eta * e);
    EXPECT_EQ(kl_coef_update(a, kl, th, eta), expected);
  }
}

TEST(TaskReward, Examples) {
  const auto env = GoodhartSpec::sequence_default();
  MethodSpec sat = MethodSpec::make(MethodKind::ppo_sat, env);
  sat.fixed_weights = vec2(1, 1);
  sat.thresholds = vec2(0.23, 0.48);
  EXPECT_EQ(build_task_reward(sat, RewardVector{0.0, vec2(0.23, 0.48)}, 0.0, 0.2), 0.0);
  EXPECT_NEAR(build_task_reward(sat, RewardVector{0.0, vec2(0.33, 0.48)}, 0.0, 0.2), -0.01, 1e-15);

  const MethodSpec mu = MethodSpec::make(MethodKind::mu_ppo, env);
  const auto pi = SoftmaxPolicy<double>::random(FeatureMap::for_env(env), env.vocab_size(), 1, 0.3);
  const ReferencePolicy<double> ref(pi);
  for (int a = 0; a < env.vocab_size(); ++a)
    EXPECT_EQ(build_task_reward(mu, RewardVector{0.0, vec2(1, 0)}, pi, ref, EnvState{}, a, 0.2), 0.0);

  const MethodSpec plain = MethodSpec::make(MethodKind::ppo, env);  // alpha (0.5, 1)
  EXPECT_DOUBLE_EQ(build_task_reward(plain, RewardVector{0.0, vec2(1, 1)}, 0.5, 0.2), 1.5 - 0.1);
}

TEST(MethodSpec, Defaults) {
  const auto env = GoodhartSpec::sequence_default();
  EXPECT_EQ(MethodSpec::make(MethodKind::ppo, env).fixed_weights, vec2(0.5, 1.0));
  EXPECT_EQ(MethodSpec::make(MethodKind::all_ppo, env).fixed_weights, vec2(0.5, 0.5));
  EXPECT_EQ(MethodSpec::make(MethodKind::xi_ppo, env).thresholds, env.gold_peak());
  EXPECT_EQ(MethodSpec::make(MethodKind::all_ppo, env).constraint_mode(), ConstraintMode::inequality_le);
  EXPECT_EQ(MethodSpec::make(MethodKind::xi_ppo, env).constraint_mode(), ConstraintMode::equality);
  MethodSpec bad = MethodSpec::make(MethodKind::xi_ppo, env);
  bad.thresholds = VectorXd::Zero(3);
  EXPECT_THROW(bad.validate(2), ConfigError);
  EXPECT_THROW(method_kind_from_string("ppo2"), ConfigError);
}

TEST(Surrogate, RatioOneGivesMeanAdvantage) {
  SurrogateCase c = surrogate_case(5);
  for (Eigen::Index i = 0; i < c.actions.size(); ++i)
    c.old_log_probs(i) = c.policy.log_prob(VectorXd(c.features.col(i)), c.actions(i));
  const LossAndGrad lg = ppo_surrogate(c.features, c.actions, c.policy, c.old_log_probs, c.advantages, 0.2);
  EXPECT_NEAR(lg.loss, -c.advantages.mean(), 1e-12);
}

TEST(Surrogate, ClippedSampleHasNoGradient) {
  SurrogateCase c = surrogate_case(6);
  const VectorXd phi = c.features.col(0);
  const int a = c.actions(0);
  VectorXd old(1);
  old(0) = c.policy.log_prob(phi, a) - std::log(1.4);  // ratio 1 + 2 eps
  const LossAndGrad lg =
      ppo_surrogate(c.features.leftCols(1), c.actions.head(1), c.policy, old, VectorXd::Ones(1), 0.2);
  EXPECT_EQ(lg.gradient.cwiseAbs().maxCoeff(), 0.0);
  EXPECT_NEAR(lg.loss, -1.2, 1e-12);
}

TEST(Surrogate, GradientMatchesFiniteDifference) {
  for (std::uint64_t seed : {1, 2, 3}) {
    SurrogateCase c = surrogate_case(seed);
    const double eps = 0.2;
    const LossAndGrad lg = ppo_surrogate(c.features, c.actions, c.policy, c.old_log_probs, c.advantages, eps);
    const double h = 1e-6;
    MatrixXd fd(lg.gradient.rows(), lg.gradient.cols());
    for (Eigen::Index i = 0; i < fd.rows(); ++i) {
      for (Eigen::Index j = 0; j < fd.cols(); ++j) {
        auto p = c.policy;
        p.weights()(i, j) += h;
        const double up = ppo_surrogate(c.features, c.actions, p, c.old_log_probs, c.advantages, eps).loss;
        p.weights()(i, j) -= 2 * h;
        const double dn = ppo_surrogate(c.features, c.actions, p, c.old_log_probs, c.advantages, eps).loss;
        fd(i, j) = (up - dn) / (2 * h);
      }
    }
    const double rel = (lg.gradient - fd).norm() / std::max(fd.norm(), 1e-12);
    EXPECT_LE(rel, 1e-4) << "seed " << seed;
  }
}

TEST(ValueLoss, Examples) {
  SampleBatch b;
  b.features = MatrixXd::Ones(1, 1);
  b.next_features = MatrixXd::Zero(1, 1);
  b.actions = VectorXi::Zero(1);
  b.old_log_probs = VectorXd::Zero(1);
  b.terminal = VectorXd::Ones(1);
  b.rewards = MatrixXd::Constant(1, 1, 2.0);
  ValueHeads<double> h(1, 1);
  EXPECT_DOUBLE_EQ(value_loss(b, h, 0.99).losses(0), 2.0);
  h.weights()(0, 0) = 2.0;  // perfect
  const ValueLoss perfect = value_loss(b, h, 0.99);
  EXPECT_EQ(perfect.losses(0), 0.0);
  EXPECT_EQ(perfect.gradients(0, 0), 0.0);
}

TEST(ValueLoss, GradientMatchesFiniteDifference) {
  // Oracle: the semi-gradient treats the bootstrapped next value as a constant.
  const auto env = GoodhartSpec::sequence_default();
  const FeatureMap fm = FeatureMap::for_env(env);
  Rng rng(9);
  const int n = 16, heads = 3;
  SampleBatch b;
  b.features.resize(fm.dim(), n);
  b.next_features.resize(fm.dim(), n);
  b.actions = VectorXi::Zero(n);
  b.old_log_probs = VectorXd::Zero(n);
  b.terminal.resize(n);
  b.rewards.resize(n, heads);
  EnvState s;
  for (int i = 0; i < n; ++i) {
    if (s.step_index == env.horizon()) s = EnvState{};
    const StepResult r = step(env, s, static_cast<int>(rng.index(16)));
    b.features.col(i) = fm(s);
    b.next_features.col(i) = fm(r.state);
    b.terminal(i) = r.done ? 1.0 : 0.0;
    for (int k = 0; k < heads; ++k) b.rewards(i, k) = rng.normal();
    s = r.state;
  }
  ValueHeads<double> h(fm.dim(), heads);
  for (Eigen::Index i = 0; i < h.weights().size(); ++i) h.weights()(i) = rng.normal() * 0.3;
  const double gamma = 0.99;
  const MatrixXd targets_next = b.next_features.transpose() * h.weights();
  auto fixed_loss = [&](const MatrixXd& w, int head) {
    double loss = 0.0;
    for (int i = 0; i < n; ++i) {
      const double d = b.rewards(i, head) + gamma * (1 - b.terminal(i)) * targets_next(i, head) -
                       b.features.col(i).dot(w.col(head));
      loss += 0.5 * d * d / n;
    }
    return loss;
  };
  const ValueLoss vl = value_loss(b, h, gamma);
  const double step_h = 1e-6;
  for (int k = 0; k < heads; ++k) {
    EXPECT_NEAR(vl.losses(k), fixed_loss(h.weights(), k), 1e-12);
    VectorXd fd(fm.dim());
    for (int i = 0; i < fm.dim(); ++i) {
      MatrixXd w = h.weights();
      w(i, k) += step_h;
      const double up = fixed_loss(w, k);
      w(i, k) -= 2 * step_h;
      fd(i) = (up - fixed_loss(w, k)) / (2 * step_h);
    }
    EXPECT_LE((vl.gradients.col(k) - fd).norm() / std::max(fd.norm(), 1e-12), 1e-4);
  }
}

TEST(Trainer, SingleRound) {
  TrainConfig c = short_config(1);
  const RunLog log = train_run(MethodSpec::make(MethodKind::ppo, GoodhartSpec::sequence_default()), c,
                               GoodhartSpec::sequence_default(), 1);
  ASSERT_EQ(log.records.size(), 1u);
  EXPECT_TRUE(log.records[0].has_probe());
}

TEST(Trainer, Deterministic) {
  const auto env = GoodhartSpec::sequence_default();
  for (MethodKind k : {MethodKind::ppo, MethodKind::xi_ppo, MethodKind::all_ppo}) {
    const MethodSpec m = MethodSpec::make(k, env);
    const RunLog a = train_run(m, short_config(6), env, 42);
    const RunLog b = train_run(m, short_config(6), env, 42);
    EXPECT_EQ(csv_lines(a), csv_lines(b));
    const RunLog c = train_run(m, short_config(6), env, 43);
    EXPECT_NE(csv_lines(a), csv_lines(c));
  }
}

TEST(Trainer, StepAccounting) {
  const auto env = GoodhartSpec::sequence_default();
  const TrainConfig c = short_config(4);
  const RunLog log = train_run(MethodSpec::make(MethodKind::ppo, env), c, env, 3);
  ASSERT_EQ(log.records.size(), 4u);
  for (std::size_t k = 0; k < 4; ++k) {
    EXPECT_EQ(log.records[k].step, static_cast<int>(k + 1));
    EXPECT_EQ(log.records[k].env_steps, static_cast<long>(k + 1) * c.steps_per_update);
  }
  EXPECT_FALSE(log.records[0].has_probe());
  EXPECT_TRUE(log.records[1].has_probe());
}

TEST(Trainer, KlCoefficientStaysPositive) {
  const auto env = GoodhartSpec::sequence_default();
  const RunLog log = train_run(MethodSpec::make(MethodKind::ppo, env), short_config(20), env, 4);
  for (const RunRecord& r : log.records) EXPECT_GT(r.alpha_kl, 0.0);
}

TEST(Trainer, MultiplierLogReplays) {
  const auto env = GoodhartSpec::sequence_default();
  TrainConfig c = short_config(5);
  for (MethodKind k : {MethodKind::mu_ppo, MethodKind::all_ppo, MethodKind::xi_ppo}) {
    const MethodSpec m = MethodSpec::make(k, env);
    const RunLog log = train_run(m, c, env, 8);
    LagrangeState<double> s(2, m.constraint_mode(), c.effective_multiplier_lr(), c.multiplier_momentum,
                            c.dual_gradient);
    ASSERT_FALSE(log.dual_steps.empty());
    for (const DualStep& d : log.dual_steps) {
      // violation_grad from the logged violation, chain rule through the squash
      const VectorXd grad = d.violation.cwiseProduct(squash_derivative(s));
      s = update(s, grad);
      EXPECT_LE((s.raw - d.raw).cwiseAbs().maxCoeff(), 1e-12);
      EXPECT_LE((squash(s) - d.weight).cwiseAbs().maxCoeff(), 1e-12);
    }
  }
}

TEST(Trainer, ResumeMatchesUninterrupted) {
  const auto env = GoodhartSpec::sequence_default();
  const MethodSpec m = MethodSpec::make(MethodKind::xi_ppo, env);
  const TrainConfig c = short_config(6);
  Trainer full(env, m, c, 11);
  for (int i = 0; i < 6; ++i) full.update_round();

  Trainer first(env, m, c, 11);
  for (int i = 0; i < 3; ++i) first.update_round();
  std::stringstream ckpt;
  write_checkpoint(ckpt, first.state(), env.num_channels());
  Trainer resumed(env, m, c, 11);
  resumed.restore(read_checkpoint(ckpt));
  for (int i = 0; i < 3; ++i) resumed.update_round();

  const auto a = csv_lines(full.log());
  const auto b = csv_lines(resumed.log());
  ASSERT_EQ(b.size(), 4u);
  for (std::size_t i = 1; i < 4; ++i) EXPECT_EQ(a[i + 3], b[i]);
  EXPECT_EQ(full.policy().weights(), resumed.policy().weights());
}

TEST(Trainer, RestoreRejectsWrongShape) {
  const auto env = GoodhartSpec::sequence_default();
  Trainer t(env, MethodSpec::make(MethodKind::ppo, env), short_config(1), 1);
  TrainerState st = t.state();
  st.raw = VectorXd::Zero(3);
  EXPECT_THROW(t.restore(st), LengthMismatch);
}

TEST(Trainer, XiOnBanditHitsThresholds) {
  const auto env = GoodhartSpec::bandit_default();
  MethodSpec m = MethodSpec::make(MethodKind::xi_ppo, env);
  m.thresholds = vec2(0.3, 0.5);
  TrainConfig c;
  c.probe_every = 10;
  // Mean over seeds of the final probe evaluation.
  VectorXd mean = VectorXd::Zero(2);
  for (std::uint64_t seed : {1, 2, 3}) {
    const RunLog log = train_run(m, c, env, seed);
    ASSERT_FALSE(log.aborted);
    ASSERT_TRUE(log.records.back().has_probe());
    mean += log.records.back().probe_values / 3.0;
  }
  EXPECT_LE((mean - m.thresholds).cwiseAbs().maxCoeff(), 0.05) << "mean=" << mean.transpose();
}

TEST(TrainConfig, Validation) {
  TrainConfig c;
  c.batch_size = c.steps_per_update + 1;
  EXPECT_THROW(c.validate(), ConfigError);
  c = TrainConfig{};
  c.gamma = 1.0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = TrainConfig{};
  EXPECT_EQ(c.effective_multiplier_lr(), 10 * c.learning_rate);
}
