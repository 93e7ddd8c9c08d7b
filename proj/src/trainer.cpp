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
#include "goodhart/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "goodhart/advantage.hpp"

namespace goodhart {

namespace {

constexpr std::uint64_t kRolloutStream = 1;
constexpr std::uint64_t kShuffleStream = 2;

bool all_finite(const MatrixXd& m) { return m.allFinite(); }

}  // namespace

const char* to_string(MethodKind k) {
  switch (k) {
    case MethodKind::ppo_no_kl: return "ppo_no_kl";
    case MethodKind::ppo: return "ppo";
    case MethodKind::ppo_sat: return "ppo_sat";
    case MethodKind::mu_ppo: return "mu_ppo";
    case MethodKind::all_ppo: return "all_ppo";
    case MethodKind::xi_ppo: return "xi_ppo";
  }
  return "?";
}

MethodKind method_kind_from_string(const std::string& s) {
  for (MethodKind k : {MethodKind::ppo_no_kl, MethodKind::ppo, MethodKind::ppo_sat, MethodKind::mu_ppo,
                       MethodKind::all_ppo, MethodKind::xi_ppo}) {
    if (s == to_string(k)) return k;
  }
  throw ConfigError("unknown method '" + s +
                    "' (expected ppo_no_kl, ppo, ppo_sat, mu_ppo, all_ppo or xi_ppo)");
}

// ---------------------------------------------------------------- MethodSpec

MethodSpec MethodSpec::make(MethodKind kind, const GoodhartSpec& env) {
  MethodSpec m;
  m.kind = kind;
  const int n = env.num_channels();
  if (kind == MethodKind::all_ppo) {
    // Uniform 1/N keeps alpha_i (N - 1) < 1, so a saturated multiplier can
    // still push its channel back below the bound.
    m.fixed_weights = VectorXd::Constant(n, 1.0 / n);
  } else if (m.needs_weights()) {
    if (n == 2) {
      m.fixed_weights = (VectorXd(2) << 0.5, 1.0).finished();
    } else {
      m.fixed_weights = VectorXd::Ones(n);
    }
  }
  if (m.needs_thresholds()) m.thresholds = env.gold_peak();
  return m;
}

MethodSpec MethodSpec::single_channel(const GoodhartSpec& env, int channel) {
  if (channel < 0 || channel >= env.num_channels())
    throw IndexOutOfRange("single_channel: channel " + std::to_string(channel));
  MethodSpec m;
  m.kind = MethodKind::ppo_no_kl;
  m.fixed_weights = VectorXd::Zero(env.num_channels());
  m.fixed_weights(channel) = 1.0;
  return m;
}

bool MethodSpec::constrained() const {
  return kind == MethodKind::mu_ppo || kind == MethodKind::all_ppo || kind == MethodKind::xi_ppo;
}

bool MethodSpec::needs_thresholds() const { return constrained() || kind == MethodKind::ppo_sat; }

bool MethodSpec::needs_weights() const {
  return kind == MethodKind::ppo_no_kl || kind == MethodKind::ppo || kind == MethodKind::ppo_sat ||
         kind == MethodKind::all_ppo;
}

bool MethodSpec::uses_kl_penalty() const {
  return kind == MethodKind::ppo || kind == MethodKind::ppo_sat || kind == MethodKind::all_ppo;
}

ConstraintMode MethodSpec::constraint_mode() const {
  switch (kind) {
    case MethodKind::all_ppo: return ConstraintMode::inequality_le;
    case MethodKind::xi_ppo: return ConstraintMode::equality;
    default: return ConstraintMode::inequality_ge;
  }
}

void MethodSpec::validate(int num_channels) const {
  const std::string name = to_string(kind);
  if (needs_weights() && fixed_weights.size() != num_channels)
    throw ConfigError(name + ": fixed_weights must have " + std::to_string(num_channels) + " entries");
  if (needs_thresholds() && thresholds.size() != num_channels)
    throw ConfigError(name + ": thresholds must have " + std::to_string(num_channels) + " entries");
  if (!needs_thresholds() && thresholds.size() != 0)
    throw ConfigError(name + ": thresholds given for an unconstrained method");
  if (uses_kl_penalty()) {
    if (!(kl_target > 0)) throw ConfigError(name + ": kl_target must be > 0");
    if (!(kl_coef_init > 0)) throw ConfigError(name + ": kl_coef_init must be > 0");
    if (!(kl_lr > 0) || kl_lr * 0.2 >= 1.0) throw ConfigError(name + ": kl_lr must be in (0, 5)");
  }
}

// --------------------------------------------------------------- TrainConfig

int TrainConfig::num_updates() const {
  return static_cast<int>((total_steps + steps_per_update - 1) / steps_per_update);
}

int TrainConfig::episodes_per_update(int horizon) const { return (steps_per_update + horizon - 1) / horizon; }

void TrainConfig::validate() const {
  if (steps_per_update <= 0) throw ConfigError("train: steps_per_update must be > 0");
  if (total_steps <= 0) throw ConfigError("train: total_steps must be > 0");
  if (batch_size <= 0 || batch_size > steps_per_update)
    throw ConfigError("train: batch_size must be in [1, steps_per_update]");
  if (epochs_per_update <= 0) throw ConfigError("train: epochs_per_update must be > 0");
  if (!(learning_rate > 0)) throw ConfigError("train: learning_rate must be > 0");
  if (!(value_learning_rate > 0)) throw ConfigError("train: value_learning_rate must be > 0");
  if (!(multiplier_momentum >= 0 && multiplier_momentum < 1))
    throw ConfigError("train: multiplier_momentum must be in [0, 1)");
  if (!(gamma >= 0 && gamma < 1)) throw ConfigError("train: gamma must be in [0, 1)");
  if (!(gae_lambda >= 0 && gae_lambda <= 1)) throw ConfigError("train: gae_lambda must be in [0, 1]");
  if (!(clip_ratio > 0 && clip_ratio < 1)) throw ConfigError("train: clip_ratio must be in (0, 1)");
  if (probe_every <= 0) throw ConfigError("train: probe_every must be > 0");
  if (probe_episodes <= 0) throw ConfigError("train: probe_episodes must be > 0");
  if (top_k < 0) throw ConfigError("train: top_k must be >= 0");
  if ((value_coefficients.array() < 0).any()) throw ConfigError("train: value coefficients must be >= 0");
}

VectorXd default_value_coefficients(MethodKind kind, int num_channels) {
  VectorXd c = VectorXd::Constant(num_channels + 1, 0.5);
  if (kind == MethodKind::mu_ppo || kind == MethodKind::xi_ppo) c(0) = 0.2;
  return c;
}

const RunRecord* RunLog::last_probe() const {
  for (auto it = records.rbegin(); it != records.rend(); ++it)
    if (it->has_probe()) return &*it;
  return nullptr;
}

// ------------------------------------------------------------------- rewards

double build_task_reward(const MethodSpec& method, const RewardVector& reward, double log_ratio,
                         double alpha_kl) {
  const VectorXd& r = reward.channels;
  switch (method.kind) {
    case MethodKind::mu_ppo:
    case MethodKind::xi_ppo:
      return -log_ratio;
    case MethodKind::ppo_no_kl:
      require_same_length(method.fixed_weights.size(), r.size(), "task reward weights");
      return method.fixed_weights.dot(r);
    case MethodKind::ppo:
    case MethodKind::all_ppo:
      require_same_length(method.fixed_weights.size(), r.size(), "task reward weights");
      return method.fixed_weights.dot(r) - alpha_kl * log_ratio;
    case MethodKind::ppo_sat: {
      require_same_length(method.fixed_weights.size(), r.size(), "task reward weights");
      require_same_length(method.thresholds.size(), r.size(), "task reward thresholds");
      const double sat = -method.fixed_weights.dot((r - method.thresholds).array().square().matrix());
      return sat - alpha_kl * log_ratio;
    }
  }
  return 0.0;
}

double build_task_reward(const MethodSpec& method, const RewardVector& reward,
                         const SoftmaxPolicy<double>& policy, const ReferencePolicy<double>& reference,
                         const EnvState& state, int action, double alpha_kl) {
  const double log_ratio = -kl_reward(policy, reference, state, action);
  return build_task_reward(method, reward, log_ratio, alpha_kl);
}

// -------------------------------------------------------------------- losses

LossAndGrad ppo_surrogate(const MatrixXd& features, const VectorXi& actions,
                          const SoftmaxPolicy<double>& policy, const VectorXd& old_log_probs,
                          const VectorXd& advantages, double epsilon) {
  const Eigen::Index n = actions.size();
  require_same_length(features.cols(), n, "ppo_surrogate features");
  require_same_length(old_log_probs.size(), n, "ppo_surrogate log probs");
  require_same_length(advantages.size(), n, "ppo_surrogate advantages");
  LossAndGrad out;
  out.gradient = MatrixXd::Zero(policy.weights().rows(), policy.weights().cols());
  if (n == 0) return out;
  const double inv_n = 1.0 / static_cast<double>(n);
  for (Eigen::Index s = 0; s < n; ++s) {
    const VectorXd phi = features.col(s);
    const int a = actions(s);
    const double adv = advantages(s);
    const double ratio = std::exp(policy.log_prob(phi, a) - old_log_probs(s));
    const double unclipped = ratio * adv;
    const double clipped = std::clamp(ratio, 1.0 - epsilon, 1.0 + epsilon) * adv;
    out.loss -= std::min(unclipped, clipped) * inv_n;
    // The clipped branch is constant in the weights.
    if (unclipped <= clipped) out.gradient -= (inv_n * adv * ratio) * policy.grad_log_prob(phi, a);
  }
  return out;
}

ValueLoss value_loss(const SampleBatch& batch, const ValueHeads<double>& heads, double gamma) {
  const Eigen::Index n = batch.size();
  const int h = heads.num_heads();
  require_same_length(batch.rewards.cols(), h, "value_loss heads");
  ValueLoss out;
  out.losses = VectorXd::Zero(h);
  out.gradients = MatrixXd::Zero(heads.weights().rows(), h);
  if (n == 0) return out;
  const MatrixXd v = batch.features.transpose() * heads.weights();            // S x H
  const MatrixXd v_next = batch.next_features.transpose() * heads.weights();  // S x H
  const double inv_n = 1.0 / static_cast<double>(n);
  for (Eigen::Index s = 0; s < n; ++s) {
    const double cont = 1.0 - batch.terminal(s);
    for (int i = 0; i < h; ++i) {
      const double delta = batch.rewards(s, i) + gamma * cont * v_next(s, i) - v(s, i);
      out.losses(i) += 0.5 * delta * delta * inv_n;
      out.gradients.col(i) -= (delta * inv_n) * batch.features.col(s);
    }
  }
  return out;
}

double kl_coef_update(double alpha_kl, double measured_kl, double theta_kl, double eta_kl) {
  const double e = std::clamp((measured_kl - theta_kl) / theta_kl, -0.2, 0.2);
  return alpha_kl * (1.0 + eta_kl * e);
}

// ------------------------------------------------------------------- Trainer

Trainer::Trainer(GoodhartSpec env, MethodSpec method, TrainConfig config, std::uint64_t seed)
    : env_(std::move(env)),
      method_(std::move(method)),
      config_(std::move(config)),
      features_(FeatureMap::for_env(env_)),
      policy_(SoftmaxPolicy<double>::random(features_, env_.vocab_size(), env_.reference_policy_seed(),
                                            env_.reference_scale(), config_.top_k)),
      reference_(policy_),
      heads_(features_.dim(), env_.num_channels() + 1),
      alpha_kl_(method_.kl_coef_init),
      stream_seed_(derive_seed(seed, kRolloutStream)),
      rng_(stream_seed_) {
  method_.validate(env_.num_channels());
  config_.validate();
  const int n = env_.num_channels();
  multipliers_ = LagrangeState<double>(n, method_.constraint_mode(), config_.effective_multiplier_lr(),
                                       config_.multiplier_momentum, config_.dual_gradient);
  value_coefficients_ = config_.value_coefficients.size() == 0
                            ? default_value_coefficients(method_.kind, n)
                            : config_.value_coefficients;
  if (value_coefficients_.size() != n + 1)
    throw ConfigError("train: value_coefficients must have N+1 entries");
  if (!method_.uses_kl_penalty()) alpha_kl_ = 0.0;
  log_.method = method_.kind;
  log_.num_channels = n;
  log_.thresholds = method_.thresholds;
}

void Trainer::set_thresholds(const VectorXd& thresholds) {
  require_same_length(thresholds.size(), env_.num_channels(), "set_thresholds");
  method_.thresholds = thresholds;
  log_.thresholds = thresholds;
}

TrainerState Trainer::state() const {
  TrainerState st;
  st.policy_weights = policy_.weights();
  st.head_weights = heads_.weights();
  st.raw = multipliers_.raw;
  st.momentum_buffer = multipliers_.momentum_buffer;
  st.alpha_kl = alpha_kl_;
  st.env_steps = env_steps_;
  st.round = round_;
  st.dual_index = dual_index_;
  return st;
}

void Trainer::restore(const TrainerState& st) {
  if (st.policy_weights.rows() != policy_.weights().rows() || st.policy_weights.cols() != policy_.weights().cols())
    throw LengthMismatch("restore: policy weights shape");
  if (st.head_weights.rows() != heads_.weights().rows() || st.head_weights.cols() != heads_.weights().cols())
    throw LengthMismatch("restore: value head shape");
  require_same_length(st.raw.size(), multipliers_.raw.size(), "restore: multipliers");
  require_same_length(st.momentum_buffer.size(), multipliers_.raw.size(), "restore: momentum buffer");
  policy_.weights() = st.policy_weights;
  heads_.weights() = st.head_weights;
  multipliers_.raw = st.raw;
  multipliers_.momentum_buffer = st.momentum_buffer;
  alpha_kl_ = st.alpha_kl;
  env_steps_ = st.env_steps;
  round_ = st.round;
  dual_index_ = st.dual_index;
}

GoldEstimate Trainer::probe(std::uint64_t tag) const {
  return gold_probe(env_, policy_, config_.probe_episodes, derive_seed(config_.probe_seed, tag));
}

RunRecord Trainer::update_round(bool force_probe) {
  ++round_;
  // one stream per round, so a restored trainer replays the same rounds
  rng_ = Rng(derive_seed(stream_seed_, static_cast<std::uint64_t>(round_)));
  const int n = env_.num_channels();
  const int heads = n + 1;
  const int horizon = env_.horizon();
  const int episodes = config_.episodes_per_update(horizon);
  const long samples = static_cast<long>(episodes) * horizon;
  const int fdim = features_.dim();

  // ---- rollout into a fresh buffer
  SampleBatch buf;
  buf.features.resize(fdim, samples);
  buf.next_features.resize(fdim, samples);
  buf.actions.resize(samples);
  buf.old_log_probs.resize(samples);
  buf.terminal = VectorXd::Zero(samples);
  buf.rewards.resize(samples, heads);
  VectorXd channel_sum = VectorXd::Zero(n);
  double kl_sum = 0.0;

  for (int e = 0; e < episodes; ++e) {
    EnvState state;
    VectorXd phi = features_(state);
    for (int t = 0; t < horizon; ++t) {
      const long s = static_cast<long>(e) * horizon + t;
      const auto [action, logp] = policy_.act(phi, rng_);
      const double log_ratio = logp - reference_.log_prob(phi, action);
      StepResult res = step(env_, state, action);
      res.reward.task = build_task_reward(method_, res.reward, log_ratio, alpha_kl_);
      const VectorXd next_phi = features_(res.state);
      buf.features.col(s) = phi;
      buf.next_features.col(s) = next_phi;
      buf.actions(s) = action;
      buf.old_log_probs(s) = logp;
      buf.terminal(s) = res.done ? 1.0 : 0.0;
      buf.rewards(s, 0) = res.reward.task;
      buf.rewards.row(s).tail(n) = res.reward.channels.transpose();
      channel_sum += res.reward.channels;
      kl_sum += log_ratio;
      state = std::move(res.state);
      phi = next_phi;
    }
  }
  env_steps_ += samples;

  // ---- per-head deltas, GAE and normalized rewards-to-go
  const MatrixXd values = buf.features.transpose() * heads_.weights();  // S x H
  MatrixXd advantages(samples, heads);
  MatrixXd measured(samples, n);  // rewards-to-go / remaining discount mass
  for (int e = 0; e < episodes; ++e) {
    const long off = static_cast<long>(e) * horizon;
    for (int i = 0; i < heads; ++i) {
      const VectorXd r = buf.rewards.col(i).segment(off, horizon);
      const VectorXd v = values.col(i).segment(off, horizon);
      advantages.col(i).segment(off, horizon) =
          gae(compute_deltas(r, v, 0.0, config_.gamma), config_.gamma, config_.gae_lambda);
      if (i > 0) {
        const VectorXd ones = VectorXd::Ones(horizon);
        measured.col(i - 1).segment(off, horizon) =
            rewards_to_go(r, config_.gamma).cwiseQuotient(rewards_to_go(ones, config_.gamma));
      }
    }
  }

  // ---- minibatch epochs
  RunRecord rec;
  rec.step = round_;
  rec.violation = VectorXd::Zero(n);
  rec.value_losses = VectorXd::Zero(heads);
  long minibatches = 0;
  long dual_updates = 0;
  std::vector<long> order(samples);
  std::iota(order.begin(), order.end(), 0L);
  const int bsz = config_.batch_size;

  for (int epoch = 0; epoch < config_.epochs_per_update; ++epoch) {
    rng_.shuffle(order);
    for (long start = 0; start < samples; start += bsz) {
      const long m = std::min<long>(bsz, samples - start);
      SampleBatch mb;
      mb.features.resize(fdim, m);
      mb.next_features.resize(fdim, m);
      mb.actions.resize(m);
      mb.old_log_probs.resize(m);
      mb.terminal.resize(m);
      mb.rewards.resize(m, heads);
      MatrixXd mb_adv(m, heads);
      MatrixXd mb_measured(m, n);
      for (long j = 0; j < m; ++j) {
        const long s = order[start + j];
        mb.features.col(j) = buf.features.col(s);
        mb.next_features.col(j) = buf.next_features.col(s);
        mb.actions(j) = buf.actions(s);
        mb.old_log_probs(j) = buf.old_log_probs(s);
        mb.terminal(j) = buf.terminal(s);
        mb.rewards.row(j) = buf.rewards.row(s);
        mb_adv.row(j) = advantages.row(s);
        mb_measured.row(j) = measured.row(s);
      }

      const VectorXd mixed =
          method_.constrained() ? mix_advantages(mb_adv, multipliers_) : VectorXd(mb_adv.col(0));
      const LossAndGrad pol = ppo_surrogate(mb.features, mb.actions, policy_, mb.old_log_probs, mixed,
                                            config_.clip_ratio);
      const ValueLoss val = value_loss(mb, heads_, config_.gamma);

      if (!std::isfinite(pol.loss) || !val.losses.allFinite() || !all_finite(pol.gradient)) {
        log_.aborted = true;
        log_.abort_reason = "non-finite loss at round " + std::to_string(round_) + ", epoch " +
                            std::to_string(epoch) + " (policy loss " + std::to_string(pol.loss) + ")";
        throw NumericalAbort(log_.abort_reason);
      }

      policy_.weights() -= config_.learning_rate * pol.gradient;
      heads_.weights() -= config_.value_learning_rate * (val.gradients * value_coefficients_.asDiagonal());
      rec.policy_loss += pol.loss;
      rec.value_losses += val.losses;
      ++minibatches;

      if (method_.constrained()) {
        const VectorXd v_hat = mb_measured.colwise().mean().transpose();
        const VectorXd viol = violation<double>(multipliers_.mode, method_.thresholds, v_hat);
        multipliers_ = update(multipliers_, violation_grad(multipliers_, method_.thresholds, v_hat));
        rec.violation += viol;
        ++dual_updates;
        log_.dual_steps.push_back(DualStep{round_, dual_index_++, multipliers_.raw, squash(multipliers_), viol});
      }
    }
  }
  rec.policy_loss /= static_cast<double>(minibatches);
  rec.value_losses /= static_cast<double>(minibatches);
  if (dual_updates > 0) rec.violation /= static_cast<double>(dual_updates);

  rec.env_steps = env_steps_;
  rec.channel_values = channel_sum / static_cast<double>(samples);
  rec.kl = kl_sum / static_cast<double>(episodes);
  rec.raw = multipliers_.raw;
  rec.weights = method_.constrained() ? squash(multipliers_) : VectorXd::Zero(n);
  rec.alpha_kl = alpha_kl_;
  if (method_.uses_kl_penalty())
    alpha_kl_ = kl_coef_update(alpha_kl_, rec.kl, method_.kl_target, method_.kl_lr);

  rec.probe_values = VectorXd::Constant(n, std::numeric_limits<double>::quiet_NaN());
  if (force_probe || round_ % config_.probe_every == 0) {
    const GoldEstimate g = probe(static_cast<std::uint64_t>(round_));
    rec.gold = g.value;
    rec.probe_values = g.channel_values;
  }
  log_.records.push_back(rec);
  return rec;
}

RunLog train_run(const MethodSpec& method, const TrainConfig& config, const GoodhartSpec& env,
                 std::uint64_t seed) {
  Trainer trainer(env, method, config, seed);
  const int k = config.num_updates();
  try {
    for (int i = 1; i <= k; ++i) trainer.update_round(i == k);
  } catch (const NumericalAbort&) {
    // log already carries the diagnostic
  }
  return trainer.log();
}

}  // namespace goodhart
