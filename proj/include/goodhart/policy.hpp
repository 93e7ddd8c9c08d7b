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

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <utility>
#include <vector>

#include "goodhart/env.hpp"
#include "goodhart/rng.hpp"
#include "goodhart/types.hpp"

namespace goodhart {

/// Bias, normalized token-count histogram, normalized step index.
struct FeatureMap {
  int vocab = 0;
  int horizon = 1;

  int dim() const { return vocab + 2; }

  template <typename Scalar = double>
  Vec<Scalar> operator()(const EnvState& state) const {
    Vec<Scalar> phi = Vec<Scalar>::Zero(dim());
    const Scalar inv_t = Scalar(1) / Scalar(horizon);
    phi(0) = Scalar(1);
    for (int tok : state.tokens) phi(1 + tok) += inv_t;
    phi(vocab + 1) = Scalar(state.step_index) * inv_t;
    return phi;
  }

  static FeatureMap for_env(const GoodhartSpec& env) { return {env.vocab_size(), env.horizon()}; }
};

/**
 * Linear-softmax categorical policy, logits = W' phi(s).
 *
 * With top_k set, both sampling and log_prob use the distribution
 * renormalized over the k largest logits (ties go to the lower index);
 * excluded actions have log_prob -inf.
 */
template <typename Scalar>
class SoftmaxPolicy {
public:
  using Vector = Vec<Scalar>;
  using Matrix = Mat<Scalar>;

  SoftmaxPolicy() = default;
  SoftmaxPolicy(FeatureMap features, int num_actions, int top_k = 0)
      : features_(features), weights_(Matrix::Zero(features.dim(), num_actions)), top_k_(top_k) {}

  /// Gaussian-initialized weights, the stand-in for a pretrained model.
  static SoftmaxPolicy random(FeatureMap features, int num_actions, std::uint64_t seed,
                              Scalar scale, int top_k = 0) {
    SoftmaxPolicy p(features, num_actions, top_k);
    Rng rng(seed);
    for (Eigen::Index j = 0; j < p.weights_.cols(); ++j)
      for (Eigen::Index i = 0; i < p.weights_.rows(); ++i)
        p.weights_(i, j) = scale * static_cast<Scalar>(rng.normal());
    return p;
  }

  const FeatureMap& features() const { return features_; }
  int num_actions() const { return static_cast<int>(weights_.cols()); }
  int top_k() const { return top_k_; }
  void set_top_k(int k) { top_k_ = k; }

  const Matrix& weights() const { return weights_; }
  Matrix& weights() { return weights_; }

  Vector featurize(const EnvState& s) const { return features_.template operator()<Scalar>(s); }

  Vector logits(const Vector& phi) const { return weights_.transpose() * phi; }

  /// Membership mask of the top-k support; all true when top_k is unset.
  std::vector<bool> support(const Vector& z) const {
    const int a = num_actions();
    std::vector<bool> keep(a, true);
    if (top_k_ <= 0 || top_k_ >= a) return keep;
    std::vector<int> order(a);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int l, int r) { return z(l) > z(r); });
    std::fill(keep.begin(), keep.end(), false);
    for (int i = 0; i < top_k_; ++i) keep[order[i]] = true;
    return keep;
  }

  /// Action probabilities (zero outside the top-k support).
  Vector probs(const Vector& phi) const {
    const Vector z = logits(phi);
    const auto keep = support(z);
    Scalar zmax = -std::numeric_limits<Scalar>::infinity();
    for (int i = 0; i < num_actions(); ++i)
      if (keep[i]) zmax = std::max(zmax, z(i));
    Vector p(num_actions());
    Scalar total = 0;
    for (int i = 0; i < num_actions(); ++i) {
      p(i) = keep[i] ? std::exp(z(i) - zmax) : Scalar(0);
      total += p(i);
    }
    return p / total;
  }

  Scalar log_prob(const Vector& phi, int action) const {
    check_action(action);
    const Vector z = logits(phi);
    const auto keep = support(z);
    if (!keep[action]) return -std::numeric_limits<Scalar>::infinity();
    Scalar zmax = -std::numeric_limits<Scalar>::infinity();
    for (int i = 0; i < num_actions(); ++i)
      if (keep[i]) zmax = std::max(zmax, z(i));
    Scalar total = 0;
    for (int i = 0; i < num_actions(); ++i)
      if (keep[i]) total += std::exp(z(i) - zmax);
    return z(action) - zmax - std::log(total);
  }

  Scalar log_prob(const EnvState& s, int action) const { return log_prob(featurize(s), action); }

  /// Inverse-CDF sample; returns (action, log_prob).
  std::pair<int, Scalar> act(const Vector& phi, Rng& rng) const {
    const Vector p = probs(phi);
    const double u = rng.uniform();
    double acc = 0.0;
    int chosen = -1;
    for (int i = 0; i < num_actions(); ++i) {
      if (p(i) <= Scalar(0)) continue;
      acc += static_cast<double>(p(i));
      chosen = i;
      if (u < acc) break;
    }
    return {chosen, std::log(p(chosen))};
  }

  std::pair<int, Scalar> act(const EnvState& s, Rng& rng) const { return act(featurize(s), rng); }

  /// d log pi(a|s) / dW = phi (onehot(a) - pi)'.
  Matrix grad_log_prob(const Vector& phi, int action) const {
    check_action(action);
    Vector diff = -probs(phi);
    diff(action) += Scalar(1);
    return phi * diff.transpose();
  }

  Matrix grad_log_prob(const EnvState& s, int action) const {
    return grad_log_prob(featurize(s), action);
  }

private:
  void check_action(int action) const {
    if (action < 0 || action >= num_actions())
      throw InvalidAction("action " + std::to_string(action) + " outside [0, " +
                          std::to_string(num_actions()) + ")");
  }

  FeatureMap features_{};
  Matrix weights_;
  int top_k_ = 0;
};

/// Frozen copy of the initial policy.
template <typename Scalar>
class ReferencePolicy {
public:
  explicit ReferencePolicy(SoftmaxPolicy<Scalar> policy) : policy_(std::move(policy)) {}
  const SoftmaxPolicy<Scalar>& policy() const { return policy_; }
  Scalar log_prob(const Vec<Scalar>& phi, int action) const { return policy_.log_prob(phi, action); }

private:
  SoftmaxPolicy<Scalar> policy_;
};

/// Sampled-action KL reward, -(log pi(a|s) - log pi0(a|s)).
template <typename Scalar>
Scalar kl_reward(const SoftmaxPolicy<Scalar>& policy, const ReferencePolicy<Scalar>& reference,
                 const Vec<Scalar>& phi, int action) {
  return -(policy.log_prob(phi, action) - reference.log_prob(phi, action));
}

template <typename Scalar>
Scalar kl_reward(const SoftmaxPolicy<Scalar>& policy, const ReferencePolicy<Scalar>& reference,
                 const EnvState& s, int action) {
  return kl_reward(policy, reference, policy.featurize(s), action);
}

/// Exact KL(pi(.|s) || pi0(.|s)); diagnostics only.
template <typename Scalar>
Scalar categorical_kl(const SoftmaxPolicy<Scalar>& policy, const ReferencePolicy<Scalar>& reference,
                      const Vec<Scalar>& phi) {
  const Vec<Scalar> p = policy.probs(phi);
  const Vec<Scalar> q = reference.policy().probs(phi);
  Scalar kl = 0;
  for (Eigen::Index i = 0; i < p.size(); ++i)
    if (p(i) > Scalar(0)) kl += p(i) * (std::log(p(i)) - std::log(q(i)));
  return kl;
}

/// One linear value head per reward index 0..N (0 is the task reward).
template <typename Scalar>
class ValueHeads {
public:
  using Vector = Vec<Scalar>;

  ValueHeads() = default;
  ValueHeads(int feature_dim, int num_heads) : weights_(Mat<Scalar>::Zero(feature_dim, num_heads)) {}

  int num_heads() const { return static_cast<int>(weights_.cols()); }
  const Mat<Scalar>& weights() const { return weights_; }
  Mat<Scalar>& weights() { return weights_; }

  Scalar predict(int head, const Vector& phi) const {
    check(head);
    return weights_.col(head).dot(phi);
  }

  /// Gradient of the prediction with respect to that head's weights.
  Vector grad(int head, const Vector& phi) const {
    check(head);
    return phi;
  }

private:
  void check(int head) const {
    if (head < 0 || head >= num_heads())
      throw IndexOutOfRange("value head " + std::to_string(head) + " outside [0, " +
                            std::to_string(num_heads()) + ")");
  }

  Mat<Scalar> weights_;
};

}  // namespace goodhart
