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

#include "goodhart/lagrange.hpp"
#include "goodhart/types.hpp"

namespace goodhart {

/// delta_t = r_t + gamma * v_{t+1} - v_t, with v_T = bootstrap (0 when terminal).
template <typename DerivedR, typename DerivedV>
Vec<typename DerivedR::Scalar> compute_deltas(const Eigen::MatrixBase<DerivedR>& rewards,
                                              const Eigen::MatrixBase<DerivedV>& values,
                                              typename DerivedR::Scalar bootstrap_value,
                                              typename DerivedR::Scalar gamma) {
  using Scalar = typename DerivedR::Scalar;
  require_same_length(rewards.size(), values.size(), "compute_deltas");
  if (!(gamma >= Scalar(0) && gamma < Scalar(1))) throw ConfigError("compute_deltas: gamma must be in [0, 1)");
  const Eigen::Index t_max = rewards.size();
  Vec<Scalar> d(t_max);
  for (Eigen::Index t = 0; t < t_max; ++t) {
    const Scalar next = t + 1 < t_max ? Scalar(values(t + 1)) : bootstrap_value;
    d(t) = rewards(t) + gamma * next - values(t);
  }
  return d;
}

/// Generalized advantage estimation, A_t = delta_t + gamma * lambda * A_{t+1}.
template <typename Derived>
Vec<typename Derived::Scalar> gae(const Eigen::MatrixBase<Derived>& deltas,
                                  typename Derived::Scalar gamma, typename Derived::Scalar lambda) {
  using Scalar = typename Derived::Scalar;
  if (!(lambda >= Scalar(0) && lambda <= Scalar(1))) throw ConfigError("gae: lambda must be in [0, 1]");
  const Scalar decay = gamma * lambda;
  Vec<Scalar> adv(deltas.size());
  Scalar running = 0;
  for (Eigen::Index t = deltas.size() - 1; t >= 0; --t) {
    running = deltas(t) + decay * running;
    adv(t) = running;
  }
  return adv;
}

/// G_t = sum_{k >= t} gamma^(k - t) r_k.
template <typename Derived>
Vec<typename Derived::Scalar> rewards_to_go(const Eigen::MatrixBase<Derived>& rewards,
                                            typename Derived::Scalar gamma) {
  using Scalar = typename Derived::Scalar;
  Vec<Scalar> g(rewards.size());
  Scalar running = 0;
  for (Eigen::Index t = rewards.size() - 1; t >= 0; --t) {
    running = rewards(t) + gamma * running;
    g(t) = running;
  }
  return g;
}

/// Task weight N - sum(w) followed by the N channel weights.
template <typename Scalar>
Vec<Scalar> mixing_weights(const LagrangeState<Scalar>& multipliers) {
  const Vec<Scalar> w = squash(multipliers);
  Vec<Scalar> out(w.size() + 1);
  out(0) = Scalar(w.size()) - w.sum();
  out.tail(w.size()) = w;
  return out;
}

/**
 * Lagrange-weighted advantage, one row per sample and one column per reward
 * index (column 0 is the task):
 *
 *   A_mix = (N - sum_i w_i) A_0 + sum_i w_i s A_i
 *
 * w = squash(raw); s = -1 for upper-bound constraints, which are handled as
 * lower bounds on the negated channel, and +1 otherwise.
 */
template <typename Derived, typename Scalar>
Vec<Scalar> mix_advantages(const Eigen::MatrixBase<Derived>& advantages,
                           const LagrangeState<Scalar>& multipliers) {
  if (advantages.cols() != multipliers.size() + 1)
    throw LengthMismatch("mix_advantages: " + std::to_string(advantages.cols()) +
                         " advantage columns for " + std::to_string(multipliers.size()) + " multipliers");
  Vec<Scalar> w = mixing_weights(multipliers);
  w.tail(multipliers.size()) *= Scalar(constraint_sign(multipliers.mode));
  return advantages.template cast<Scalar>() * w;
}

}  // namespace goodhart
