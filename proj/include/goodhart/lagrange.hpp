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
#include <string>

#include "goodhart/types.hpp"

namespace goodhart {

enum class ConstraintMode {
  inequality_ge,  ///< v_i >= theta_i, sigmoid weights
  inequality_le,  ///< v_i <= theta_i, sigmoid weights
  equality        ///< v_i == theta_i, tanh weights
};

/// How the dual gradient passes through the squash.
enum class DualGradient {
  chain_rule,       ///< violation * squash'(raw)
  squash_weighted,  ///< violation * squash(raw)
  unscaled          ///< violation
};

inline const char* to_string(ConstraintMode m) {
  switch (m) {
    case ConstraintMode::inequality_ge: return "inequality_ge";
    case ConstraintMode::inequality_le: return "inequality_le";
    case ConstraintMode::equality: return "equality";
  }
  return "?";
}

/// +1 when a larger multiplier should push the channel up, -1 for upper bounds.
inline int constraint_sign(ConstraintMode m) { return m == ConstraintMode::inequality_le ? -1 : 1; }

template <typename Scalar>
struct LagrangeState {
  Vec<Scalar> raw;
  ConstraintMode mode = ConstraintMode::inequality_ge;
  Scalar learning_rate = Scalar(0.1);
  Scalar momentum = Scalar(0.1);
  Vec<Scalar> momentum_buffer;
  DualGradient gradient = DualGradient::chain_rule;

  LagrangeState() = default;
  LagrangeState(int n, ConstraintMode m, Scalar lr, Scalar mom,
                DualGradient g = DualGradient::chain_rule)
      : raw(Vec<Scalar>::Zero(n)),
        mode(m),
        learning_rate(lr),
        momentum(mom),
        momentum_buffer(Vec<Scalar>::Zero(n)),
        gradient(g) {
    if (!(lr > Scalar(0))) throw ConfigError("lagrange: learning rate must be > 0");
    if (!(mom >= Scalar(0) && mom < Scalar(1))) throw ConfigError("lagrange: momentum must be in [0, 1)");
  }

  int size() const { return static_cast<int>(raw.size()); }
};

/// Elementwise logistic (inequality modes) or tanh (equality).
template <typename Scalar>
Vec<Scalar> squash(const LagrangeState<Scalar>& s) {
  if (s.mode == ConstraintMode::equality) return s.raw.array().tanh().matrix();
  return (Scalar(1) / (Scalar(1) + (-s.raw.array()).exp())).matrix();
}

template <typename Scalar>
Vec<Scalar> squash_derivative(const LagrangeState<Scalar>& s) {
  const Vec<Scalar> w = squash(s);
  if (s.mode == ConstraintMode::equality) return (Scalar(1) - w.array().square()).matrix();
  return (w.array() * (Scalar(1) - w.array())).matrix();
}

/// Signed constraint violation before the squash chain rule: theta - v for
/// >= and ==, v - theta for <=. Positive means "raise the multiplier".
template <typename Scalar, typename DerivedT, typename DerivedV>
Vec<Scalar> violation(ConstraintMode mode, const Eigen::MatrixBase<DerivedT>& thresholds,
                      const Eigen::MatrixBase<DerivedV>& values) {
  require_same_length(thresholds.size(), values.size(), "violation");
  Vec<Scalar> v = (thresholds - values).template cast<Scalar>();
  if (mode == ConstraintMode::inequality_le) v = -v;
  return v;
}

/// Ascent direction on the raw multipliers.
template <typename Scalar, typename DerivedT, typename DerivedV>
Vec<Scalar> violation_grad(const LagrangeState<Scalar>& s, const Eigen::MatrixBase<DerivedT>& thresholds,
                           const Eigen::MatrixBase<DerivedV>& values) {
  require_same_length(thresholds.size(), s.raw.size(), "violation_grad");
  const Vec<Scalar> viol = violation<Scalar>(s.mode, thresholds, values);
  switch (s.gradient) {
    case DualGradient::chain_rule: return viol.cwiseProduct(squash_derivative(s));
    case DualGradient::squash_weighted: return viol.cwiseProduct(squash(s));
    case DualGradient::unscaled: return viol;
  }
  return viol;
}

/// Momentum SGD ascent: buffer <- m * buffer + grad; raw <- raw + lr * buffer.
template <typename Scalar, typename Derived>
LagrangeState<Scalar> update(LagrangeState<Scalar> s, const Eigen::MatrixBase<Derived>& grad) {
  require_same_length(grad.size(), s.raw.size(), "lagrange update");
  s.momentum_buffer = s.momentum * s.momentum_buffer + grad;
  s.raw += s.learning_rate * s.momentum_buffer;
  return s;
}

}  // namespace goodhart
