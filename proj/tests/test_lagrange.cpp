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

#include <cmath>

#include "goodhart/lagrange.hpp"

using namespace goodhart;

namespace {

VectorXd scalar(double x) { return VectorXd::Constant(1, x); }

}  // namespace

TEST(Squash, Endpoints) {
  LagrangeState<double> ge(1, ConstraintMode::inequality_ge, 0.1, 0.1);
  EXPECT_EQ(squash(ge)(0), 0.5);
  LagrangeState<double> eq(1, ConstraintMode::equality, 0.1, 0.1);
  EXPECT_EQ(squash(eq)(0), 0.0);
  ge.raw(0) = 20;
  EXPECT_NEAR(squash(ge)(0), 1.0, 1e-8);
  ge.raw(0) = -20;
  EXPECT_NEAR(squash(ge)(0), 0.0, 1e-8);
}

TEST(Squash, StaysInOpenInterval) {
  for (double raw : {-30.0, -5.0, -0.1, 0.0, 0.3, 7.0, 30.0}) {
    LagrangeState<double> ge(1, ConstraintMode::inequality_ge, 0.1, 0.1);
    LagrangeState<double> eq(1, ConstraintMode::equality, 0.1, 0.1);
    ge.raw(0) = eq.raw(0) = raw;
    EXPECT_TRUE(squash(ge)(0) >= 0 && squash(ge)(0) <= 1);
    EXPECT_TRUE(squash(eq)(0) >= -1 && squash(eq)(0) <= 1);
  }
}

TEST(ViolationGrad, ZeroWhenSatisfied) {
  for (ConstraintMode m : {ConstraintMode::inequality_ge, ConstraintMode::inequality_le, ConstraintMode::equality}) {
    LagrangeState<double> s(1, m, 0.1, 0.1);
    EXPECT_EQ(violation_grad(s, scalar(0.48), scalar(0.48))(0), 0.0);
  }
}

TEST(ViolationGrad, GeBelowThresholdRaisesWeight) {
  LagrangeState<double> s(1, ConstraintMode::inequality_ge, 0.1, 0.1);
  EXPECT_NEAR(violation<double>(s.mode, scalar(0.48), scalar(0.30))(0), 0.18, 1e-15);
  const double before = squash(s)(0);
  s = update(s, violation_grad(s, scalar(0.48), scalar(0.30)));
  EXPECT_GT(squash(s)(0), before);
}

TEST(ViolationGrad, LeAboveThresholdRaisesWeight) {
  LagrangeState<double> s(1, ConstraintMode::inequality_le, 0.1, 0.1);
  EXPECT_NEAR(violation<double>(s.mode, scalar(0.23), scalar(0.30))(0), 0.07, 1e-15);
  const double before = squash(s)(0);
  s = update(s, violation_grad(s, scalar(0.23), scalar(0.30)));
  EXPECT_GT(squash(s)(0), before);
}

TEST(ViolationGrad, Variants) {
  LagrangeState<double> s(1, ConstraintMode::inequality_ge, 0.1, 0.1);
  s.raw(0) = 0.7;
  const double w = 1.0 / (1.0 + std::exp(-0.7));
  s.gradient = DualGradient::chain_rule;
  EXPECT_NEAR(violation_grad(s, scalar(0.5), scalar(0.3))(0), 0.2 * w * (1 - w), 1e-15);
  s.gradient = DualGradient::squash_weighted;
  EXPECT_NEAR(violation_grad(s, scalar(0.5), scalar(0.3))(0), 0.2 * w, 1e-15);
  s.gradient = DualGradient::unscaled;
  EXPECT_NEAR(violation_grad(s, scalar(0.5), scalar(0.3))(0), 0.2, 1e-15);
}

TEST(Update, ZeroGradNoOp) {
  LagrangeState<double> s(2, ConstraintMode::equality, 0.3, 0.1);
  s.raw << 0.4, -0.2;
  const auto t = update(s, VectorXd::Zero(2));
  EXPECT_EQ(t.raw, s.raw);
  EXPECT_EQ(t.momentum_buffer, s.momentum_buffer);
}

TEST(Update, PlainSgd) {
  LagrangeState<double> s(2, ConstraintMode::inequality_ge, 1.0, 0.0);
  const VectorXd g = (VectorXd(2) << 0.25, -1.5).finished();
  EXPECT_EQ(update(s, g).raw, g);
}

TEST(Update, MomentumClosedForm) {
  // buffer_k = g (1 - m^k) / (1 - m), raw_k = lr g sum_{j=1..k} (1 - m^j) / (1 - m)
  const double m = 0.1, lr = 0.05, g = 0.3;
  LagrangeState<double> s(1, ConstraintMode::inequality_ge, lr, m);
  double raw = 0.0;
  for (int k = 1; k <= 40; ++k) {
    s = update(s, scalar(g));
    const double buf = g * (1 - std::pow(m, k)) / (1 - m);
    raw += lr * buf;
    EXPECT_NEAR(s.momentum_buffer(0), buf, 1e-15);
    EXPECT_NEAR(s.raw(0), raw, 1e-13);
  }
  EXPECT_NEAR(s.momentum_buffer(0), g / (1 - m), 1e-15);
}

TEST(Update, MonotoneUnderPersistentViolation) {
  for (ConstraintMode mode : {ConstraintMode::inequality_ge, ConstraintMode::inequality_le, ConstraintMode::equality}) {
    LagrangeState<double> s(1, mode, 0.5, 0.0);
    // ge: below; le: above; eq: below -> weight grows each step
    const VectorXd measured = scalar(mode == ConstraintMode::inequality_le ? 0.6 : 0.2);
    double prev = squash(s)(0);
    for (int k = 0; k < 50; ++k) {
      s = update(s, violation_grad(s, scalar(0.4), measured));
      const double w = squash(s)(0);
      EXPECT_GT(w, prev);
      prev = w;
    }
  }
}

TEST(Update, SatisfiedIsNoOp) {
  LagrangeState<double> s(1, ConstraintMode::inequality_ge, 0.5, 0.1);
  s.raw(0) = 1.3;
  const auto t = update(s, violation_grad(s, scalar(0.4), scalar(0.4)));
  EXPECT_EQ(t.raw(0), 1.3);
}

TEST(Lagrange, RejectsBadHyperparameters) {
  EXPECT_THROW(LagrangeState<double>(1, ConstraintMode::equality, 0.0, 0.1), ConfigError);
  EXPECT_THROW(LagrangeState<double>(1, ConstraintMode::equality, 0.1, 1.0), ConfigError);
}
