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

#include "goodhart/neldermead.hpp"
#include "reference_nm.hpp"

using namespace goodhart;

namespace {

VectorXd vec2(double a, double b) { return (VectorXd(2) << a, b).finished(); }

ThresholdSimplex triangle() {
  ThresholdSimplex s;
  s.vertices = {Vertex{vec2(0, 0), 0.0}, Vertex{vec2(1, 0), 1.0}, Vertex{vec2(0, 1), 2.0}};
  return s;
}

double bowl(const VectorXd& v) { return 1.0 - (v(0) - 0.5) * (v(0) - 0.5) - (v(1) - 0.5) * (v(1) - 0.5); }

TrainConfig small_config() {
  TrainConfig c;
  c.steps_per_update = 256;
  c.batch_size = 32;
  c.total_steps = 256 * 10;
  c.probe_episodes = 32;
  return c;
}

}  // namespace

TEST(Propose, TriangleExamples) {
  const ThresholdSimplex s = triangle();
  EXPECT_EQ(s.centroid(), vec2(0.5, 0.0));
  EXPECT_EQ(nm_propose(s, NmPhase::reflect).theta, vec2(1, -1));
  EXPECT_EQ(nm_propose(s, NmPhase::expand).theta, vec2(1.5, -2));
  EXPECT_EQ(nm_propose(s, NmPhase::contract).theta, vec2(0.25, 0.5));
  EXPECT_EQ(nm_propose(s, NmPhase::shrink, 2).theta, vec2(0, 0.5));
}

TEST(InitSimplex, ZeroScaleIsDegenerate) {
  Rng rng(1);
  const ThresholdSimplex s = init_simplex(vec2(0.25, 0.25), rng, 0.0);
  ASSERT_EQ(s.vertices.size(), 3u);
  for (const Vertex& v : s.vertices) EXPECT_EQ(v.theta, vec2(0.25, 0.25));
  EXPECT_TRUE(s.degenerate);
}

TEST(InitSimplex, DefaultScaleBounds) {
  Rng rng(2);
  const ThresholdSimplex s = init_simplex(vec2(0.25, 0.25), rng);
  for (const Vertex& v : s.vertices) {
    EXPECT_TRUE((v.theta.array() >= 0.2).all() && (v.theta.array() <= 0.3).all());
  }
  EXPECT_FALSE(s.degenerate);
}

TEST(InitSimplex, Deterministic) {
  Rng a(3), b(3);
  const ThresholdSimplex s = init_simplex(vec2(0.4, 0.6), a), t = init_simplex(vec2(0.4, 0.6), b);
  for (std::size_t i = 0; i < s.vertices.size(); ++i) EXPECT_EQ(s.vertices[i].theta, t.vertices[i].theta);
}

TEST(InitSimplex, MinSeparation) {
  Rng rng(4);
  const ThresholdSimplex s = init_simplex(vec2(0.4, 0.6), rng, 0.2, 0.05);
  for (std::size_t i = 0; i < s.vertices.size(); ++i)
    for (std::size_t j = 0; j < i; ++j) {
      const auto& a = s.vertices[i].theta;
      const auto& b = s.vertices[j].theta;
      EXPECT_FALSE(((a - b).array().abs() <= 0.05 * b.array().abs()).all());
    }
}

TEST(Driver, MatchesReferenceTrace) {
  for (std::uint64_t seed : {1, 2, 3, 4, 5}) {
    Rng rng(seed);
    const ThresholdSimplex start = init_simplex(vec2(0.25, 0.25), rng, 0.2);
    const VectorXd lo = VectorXd::Zero(2), hi = VectorXd::Ones(2);

    std::vector<VectorXd> ours;
    auto f = [&](const VectorXd& v) {
      ours.push_back(v);
      return bowl(v);
    };
    const NmResult res = nm_search_direct(f, start, lo, hi, 60, seed);
    ours.erase(ours.begin(), ours.begin() + 3);  // initial vertices

    std::vector<VectorXd> init;
    for (const Vertex& v : start.vertices) init.push_back(v.theta);
    const auto ref =
        oracle::reference_nelder_mead([](const VectorXd& v) { return -bowl(v); }, init, lo, hi, 60);
    ASSERT_EQ(ours.size(), ref.evaluated.size()) << "seed " << seed;
    for (std::size_t i = 0; i < ours.size(); ++i) EXPECT_LE((ours[i] - ref.evaluated[i]).norm(), 1e-15);
    EXPECT_LE((res.best_theta - ref.best).norm(), 1e-15);
    EXPECT_LE((res.best_theta - vec2(0.5, 0.5)).cwiseAbs().maxCoeff(), 0.01) << "seed " << seed;
    EXPECT_LE(res.proposals, 60);
  }
}

TEST(Driver, AcceptanceStrictlyImproves) {
  Rng rng(9);
  ThresholdSimplex s = init_simplex(vec2(0.3, 0.7), rng);
  auto f = [](const VectorXd& v) { return -(std::sin(5 * v(0)) + std::cos(3 * v(1)) + v.squaredNorm()); };
  for (Vertex& v : s.vertices) v.score = -f(v.theta);
  NelderMead nm(s, VectorXd::Zero(2), VectorXd::Ones(2));
  double best = nm.simplex().vertices[0].score;
  for (int k = 0; k < 200; ++k) {
    const ThresholdSimplex before = nm.simplex();
    const Proposal p = nm.ask();
    nm.tell(-f(p.theta));
    if (nm.pending()) continue;
    ThresholdSimplex after = nm.simplex();
    after.sort();
    EXPECT_LE(after.vertices[0].score, best);
    best = after.vertices[0].score;
    if (p.phase == NmPhase::shrink) {
      // best vertex untouched by a shrink
      bool kept = false;
      for (const Vertex& v : after.vertices) kept = kept || v.theta == before.vertices[0].theta;
      EXPECT_TRUE(kept);
    }
  }
}

TEST(Driver, ReplacementBeatsWorst) {
  ThresholdSimplex s = triangle();
  s.vertices[0].theta = vec2(0.2, 0.2);
  s.vertices[1].theta = vec2(0.6, 0.2);
  s.vertices[2].theta = vec2(0.2, 0.6);
  NelderMead nm(s, VectorXd::Zero(2), VectorXd::Ones(2));
  const Proposal r = nm.ask();
  EXPECT_EQ(r.phase, NmPhase::reflect);
  EXPECT_EQ(nm.ask().theta, r.theta);  // idempotent while pending
  nm.tell(0.5);                        // between best and second worst: accept
  EXPECT_FALSE(nm.pending());
  double worst = -1e9;
  for (const Vertex& v : nm.simplex().vertices) worst = std::max(worst, v.score);
  EXPECT_EQ(worst, 1.0);
  EXPECT_THROW(nm.tell(0.0), ConfigError);
}

TEST(Driver, ExpansionKeptOnlyIfBeatsBest) {
  ThresholdSimplex s;
  s.vertices = {Vertex{vec2(0.2, 0.2), 0.0}, Vertex{vec2(0.6, 0.2), 1.0}, Vertex{vec2(0.2, 0.6), 2.0}};
  NelderMead nm(s, VectorXd::Constant(2, -10), VectorXd::Constant(2, 10));
  const Proposal r = nm.ask();
  nm.tell(-1.0);  // beats best -> try expansion
  const Proposal e = nm.ask();
  EXPECT_EQ(e.phase, NmPhase::expand);
  nm.tell(-0.5);  // worse than the reflection but still beats the best
  bool has_e = false;
  for (const Vertex& v : nm.simplex().vertices) has_e = has_e || v.theta == e.theta;
  EXPECT_TRUE(has_e);

  NelderMead nm2(s, VectorXd::Constant(2, -10), VectorXd::Constant(2, 10));
  const Proposal r2 = nm2.ask();
  nm2.tell(-1.0);
  nm2.ask();
  nm2.tell(0.5);  // expansion fails -> keep reflection
  bool has_r = false;
  for (const Vertex& v : nm2.simplex().vertices) has_r = has_r || v.theta == r2.theta;
  EXPECT_TRUE(has_r);
  (void)r;
}

TEST(Driver, ClampsToBox) {
  NelderMead nm(triangle(), VectorXd::Zero(2), VectorXd::Ones(2));
  EXPECT_EQ(nm.ask().theta, vec2(1, 0));
}

TEST(Cache, RelativeTolerance) {
  EvalCache cache(0.05);
  cache.insert(vec2(0.4, 0.2), 0.9, false);
  ASSERT_NE(cache.find(vec2(0.41, 0.205)), nullptr);
  EXPECT_EQ(cache.find(vec2(0.41, 0.205))->gold, 0.9);
  EXPECT_EQ(cache.find(vec2(0.43, 0.2)), nullptr);
  EXPECT_EQ(cache.find(vec2(0.4, 0.22)), nullptr);
}

TEST(Evaluate, CacheHitIsFree) {
  const auto env = GoodhartSpec::sequence_default();
  Trainer t(env, MethodSpec::make(MethodKind::xi_ppo, env), small_config(), 1);
  EvalCache cache;
  const ThresholdEval first = evaluate_thresholds(vec2(0.3, 0.4), t, cache, 256 * 3, 0.02, 99);
  EXPECT_GT(first.steps, 0);
  EXPECT_FALSE(first.cached);
  const long before = t.env_steps();
  const ThresholdEval second = evaluate_thresholds(vec2(0.305, 0.41), t, cache, 256 * 3, 0.02, 100);
  EXPECT_TRUE(second.cached);
  EXPECT_EQ(second.steps, 0);
  EXPECT_EQ(t.env_steps(), before);
  EXPECT_EQ(second.gold, first.gold);
  EXPECT_THROW(evaluate_thresholds(vec2(1.2, 0.4), t, cache, 256, 0.02, 101), ConfigError);
}

TEST(Evaluate, InfeasibleIsCapped) {
  // complementary channels: v1 + v2 = 1 for every sequence
  std::vector<int> a, b;
  for (int i = 0; i < 8; ++i) a.push_back(i), b.push_back(8 + i);
  const GoodhartSpec env(vec2(0.5, 0.5), VectorXd::Ones(2), MatrixXd::Zero(2, 2), {a, b}, 8, 16);
  Trainer t(env, MethodSpec::make(MethodKind::xi_ppo, env), small_config(), 2);
  EvalCache cache;
  const ThresholdEval ev = evaluate_thresholds(vec2(0.99, 0.99), t, cache, 256 * 4, 0.02, 7);
  EXPECT_TRUE(ev.capped);
  EXPECT_EQ(ev.steps, 256 * 4);
  EXPECT_TRUE(std::isfinite(ev.gold));
}

TEST(NmSearch, ZeroBudgetReturnsBestInitial) {
  const auto env = GoodhartSpec::sequence_default();
  const NmResult r = nm_search(env, small_config(), 0, 1);
  EXPECT_EQ(r.steps_used, 0);
  EXPECT_EQ(r.proposals, 0);
  ASSERT_EQ(r.trajectory.size(), 3u);
  double best = -1e9;
  for (const SimplexRow& row : r.trajectory) best = std::max(best, row.gold);
  EXPECT_EQ(r.best_gold, best);
}

TEST(NmSearch, Deterministic) {
  const auto env = GoodhartSpec::sequence_default();
  const NmResult a = nm_search(env, small_config(), 256 * 30, 5);
  const NmResult b = nm_search(env, small_config(), 256 * 30, 5);
  ASSERT_EQ(a.trajectory.size(), b.trajectory.size());
  for (std::size_t i = 0; i < a.trajectory.size(); ++i) {
    EXPECT_EQ(a.trajectory[i].theta, b.trajectory[i].theta);
    EXPECT_EQ(a.trajectory[i].gold, b.trajectory[i].gold);
  }
  EXPECT_EQ(a.best_theta, b.best_theta);
  EXPECT_LE(a.steps_used, 256 * 30);
}
