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
#include "goodhart/neldermead.hpp"

#include <algorithm>
#include <cmath>

namespace goodhart {

namespace {

constexpr std::uint64_t kSimplexStream = 7;
// Probe tags for threshold evaluations sit far above any round number.
constexpr std::uint64_t kEvalTagBase = 1u << 30;

VectorXd perturb(const VectorXd& base, Rng& rng, double scale) {
  VectorXd v(base.size());
  for (Eigen::Index i = 0; i < base.size(); ++i) {
    // relative, with a small floor so a zero coordinate can still move
    const double u = rng.uniform(-scale, scale);
    v(i) = std::clamp(base(i) + u * std::max(std::abs(base(i)), 0.01), 0.0, 1.0);
  }
  return v;
}

}  // namespace

const char* to_string(NmPhase p) {
  switch (p) {
    case NmPhase::initial: return "initial";
    case NmPhase::reflect: return "reflect";
    case NmPhase::expand: return "expand";
    case NmPhase::contract: return "contract";
    case NmPhase::shrink: return "shrink";
    case NmPhase::reperturb: return "reperturb";
  }
  return "?";
}

// ---- simplex

void ThresholdSimplex::sort() {
  std::stable_sort(vertices.begin(), vertices.end(),
                   [](const Vertex& a, const Vertex& b) { return a.score < b.score; });
}

VectorXd ThresholdSimplex::centroid() const {
  const int n = dims();
  VectorXd c = VectorXd::Zero(n);
  for (int j = 0; j < n; ++j) c += vertices[static_cast<std::size_t>(j)].theta;
  return c / static_cast<double>(n);
}

double ThresholdSimplex::volume() const {
  const int n = dims();
  MatrixXd edges(n, n);
  for (int j = 0; j < n; ++j) edges.col(j) = vertices[static_cast<std::size_t>(j + 1)].theta - vertices[0].theta;
  return std::abs(edges.determinant());
}

double ThresholdSimplex::diameter() const {
  double d = 0.0;
  for (const Vertex& v : vertices) d = std::max(d, (v.theta - vertices[0].theta).norm());
  return d;
}

ThresholdSimplex init_simplex(const VectorXd& base, Rng& rng, double scale, double min_separation) {
  if (base.size() < 1) throw ConfigError("init_simplex: empty base");
  if (scale < 0) throw ConfigError("init_simplex: perturbation scale must be >= 0");
  constexpr int kMaxDraws = 100;
  ThresholdSimplex s;
  for (Eigen::Index j = 0; j <= base.size(); ++j) {
    VectorXd v = perturb(base, rng, scale);
    for (int draw = 1; draw < kMaxDraws && min_separation > 0; ++draw) {
      bool clash = false;
      for (const Vertex& u : s.vertices)
        clash = clash || ((v - u.theta).array().abs() <= min_separation * u.theta.array().abs()).all();
      if (!clash) break;
      v = perturb(base, rng, scale);
    }
    s.vertices.push_back(Vertex{v, 0.0, false});
  }
  s.degenerate = s.volume() == 0.0;
  return s;
}

Proposal nm_propose(const ThresholdSimplex& s, NmPhase phase, int shrink_index) {
  const int n = s.dims();
  if (static_cast<int>(s.vertices.size()) != n + 1) throw LengthMismatch("nm_propose: need N+1 vertices");
  const VectorXd c = s.centroid();
  const VectorXd& worst = s.vertices.back().theta;
  const VectorXd reflected = c + s.alpha * (c - worst);
  switch (phase) {
    case NmPhase::reflect: return {reflected, phase};
    case NmPhase::expand: return {c + s.gamma * (reflected - c), phase};
    case NmPhase::contract: return {c + s.rho * (worst - c), phase};
    case NmPhase::shrink: {
      if (shrink_index < 1 || shrink_index > n) throw IndexOutOfRange("nm_propose: shrink index");
      const VectorXd& best = s.vertices[0].theta;
      return {best + s.sigma * (s.vertices[static_cast<std::size_t>(shrink_index)].theta - best), phase};
    }
    default: break;
  }
  throw ConfigError("nm_propose: no geometric move for this phase");
}

// ---- ask/tell

NelderMead::NelderMead(ThresholdSimplex evaluated, VectorXd lo, VectorXd hi)
    : simplex_(std::move(evaluated)), lo_(std::move(lo)), hi_(std::move(hi)) {
  const int n = simplex_.dims();
  if (n < 1 || static_cast<int>(simplex_.vertices.size()) != n + 1)
    throw LengthMismatch("nelder-mead: need N+1 vertices");
  require_same_length(lo_.size(), n, "nelder-mead lower bound");
  require_same_length(hi_.size(), n, "nelder-mead upper bound");
  start_iteration();
}

VectorXd NelderMead::clamp(const VectorXd& x) const { return x.cwiseMax(lo_).cwiseMin(hi_); }

void NelderMead::start_iteration() {
  simplex_.sort();
  stage_ = Stage::reflect;
}

Proposal NelderMead::ask() {
  if (pending_) return current_;
  const VectorXd c = simplex_.centroid();
  switch (stage_) {
    case Stage::reflect:
      current_ = {clamp(nm_propose(simplex_, NmPhase::reflect).theta), NmPhase::reflect};
      break;
    case Stage::expand:
      current_ = {clamp(c + simplex_.gamma * (reflected_.theta - c)), NmPhase::expand};
      break;
    case Stage::contract:
      current_ = {clamp(nm_propose(simplex_, NmPhase::contract).theta), NmPhase::contract};
      break;
    case Stage::shrink:
      current_ = {clamp(nm_propose(simplex_, NmPhase::shrink, refill_index_).theta), NmPhase::shrink};
      break;
    case Stage::reperturb:
      current_ = {simplex_.vertices[static_cast<std::size_t>(refill_index_)].theta, NmPhase::reperturb};
      break;
  }
  pending_ = true;
  ++proposals_;
  return current_;
}

void NelderMead::tell(double score, bool capped) {
  if (!pending_) throw ConfigError("nelder-mead: tell() without a pending ask()");
  pending_ = false;
  const int n = simplex_.dims();
  auto& v = simplex_.vertices;
  const Vertex cand{current_.theta, score, capped};
  switch (stage_) {
    case Stage::reflect: {
      const double best = v[0].score;
      const double second_worst = v[static_cast<std::size_t>(n - 1)].score;
      if (best <= score && score < second_worst) {
        v.back() = cand;
        start_iteration();
      } else if (score < best) {
        reflected_ = cand;
        stage_ = Stage::expand;
      } else {
        stage_ = Stage::contract;
      }
      break;
    }
    case Stage::expand:
      v.back() = score < v[0].score ? cand : reflected_;
      start_iteration();
      break;
    case Stage::contract:
      if (score < v.back().score) {
        v.back() = cand;
        start_iteration();
      } else {
        queue_reevaluation(NmPhase::shrink);
      }
      break;
    case Stage::shrink:
    case Stage::reperturb:
      v[static_cast<std::size_t>(refill_index_)] = cand;
      if (++refill_index_ > n) start_iteration();
      break;
  }
}

void NelderMead::queue_reevaluation(NmPhase phase) {
  stage_ = phase == NmPhase::shrink ? Stage::shrink : Stage::reperturb;
  refill_index_ = 1;
}

void NelderMead::reperturb(Rng& rng, double scale) {
  if (pending_) throw ConfigError("nelder-mead: reperturb with a pending proposal");
  simplex_.sort();
  const VectorXd best = simplex_.vertices[0].theta;
  for (std::size_t j = 1; j < simplex_.vertices.size(); ++j)
    simplex_.vertices[j] = Vertex{clamp(perturb(best, rng, scale)), 0.0, false};
  queue_reevaluation(NmPhase::reperturb);
}

// ---- cache

const EvalCache::Entry* EvalCache::find(const VectorXd& theta) const {
  for (const Entry& e : entries_) {
    if (e.theta.size() != theta.size()) continue;
    if (((theta - e.theta).array().abs() <= tol_ * e.theta.array().abs()).all()) return &e;
  }
  return nullptr;
}

void EvalCache::insert(const VectorXd& theta, double gold, bool capped) { entries_.push_back({theta, gold, capped}); }

// ---- RL evaluation

ThresholdEval evaluate_thresholds(const VectorXd& theta, Trainer& trainer, EvalCache& cache, long step_cap,
                                  double tolerance, std::uint64_t probe_tag) {
  require_same_length(theta.size(), trainer.env().num_channels(), "evaluate_thresholds");
  if ((theta.array() < 0).any() || (theta.array() > 1).any())
    throw ConfigError("evaluate_thresholds: thresholds must lie in [0, 1]");
  ThresholdEval out;
  if (const EvalCache::Entry* hit = cache.find(theta)) {
    out.gold = hit->gold;
    out.capped = hit->capped;
    out.cached = true;
    return out;
  }
  trainer.set_thresholds(theta);
  const long round_steps =
      static_cast<long>(trainer.config().episodes_per_update(trainer.env().horizon())) * trainer.env().horizon();
  bool reached = false;
  while (!reached && out.steps + round_steps <= step_cap) {
    const RunRecord rec = trainer.update_round();
    out.steps += round_steps;
    reached = (rec.channel_values - theta).cwiseAbs().maxCoeff() <= tolerance;
  }
  const GoldEstimate g = trainer.probe(probe_tag);
  out.gold = g.value;
  out.values = g.channel_values;
  out.capped = !reached;
  cache.insert(theta, out.gold, out.capped);
  return out;
}

namespace {

void record_simplex(NmResult& r, int iteration, NmPhase phase, const ThresholdSimplex& s) {
  for (std::size_t j = 0; j < s.vertices.size(); ++j)
    r.trajectory.push_back(
        {iteration, phase, static_cast<int>(j), s.vertices[j].theta, -s.vertices[j].score, s.vertices[j].capped});
}

void finish(NmResult& r, const ThresholdSimplex& s) {
  ThresholdSimplex sorted = s;
  sorted.sort();
  r.best_theta = sorted.vertices[0].theta;
  r.best_gold = -sorted.vertices[0].score;
}

}  // namespace

NmResult nm_search(const GoodhartSpec& env, const TrainConfig& config, long total_budget, std::uint64_t seed,
                   const NmOptions& opt) {
  if (total_budget < 0) throw ConfigError("nm_search: budget must be >= 0");
  Trainer trainer(env, MethodSpec::make(MethodKind::xi_ppo, env), config, seed);
  Rng rng(derive_seed(seed, kSimplexStream));
  EvalCache cache(opt.cache_tolerance);
  NmResult res;
  const long cap = static_cast<long>(opt.budget_fraction * static_cast<double>(total_budget));
  std::uint64_t tag = kEvalTagBase;

  auto evaluate = [&](const VectorXd& theta) {
    const long remaining = total_budget - res.steps_used;
    const ThresholdEval ev =
        evaluate_thresholds(theta, trainer, cache, std::min(cap, remaining), opt.convergence_tolerance, tag++);
    res.steps_used += ev.steps;
    ++res.evaluations;
    if (ev.cached) ++res.cache_hits;
    return ev;
  };

  // Anchor the simplex on what the reference policy already achieves.
  const VectorXd base = trainer.probe(tag++).channel_values;
  ThresholdSimplex simplex = init_simplex(base, rng, opt.perturbation, opt.cache_tolerance);
  for (Vertex& v : simplex.vertices) {
    const ThresholdEval ev = evaluate(v.theta);
    v.score = -ev.gold;
    v.capped = ev.capped;
  }
  const VectorXd lo = VectorXd::Zero(env.num_channels());
  const VectorXd hi = VectorXd::Ones(env.num_channels());
  NelderMead nm(simplex, lo, hi);
  record_simplex(res, 0, NmPhase::initial, nm.simplex());
  double initial_volume = nm.simplex().volume();

  while (res.steps_used < total_budget && nm.proposals() < opt.max_proposals) {
    if (!nm.pending() && nm.simplex().diameter() < opt.diameter_tolerance) break;
    if (!nm.pending() && nm.simplex().volume() <= opt.degeneracy_ratio * initial_volume) {
      nm.reperturb(rng, opt.perturbation);
    }
    const Proposal p = nm.ask();
    const ThresholdEval ev = evaluate(p.theta);
    nm.tell(-ev.gold, ev.capped);
    if (p.phase == NmPhase::reperturb && initial_volume == 0.0 && !nm.pending())
      initial_volume = nm.simplex().volume();
    record_simplex(res, nm.proposals(), p.phase, nm.simplex());
  }
  res.proposals = nm.proposals();
  res.log = trainer.log();
  finish(res, nm.simplex());
  return res;
}

NmResult nm_search_direct(const std::function<double(const VectorXd&)>& objective, ThresholdSimplex start,
                          const VectorXd& lo, const VectorXd& hi, int max_proposals, std::uint64_t seed,
                          const NmOptions& opt) {
  Rng rng(derive_seed(seed, kSimplexStream));
  NmResult res;
  for (Vertex& v : start.vertices) {
    v.theta = v.theta.cwiseMax(lo).cwiseMin(hi);
    v.score = -objective(v.theta);
    ++res.evaluations;
  }
  NelderMead nm(std::move(start), lo, hi);
  record_simplex(res, 0, NmPhase::initial, nm.simplex());
  double initial_volume = nm.simplex().volume();

  while (nm.proposals() < max_proposals) {
    if (!nm.pending() && nm.simplex().diameter() < opt.diameter_tolerance) break;
    if (!nm.pending() && nm.simplex().volume() <= opt.degeneracy_ratio * initial_volume)
      nm.reperturb(rng, opt.perturbation);
    const Proposal p = nm.ask();
    nm.tell(-objective(p.theta));
    ++res.evaluations;
    if (p.phase == NmPhase::reperturb && initial_volume == 0.0 && !nm.pending())
      initial_volume = nm.simplex().volume();
    record_simplex(res, nm.proposals(), p.phase, nm.simplex());
  }
  res.proposals = nm.proposals();
  finish(res, nm.simplex());
  return res;
}

}  // namespace goodhart
