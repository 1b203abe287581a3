/*
 * Copyright 2026 The FedWQ Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *      http://www.apache.org/licenses/LICENSE-2.0
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
#include <cstdint>
#include <limits>
#include <numbers>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "fedwq/aggregation.hpp"
#include "fedwq/calibration.hpp"
#include "fedwq/error.hpp"
#include "fedwq/experiment.hpp"
#include "fedwq/random.hpp"

// Numerical audits of the coverage bounds on distributions whose CDFs are
// known exactly.
namespace fedwq::theory {

enum class DistributionKind { Gaussian, Uniform, Discrete };

inline double standard_normal_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

class AnalyticDistribution {
 public:
  static AnalyticDistribution gaussian(double mu, double sigma) {
    if (!(sigma > 0.0) || !std::isfinite(mu) || !std::isfinite(sigma)) {
      throw ValidationError("gaussian: sigma must be positive and parameters finite");
    }
    AnalyticDistribution d;
    d.kind_ = DistributionKind::Gaussian;
    d.a_ = mu;
    d.b_ = sigma;
    return d;
  }

  static AnalyticDistribution uniform(double a, double b) {
    if (!(a < b) || !std::isfinite(a) || !std::isfinite(b)) {
      throw ValidationError("uniform: need finite a < b");
    }
    AnalyticDistribution d;
    d.kind_ = DistributionKind::Uniform;
    d.a_ = a;
    d.b_ = b;
    return d;
  }

  // Atoms are sorted on construction; duplicate atoms are merged.
  static AnalyticDistribution discrete(std::vector<double> support, std::vector<double> probs) {
    if (support.empty() || support.size() != probs.size()) {
      throw ValidationError("discrete: support and probs must be non-empty and equal length");
    }
    double total = 0.0;
    for (std::size_t i = 0; i < probs.size(); ++i) {
      if (!std::isfinite(support[i]) || !(probs[i] >= 0.0)) {
        throw ValidationError("discrete: atoms must be finite and probs non-negative");
      }
      total += probs[i];
    }
    if (std::abs(total - 1.0) > 1e-9) throw ValidationError("discrete: probs must sum to 1");
    std::vector<std::size_t> order(support.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](auto i, auto j) { return support[i] < support[j]; });
    AnalyticDistribution d;
    d.kind_ = DistributionKind::Discrete;
    for (auto i : order) {
      if (!d.support_.empty() && d.support_.back() == support[i]) {
        d.probs_.back() += probs[i];
      } else {
        d.support_.push_back(support[i]);
        d.probs_.push_back(probs[i]);
      }
    }
    d.cumulative_.resize(d.probs_.size());
    std::partial_sum(d.probs_.begin(), d.probs_.end(), d.cumulative_.begin());
    return d;
  }

  DistributionKind kind() const noexcept { return kind_; }
  bool is_continuous() const noexcept { return kind_ != DistributionKind::Discrete; }
  const std::vector<double>& support() const noexcept { return support_; }
  const std::vector<double>& probs() const noexcept { return probs_; }

  double cdf(double v) const {
    switch (kind_) {
      case DistributionKind::Gaussian: return standard_normal_cdf((v - a_) / b_);
      case DistributionKind::Uniform: return std::clamp((v - a_) / (b_ - a_), 0.0, 1.0);
      case DistributionKind::Discrete: {
        const auto it = std::upper_bound(support_.begin(), support_.end(), v);
        if (it == support_.begin()) return 0.0;
        return std::min(1.0, cumulative_[static_cast<std::size_t>(it - support_.begin()) - 1]);
      }
    }
    return 0.0;
  }

  double pdf(double v) const {
    switch (kind_) {
      case DistributionKind::Gaussian: {
        const double z = (v - a_) / b_;
        return std::exp(-0.5 * z * z) / (b_ * std::sqrt(2.0 * std::numbers::pi));
      }
      case DistributionKind::Uniform: return (v >= a_ && v <= b_) ? 1.0 / (b_ - a_) : 0.0;
      case DistributionKind::Discrete: break;
    }
    throw ValidationError("pdf: discrete distributions have no density");
  }

  // Smallest v with cdf(v) >= p.
  double inverse_cdf(double p) const {
    if (!(p > 0.0 && p < 1.0)) throw ValidationError("inverse_cdf: p must lie in (0, 1)");
    switch (kind_) {
      case DistributionKind::Gaussian: {
        double lo = a_ - 10.0 * b_;
        double hi = a_ + 10.0 * b_;
        for (int i = 0; i < 200 && hi - lo > 1e-10; ++i) {
          const double mid = 0.5 * (lo + hi);
          (cdf(mid) < p ? lo : hi) = mid;
        }
        return 0.5 * (lo + hi);
      }
      case DistributionKind::Uniform: return a_ + p * (b_ - a_);
      case DistributionKind::Discrete: {
        const auto it = std::lower_bound(cumulative_.begin(), cumulative_.end(), p - 1e-12);
        const auto i = std::min(static_cast<std::size_t>(it - cumulative_.begin()), support_.size() - 1);
        return support_[i];
      }
    }
    return 0.0;
  }

  // Range that holds all but a negligible amount of mass.
  std::pair<double, double> effective_range() const {
    switch (kind_) {
      case DistributionKind::Gaussian: return {a_ - 10.0 * b_, a_ + 10.0 * b_};
      case DistributionKind::Uniform: return {a_, b_};
      case DistributionKind::Discrete: return {support_.front(), support_.back()};
    }
    return {0.0, 0.0};
  }

  double sample(random::Engine& rng) const {
    switch (kind_) {
      case DistributionKind::Gaussian: return random::normal(rng, a_, b_);
      case DistributionKind::Uniform: return random::uniform(rng, a_, b_);
      case DistributionKind::Discrete: {
        const double u = random::uniform01(rng);
        const auto it = std::upper_bound(cumulative_.begin(), cumulative_.end(), u);
        const auto i = std::min(static_cast<std::size_t>(it - cumulative_.begin()), support_.size() - 1);
        return support_[i];
      }
    }
    return 0.0;
  }

  nlohmann::json to_json() const {
    switch (kind_) {
      case DistributionKind::Gaussian: return {{"kind", "gaussian"}, {"mu", a_}, {"sigma", b_}};
      case DistributionKind::Uniform: return {{"kind", "uniform"}, {"a", a_}, {"b", b_}};
      case DistributionKind::Discrete:
        return {{"kind", "discrete"}, {"atoms", support_.size()},
                {"min", support_.front()}, {"max", support_.back()}};
    }
    return {};
  }

 private:
  DistributionKind kind_ = DistributionKind::Uniform;
  double a_ = 0.0;
  double b_ = 1.0;
  std::vector<double> support_;
  std::vector<double> probs_;
  std::vector<double> cumulative_;
};

inline double population_quantile(const AnalyticDistribution& dist, double p) {
  return dist.inverse_cdf(p);
}

struct MixtureComponent {
  AnalyticDistribution dist;
  double weight = 1.0;  // n_k; normalized by the mixture
};

struct MixtureSpec {
  std::vector<MixtureComponent> components;

  void validate() const {
    if (components.empty()) throw ValidationError("mixture: no components");
    for (const auto& c : components) {
      if (!(c.weight > 0.0) || !std::isfinite(c.weight)) {
        throw ValidationError("mixture: weights must be positive");
      }
    }
  }

  std::vector<double> normalized_weights() const {
    validate();
    double total = 0.0;
    for (const auto& c : components) total += c.weight;
    std::vector<double> w;
    for (const auto& c : components) w.push_back(c.weight / total);
    return w;
  }

  double cdf(double v) const {
    const auto w = normalized_weights();
    double f = 0.0;
    for (std::size_t k = 0; k < components.size(); ++k) f += w[k] * components[k].dist.cdf(v);
    return f;
  }

  double pdf(double v) const {
    const auto w = normalized_weights();
    double f = 0.0;
    for (std::size_t k = 0; k < components.size(); ++k) f += w[k] * components[k].dist.pdf(v);
    return f;
  }
};

// q_mix: bisection on the weighted CDF sum (continuous), or the smallest atom
// reaching p (all-discrete mixtures).
inline double mixture_quantile_population(const MixtureSpec& mix, double p) {
  if (!(p > 0.0 && p < 1.0)) throw ValidationError("mixture quantile: p must lie in (0, 1)");
  mix.validate();
  if (mix.components.size() == 1) return mix.components.front().dist.inverse_cdf(p);
  const bool all_discrete = std::all_of(mix.components.begin(), mix.components.end(),
                                        [](const auto& c) { return !c.dist.is_continuous(); });
  if (all_discrete) {
    std::vector<double> atoms;
    for (const auto& c : mix.components) {
      atoms.insert(atoms.end(), c.dist.support().begin(), c.dist.support().end());
    }
    std::sort(atoms.begin(), atoms.end());
    atoms.erase(std::unique(atoms.begin(), atoms.end()), atoms.end());
    const auto it = std::partition_point(atoms.begin(), atoms.end(),
                                         [&](double v) { return mix.cdf(v) < p - 1e-12; });
    return it == atoms.end() ? atoms.back() : *it;
  }
  double lo = std::numeric_limits<double>::infinity();
  double hi = -std::numeric_limits<double>::infinity();
  for (const auto& c : mix.components) {
    const auto [a, b] = c.dist.effective_range();
    lo = std::min(lo, a);
    hi = std::max(hi, b);
  }
  for (int i = 0; i < 200 && hi - lo > 1e-10; ++i) {
    const double mid = 0.5 * (lo + hi);
    (mix.cdf(mid) < p ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

// Total-variation distance between discrete distributions on a common support.
inline double tv_distance(const AnalyticDistribution& p, const AnalyticDistribution& q) {
  if (p.is_continuous() || q.is_continuous()) {
    throw ValidationError("tv_distance: only defined here for discrete distributions");
  }
  if (p.support() != q.support()) throw ValidationError("tv_distance: supports differ");
  double sum = 0.0;
  for (std::size_t i = 0; i < p.probs().size(); ++i) sum += std::abs(p.probs()[i] - q.probs()[i]);
  return 0.5 * sum;
}

enum class AuditStatus { Holds, Violated, Skipped };

inline std::string_view to_string(AuditStatus s) {
  switch (s) {
    case AuditStatus::Holds: return "holds";
    case AuditStatus::Violated: return "violated";
    case AuditStatus::Skipped: return "skipped";
  }
  return "unknown";
}

struct StabilityBoundInput {
  MixtureSpec mixture;
  double alpha = 0.1;
  double delta = 1.0;
};

struct StabilityResult {
  AuditStatus status = AuditStatus::Skipped;
  bool holds = false;
  double lhs = 0.0;
  double rhs = 0.0;
  double c = 0.0;
  double L = 0.0;
  double delta = 0.0;
  double q_mix = 0.0;
  double q_avg = 0.0;
  double max_deviation = 0.0;
  std::string reason;
};

inline constexpr std::size_t kDensityGridPoints = 10001;
inline constexpr double kStabilityTolerance = 1e-9;

// |q_avg - q_mix| <= (L / c) * sum_j sum_k w_j w_k |q_j - q_k| with c a lower
// bound on f_mix and L an upper bound on f_mix and every f_k over the
// delta-window around q_mix.
inline StabilityResult check_stability_bound(const StabilityBoundInput& in) {
  CalibrationConfig{in.alpha}.validate();
  StabilityResult r;
  r.delta = in.delta;
  const auto& comps = in.mixture.components;
  const auto w = in.mixture.normalized_weights();
  for (const auto& c : comps) {
    if (!c.dist.is_continuous()) {
      r.reason = "discrete component has no density";
      return r;
    }
  }
  if (!(in.delta > 0.0)) {
    r.reason = "delta must be positive";
    return r;
  }
  const double p = 1.0 - in.alpha;
  std::vector<double> q;
  for (const auto& c : comps) q.push_back(population_quantile(c.dist, p));
  r.q_mix = mixture_quantile_population(in.mixture, p);
  for (std::size_t k = 0; k < q.size(); ++k) {
    r.q_avg += w[k] * q[k];
    r.max_deviation = std::max(r.max_deviation, std::abs(q[k] - r.q_mix));
  }
  if (r.max_deviation > in.delta) {
    r.reason = "max_k |q_k - q_mix| exceeds delta";
    return r;
  }
  r.c = std::numeric_limits<double>::infinity();
  r.L = 0.0;
  for (std::size_t i = 0; i < kDensityGridPoints; ++i) {
    const double v = r.q_mix - in.delta +
                     2.0 * in.delta * static_cast<double>(i) / static_cast<double>(kDensityGridPoints - 1);
    const double f = in.mixture.pdf(v);
    r.c = std::min(r.c, f);
    r.L = std::max(r.L, f);
    for (const auto& comp : comps) r.L = std::max(r.L, comp.dist.pdf(v));
  }
  if (!(r.c > 0.0)) {
    r.reason = "mixture density vanishes inside the window";
    return r;
  }
  double spread = 0.0;
  for (std::size_t j = 0; j < q.size(); ++j) {
    for (std::size_t k = 0; k < q.size(); ++k) spread += w[j] * w[k] * std::abs(q[j] - q[k]);
  }
  r.lhs = std::abs(r.q_avg - r.q_mix);
  r.rhs = r.L / r.c * spread;
  r.holds = r.lhs <= r.rhs + kStabilityTolerance;
  r.status = r.holds ? AuditStatus::Holds : AuditStatus::Violated;
  return r;
}

// Random 2-5 component Gaussian mixture with mean in [-1, 1], sigma in
// [0.5, 2], integer weights in [10, 1000]; delta is set to the observed
// max_k |q_k - q_mix| so the precondition holds by construction.
inline StabilityBoundInput random_stability_case(std::uint64_t seed, std::size_t index) {
  auto rng = random::make_engine(seed, 0x5ab0 + index);
  StabilityBoundInput in;
  in.alpha = index % 2 == 0 ? 0.05 : 0.1;
  const auto m = 2 + random::uniform_index(rng, 4);
  for (std::uint64_t k = 0; k < m; ++k) {
    const double mu = random::uniform(rng, -1.0, 1.0);
    const double sigma = random::uniform(rng, 0.5, 2.0);
    const double weight = static_cast<double>(10 + random::uniform_index(rng, 991));
    in.mixture.components.push_back({AnalyticDistribution::gaussian(mu, sigma), weight});
  }
  const double p = 1.0 - in.alpha;
  const double q_mix = mixture_quantile_population(in.mixture, p);
  double dev = 0.0;
  for (const auto& c : in.mixture.components) {
    dev = std::max(dev, std::abs(population_quantile(c.dist, p) - q_mix));
  }
  in.delta = std::max(dev, 1e-6);
  return in;
}

struct OracleShiftResult {
  AuditStatus status = AuditStatus::Holds;
  bool holds = false;
  double lhs = 0.0;
  double rhs = 0.0;
  double mean_coverage = 0.0;
  double stderr_coverage = 0.0;
  double weighted_tv = 0.0;
  std::size_t N = 0;
  std::size_t trials = 0;
};

inline constexpr double kMonteCarloStderrs = 3.0;

// Monte Carlo check of
//   |P_test(V <= q_mix_hat) - (1 - alpha)| <= sum_k w_k TV(P_k, P_test) + 1/(N+1)
// where q_mix_hat is the split-conformal threshold of N i.i.d. draws from the
// weighted mixture of the P_k. Coverage of each threshold is exact.
inline OracleShiftResult check_oracle_shift_bound(const std::vector<MixtureComponent>& components,
                                                  const AnalyticDistribution& target, double alpha,
                                                  std::size_t N, std::size_t trials,
                                                  std::uint64_t seed) {
  const CalibrationConfig cfg{alpha};
  cfg.validate();
  if (N < 1 || trials < 2) throw ValidationError("oracle shift: need N >= 1 and trials >= 2");
  MixtureSpec mix{components};
  const auto w = mix.normalized_weights();
  std::vector<double> mixed(target.support().size(), 0.0);
  OracleShiftResult r;
  r.N = N;
  r.trials = trials;
  for (std::size_t k = 0; k < components.size(); ++k) {
    r.weighted_tv += w[k] * tv_distance(components[k].dist, target);
    for (std::size_t i = 0; i < mixed.size(); ++i) mixed[i] += w[k] * components[k].dist.probs()[i];
  }
  const double total = std::accumulate(mixed.begin(), mixed.end(), 0.0);
  for (auto& m : mixed) m /= total;
  const auto pooled = AnalyticDistribution::discrete(target.support(), mixed);

  auto rng = random::make_engine(seed, 0x0e5);
  std::vector<double> draws(N);
  double sum = 0.0;
  double sum_sq = 0.0;
  for (std::size_t t = 0; t < trials; ++t) {
    for (auto& d : draws) d = pooled.sample(rng);
    const double q = local_threshold(ScoreSample(draws), cfg).q;
    const double cov = is_unbounded(q) ? 1.0 : target.cdf(q);
    sum += cov;
    sum_sq += cov * cov;
  }
  const double n = static_cast<double>(trials);
  r.mean_coverage = sum / n;
  const double var = std::max(0.0, (sum_sq - n * r.mean_coverage * r.mean_coverage) / (n - 1.0));
  r.stderr_coverage = std::sqrt(var / n);
  r.lhs = std::abs(r.mean_coverage - (1.0 - alpha));
  r.rhs = r.weighted_tv + 1.0 / static_cast<double>(N + 1);
  r.holds = r.lhs <= r.rhs + kMonteCarloStderrs * r.stderr_coverage;
  r.status = r.holds ? AuditStatus::Holds : AuditStatus::Violated;
  return r;
}

// Uniform distribution over `atoms` equally spaced points in (0, 1].
inline AnalyticDistribution fine_uniform(std::size_t atoms) {
  std::vector<double> support(atoms);
  std::vector<double> probs(atoms, 1.0 / static_cast<double>(atoms));
  for (std::size_t i = 0; i < atoms; ++i) support[i] = static_cast<double>(i + 1) / static_cast<double>(atoms);
  return AnalyticDistribution::discrete(support, probs);
}

// Moves `tv` of probability mass from the lower half of the support to the
// upper half (or the reverse when `upward` is false). The result is exactly
// `tv` away from `base` in total variation.
inline AnalyticDistribution shift_mass(const AnalyticDistribution& base, double tv, bool upward) {
  const auto& p = base.probs();
  const std::size_t half = p.size() / 2;
  double low_mass = 0.0;
  double high_mass = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) (i < half ? low_mass : high_mass) += p[i];
  const double from = upward ? low_mass : high_mass;
  const double to = upward ? high_mass : low_mass;
  if (!(tv >= 0.0 && tv < from)) throw ValidationError("shift_mass: tv out of range");
  std::vector<double> q(p);
  for (std::size_t i = 0; i < q.size(); ++i) {
    const bool in_from = upward ? i < half : i >= half;
    q[i] = in_from ? p[i] * (1.0 - tv / from) : p[i] * (1.0 + tv / to);
  }
  return AnalyticDistribution::discrete(base.support(), q);
}

struct OracleShiftCase {
  std::string name;
  std::vector<MixtureComponent> components;
  AnalyticDistribution target;
  double alpha = 0.1;
};

// Fixed zero-shift and two-component TV=0.1 cases followed by random cases
// whose components shift a random amount of mass in a random direction.
inline std::vector<OracleShiftCase> oracle_shift_cases(std::size_t count, std::uint64_t seed,
                                                       std::size_t atoms = 1000) {
  const auto base = fine_uniform(atoms);
  std::vector<OracleShiftCase> cases;
  cases.push_back({"zero_shift", {{base, 200.0}, {base, 200.0}}, base, 0.1});
  cases.push_back({"tv_0.1_opposite",
                   {{shift_mass(base, 0.1, true), 200.0}, {shift_mass(base, 0.1, false), 200.0}},
                   base,
                   0.1});
  cases.push_back({"tv_0.1_upward",
                   {{shift_mass(base, 0.1, true), 200.0}, {shift_mass(base, 0.1, true), 200.0}},
                   base,
                   0.1});
  for (std::size_t i = cases.size(); i < count; ++i) {
    auto rng = random::make_engine(seed, 0x9201 + i);
    OracleShiftCase c;
    c.name = "random_" + std::to_string(i);
    c.target = base;
    c.alpha = i % 2 == 0 ? 0.05 : 0.1;
    const auto m = 2 + random::uniform_index(rng, 3);
    for (std::uint64_t k = 0; k < m; ++k) {
      const double tv = random::uniform(rng, 0.0, 0.3);
      const bool up = random::uniform01(rng) < 0.5;
      c.components.push_back({shift_mass(base, tv, up), static_cast<double>(1 + random::uniform_index(rng, 100))});
    }
    cases.push_back(std::move(c));
  }
  cases.resize(std::min(cases.size(), count));
  return cases;
}

struct DecompositionScenario {
  std::vector<AnalyticDistribution> agents;  // calibration score law per agent
  std::vector<std::size_t> n;                // calibration size per agent
  AnalyticDistribution test;                 // test score law
  double alpha = 0.1;
  std::size_t trials = 2000;
};

struct DecompositionResult {
  double total_gap = 0.0;  // |cov(q_hat) - (1 - alpha)|
  double shift_term = 0.0;  // |cov(q_mix_hat) - (1 - alpha)|
  double agg_term = 0.0;   // |cov(q_hat) - cov(q_mix_hat)|
  double mc_slack = 0.0;
  double mean_q_hat = 0.0;
  double mean_q_mix = 0.0;
  std::size_t N = 0;
  bool triangle_holds = false;
};

// Per trial: draw each agent's calibration scores, form the weighted average
// of local thresholds (q_hat) and the pooled threshold (q_mix_hat), and score
// both by their exact test coverage. Reports the trial-averaged terms and a
// Monte Carlo slack of 3 * sqrt(alpha (1 - alpha) / N).
inline DecompositionResult decomposition_audit(const DecompositionScenario& s, std::uint64_t seed) {
  const CalibrationConfig cfg{s.alpha};
  cfg.validate();
  if (s.agents.empty() || s.agents.size() != s.n.size()) {
    throw ValidationError("decomposition: agents and n must be non-empty and aligned");
  }
  if (s.trials < 1) throw ValidationError("decomposition: need trials >= 1");
  DecompositionResult r;
  for (auto n : s.n) r.N += n;
  double cov_hat = 0.0;
  double cov_mix = 0.0;
  auto rng = random::make_engine(seed, 0xdec0);
  for (std::size_t t = 0; t < s.trials; ++t) {
    std::vector<LocalQuantileSummary> summaries;
    std::vector<ScoreSample> samples;
    for (std::size_t k = 0; k < s.agents.size(); ++k) {
      std::vector<double> draws(s.n[k]);
      for (auto& d : draws) d = s.agents[k].sample(rng);
      samples.emplace_back(std::move(draws));
      summaries.push_back(local_threshold(samples.back(), cfg, static_cast<AgentId>(k)));
    }
    const double q_hat = weighted_average(summaries).q_hat;
    const double q_mix = pooled_scores_threshold(samples, cfg).q_hat;
    r.mean_q_hat += q_hat;
    r.mean_q_mix += q_mix;
    cov_hat += is_unbounded(q_hat) ? 1.0 : s.test.cdf(q_hat);
    cov_mix += is_unbounded(q_mix) ? 1.0 : s.test.cdf(q_mix);
  }
  const double n = static_cast<double>(s.trials);
  cov_hat /= n;
  cov_mix /= n;
  r.mean_q_hat /= n;
  r.mean_q_mix /= n;
  r.total_gap = std::abs(cov_hat - (1.0 - s.alpha));
  r.shift_term = std::abs(cov_mix - (1.0 - s.alpha));
  r.agg_term = std::abs(cov_hat - cov_mix);
  r.mc_slack = kMonteCarloStderrs * std::sqrt(s.alpha * (1.0 - s.alpha) / static_cast<double>(r.N));
  r.triangle_holds = r.total_gap <= r.shift_term + r.agg_term + 1e-12;
  return r;
}

inline DecompositionScenario heterogeneous_scenario() {
  DecompositionScenario s;
  s.agents = {AnalyticDistribution::gaussian(0.0, 1.0), AnalyticDistribution::gaussian(1.5, 2.0)};
  s.n = {400, 100};
  s.test = AnalyticDistribution::gaussian(0.5, 1.2);
  return s;
}

inline DecompositionScenario identical_scenario() {
  DecompositionScenario s;
  s.agents = {AnalyticDistribution::gaussian(0.0, 1.0), AnalyticDistribution::gaussian(0.0, 1.0)};
  s.n = {250, 250};
  s.test = AnalyticDistribution::gaussian(0.0, 1.0);
  return s;
}

struct TrendCell {
  double beta = 0.0;
  std::size_t n = 0;  // calibration points per agent on average
  std::vector<double> gaps;  // per seed |global coverage - (1 - alpha)|
  double mean_gap = 0.0;
};

struct TrendTable {
  std::vector<TrendCell> cells;  // beta-major
  bool endpoint_holds = false;   // gap(max beta, max n) <= gap(min beta, min n)
};

// For each seed, trains the agents once, then for each (beta, n) cell draws a
// fresh calibration pool of n * M points from the seed's data source,
// partitions it with Dirichlet(beta) and runs a WeightedAverage round.
inline TrendTable asymptotic_trend(const ExperimentConfig& base, const std::vector<double>& betas,
                                   const std::vector<std::size_t>& ns,
                                   const std::vector<std::uint64_t>& seeds) {
  if (betas.empty() || ns.empty() || seeds.empty()) throw ValidationError("trend: empty grid");
  if (!std::is_sorted(betas.begin(), betas.end()) || !std::is_sorted(ns.begin(), ns.end())) {
    throw ValidationError("trend: grids must be increasing");
  }
  base.validate();
  TrendTable table;
  for (double b : betas) {
    for (auto n : ns) table.cells.push_back({b, n, std::vector<double>(seeds.size(), 0.0), 0.0});
  }
  parallel_for(seeds.size(), [&](std::size_t si) {
    const auto seed = seeds[si];
    const DataSource source(base.dataset, seed);
    if (!source.can_sample()) throw ValidationError("trend: dataset cannot generate calibration pools");
    PreparedSeed p;
    p.seed = seed;
    p.data = source.split(base.cal_fraction);
    p.agents = train_agents(base, p.data.train, seed);
    for (const auto& a : p.agents) p.test_predictions.push_back(predict_test(a.model, p.data.test));
    for (std::size_t ci = 0; ci < table.cells.size(); ++ci) {
      auto& cell = table.cells[ci];
      const auto pool = p.data.standardizer.apply(source.sample(cell.n * base.agents, 0x7e0 + ci));
      p.plan = partition_calibration(base, pool, cell.beta, random::derive_seed(seed, ci));
      p.warnings.clear();
      calibrate_agents(base, p, pool);
      const auto outcome = run_method(base, p, AggregationMethod::WeightedAverage);
      cell.gaps[si] = std::abs(outcome.report.global_coverage - (1.0 - base.alpha));
    }
  });
  for (auto& cell : table.cells) {
    cell.mean_gap = std::accumulate(cell.gaps.begin(), cell.gaps.end(), 0.0) /
                    static_cast<double>(cell.gaps.size());
  }
  table.endpoint_holds = table.cells.back().mean_gap <= table.cells.front().mean_gap;
  return table;
}

struct AuditSummary {
  std::string name;
  std::size_t cases = 0;
  std::size_t violations = 0;
  std::size_t skipped = 0;
  nlohmann::json rows = nlohmann::json::array();

  bool passed() const { return violations == 0 && cases > skipped; }
};

inline AuditSummary audit_stability(std::size_t cases, std::uint64_t seed) {
  AuditSummary a;
  a.name = "prop2";
  std::vector<StabilityResult> results(cases);
  parallel_for(cases, [&](std::size_t i) { results[i] = check_stability_bound(random_stability_case(seed, i)); });
  for (std::size_t i = 0; i < cases; ++i) {
    const auto& r = results[i];
    ++a.cases;
    if (r.status == AuditStatus::Skipped) ++a.skipped;
    if (r.status == AuditStatus::Violated) ++a.violations;
    a.rows.push_back({{"case", i}, {"status", to_string(r.status)}, {"lhs", r.lhs}, {"rhs", r.rhs},
                      {"c", r.c}, {"L", r.L}, {"delta", r.delta}, {"q_mix", r.q_mix},
                      {"q_avg", r.q_avg}, {"reason", r.reason}});
  }
  return a;
}

inline AuditSummary audit_oracle_shift(std::size_t cases, std::uint64_t seed, std::size_t N = 400,
                                       std::size_t trials = 2000) {
  AuditSummary a;
  a.name = "prop1";
  const auto specs = oracle_shift_cases(cases, seed);
  std::vector<OracleShiftResult> results(specs.size());
  parallel_for(specs.size(), [&](std::size_t i) {
    results[i] = check_oracle_shift_bound(specs[i].components, specs[i].target, specs[i].alpha, N,
                                          trials, random::derive_seed(seed, i));
  });
  for (std::size_t i = 0; i < specs.size(); ++i) {
    const auto& r = results[i];
    ++a.cases;
    if (!r.holds) ++a.violations;
    a.rows.push_back({{"case", specs[i].name}, {"status", to_string(r.status)}, {"lhs", r.lhs},
                      {"rhs", r.rhs}, {"weighted_tv", r.weighted_tv},
                      {"mean_coverage", r.mean_coverage}, {"stderr", r.stderr_coverage},
                      {"N", r.N}, {"trials", r.trials}});
  }
  return a;
}

inline nlohmann::json decomposition_json(const std::string& name, const DecompositionResult& r) {
  return {{"scenario", name},          {"total_gap", r.total_gap}, {"shift_term", r.shift_term},
          {"agg_term", r.agg_term},    {"mc_slack", r.mc_slack},   {"mean_q_hat", r.mean_q_hat},
          {"mean_q_mix", r.mean_q_mix}, {"N", r.N},                {"triangle_holds", r.triangle_holds}};
}

// Heterogeneous scenario: triangle inequality. Identical agents: aggregation
// term within Monte Carlo slack.
inline AuditSummary audit_decomposition(std::uint64_t seed) {
  AuditSummary a;
  a.name = "theorem1";
  const auto het = decomposition_audit(heterogeneous_scenario(), seed);
  const auto same = decomposition_audit(identical_scenario(), random::derive_seed(seed, 1));
  a.cases = 2;
  if (!het.triangle_holds) ++a.violations;
  if (!(same.triangle_holds && same.agg_term <= same.mc_slack)) ++a.violations;
  a.rows.push_back(decomposition_json("heterogeneous", het));
  a.rows.push_back(decomposition_json("identical", same));
  return a;
}

inline ExperimentConfig default_trend_config() {
  ExperimentConfig c;
  c.methods = {AggregationMethod::WeightedAverage};
  return c;
}

inline AuditSummary audit_trend(std::uint64_t seed, std::size_t seed_count,
                                const std::vector<double>& betas = {0.1, 1.0, 100.0},
                                const std::vector<std::size_t>& ns = {50, 500, 5000}) {
  AuditSummary a;
  a.name = "theorem2";
  std::vector<std::uint64_t> seeds;
  for (std::size_t i = 0; i < seed_count; ++i) seeds.push_back(seed + i);
  const auto table = asymptotic_trend(default_trend_config(), betas, ns, seeds);
  a.cases = 1;
  if (!table.endpoint_holds) a.violations = 1;
  for (const auto& c : table.cells) {
    a.rows.push_back({{"beta", c.beta}, {"n", c.n}, {"mean_gap", c.mean_gap}, {"gaps", c.gaps}});
  }
  return a;
}

inline std::string audit_csv(const AuditSummary& a) {
  std::string out = "audit,row,json\n";
  for (std::size_t i = 0; i < a.rows.size(); ++i) {
    std::string cell = a.rows[i].dump();
    std::string escaped;
    for (char ch : cell) escaped += ch == '"' ? std::string("\"\"") : std::string(1, ch);
    out += a.name + "," + std::to_string(i) + ",\"" + escaped + "\"\n";
  }
  return out;
}

inline nlohmann::json audit_json(const AuditSummary& a) {
  return {{"audit", a.name},         {"cases", a.cases}, {"violations", a.violations},
          {"skipped", a.skipped},    {"passed", a.passed()}, {"rows", a.rows}};
}

}  // namespace fedwq::theory
