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
#include <cstdint>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "fedwq/calibration.hpp"
#include "fedwq/error.hpp"

namespace fedwq {

enum class AggregationMethod {
  WeightedAverage,      // sum_k (n_k / N) q_k
  UnweightedAverage,    // ablation: plain mean of q_k
  PooledScores,         // threshold of the pooled raw scores (not one-shot)
  QuantileOfQuantiles,  // single outer order statistic of the q_k
  LocalOnly,            // every agent keeps its own q_k
};

inline constexpr AggregationMethod kAllMethods[] = {
    AggregationMethod::WeightedAverage, AggregationMethod::UnweightedAverage,
    AggregationMethod::PooledScores, AggregationMethod::QuantileOfQuantiles,
    AggregationMethod::LocalOnly};

inline std::string_view to_string(AggregationMethod method) {
  switch (method) {
    case AggregationMethod::WeightedAverage: return "weighted_average";
    case AggregationMethod::UnweightedAverage: return "unweighted_average";
    case AggregationMethod::PooledScores: return "pooled_scores";
    case AggregationMethod::QuantileOfQuantiles: return "quantile_of_quantiles";
    case AggregationMethod::LocalOnly: return "local_only";
  }
  return "unknown";
}

inline AggregationMethod parse_method(std::string_view name) {
  for (auto m : kAllMethods) {
    if (to_string(m) == name) return m;
  }
  throw ValidationError("unknown aggregation method '" + std::string(name) + "'");
}

// True when the method needs only (q_k, n_k) from each agent.
inline bool is_one_shot(AggregationMethod method) {
  return method != AggregationMethod::PooledScores;
}

struct AggregatedThreshold {
  double q_hat = kUnboundedThreshold;
  AggregationMethod method = AggregationMethod::WeightedAverage;
  std::int64_t total_n = 0;
  std::int64_t agent_count = 0;
  // Summaries the threshold was built from, sorted by agent id. For LocalOnly
  // these are the per-agent thresholds and q_hat is not meaningful.
  std::vector<LocalQuantileSummary> per_agent;

  // Threshold agent `id` should use to build its prediction sets.
  double threshold_for(AgentId id) const {
    if (method != AggregationMethod::LocalOnly) return q_hat;
    for (const auto& s : per_agent) {
      if (s.agent_id == id) return s.q;
    }
    // Agents absent from the round have no local threshold.
    return kUnboundedThreshold;
  }
};

namespace detail {

inline std::vector<LocalQuantileSummary> checked_sorted(
    std::vector<LocalQuantileSummary> summaries) {
  if (summaries.empty()) throw ValidationError("aggregation: no summaries");
  std::set<AgentId> seen;
  for (const auto& s : summaries) {
    s.validate();
    if (!seen.insert(s.agent_id).second) {
      throw ProtocolError("aggregation: duplicate agent_id " + std::to_string(s.agent_id));
    }
  }
  // Canonical order makes the floating-point sums independent of arrival order.
  std::sort(summaries.begin(), summaries.end(),
            [](const auto& a, const auto& b) { return a.agent_id < b.agent_id; });
  return summaries;
}

inline std::int64_t total_count(const std::vector<LocalQuantileSummary>& summaries) {
  std::int64_t total = 0;
  for (const auto& s : summaries) total += s.n;
  return total;
}

inline bool any_unbounded(const std::vector<LocalQuantileSummary>& summaries) {
  return std::any_of(summaries.begin(), summaries.end(),
                     [](const auto& s) { return is_unbounded(s.q); });
}

// Weighted mean, clamped to [min q, max q] so rounding cannot leave the hull.
template <typename WeightFn>
double convex_combination(const std::vector<LocalQuantileSummary>& summaries, WeightFn weight) {
  double sum = 0.0;
  double lo = summaries.front().q;
  double hi = summaries.front().q;
  for (const auto& s : summaries) {
    sum += weight(s) * s.q;
    lo = std::min(lo, s.q);
    hi = std::max(hi, s.q);
  }
  return std::clamp(sum, lo, hi);
}

}  // namespace detail

inline AggregatedThreshold weighted_average(std::vector<LocalQuantileSummary> summaries) {
  AggregatedThreshold out;
  out.method = AggregationMethod::WeightedAverage;
  out.per_agent = detail::checked_sorted(std::move(summaries));
  out.total_n = detail::total_count(out.per_agent);
  out.agent_count = static_cast<std::int64_t>(out.per_agent.size());
  if (detail::any_unbounded(out.per_agent)) return out;
  const auto total = static_cast<double>(out.total_n);
  out.q_hat = detail::convex_combination(
      out.per_agent, [total](const auto& s) { return static_cast<double>(s.n) / total; });
  return out;
}

inline AggregatedThreshold unweighted_average(std::vector<LocalQuantileSummary> summaries) {
  AggregatedThreshold out;
  out.method = AggregationMethod::UnweightedAverage;
  out.per_agent = detail::checked_sorted(std::move(summaries));
  out.total_n = detail::total_count(out.per_agent);
  out.agent_count = static_cast<std::int64_t>(out.per_agent.size());
  if (detail::any_unbounded(out.per_agent)) return out;
  const double weight = 1.0 / static_cast<double>(out.agent_count);
  out.q_hat = detail::convex_combination(out.per_agent, [weight](const auto&) { return weight; });
  return out;
}

// Split conformal threshold of all agents' scores pooled together. Also the
// empirical mixture quantile used by the theory audits.
inline AggregatedThreshold pooled_scores_threshold(const std::vector<ScoreSample>& samples,
                                                   const CalibrationConfig& config) {
  std::vector<double> pooled;
  std::int64_t contributing = 0;
  for (const auto& s : samples) {
    if (s.empty()) continue;
    pooled.insert(pooled.end(), s.values().begin(), s.values().end());
    ++contributing;
  }
  if (pooled.empty()) throw ValidationError("pooled_scores_threshold: all samples empty");
  const auto local = local_threshold(ScoreSample(std::move(pooled)), config);
  AggregatedThreshold out;
  out.method = AggregationMethod::PooledScores;
  out.q_hat = local.q;
  out.total_n = local.n;
  out.agent_count = contributing;
  return out;
}

// s-th smallest local quantile with s = ceil((M + 1)(1 - alpha)); the
// unbounded sentinel when s > M.
inline AggregatedThreshold quantile_of_quantiles(std::vector<LocalQuantileSummary> summaries,
                                                 const CalibrationConfig& config) {
  config.validate();
  AggregatedThreshold out;
  out.method = AggregationMethod::QuantileOfQuantiles;
  out.per_agent = detail::checked_sorted(std::move(summaries));
  out.total_n = detail::total_count(out.per_agent);
  out.agent_count = static_cast<std::int64_t>(out.per_agent.size());
  const auto idx = empirical_quantile_index(out.agent_count, config.alpha);
  if (idx.exceeds_n) return out;
  std::vector<double> qs;
  qs.reserve(out.per_agent.size());
  for (const auto& s : out.per_agent) qs.push_back(s.q);
  out.q_hat = order_statistic(qs, static_cast<std::size_t>(idx.rank));
  return out;
}

inline AggregatedThreshold local_only(std::vector<LocalQuantileSummary> summaries) {
  AggregatedThreshold out;
  out.method = AggregationMethod::LocalOnly;
  out.per_agent = detail::checked_sorted(std::move(summaries));
  out.total_n = detail::total_count(out.per_agent);
  out.agent_count = static_cast<std::int64_t>(out.per_agent.size());
  return out;
}

// What the server has in hand when it aggregates: summaries for the one-shot
// methods, raw score samples for PooledScores.
struct AggregationInput {
  std::vector<LocalQuantileSummary> summaries;
  std::vector<ScoreSample> samples;
};

inline AggregatedThreshold aggregate(const AggregationInput& input, AggregationMethod method,
                                     const CalibrationConfig& config) {
  if (method == AggregationMethod::PooledScores) {
    if (input.samples.empty()) {
      throw ValidationError("aggregate: pooled_scores requires raw score samples");
    }
    return pooled_scores_threshold(input.samples, config);
  }
  if (input.summaries.empty()) {
    throw ValidationError("aggregate: " + std::string(to_string(method)) +
                          " requires local summaries");
  }
  switch (method) {
    case AggregationMethod::WeightedAverage: return weighted_average(input.summaries);
    case AggregationMethod::UnweightedAverage: return unweighted_average(input.summaries);
    case AggregationMethod::QuantileOfQuantiles:
      return quantile_of_quantiles(input.summaries, config);
    case AggregationMethod::LocalOnly: return local_only(input.summaries);
    case AggregationMethod::PooledScores: break;
  }
  throw ValidationError("aggregate: unsupported method");
}

}  // namespace fedwq
