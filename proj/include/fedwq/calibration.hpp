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
#include <span>
#include <string>
#include <vector>

#include "fedwq/error.hpp"
#include "fedwq/scores.hpp"

namespace fedwq {

using AgentId = std::int64_t;

struct CalibrationConfig {
  double alpha = 0.05;

  void validate() const {
    if (!(alpha > 0.0 && alpha < 1.0)) {
      throw ValidationError("alpha must lie in (0, 1), got " + std::to_string(alpha));
    }
  }
};

// An agent's calibration scores V_1..V_n. Non-empty and finite.
class ScoreSample {
 public:
  ScoreSample() = default;
  explicit ScoreSample(std::vector<double> scores) : scores_(std::move(scores)) { validate(); }

  std::size_t size() const noexcept { return scores_.size(); }
  bool empty() const noexcept { return scores_.empty(); }
  std::span<const double> values() const noexcept { return scores_; }
  const std::vector<double>& vector() const noexcept { return scores_; }

  void validate() const {
    if (scores_.empty()) throw ValidationError("ScoreSample: empty calibration sample");
    for (double v : scores_) {
      if (!std::isfinite(v)) throw ValidationError("ScoreSample: non-finite score");
    }
  }

 private:
  std::vector<double> scores_;
};

// The (q_k, n_k) pair an agent reports; the whole upstream payload.
struct LocalQuantileSummary {
  AgentId agent_id = 0;
  double q = 0.0;
  std::int64_t n = 0;

  void validate() const {
    if (n < 1) throw ValidationError("summary for agent " + std::to_string(agent_id) +
                                     ": n must be >= 1");
    if (std::isnan(q) || q == -std::numeric_limits<double>::infinity()) {
      throw ValidationError("summary for agent " + std::to_string(agent_id) +
                            ": q must be finite or +inf");
    }
  }

  bool operator==(const LocalQuantileSummary&) const = default;
};

struct QuantileIndex {
  std::int64_t rank = 0;    // r = ceil((n + 1)(1 - alpha)), 1-based
  bool exceeds_n = false;   // r > n: no finite threshold exists
  double tau = 0.0;         // r / n when rank <= n, else +inf
};

namespace detail {

// ceil(x) where x is a product that is integral in exact arithmetic but may
// carry a few ulps of representation error, e.g. 20 * 0.95.
inline std::int64_t ceil_tolerant(double x) {
  const double nearest = std::round(x);
  if (std::abs(x - nearest) <= 1e-9 * std::max(1.0, std::abs(x))) {
    return static_cast<std::int64_t>(nearest);
  }
  return static_cast<std::int64_t>(std::ceil(x));
}

}  // namespace detail

inline QuantileIndex empirical_quantile_index(std::int64_t n, double alpha) {
  if (n < 1) throw ValidationError("empirical_quantile_index: n must be >= 1");
  CalibrationConfig{alpha}.validate();
  QuantileIndex idx;
  idx.rank = detail::ceil_tolerant(static_cast<double>(n + 1) * (1.0 - alpha));
  idx.exceeds_n = idx.rank > n;
  idx.tau = idx.exceeds_n ? kUnboundedThreshold
                          : static_cast<double>(idx.rank) / static_cast<double>(n);
  return idx;
}

// k-th smallest (1-based) of `values` by selection; duplicates occupy
// consecutive ranks.
inline double order_statistic(std::span<const double> values, std::size_t k) {
  if (k < 1 || k > values.size()) throw IndexError("order_statistic: rank out of range");
  std::vector<double> work(values.begin(), values.end());
  auto nth = work.begin() + static_cast<std::ptrdiff_t>(k - 1);
  std::nth_element(work.begin(), nth, work.end());
  return *nth;
}

// Split conformal threshold of one agent's sample: the ceil((n+1)(1-alpha))-th
// smallest score, or the unbounded sentinel when that rank exceeds n.
inline LocalQuantileSummary local_threshold(const ScoreSample& sample,
                                            const CalibrationConfig& config,
                                            AgentId agent_id = 0) {
  sample.validate();
  config.validate();
  const auto n = static_cast<std::int64_t>(sample.size());
  const auto idx = empirical_quantile_index(n, config.alpha);
  const double q = idx.exceeds_n
                       ? kUnboundedThreshold
                       : order_statistic(sample.values(), static_cast<std::size_t>(idx.rank));
  return {agent_id, q, n};
}

}  // namespace fedwq
