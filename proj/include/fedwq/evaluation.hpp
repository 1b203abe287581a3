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
#include <charconv>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <string>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "fedwq/aggregation.hpp"
#include "fedwq/calibration.hpp"
#include "fedwq/error.hpp"
#include "fedwq/random.hpp"
#include "fedwq/scores.hpp"

namespace fedwq {

struct SetPrediction {
  std::vector<ClassIndex> set;
  ClassIndex label = 0;
};

struct IntervalPrediction {
  PredictionInterval interval;
  double value = 0.0;
};

// One test point as seen by one agent.
struct PredictionRecord {
  AgentId agent_id = 0;
  std::variant<SetPrediction, IntervalPrediction> payload;

  bool covered() const {
    if (const auto* s = std::get_if<SetPrediction>(&payload)) {
      return std::binary_search(s->set.begin(), s->set.end(), s->label);
    }
    const auto& r = std::get<IntervalPrediction>(payload);
    return r.interval.contains(r.value);
  }

  double size() const {
    if (const auto* s = std::get_if<SetPrediction>(&payload)) {
      return static_cast<double>(s->set.size());
    }
    return std::get<IntervalPrediction>(payload).interval.length();
  }
};

// Mean set size or interval length; `unbounded` when some interval is the
// whole line, in which case `value` is +inf and must not be averaged further.
struct Efficiency {
  double value = 0.0;
  bool unbounded = false;

  bool operator==(const Efficiency&) const = default;
};

namespace detail {

inline void require_single_agent(const std::vector<PredictionRecord>& records,
                                 const char* what) {
  if (records.empty()) throw ValidationError(std::string(what) + ": no records");
  const auto id = records.front().agent_id;
  for (const auto& r : records) {
    if (r.agent_id != id) throw ValidationError(std::string(what) + ": records mix agents");
  }
}

}  // namespace detail

// Fraction of records whose truth lies in the set / closed interval.
inline double coverage(const std::vector<PredictionRecord>& records) {
  detail::require_single_agent(records, "coverage");
  std::size_t hit = 0;
  for (const auto& r : records) hit += r.covered() ? 1 : 0;
  return static_cast<double>(hit) / static_cast<double>(records.size());
}

inline Efficiency efficiency(const std::vector<PredictionRecord>& records) {
  detail::require_single_agent(records, "efficiency");
  double total = 0.0;
  for (const auto& r : records) {
    const double s = r.size();
    if (std::isinf(s)) return {std::numeric_limits<double>::infinity(), true};
    total += s;
  }
  return {total / static_cast<double>(records.size()), false};
}

inline double median(std::vector<double> values) {
  if (values.empty()) throw ValidationError("median: no values");
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  return n % 2 == 1 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

struct SeedSummary {
  double median = 0.0;
  double ci_lo = 0.0;
  double ci_hi = 0.0;
  std::size_t n_seeds = 0;
};

// Median with a 95% percentile-bootstrap interval for the median. The
// interval is widened to contain the point estimate when resampling noise
// would place it outside.
inline SeedSummary seed_summary(const std::vector<double>& values, std::uint64_t seed = 0,
                                std::size_t resamples = 2000) {
  if (values.size() < 2) throw ValidationError("seed_summary: need at least 2 values");
  for (double v : values) {
    if (std::isnan(v)) throw ValidationError("seed_summary: NaN value");
  }
  SeedSummary out;
  out.n_seeds = values.size();
  out.median = median(values);

  auto rng = random::make_engine(seed, 0xb007);
  std::vector<double> medians(resamples);
  std::vector<double> draw(values.size());
  for (auto& m : medians) {
    for (auto& d : draw) d = values[random::uniform_index(rng, values.size())];
    m = median(draw);
  }
  std::sort(medians.begin(), medians.end());
  auto percentile = [&](double p) {
    // nearest-rank percentile
    auto rank = static_cast<std::size_t>(std::ceil(p * static_cast<double>(medians.size())));
    rank = std::clamp<std::size_t>(rank, 1, medians.size());
    return medians[rank - 1];
  };
  out.ci_lo = std::min(percentile(0.025), out.median);
  out.ci_hi = std::max(percentile(0.975), out.median);
  return out;
}

struct CoverageReport {
  std::map<AgentId, double> per_agent_coverage;
  std::map<AgentId, Efficiency> per_agent_efficiency;
  double global_coverage = 0.0;
  Efficiency global_efficiency;
  std::size_t test_size = 0;
  AggregationMethod method = AggregationMethod::WeightedAverage;
  std::uint64_t seed = 0;
};

// Per-agent metrics plus global = unweighted mean over agents.
inline CoverageReport build_report(const std::map<AgentId, std::vector<PredictionRecord>>& records,
                                   const std::vector<AgentId>& expected_agents,
                                   AggregationMethod method, std::uint64_t seed) {
  if (expected_agents.empty()) throw ValidationError("build_report: no agents");
  CoverageReport report;
  report.method = method;
  report.seed = seed;
  double cov_sum = 0.0;
  double eff_sum = 0.0;
  bool unbounded = false;
  for (auto id : expected_agents) {
    const auto it = records.find(id);
    if (it == records.end() || it->second.empty()) {
      throw ValidationError("build_report: missing records for agent " + std::to_string(id));
    }
    const double cov = coverage(it->second);
    const auto eff = efficiency(it->second);
    report.per_agent_coverage[id] = cov;
    report.per_agent_efficiency[id] = eff;
    report.test_size = std::max(report.test_size, it->second.size());
    cov_sum += cov;
    unbounded = unbounded || eff.unbounded;
    eff_sum += eff.unbounded ? 0.0 : eff.value;
  }
  const auto m = static_cast<double>(report.per_agent_coverage.size());
  report.global_coverage = cov_sum / m;
  report.global_efficiency = unbounded
                                 ? Efficiency{std::numeric_limits<double>::infinity(), true}
                                 : Efficiency{eff_sum / m, false};
  return report;
}

// Shortest round-trip decimal; "inf" / "-inf" for infinities.
inline std::string format_double(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

inline constexpr const char* kCoverageCsvHeader = "dataset,method,seed,agent,coverage,efficiency,runtime_s";

// One row per agent, then a "global" row.
inline std::string coverage_csv_rows(const CoverageReport& r, const std::string& dataset,
                                     double runtime_s) {
  std::string out;
  auto row = [&](const std::string& agent, double cov, const Efficiency& eff) {
    out += dataset + "," + std::string(to_string(r.method)) + "," + std::to_string(r.seed) + "," +
           agent + "," + format_double(cov) + "," +
           (eff.unbounded ? std::string("inf") : format_double(eff.value)) + "," +
           format_double(runtime_s) + "\n";
  };
  for (const auto& [id, cov] : r.per_agent_coverage) {
    row(std::to_string(id), cov, r.per_agent_efficiency.at(id));
  }
  row("global", r.global_coverage, r.global_efficiency);
  return out;
}

inline nlohmann::json efficiency_json(const Efficiency& e) {
  return e.unbounded ? nlohmann::json("inf") : nlohmann::json(e.value);
}

inline void to_json(nlohmann::json& j, const CoverageReport& r) {
  nlohmann::json agents = nlohmann::json::array();
  for (const auto& [id, cov] : r.per_agent_coverage) {
    agents.push_back({{"agent", id},
                      {"coverage", cov},
                      {"efficiency", efficiency_json(r.per_agent_efficiency.at(id))}});
  }
  j = nlohmann::json{{"method", to_string(r.method)},
                     {"seed", r.seed},
                     {"test_size", r.test_size},
                     {"global_coverage", r.global_coverage},
                     {"global_efficiency", efficiency_json(r.global_efficiency)},
                     {"agents", agents}};
}

inline void to_json(nlohmann::json& j, const SeedSummary& s) {
  j = nlohmann::json{
      {"median", s.median}, {"ci_lo", s.ci_lo}, {"ci_hi", s.ci_hi}, {"n_seeds", s.n_seeds}};
}

}  // namespace fedwq
