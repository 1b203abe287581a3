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

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <vector>

#include "fedwq/aggregation.hpp"
#include "fedwq/random.hpp"
#include "support/oracles.hpp"

using fedwq::AggregationMethod;
using fedwq::CalibrationConfig;
using fedwq::LocalQuantileSummary;
using fedwq::ScoreSample;

namespace {

std::vector<LocalQuantileSummary> two_agents() { return {{0, 0.5, 100}, {1, 0.9, 300}}; }

std::vector<double> uniform_scores(fedwq::random::Engine& rng, std::size_t n, double lo, double hi) {
  std::vector<double> v(n);
  for (auto& x : v) x = fedwq::random::uniform(rng, lo, hi);
  return v;
}

}  // namespace

TEST(WeightedAverage, Examples) {
  EXPECT_DOUBLE_EQ(fedwq::weighted_average(two_agents()).q_hat, 0.8);
  EXPECT_EQ(fedwq::weighted_average({{3, 0.7, 42}}).q_hat, 0.7);
  EXPECT_DOUBLE_EQ(fedwq::weighted_average({{0, 0.2, 10}, {1, 0.4, 10}, {2, 0.9, 10}}).q_hat, 0.5);
  const auto t = fedwq::weighted_average(two_agents());
  EXPECT_EQ(t.total_n, 400);
  EXPECT_EQ(t.agent_count, 2);
}

TEST(WeightedAverage, SentinelPropagates) {
  const auto t = fedwq::weighted_average({{0, 0.5, 100}, {1, fedwq::kUnboundedThreshold, 3}});
  EXPECT_TRUE(fedwq::is_unbounded(t.q_hat));
  EXPECT_EQ(t.total_n, 103);
}

TEST(WeightedAverage, Errors) {
  EXPECT_THROW(fedwq::weighted_average({}), fedwq::ValidationError);
  EXPECT_THROW(fedwq::weighted_average({{1, 0.5, 10}, {1, 0.6, 10}}), fedwq::ProtocolError);
  EXPECT_THROW(fedwq::weighted_average({{1, NAN, 10}}), fedwq::ValidationError);
  EXPECT_THROW(fedwq::weighted_average({{1, 0.5, 0}}), fedwq::ValidationError);
}

TEST(UnweightedAverage, Examples) {
  EXPECT_DOUBLE_EQ(fedwq::unweighted_average(two_agents()).q_hat, 0.7);
  EXPECT_EQ(fedwq::unweighted_average({{0, 0.7, 1}}).q_hat, 0.7);
  EXPECT_EQ(fedwq::unweighted_average(two_agents()).total_n, 400);
  auto rng = fedwq::random::make_engine(3);
  for (int t = 0; t < 50; ++t) {
    std::vector<LocalQuantileSummary> s;
    for (int k = 0; k < 5; ++k) s.push_back({k, fedwq::random::uniform01(rng), 37});
    EXPECT_NEAR(fedwq::unweighted_average(s).q_hat, fedwq::weighted_average(s).q_hat, 1e-15);
  }
}

TEST(PooledScores, Examples) {
  const CalibrationConfig cfg{0.2};
  const auto t = fedwq::pooled_scores_threshold({ScoreSample({1, 2, 3}), ScoreSample({4, 5, 6})}, cfg);
  EXPECT_EQ(t.q_hat, 6.0);
  EXPECT_EQ(t.total_n, 6);
  EXPECT_EQ(t.agent_count, 2);
  const ScoreSample single({0.3, 0.1, 0.9, 0.4, 0.5, 0.2, 0.8, 0.7, 0.6});
  EXPECT_EQ(fedwq::pooled_scores_threshold({single}, {0.1}).q_hat,
            fedwq::local_threshold(single, {0.1}).q);
  EXPECT_THROW(fedwq::pooled_scores_threshold({ScoreSample()}, cfg), fedwq::ValidationError);
}

TEST(PooledScores, MatchesPoolSortOracle) {
  auto rng = fedwq::random::make_engine(41);
  for (int t = 0; t < 100; ++t) {
    const auto n = 1 + fedwq::random::uniform_index(rng, 60);
    const auto copy = uniform_scores(rng, n, 0, 1);
    std::vector<double> pooled = copy;
    pooled.insert(pooled.end(), copy.begin(), copy.end());
    const auto num = static_cast<std::int64_t>(1 + fedwq::random::uniform_index(rng, 30));
    const double alpha = static_cast<double>(num) / 100.0;
    const auto got = fedwq::pooled_scores_threshold({ScoreSample(copy), ScoreSample(copy)}, {alpha});
    EXPECT_EQ(got.q_hat, oracle::sorted_quantile(pooled, num, 100));
    const auto rank_pool = oracle::conformal_rank(2 * static_cast<std::int64_t>(n), num, 100);
    const auto rank_one = oracle::conformal_rank(static_cast<std::int64_t>(n), num, 100);
    // Each value appears twice in the pool, so ranks align when 2 r1 - 1 <= r2 <= 2 r1.
    if (rank_one <= static_cast<std::int64_t>(n) && rank_pool >= 2 * rank_one - 1 &&
        rank_pool <= 2 * rank_one) {
      EXPECT_EQ(got.q_hat, fedwq::local_threshold(ScoreSample(copy), {alpha}).q);
    }
  }
}

TEST(QuantileOfQuantiles, Examples) {
  EXPECT_TRUE(fedwq::is_unbounded(fedwq::quantile_of_quantiles({{0, 0.7, 10}}, {0.05}).q_hat));
  std::vector<LocalQuantileSummary> s;
  for (int k = 1; k <= 19; ++k) s.push_back({k, static_cast<double>(k), 50});
  EXPECT_EQ(fedwq::quantile_of_quantiles(s, {0.05}).q_hat, 19.0);
  s.resize(6);
  EXPECT_TRUE(fedwq::is_unbounded(fedwq::quantile_of_quantiles(s, {0.05}).q_hat));
  EXPECT_EQ(fedwq::quantile_of_quantiles(s, {0.3}).q_hat, 5.0);
}

TEST(Aggregate, Dispatch) {
  fedwq::AggregationInput in;
  in.summaries = two_agents();
  EXPECT_DOUBLE_EQ(fedwq::aggregate(in, AggregationMethod::WeightedAverage, {0.05}).q_hat, 0.8);
  const auto local = fedwq::aggregate(in, AggregationMethod::LocalOnly, {0.05});
  EXPECT_EQ(local.threshold_for(0), 0.5);
  EXPECT_EQ(local.threshold_for(1), 0.9);
  EXPECT_TRUE(fedwq::is_unbounded(local.threshold_for(7)));
  EXPECT_THROW(fedwq::aggregate(in, AggregationMethod::PooledScores, {0.2}), fedwq::ValidationError);
  fedwq::AggregationInput raw;
  raw.samples = {ScoreSample({1, 2, 3}), ScoreSample({4, 5, 6})};
  EXPECT_EQ(fedwq::aggregate(raw, AggregationMethod::PooledScores, {0.2}).q_hat, 6.0);
  EXPECT_THROW(fedwq::aggregate(raw, AggregationMethod::WeightedAverage, {0.2}), fedwq::ValidationError);
}

TEST(Aggregate, MethodNamesRoundTrip) {
  for (auto m : fedwq::kAllMethods) EXPECT_EQ(fedwq::parse_method(fedwq::to_string(m)), m);
  EXPECT_THROW(fedwq::parse_method("median"), fedwq::ValidationError);
  EXPECT_FALSE(fedwq::is_one_shot(AggregationMethod::PooledScores));
  EXPECT_TRUE(fedwq::is_one_shot(AggregationMethod::WeightedAverage));
}

TEST(AggregationProperties, EqualQuantilesCollapse) {
  auto rng = fedwq::random::make_engine(5);
  for (int t = 0; t < 100; ++t) {
    const double v = fedwq::random::uniform(rng, -3, 3);
    std::vector<LocalQuantileSummary> s;
    for (int k = 0; k < 25; ++k) {
      s.push_back({k, v, static_cast<std::int64_t>(1 + fedwq::random::uniform_index(rng, 1000))});
    }
    EXPECT_EQ(fedwq::weighted_average(s).q_hat, v);
    EXPECT_EQ(fedwq::unweighted_average(s).q_hat, v);
    EXPECT_EQ(fedwq::quantile_of_quantiles(s, {0.05}).q_hat, v);
  }
}

TEST(AggregationProperties, WeightedAverageBounded) {
  auto rng = fedwq::random::make_engine(6);
  for (int t = 0; t < 500; ++t) {
    std::vector<LocalQuantileSummary> s;
    const auto m = 1 + fedwq::random::uniform_index(rng, 12);
    for (std::uint64_t k = 0; k < m; ++k) {
      s.push_back({static_cast<fedwq::AgentId>(k), fedwq::random::normal(rng, 0, 1e3),
                   static_cast<std::int64_t>(1 + fedwq::random::uniform_index(rng, 5000))});
    }
    const auto [lo, hi] = std::minmax_element(s.begin(), s.end(),
                                              [](auto& a, auto& b) { return a.q < b.q; });
    const double q = fedwq::weighted_average(s).q_hat;
    EXPECT_LE(lo->q, q);
    EXPECT_LE(q, hi->q);
  }
}

TEST(AggregationProperties, DoublingWeightMovesTowardAgent) {
  auto rng = fedwq::random::make_engine(7);
  for (int t = 0; t < 200; ++t) {
    std::vector<LocalQuantileSummary> s;
    for (int k = 0; k < 4; ++k) {
      s.push_back({k, fedwq::random::uniform01(rng), static_cast<std::int64_t>(1 + fedwq::random::uniform_index(rng, 500))});
    }
    const double before = fedwq::weighted_average(s).q_hat;
    const auto target = static_cast<std::size_t>(fedwq::random::uniform_index(rng, 4));
    if (s[target].q == before) continue;
    s[target].n *= 2;
    const double after = fedwq::weighted_average(s).q_hat;
    EXPECT_LT(std::abs(after - s[target].q), std::abs(before - s[target].q));
  }
}

TEST(AggregationProperties, PermutationInvariant) {
  auto rng = fedwq::random::make_engine(8);
  std::vector<LocalQuantileSummary> s;
  std::vector<ScoreSample> samples;
  for (int k = 0; k < 8; ++k) {
    s.push_back({k, fedwq::random::normal(rng, 0, 1), static_cast<std::int64_t>(1 + fedwq::random::uniform_index(rng, 200))});
    samples.emplace_back(uniform_scores(rng, 20 + k, 0, 1));
  }
  fedwq::AggregationInput base{s, samples};
  for (auto m : fedwq::kAllMethods) {
    const auto ref = fedwq::aggregate(base, m, {0.2});
    for (int t = 0; t < 10; ++t) {
      auto in = base;
      fedwq::random::shuffle(rng, in.summaries);
      fedwq::random::shuffle(rng, in.samples);
      const auto got = fedwq::aggregate(in, m, {0.2});
      EXPECT_EQ(got.q_hat, ref.q_hat) << fedwq::to_string(m);
      EXPECT_EQ(got.per_agent, ref.per_agent);
    }
  }
}

TEST(AggregationProperties, GapToPooledSmallOnIdenticalAgents) {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    auto rng = fedwq::random::make_engine(seed, 0xa66);
    std::vector<ScoreSample> samples;
    std::vector<LocalQuantileSummary> summaries;
    for (int k = 0; k < 4; ++k) {
      const auto n = 500 + fedwq::random::uniform_index(rng, 500);
      std::vector<double> v(n);
      for (auto& x : v) x = std::abs(fedwq::random::standard_normal(rng));
      samples.emplace_back(v);
      summaries.push_back(fedwq::local_threshold(samples.back(), {0.05}, k));
    }
    const double wa = fedwq::weighted_average(summaries).q_hat;
    const double pooled = fedwq::pooled_scores_threshold(samples, {0.05}).q_hat;
    EXPECT_LE(std::abs(wa - pooled), 0.05) << "seed " << seed;
  }
}

TEST(AggregationProperties, DisjointSupportsDiffer) {
  std::vector<double> a(50);
  std::vector<double> b(150);
  for (std::size_t i = 0; i < a.size(); ++i) a[i] = static_cast<double>(i + 1) / 100.0;
  for (std::size_t i = 0; i < b.size(); ++i) b[i] = 10.0 + static_cast<double>(i + 1) / 100.0;
  const ScoreSample sa(a);
  const ScoreSample sb(b);
  const double wa = fedwq::weighted_average({fedwq::local_threshold(sa, {0.1}, 0),
                                             fedwq::local_threshold(sb, {0.1}, 1)}).q_hat;
  const double pooled = fedwq::pooled_scores_threshold({sa, sb}, {0.1}).q_hat;
  EXPECT_NE(wa, pooled);
  EXPECT_GT(std::abs(wa - pooled), 1.0);
}
