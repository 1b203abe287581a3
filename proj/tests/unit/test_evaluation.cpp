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

#include <cmath>
#include <map>
#include <vector>

#include "fedwq/evaluation.hpp"
#include "fedwq/random.hpp"
#include "support/oracles.hpp"

using fedwq::Efficiency;
using fedwq::IntervalPrediction;
using fedwq::PredictionRecord;
using fedwq::SetPrediction;

namespace {

PredictionRecord set_record(fedwq::AgentId id, std::vector<fedwq::ClassIndex> set, fedwq::ClassIndex label) {
  return {id, SetPrediction{std::move(set), label}};
}

PredictionRecord interval_record(fedwq::AgentId id, double lo, double hi, double y) {
  fedwq::PredictionInterval i;
  i.lo = lo;
  i.hi = hi;
  return {id, IntervalPrediction{i, y}};
}

// Records with `hits` of `n` covered singletons.
std::vector<PredictionRecord> agent_records(fedwq::AgentId id, int hits, int n) {
  std::vector<PredictionRecord> out;
  for (int i = 0; i < n; ++i) out.push_back(set_record(id, {0}, i < hits ? 0 : 1));
  return out;
}

}  // namespace

TEST(Coverage, Examples) {
  EXPECT_EQ(fedwq::coverage(agent_records(0, 5, 5)), 1.0);
  std::vector<PredictionRecord> empty_sets;
  for (int i = 0; i < 4; ++i) empty_sets.push_back(set_record(0, {}, 1));
  EXPECT_EQ(fedwq::coverage(empty_sets), 0.0);
  EXPECT_EQ(fedwq::coverage(agent_records(0, 3, 6)), 0.5);
}

TEST(Coverage, ClosedEndpointsAndUnbounded) {
  EXPECT_EQ(fedwq::coverage({interval_record(0, 1, 9, 9), interval_record(0, 1, 9, 1)}), 1.0);
  EXPECT_EQ(fedwq::coverage({interval_record(0, 1, 9, 9.0000001)}), 0.0);
  PredictionRecord open{0, IntervalPrediction{fedwq::cqr_prediction_interval(fedwq::QuantilePair::make(0, 1),
                                                                             fedwq::kUnboundedThreshold),
                                              1e308}};
  EXPECT_EQ(fedwq::coverage({open}), 1.0);
}

TEST(Coverage, Errors) {
  EXPECT_THROW(fedwq::coverage({}), fedwq::ValidationError);
  EXPECT_THROW(fedwq::coverage({set_record(0, {0}, 0), set_record(1, {0}, 0)}), fedwq::ValidationError);
}

TEST(EfficiencyTest, Examples) {
  EXPECT_EQ(fedwq::efficiency(agent_records(0, 3, 3)), (Efficiency{1.0, false}));
  EXPECT_EQ(fedwq::efficiency({interval_record(0, 1, 9, 2), interval_record(0, 1, 9, 3)}),
            (Efficiency{8.0, false}));
  EXPECT_EQ(fedwq::efficiency({set_record(0, {}, 0), set_record(0, {0, 1}, 0), set_record(0, {0, 1, 2, 3}, 0)}),
            (Efficiency{2.0, false}));
}

TEST(EfficiencyTest, UnboundedIsFlagged) {
  PredictionRecord open{0, IntervalPrediction{fedwq::cqr_prediction_interval(fedwq::QuantilePair::make(0, 1),
                                                                             fedwq::kUnboundedThreshold),
                                              0.5}};
  const auto e = fedwq::efficiency({interval_record(0, 0, 1, 0.5), open});
  EXPECT_TRUE(e.unbounded);
  EXPECT_TRUE(std::isinf(e.value));
}

TEST(SeedSummaryTest, Examples) {
  EXPECT_EQ(fedwq::seed_summary({1, 2, 3}).median, 2.0);
  const auto c = fedwq::seed_summary({0.7, 0.7, 0.7, 0.7});
  EXPECT_EQ(c.ci_lo, 0.7);
  EXPECT_EQ(c.median, 0.7);
  EXPECT_EQ(c.ci_hi, 0.7);
  const auto s = fedwq::seed_summary({1, 2, 3, 4, 5, 6, 7, 8, 9, 10});
  EXPECT_EQ(s.median, 5.5);
  EXPECT_LE(s.ci_lo, 5.5);
  EXPECT_GE(s.ci_hi, 5.5);
  EXPECT_EQ(s.n_seeds, 10u);
  EXPECT_THROW(fedwq::seed_summary({1.0}), fedwq::ValidationError);
  EXPECT_THROW(fedwq::seed_summary({1.0, NAN}), fedwq::ValidationError);
}

TEST(SeedSummaryTest, AgreesWithIndependentBootstrap) {
  const std::vector<double> ten{1, 2, 3, 4, 5, 6, 7, 8, 9, 10};
  const auto [olo, ohi] = oracle::bootstrap_median_ci(ten, 17);
  EXPECT_LE(olo, 5.5);
  EXPECT_GE(ohi, 5.5);
  const auto s = fedwq::seed_summary(ten, 17);
  EXPECT_NEAR(s.ci_lo, olo, 1.0);
  EXPECT_NEAR(s.ci_hi, ohi, 1.0);

  auto rng = fedwq::random::make_engine(3);
  std::vector<double> big(400);
  for (auto& v : big) v = fedwq::random::standard_normal(rng);
  const auto b = fedwq::seed_summary(big, 5);
  const auto [blo, bhi] = oracle::bootstrap_median_ci(big, 5);
  EXPECT_EQ(b.median, oracle::median(big));
  EXPECT_NEAR(b.ci_lo, blo, 0.05);
  EXPECT_NEAR(b.ci_hi, bhi, 0.05);
}

TEST(SeedSummaryTest, DeterministicAndOrdered) {
  auto rng = fedwq::random::make_engine(4);
  for (int t = 0; t < 50; ++t) {
    std::vector<double> v(2 + fedwq::random::uniform_index(rng, 20));
    for (auto& x : v) x = fedwq::random::uniform01(rng);
    const auto a = fedwq::seed_summary(v, 9);
    const auto b = fedwq::seed_summary(v, 9);
    EXPECT_EQ(a.ci_lo, b.ci_lo);
    EXPECT_EQ(a.ci_hi, b.ci_hi);
    EXPECT_LE(a.ci_lo, a.median);
    EXPECT_LE(a.median, a.ci_hi);
  }
}

TEST(BuildReport, FootnoteAverage) {
  std::map<fedwq::AgentId, std::vector<PredictionRecord>> records;
  records[0] = agent_records(0, 20, 20);
  records[1] = agent_records(1, 18, 20);
  const auto r = fedwq::build_report(records, {0, 1}, fedwq::AggregationMethod::WeightedAverage, 3);
  EXPECT_DOUBLE_EQ(r.global_coverage, 0.95);
  EXPECT_EQ(r.per_agent_coverage.at(1), 0.9);
  EXPECT_EQ(r.seed, 3u);
  EXPECT_EQ(r.test_size, 20u);
}

TEST(BuildReport, MaskingEffect) {
  // Nominal on average while one agent sits below nominal.
  std::map<fedwq::AgentId, std::vector<PredictionRecord>> records;
  records[0] = agent_records(0, 100, 100);
  records[1] = agent_records(1, 90, 100);
  const auto r = fedwq::build_report(records, {0, 1}, fedwq::AggregationMethod::WeightedAverage, 0);
  EXPECT_GE(r.global_coverage, 0.95 - 1e-12);
  EXPECT_LT(r.per_agent_coverage.at(1), 0.95);
}

TEST(BuildReport, SingleAgentAndPermutation) {
  std::map<fedwq::AgentId, std::vector<PredictionRecord>> one;
  one[4] = agent_records(4, 7, 10);
  EXPECT_EQ(fedwq::build_report(one, {4}, fedwq::AggregationMethod::LocalOnly, 0).global_coverage, 0.7);

  std::map<fedwq::AgentId, std::vector<PredictionRecord>> records;
  records[0] = agent_records(0, 7, 10);
  records[1] = agent_records(1, 9, 10);
  records[2] = agent_records(2, 4, 10);
  const auto a = fedwq::build_report(records, {0, 1, 2}, fedwq::AggregationMethod::LocalOnly, 0);
  const auto b = fedwq::build_report(records, {2, 0, 1}, fedwq::AggregationMethod::LocalOnly, 0);
  EXPECT_EQ(a.global_coverage, b.global_coverage);
  EXPECT_EQ(a.per_agent_coverage, b.per_agent_coverage);
  EXPECT_EQ(a.global_efficiency, b.global_efficiency);
  EXPECT_THROW(fedwq::build_report(records, {0, 5}, fedwq::AggregationMethod::LocalOnly, 0),
               fedwq::ValidationError);
}

TEST(BuildReport, UnboundedEfficiencyPropagates) {
  std::map<fedwq::AgentId, std::vector<PredictionRecord>> records;
  records[0] = {interval_record(0, 0, 1, 0.5)};
  records[1] = {PredictionRecord{1, IntervalPrediction{fedwq::cqr_prediction_interval(
                                                           fedwq::QuantilePair::make(0, 1), fedwq::kUnboundedThreshold),
                                                       0.5}}};
  const auto r = fedwq::build_report(records, {0, 1}, fedwq::AggregationMethod::WeightedAverage, 0);
  EXPECT_TRUE(r.global_efficiency.unbounded);
  EXPECT_EQ(r.global_coverage, 1.0);
}

TEST(MetricProperties, MonotoneInThreshold) {
  auto rng = fedwq::random::make_engine(12);
  std::vector<fedwq::ProbabilityVector> probs;
  std::vector<fedwq::ClassIndex> labels;
  for (int i = 0; i < 300; ++i) {
    std::vector<double> p(5);
    double total = 0.0;
    for (auto& v : p) total += (v = fedwq::random::uniform(rng, 0.01, 1));
    for (auto& v : p) v /= total;
    probs.emplace_back(p);
    labels.push_back(fedwq::random::uniform_index(rng, 5));
  }
  auto metrics = [&](double q) {
    std::vector<PredictionRecord> recs;
    for (std::size_t i = 0; i < probs.size(); ++i) {
      recs.push_back(set_record(0, fedwq::aps_prediction_set(probs[i], q), labels[i]));
    }
    return std::pair{fedwq::coverage(recs), fedwq::efficiency(recs).value};
  };
  auto previous = metrics(0.0);
  for (double q = 0.05; q <= 1.0; q += 0.05) {
    const auto cur = metrics(q);
    EXPECT_LE(previous.first, cur.first);
    EXPECT_LE(previous.second, cur.second);
    EXPECT_GE(cur.first, 0.0);
    EXPECT_LE(cur.first, 1.0);
    EXPECT_LE(cur.second, 5.0);
    previous = cur;
  }
}

TEST(CoverageCsv, RowsAndHeader) {
  std::map<fedwq::AgentId, std::vector<PredictionRecord>> records;
  records[0] = agent_records(0, 1, 2);
  records[1] = agent_records(1, 2, 2);
  const auto r = fedwq::build_report(records, {0, 1}, fedwq::AggregationMethod::WeightedAverage, 2);
  EXPECT_STREQ(fedwq::kCoverageCsvHeader, "dataset,method,seed,agent,coverage,efficiency,runtime_s");
  const auto rows = fedwq::coverage_csv_rows(r, "toy", 0.0);
  EXPECT_NE(rows.find("toy,weighted_average,2,global,0.75,1,0"), std::string::npos) << rows;
  EXPECT_NE(rows.find("toy,weighted_average,2,0,0.5,1,0"), std::string::npos) << rows;
}
