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
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "fedwq/experiment.hpp"

namespace {

using fedwq::AggregationMethod;
using fedwq::ExperimentConfig;
using fedwq::ValidationError;
using nlohmann::json;

json small_config() {
  return {{"schema", "fedwq.experiment/1"},
          {"dataset", {{"kind", "synthetic_classification"}, {"pool_size", 1500}, {"test_size", 400}}},
          {"agents", 4},
          {"strong_agents", 2},
          {"weak_agents", 2},
          {"seeds", {3, 4}},
          {"methods", {"weighted_average", "unweighted_average"}}};
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::size_t count_lines(const std::string& s) {
  return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n'));
}

}  // namespace

TEST(ExperimentConfig, DefaultsValidate) {
  ExperimentConfig c;
  EXPECT_NO_THROW(c.validate());
  EXPECT_EQ(c.strong_agents + c.weak_agents, c.agents);
}

TEST(ExperimentConfig, RejectsStrongWeakMismatch) {
  auto j = small_config();
  j["weak_agents"] = 3;
  EXPECT_THROW(fedwq::experiment_config_from_json(j), ValidationError);
}

TEST(ExperimentConfig, RejectsUnknownKeyAndSchema) {
  auto j = small_config();
  j["bogus"] = 1;
  EXPECT_THROW(fedwq::experiment_config_from_json(j), ValidationError);
  auto k = small_config();
  k["schema"] = "other/1";
  EXPECT_THROW(fedwq::experiment_config_from_json(k), ValidationError);
  EXPECT_THROW(fedwq::experiment_config_from_json(json::array()), ValidationError);
}

TEST(ExperimentConfig, RejectsBadValues) {
  for (auto [key, value] : std::vector<std::pair<std::string, json>>{
           {"alpha", 0.0}, {"alpha", 1.0}, {"beta", -1.0}, {"cal_fraction", 1.0},
           {"weak_cal_scale", 0.0}, {"methods", json::array()}, {"seeds", json::array()},
           {"methods", {"nope"}}}) {
    auto j = small_config();
    j[key] = value;
    EXPECT_THROW(fedwq::experiment_config_from_json(j), ValidationError) << key << "=" << value;
  }
  auto j = small_config();
  j["agents"] = "six";
  EXPECT_THROW(fedwq::experiment_config_from_json(j), ValidationError);
}

TEST(ExperimentConfig, AgentsAloneSplitsStrongAndWeak) {
  auto j = small_config();
  j.erase("strong_agents");
  j.erase("weak_agents");
  j["agents"] = 5;
  const auto c = fedwq::experiment_config_from_json(j);
  EXPECT_EQ(c.strong_agents, 2u);
  EXPECT_EQ(c.weak_agents, 3u);
}

TEST(ExperimentConfig, RegressionUsesSmallerLearningRate) {
  auto j = small_config();
  j["dataset"] = {{"kind", "synthetic_regression"}};
  auto c = fedwq::experiment_config_from_json(j);
  EXPECT_EQ(c.strong_model.learning_rate, fedwq::AgentModelConfig::kRegressionLearningRate);
  EXPECT_EQ(c.weak_model.learning_rate, fedwq::AgentModelConfig::kRegressionLearningRate);
  j["strong_model"] = {{"learning_rate", 0.25}};
  c = fedwq::experiment_config_from_json(j);
  EXPECT_EQ(c.strong_model.learning_rate, 0.25);
  const auto cls = fedwq::experiment_config_from_json(small_config());
  EXPECT_NE(cls.strong_model.learning_rate, fedwq::AgentModelConfig::kRegressionLearningRate);
}

TEST(ExperimentConfig, JsonRoundTrip) {
  auto j = small_config();
  j["seed_count"] = 3;
  j.erase("seeds");
  const auto c = fedwq::experiment_config_from_json(j);
  EXPECT_EQ(c.seeds, (std::vector<std::uint64_t>{0, 1, 2}));
  const auto back = fedwq::experiment_config_from_json(fedwq::experiment_config_to_json(c));
  EXPECT_EQ(fedwq::experiment_config_to_json(back), fedwq::experiment_config_to_json(c));
}

TEST(Experiment, CoverageCsvShape) {
  auto j = small_config();
  j["methods"] = {"weighted_average"};
  const auto r = fedwq::run_experiment(fedwq::experiment_config_from_json(j));
  const auto csv = fedwq::coverage_csv(r);
  // header + 2 seeds x (4 agents + global)
  EXPECT_EQ(count_lines(csv), 1u + 2u * 5u);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), fedwq::kCoverageCsvHeader);
}

TEST(Experiment, RepeatRunsAreByteIdentical) {
  const auto cfg = fedwq::experiment_config_from_json(small_config());
  const auto a = fedwq::run_experiment(cfg);
  const auto b = fedwq::run_experiment(cfg);
  EXPECT_EQ(fedwq::coverage_csv(a), fedwq::coverage_csv(b));
  EXPECT_EQ(fedwq::summary_csv(fedwq::summarize(a)), fedwq::summary_csv(fedwq::summarize(b)));
}

TEST(Experiment, SeedOrderDoesNotChangePerSeedRows) {
  auto j = small_config();
  const auto a = fedwq::run_experiment(fedwq::experiment_config_from_json(j));
  j["seeds"] = {4};
  const auto b = fedwq::run_experiment(fedwq::experiment_config_from_json(j));
  EXPECT_EQ(a.outcome(1, AggregationMethod::WeightedAverage).round.threshold.q_hat,
            b.outcome(0, AggregationMethod::WeightedAverage).round.threshold.q_hat);
}

TEST(Experiment, SummarySkippedBelowTwoSeeds) {
  auto j = small_config();
  j["seeds"] = {0};
  const auto r = fedwq::run_experiment(fedwq::experiment_config_from_json(j));
  EXPECT_TRUE(fedwq::summarize(r).empty());
  const auto two = fedwq::run_experiment(fedwq::experiment_config_from_json(small_config()));
  // 2 methods x (4 agents + global) x 2 metrics
  EXPECT_EQ(fedwq::summarize(two).size(), 20u);
}

TEST(Experiment, WeakCalScaleShrinksWeakAgentsOnly) {
  auto j = small_config();
  j["seeds"] = {0};
  const auto full = fedwq::prepare_seed(fedwq::experiment_config_from_json(j), 0);
  j["weak_cal_scale"] = 0.1;
  const auto cut = fedwq::prepare_seed(fedwq::experiment_config_from_json(j), 0);
  for (std::size_t k = 0; k < 4; ++k) {
    const auto before = full.calibration_indices[k].size();
    const auto after = cut.calibration_indices[k].size();
    if (k < 2 || before == 0) {
      EXPECT_EQ(after, before) << k;
    } else {
      EXPECT_LT(after, before) << k;
      EXPECT_GE(after, 1u);
    }
  }
}

TEST(Experiment, RegressionRunCovers) {
  auto j = small_config();
  j["dataset"] = {{"kind", "synthetic_regression"}, {"pool_size", 3000}, {"test_size", 1000}};
  j["methods"] = {"weighted_average"};
  const auto r = fedwq::run_experiment(fedwq::experiment_config_from_json(j));
  for (std::size_t s = 0; s < r.seeds.size(); ++s) {
    const auto& rep = r.outcome(s, AggregationMethod::WeightedAverage).report;
    EXPECT_GT(rep.global_coverage, 0.9);
  }
}

TEST(Experiment, CsvDataset) {
  const auto dir = std::filesystem::temp_directory_path() / "fedwq_exp_csv";
  std::filesystem::create_directories(dir);
  {
    std::ofstream out(dir / "toy.csv");
    out << "a,b,target\n";
    auto rng = fedwq::random::make_engine(11, 0);
    for (int i = 0; i < 600; ++i) {
      const int c = i % 2;
      out << (c * 2.0 + fedwq::random::standard_normal(rng)) << ","
          << fedwq::random::standard_normal(rng) << "," << c << "\n";
    }
  }
  auto j = small_config();
  j["dataset"] = {{"kind", "csv"}, {"path", (dir / "toy.csv").string()}, {"num_classes", 2}};
  const auto cfg = fedwq::experiment_config_from_json(j);
  EXPECT_EQ(cfg.dataset.name(), "toy");
  const auto r = fedwq::run_experiment(cfg);
  EXPECT_EQ(r.seeds.size(), 2u);
  std::filesystem::remove_all(dir);
}

TEST(Experiment, WritesArtifacts) {
  const auto dir = std::filesystem::temp_directory_path() / "fedwq_exp_artifacts";
  std::filesystem::remove_all(dir);
  const auto r = fedwq::run_experiment(fedwq::experiment_config_from_json(small_config()));
  fedwq::write_artifacts(r, dir);
  for (const char* f : {"config.json", "coverage.csv", "summary.csv", "summary.json", "rounds.jsonl",
                        "audit.jsonl", "seed_3/partition.json", "seed_4/agent_0_model.json"}) {
    EXPECT_TRUE(std::filesystem::exists(dir / f)) << f;
  }
  EXPECT_EQ(slurp(dir / "coverage.csv"), fedwq::coverage_csv(r));
  EXPECT_EQ(count_lines(slurp(dir / "rounds.jsonl")), 4u);  // 2 seeds x 2 methods

  const auto score_file = dir / "seed_3/agent_0_scores.json";
  ASSERT_TRUE(std::filesystem::exists(score_file));
  const auto [id, sample] = fedwq::load_score_file(score_file.string());
  EXPECT_EQ(id, 0);
  const auto& orig = r.seeds[0].prepared.participants[0].sample;
  ASSERT_EQ(sample.size(), orig.size());
  for (std::size_t i = 0; i < orig.size(); ++i) EXPECT_EQ(sample.values()[i], orig.values()[i]);

  const auto cfg = fedwq::load_experiment_config((dir / "config.json").string());
  EXPECT_EQ(cfg.seeds, r.config.seeds);
  std::filesystem::remove_all(dir);
}

TEST(Experiment, NetworkedMatchesSimulated) {
  auto j = small_config();
  j["seeds"] = {5};
  const auto sim = fedwq::run_experiment(fedwq::experiment_config_from_json(j));
  j["networked"] = true;
  const auto net = fedwq::run_experiment(fedwq::experiment_config_from_json(j));
  for (auto m : {AggregationMethod::WeightedAverage, AggregationMethod::UnweightedAverage}) {
    const double a = sim.outcome(0, m).round.threshold.q_hat;
    const double b = net.outcome(0, m).round.threshold.q_hat;
    EXPECT_EQ(std::memcmp(&a, &b, sizeof a), 0);
  }
  EXPECT_EQ(fedwq::coverage_csv(sim), fedwq::coverage_csv(net));
}
