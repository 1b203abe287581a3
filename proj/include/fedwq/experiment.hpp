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
#include <atomic>
#include <chrono>
#include <cstdint>
#include <exception>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "fedwq/aggregation.hpp"
#include "fedwq/calibration.hpp"
#include "fedwq/error.hpp"
#include "fedwq/evaluation.hpp"
#include "fedwq/federation/network.hpp"
#include "fedwq/federation/simulator.hpp"
#include "fedwq/models.hpp"
#include "fedwq/partition.hpp"
#include "fedwq/random.hpp"
#include "fedwq/scores.hpp"
#include "fedwq/synthetic.hpp"

// End-to-end experiment: split, partition, train strong/weak agents on the
// shared training set, calibrate, run one round per method and evaluate every
// agent on the shared test set.
namespace fedwq {

inline constexpr const char* kExperimentSchema = "fedwq.experiment/1";

enum class DatasetKind { SyntheticClassification, SyntheticRegression, CsvFile };

struct DatasetSpec {
  DatasetKind kind = DatasetKind::SyntheticClassification;
  synthetic::ClassificationParams classification;
  synthetic::RegressionParams regression;
  std::string csv_path;
  Task csv_task = Task::classification(2);
  std::string target_column = "target";
  double test_fraction = 0.2;

  std::string name() const {
    switch (kind) {
      case DatasetKind::SyntheticClassification: return "synthetic_classification";
      case DatasetKind::SyntheticRegression: return "synthetic_regression";
      case DatasetKind::CsvFile: return std::filesystem::path(csv_path).stem().string();
    }
    return "unknown";
  }

  bool is_classification() const {
    return kind == DatasetKind::SyntheticClassification ||
           (kind == DatasetKind::CsvFile && csv_task.is_classification());
  }
};

struct ExperimentConfig {
  DatasetSpec dataset;
  std::size_t agents = 6;
  std::size_t strong_agents = 3;
  std::size_t weak_agents = 3;
  double beta = 0.3;
  double alpha = 0.05;
  std::size_t bins = 5;
  double cal_fraction = 0.3;
  std::vector<AggregationMethod> methods = {AggregationMethod::WeightedAverage};
  std::vector<std::uint64_t> seeds = {0, 1, 2, 3, 4, 5, 6, 7, 8, 9};
  AgentModelConfig strong_model = AgentModelConfig::strong();
  AgentModelConfig weak_model = AgentModelConfig::weak();
  // Fraction of its partition share each weak agent keeps for calibration.
  double weak_cal_scale = 1.0;
  std::string output_dir = "fedwq-out";
  bool networked = false;
  bool record_runtime = false;  // off keeps every output byte reproducible
  std::string round_prefix = "fedwq";
  std::chrono::milliseconds round_timeout{30'000};

  void validate() const {
    if (agents < 1) throw ValidationError("config: agents must be >= 1");
    if (strong_agents + weak_agents != agents) {
      throw ValidationError("config: strong_agents + weak_agents must equal agents");
    }
    if (!(beta > 0.0)) throw ValidationError("config: beta must be positive");
    CalibrationConfig{alpha}.validate();
    if (bins < 1) throw ValidationError("config: bins must be >= 1");
    if (!(cal_fraction > 0.0 && cal_fraction < 1.0)) {
      throw ValidationError("config: cal_fraction must lie in (0, 1)");
    }
    if (!(weak_cal_scale > 0.0 && weak_cal_scale <= 1.0)) {
      throw ValidationError("config: weak_cal_scale must lie in (0, 1]");
    }
    if (methods.empty()) throw ValidationError("config: no methods");
    if (seeds.empty()) throw ValidationError("config: no seeds");
    strong_model.validate();
    weak_model.validate();
    if (dataset.kind == DatasetKind::CsvFile && dataset.csv_path.empty()) {
      throw ValidationError("config: csv dataset needs a path");
    }
  }

  AgentStrength strength_of(std::size_t agent) const {
    return agent < strong_agents ? AgentStrength::Strong : AgentStrength::Weak;
  }
};

namespace detail {

template <typename T>
void read_opt(const nlohmann::json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

inline AgentModelConfig model_config_from_json(const nlohmann::json& j, AgentModelConfig base) {
  read_opt(j, "epochs", base.epochs);
  read_opt(j, "steps_per_epoch", base.steps_per_epoch);
  read_opt(j, "learning_rate", base.learning_rate);
  read_opt(j, "feature_fraction", base.feature_fraction);
  if (j.contains("feature_mask")) {
    base.feature_mask = j.at("feature_mask").get<std::vector<std::size_t>>();
  }
  if (j.contains("quantile_levels")) {
    const auto q = j.at("quantile_levels").get<std::vector<double>>();
    if (q.size() != 2) throw ValidationError("config: quantile_levels must be a pair");
    base.quantile_levels = {q[0], q[1]};
  }
  return base;
}

inline nlohmann::json model_config_to_json(const AgentModelConfig& c) {
  nlohmann::json j{{"strength", to_string(c.strength)},
                   {"epochs", c.epochs},
                   {"steps_per_epoch", c.steps_per_epoch},
                   {"learning_rate", c.learning_rate},
                   {"feature_fraction", c.feature_fraction},
                   {"quantile_levels", {c.quantile_levels.lo, c.quantile_levels.hi}}};
  if (c.feature_mask) j["feature_mask"] = *c.feature_mask;
  return j;
}

}  // namespace detail

// Parses a versioned JSON experiment config. Unknown keys are rejected so
// typos do not silently fall back to defaults.
inline ExperimentConfig experiment_config_from_json(const nlohmann::json& j) {
  static const std::set<std::string> known = {
      "schema",       "dataset",       "agents",       "strong_agents",  "weak_agents",
      "beta",         "alpha",         "bins",         "cal_fraction",   "methods",
      "seeds",        "seed_count",    "strong_model", "weak_model",     "weak_cal_scale",
      "output_dir",   "networked",     "record_runtime", "round_prefix", "round_timeout_s"};
  try {
    if (!j.is_object()) throw ValidationError("config: top level must be an object");
    if (j.value("schema", std::string()) != kExperimentSchema) {
      throw ValidationError(std::string("config: schema must be \"") + kExperimentSchema + "\"");
    }
    for (const auto& [key, _] : j.items()) {
      if (!known.count(key)) throw ValidationError("config: unknown key '" + key + "'");
    }
    ExperimentConfig c;
    if (j.contains("dataset")) {
      const auto& d = j.at("dataset");
      const auto kind = d.value("kind", std::string("synthetic_classification"));
      if (kind == "synthetic_classification") {
        c.dataset.kind = DatasetKind::SyntheticClassification;
        auto& p = c.dataset.classification;
        detail::read_opt(d, "classes", p.classes);
        detail::read_opt(d, "dim", p.dim);
        detail::read_opt(d, "separation", p.separation);
        detail::read_opt(d, "sigma", p.sigma);
        detail::read_opt(d, "pool_size", p.pool_size);
        detail::read_opt(d, "test_size", p.test_size);
      } else if (kind == "synthetic_regression") {
        c.dataset.kind = DatasetKind::SyntheticRegression;
        auto& p = c.dataset.regression;
        detail::read_opt(d, "dim", p.dim);
        detail::read_opt(d, "noise", p.noise);
        detail::read_opt(d, "heteroscedastic", p.heteroscedastic);
        detail::read_opt(d, "pool_size", p.pool_size);
        detail::read_opt(d, "test_size", p.test_size);
      } else if (kind == "csv") {
        c.dataset.kind = DatasetKind::CsvFile;
        c.dataset.csv_path = d.at("path").get<std::string>();
        const auto task = d.value("task", std::string("classification"));
        if (task == "classification") {
          c.dataset.csv_task = Task::classification(d.at("num_classes").get<std::size_t>());
        } else if (task == "regression") {
          c.dataset.csv_task = Task::regression();
        } else {
          throw ValidationError("config: dataset.task must be classification or regression");
        }
        detail::read_opt(d, "target_column", c.dataset.target_column);
        detail::read_opt(d, "test_fraction", c.dataset.test_fraction);
      } else {
        throw ValidationError("config: unknown dataset kind '" + kind + "'");
      }
    }
    detail::read_opt(j, "agents", c.agents);
    detail::read_opt(j, "strong_agents", c.strong_agents);
    detail::read_opt(j, "weak_agents", c.weak_agents);
    if (j.contains("agents") && !j.contains("strong_agents") && !j.contains("weak_agents")) {
      c.strong_agents = c.agents / 2;
      c.weak_agents = c.agents - c.strong_agents;
    }
    detail::read_opt(j, "beta", c.beta);
    detail::read_opt(j, "alpha", c.alpha);
    detail::read_opt(j, "bins", c.bins);
    detail::read_opt(j, "cal_fraction", c.cal_fraction);
    if (j.contains("methods")) {
      c.methods.clear();
      for (const auto& m : j.at("methods")) c.methods.push_back(parse_method(m.get<std::string>()));
    }
    if (j.contains("seeds")) {
      c.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
    } else if (j.contains("seed_count")) {
      c.seeds.clear();
      for (std::uint64_t s = 0; s < j.at("seed_count").get<std::uint64_t>(); ++s) c.seeds.push_back(s);
    }
    c.strong_model.quantile_levels = AgentModelConfig::levels_for_alpha(c.alpha);
    c.weak_model.quantile_levels = AgentModelConfig::levels_for_alpha(c.alpha);
    if (!c.dataset.is_classification()) {
      c.strong_model.learning_rate = AgentModelConfig::kRegressionLearningRate;
      c.weak_model.learning_rate = AgentModelConfig::kRegressionLearningRate;
    }
    if (j.contains("strong_model")) {
      c.strong_model = detail::model_config_from_json(j.at("strong_model"), c.strong_model);
    }
    if (j.contains("weak_model")) {
      c.weak_model = detail::model_config_from_json(j.at("weak_model"), c.weak_model);
    }
    detail::read_opt(j, "weak_cal_scale", c.weak_cal_scale);
    detail::read_opt(j, "output_dir", c.output_dir);
    detail::read_opt(j, "networked", c.networked);
    detail::read_opt(j, "record_runtime", c.record_runtime);
    detail::read_opt(j, "round_prefix", c.round_prefix);
    if (j.contains("round_timeout_s")) {
      c.round_timeout = std::chrono::milliseconds(
          static_cast<std::int64_t>(1000.0 * j.at("round_timeout_s").get<double>()));
    }
    c.validate();
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("config: ") + e.what());
  }
}

inline nlohmann::json experiment_config_to_json(const ExperimentConfig& c) {
  nlohmann::json dataset;
  switch (c.dataset.kind) {
    case DatasetKind::SyntheticClassification: {
      const auto& p = c.dataset.classification;
      dataset = {{"kind", "synthetic_classification"}, {"classes", p.classes},
                 {"dim", p.dim},          {"separation", p.separation},
                 {"sigma", p.sigma},      {"pool_size", p.pool_size},
                 {"test_size", p.test_size}};
      break;
    }
    case DatasetKind::SyntheticRegression: {
      const auto& p = c.dataset.regression;
      dataset = {{"kind", "synthetic_regression"}, {"dim", p.dim},
                 {"noise", p.noise},               {"heteroscedastic", p.heteroscedastic},
                 {"pool_size", p.pool_size},       {"test_size", p.test_size}};
      break;
    }
    case DatasetKind::CsvFile:
      dataset = {{"kind", "csv"},
                 {"path", c.dataset.csv_path},
                 {"task", c.dataset.csv_task.is_classification() ? "classification" : "regression"},
                 {"target_column", c.dataset.target_column},
                 {"test_fraction", c.dataset.test_fraction}};
      if (c.dataset.csv_task.is_classification()) {
        dataset["num_classes"] = c.dataset.csv_task.num_classes;
      }
      break;
  }
  std::vector<std::string> methods;
  for (auto m : c.methods) methods.emplace_back(to_string(m));
  return {{"schema", kExperimentSchema},
          {"dataset", dataset},
          {"agents", c.agents},
          {"strong_agents", c.strong_agents},
          {"weak_agents", c.weak_agents},
          {"beta", c.beta},
          {"alpha", c.alpha},
          {"bins", c.bins},
          {"cal_fraction", c.cal_fraction},
          {"methods", methods},
          {"seeds", c.seeds},
          {"strong_model", detail::model_config_to_json(c.strong_model)},
          {"weak_model", detail::model_config_to_json(c.weak_model)},
          {"weak_cal_scale", c.weak_cal_scale},
          {"output_dir", c.output_dir},
          {"networked", c.networked},
          {"record_runtime", c.record_runtime},
          {"round_prefix", c.round_prefix},
          {"round_timeout_s", static_cast<double>(c.round_timeout.count()) / 1000.0}};
}

inline ExperimentConfig load_experiment_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot read config file " + path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("config " + path + ": " + e.what());
  }
  return experiment_config_from_json(j);
}

// Draws (train, calibration, test) for one seed, standardized with training
// statistics.
struct SeedData {
  Dataset train;
  Dataset cal;
  Dataset test;
  Standardizer standardizer;
};

// The data-generating world of a seed; lets callers draw extra calibration
// pools from the same distribution (used by the asymptotic audit).
class DataSource {
 public:
  DataSource(const DatasetSpec& spec, std::uint64_t seed) : spec_(spec), seed_(seed) {
    switch (spec.kind) {
      case DatasetKind::SyntheticClassification:
        blobs_.emplace(spec.classification, seed);
        break;
      case DatasetKind::SyntheticRegression:
        linear_.emplace(spec.regression, seed);
        break;
      case DatasetKind::CsvFile:
        csv_ = synthetic::load_csv(spec.csv_path, spec.csv_task, spec.target_column);
        break;
    }
  }

  bool can_sample() const { return spec_.kind != DatasetKind::CsvFile; }

  Dataset sample(std::size_t n, std::uint64_t stream) const {
    auto rng = random::make_engine(seed_, stream);
    if (blobs_) return blobs_->sample(n, rng);
    if (linear_) return linear_->sample(n, rng);
    throw ValidationError("CSV datasets cannot generate new samples");
  }

  // pool -> 70/30 train/calibration; test drawn separately (synthetic) or
  // held out from the file (CSV).
  SeedData split(double cal_fraction) const {
    Dataset pool;
    Dataset test;
    if (csv_) {
      auto held = train_cal_split(*csv_, spec_.test_fraction, random::derive_seed(seed_, 0x7e57));
      pool = std::move(held.train);
      test = std::move(held.cal);
    } else {
      const std::size_t pool_size = spec_.kind == DatasetKind::SyntheticClassification
                                        ? spec_.classification.pool_size
                                        : spec_.regression.pool_size;
      const std::size_t test_size = spec_.kind == DatasetKind::SyntheticClassification
                                        ? spec_.classification.test_size
                                        : spec_.regression.test_size;
      pool = sample(pool_size, 1);
      test = sample(test_size, 2);
    }
    auto s = train_cal_split(pool, cal_fraction, seed_);
    SeedData out;
    out.standardizer = Standardizer::fit(s.train);
    out.train = out.standardizer.apply(s.train);
    out.cal = out.standardizer.apply(s.cal);
    out.test = out.standardizer.apply(test);
    return out;
  }

 private:
  DatasetSpec spec_;
  std::uint64_t seed_;
  std::optional<synthetic::GaussianBlobs> blobs_;
  std::optional<synthetic::HeteroscedasticLinear> linear_;
  std::optional<Dataset> csv_;
};

using AgentModel = std::variant<Classifier, QuantileRegressor>;

struct AgentSetup {
  AgentId id = 0;
  AgentStrength strength = AgentStrength::Strong;
  AgentModel model;
};

inline std::uint64_t agent_model_seed(std::uint64_t seed, std::size_t agent) {
  return random::derive_seed(seed, 0x100 + agent);
}

// Trains every agent on the shared training set. Agents with an identical
// resolved configuration (all strong agents, by default) share one training
// run; the result is bit-identical either way.
inline std::vector<AgentSetup> train_agents(const ExperimentConfig& cfg, const Dataset& train,
                                            std::uint64_t seed) {
  std::vector<AgentSetup> out;
  std::map<std::pair<int, std::vector<std::size_t>>, AgentModel> cache;
  for (std::size_t k = 0; k < cfg.agents; ++k) {
    const auto strength = cfg.strength_of(k);
    auto mcfg = strength == AgentStrength::Strong ? cfg.strong_model : cfg.weak_model;
    const auto model_seed = agent_model_seed(seed, k);
    if (!mcfg.feature_mask) mcfg.feature_mask = detail::resolve_mask(mcfg, train.dim(), model_seed);
    const auto key = std::pair{static_cast<int>(strength), *mcfg.feature_mask};
    auto it = cache.find(key);
    if (it == cache.end()) {
      AgentModel model = train.task().is_classification()
                             ? AgentModel(train_classifier(train, mcfg, model_seed))
                             : AgentModel(train_quantile_regressor(train, mcfg, model_seed));
      it = cache.emplace(key, std::move(model)).first;
    }
    out.push_back({static_cast<AgentId>(k), strength, it->second});
  }
  return out;
}

inline double nonconformity(const AgentModel& model, std::span<const double> x, double target) {
  if (const auto* c = std::get_if<Classifier>(&model)) {
    return aps_score(predict_proba(*c, x), static_cast<ClassIndex>(target));
  }
  return cqr_score(target, predict_quantiles(std::get<QuantileRegressor>(model), x));
}

inline std::vector<double> calibration_scores(const AgentModel& model, const Dataset& data,
                                              std::span<const std::size_t> indices) {
  std::vector<double> scores;
  scores.reserve(indices.size());
  for (auto i : indices) scores.push_back(nonconformity(model, data.row(i), data.target(i)));
  return scores;
}

// Model outputs on the test set, cached so each method only re-thresholds.
using TestPredictions = std::variant<std::vector<ProbabilityVector>, std::vector<QuantilePair>>;

inline TestPredictions predict_test(const AgentModel& model, const Dataset& test) {
  if (const auto* c = std::get_if<Classifier>(&model)) {
    std::vector<ProbabilityVector> out;
    out.reserve(test.size());
    for (std::size_t i = 0; i < test.size(); ++i) out.push_back(predict_proba(*c, test.row(i)));
    return out;
  }
  std::vector<QuantilePair> out;
  out.reserve(test.size());
  for (std::size_t i = 0; i < test.size(); ++i) {
    out.push_back(predict_quantiles(std::get<QuantileRegressor>(model), test.row(i)));
  }
  return out;
}

inline std::vector<PredictionRecord> prediction_records(const TestPredictions& preds,
                                                        const Dataset& test, AgentId agent,
                                                        double threshold) {
  std::vector<PredictionRecord> records;
  records.reserve(test.size());
  if (const auto* probs = std::get_if<std::vector<ProbabilityVector>>(&preds)) {
    for (std::size_t i = 0; i < test.size(); ++i) {
      records.push_back({agent, SetPrediction{aps_prediction_set((*probs)[i], threshold),
                                              test.label(i)}});
    }
  } else {
    const auto& pairs = std::get<std::vector<QuantilePair>>(preds);
    for (std::size_t i = 0; i < test.size(); ++i) {
      records.push_back(
          {agent, IntervalPrediction{cqr_prediction_interval(pairs[i], threshold), test.target(i)}});
    }
  }
  return records;
}

// Everything a seed needs before the per-method rounds.
struct PreparedSeed {
  std::uint64_t seed = 0;
  SeedData data;
  std::vector<AgentSetup> agents;
  PartitionPlan plan;
  std::vector<std::vector<std::size_t>> calibration_indices;  // after weak_cal_scale
  std::vector<AgentScores> participants;                      // agents with n_k > 0
  std::vector<TestPredictions> test_predictions;
  std::vector<std::string> warnings;
};

inline PartitionPlan partition_calibration(const ExperimentConfig& cfg, const Dataset& cal,
                                           double beta, std::uint64_t seed) {
  const auto pseed = random::derive_seed(seed, 0x9a27);
  return cal.task().is_classification()
             ? dirichlet_label_partition(cal, cfg.agents, beta, pseed)
             : dirichlet_covariate_partition(cal, cfg.agents, beta, cfg.bins, pseed);
}

// Applies weak_cal_scale, scores each agent's calibration share and drops
// agents left with no calibration data.
inline void calibrate_agents(const ExperimentConfig& cfg, PreparedSeed& p, const Dataset& cal) {
  p.calibration_indices = p.plan.assignments;
  p.participants.clear();
  for (std::size_t k = 0; k < cfg.agents; ++k) {
    auto& idx = p.calibration_indices[k];
    if (cfg.strength_of(k) == AgentStrength::Weak && cfg.weak_cal_scale < 1.0 && !idx.empty()) {
      auto rng = random::make_engine(p.seed, 0x5ca1e + k);
      random::shuffle(rng, idx);
      auto keep = static_cast<std::size_t>(
          std::llround(cfg.weak_cal_scale * static_cast<double>(idx.size())));
      idx.resize(std::max<std::size_t>(1, keep));
      std::sort(idx.begin(), idx.end());
    }
    if (idx.empty()) {
      p.warnings.push_back("seed " + std::to_string(p.seed) + ": agent " + std::to_string(k) +
                           " has no calibration data and is dropped from the round");
      continue;
    }
    p.participants.push_back(
        {static_cast<AgentId>(k), ScoreSample(calibration_scores(p.agents[k].model, cal, idx))});
  }
  if (p.participants.empty()) {
    throw ValidationError("seed " + std::to_string(p.seed) + ": no agent has calibration data");
  }
}

inline PreparedSeed prepare_seed(const ExperimentConfig& cfg, std::uint64_t seed) {
  PreparedSeed p;
  p.seed = seed;
  p.data = DataSource(cfg.dataset, seed).split(cfg.cal_fraction);
  p.agents = train_agents(cfg, p.data.train, seed);
  p.plan = partition_calibration(cfg, p.data.cal, cfg.beta, seed);
  p.plan.check_partition(p.data.cal.size());
  calibrate_agents(cfg, p, p.data.cal);
  for (const auto& a : p.agents) p.test_predictions.push_back(predict_test(a.model, p.data.test));
  return p;
}

struct MethodOutcome {
  AggregationMethod method = AggregationMethod::WeightedAverage;
  RoundResult round;
  CoverageReport report;
  double runtime_s = 0.0;
};

inline std::string round_id_for(const ExperimentConfig& cfg, std::uint64_t seed,
                                AggregationMethod method) {
  return cfg.round_prefix + "-s" + std::to_string(seed) + "-" + std::string(to_string(method));
}

inline MethodOutcome run_method(const ExperimentConfig& cfg, const PreparedSeed& p,
                                AggregationMethod method) {
  wire::CalibrationRoundConfig round_cfg;
  round_cfg.alpha = cfg.alpha;
  round_cfg.method = method;
  round_cfg.agent_count = static_cast<std::int64_t>(p.participants.size());
  round_cfg.round_id = round_id_for(cfg, p.seed, method);
  round_cfg.timeout = cfg.round_timeout;

  MethodOutcome out;
  out.method = method;
  const auto start = std::chrono::steady_clock::now();
  out.round = cfg.networked ? run_round_loopback(p.participants, round_cfg)
                            : run_round_simulated(p.participants, round_cfg);
  const std::chrono::duration<double> elapsed = std::chrono::steady_clock::now() - start;
  out.runtime_s = cfg.record_runtime ? elapsed.count() : 0.0;

  std::map<AgentId, std::vector<PredictionRecord>> records;
  std::vector<AgentId> ids;
  for (const auto& a : p.agents) {
    ids.push_back(a.id);
    records[a.id] = prediction_records(p.test_predictions[static_cast<std::size_t>(a.id)],
                                       p.data.test, a.id, out.round.threshold.threshold_for(a.id));
  }
  out.report = build_report(records, ids, method, p.seed);
  return out;
}

struct SeedResult {
  std::uint64_t seed = 0;
  PreparedSeed prepared;
  std::vector<MethodOutcome> outcomes;  // in config method order
};

struct ExperimentResult {
  ExperimentConfig config;
  std::vector<SeedResult> seeds;  // in config seed order

  const MethodOutcome& outcome(std::size_t seed_index, AggregationMethod method) const {
    for (const auto& o : seeds.at(seed_index).outcomes) {
      if (o.method == method) return o;
    }
    throw ValidationError("method not part of this experiment");
  }
};

// Runs fn(i) for i in [0, n) on up to hardware_concurrency threads; the first
// exception is rethrown after all workers stop.
template <typename Fn>
void parallel_for(std::size_t n, Fn fn) {
  const std::size_t workers =
      std::min<std::size_t>(n, std::max(1u, std::thread::hardware_concurrency()));
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mu;
  auto work = [&] {
    for (std::size_t i = next++; i < n; i = next++) {
      try {
        fn(i);
      } catch (...) {
        std::lock_guard lock(error_mu);
        if (!error) error = std::current_exception();
      }
    }
  };
  if (workers <= 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(work);
    for (auto& t : pool) t.join();
  }
  if (error) std::rethrow_exception(error);
}

inline ExperimentResult run_experiment(const ExperimentConfig& cfg) {
  cfg.validate();
  ExperimentResult result;
  result.config = cfg;
  result.seeds.resize(cfg.seeds.size());
  parallel_for(cfg.seeds.size(), [&](std::size_t i) {
    auto& sr = result.seeds[i];
    sr.seed = cfg.seeds[i];
    sr.prepared = prepare_seed(cfg, sr.seed);
    for (auto m : cfg.methods) sr.outcomes.push_back(run_method(cfg, sr.prepared, m));
  });
  return result;
}

// Per-(method, agent) coverage values across seeds, agent -1 = global.
inline std::map<AgentId, std::vector<double>> coverage_by_agent(const ExperimentResult& r,
                                                                AggregationMethod method) {
  std::map<AgentId, std::vector<double>> out;
  for (std::size_t s = 0; s < r.seeds.size(); ++s) {
    const auto& rep = r.outcome(s, method).report;
    for (const auto& [id, cov] : rep.per_agent_coverage) out[id].push_back(cov);
    out[-1].push_back(rep.global_coverage);
  }
  return out;
}

inline std::map<AgentId, std::vector<double>> efficiency_by_agent(const ExperimentResult& r,
                                                                  AggregationMethod method) {
  std::map<AgentId, std::vector<double>> out;
  for (std::size_t s = 0; s < r.seeds.size(); ++s) {
    const auto& rep = r.outcome(s, method).report;
    for (const auto& [id, eff] : rep.per_agent_efficiency) out[id].push_back(eff.value);
    out[-1].push_back(rep.global_efficiency.value);
  }
  return out;
}

inline std::string coverage_csv(const ExperimentResult& r) {
  std::string out = std::string(kCoverageCsvHeader) + "\n";
  for (const auto& sr : r.seeds) {
    for (const auto& o : sr.outcomes) {
      out += coverage_csv_rows(o.report, r.config.dataset.name(), o.runtime_s);
    }
  }
  return out;
}

inline constexpr const char* kSummaryCsvHeader =
    "dataset,method,agent,metric,median,ci_lo,ci_hi,n_seeds";

struct SummaryRow {
  std::string dataset;
  std::string method;
  std::string agent;
  std::string metric;
  SeedSummary summary;
};

inline std::string summary_csv(const std::vector<SummaryRow>& rows) {
  std::string out = std::string(kSummaryCsvHeader) + "\n";
  for (const auto& r : rows) {
    out += r.dataset + "," + r.method + "," + r.agent + "," + r.metric + "," +
           format_double(r.summary.median) + "," + format_double(r.summary.ci_lo) + "," +
           format_double(r.summary.ci_hi) + "," + std::to_string(r.summary.n_seeds) + "\n";
  }
  return out;
}

inline nlohmann::json summary_json(const std::vector<SummaryRow>& rows) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& r : rows) {
    out.push_back({{"dataset", r.dataset},
                   {"method", r.method},
                   {"agent", r.agent},
                   {"metric", r.metric},
                   {"summary", r.summary}});
  }
  return out;
}

// Median and bootstrap CI across seeds for every (method, agent, metric).
// Single-seed runs have no spread to summarize and yield no rows.
inline std::vector<SummaryRow> summarize(const ExperimentResult& r) {
  std::vector<SummaryRow> rows;
  if (r.seeds.size() < 2) return rows;
  for (auto m : r.config.methods) {
    const auto cov = coverage_by_agent(r, m);
    const auto eff = efficiency_by_agent(r, m);
    for (const auto& [id, values] : cov) {
      const auto agent = id < 0 ? std::string("global") : std::to_string(id);
      rows.push_back({r.config.dataset.name(), std::string(to_string(m)), agent, "coverage",
                      seed_summary(values)});
      rows.push_back({r.config.dataset.name(), std::string(to_string(m)), agent, "efficiency",
                      seed_summary(eff.at(id))});
    }
  }
  return rows;
}

// Writes `content` to `path` through a temporary file and a rename.
inline void write_file_atomic(const std::filesystem::path& path, const std::string& content) {
  std::filesystem::create_directories(path.parent_path());
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write " + tmp);
    out << content;
    if (!out) throw Error("write failed for " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

inline nlohmann::json score_file_json(AgentId agent, double alpha, const ScoreSample& s) {
  std::vector<std::string> hex;
  for (double v : s.values()) hex.push_back(wire::hex_double(v));
  return {{"schema", "fedwq.scores/1"}, {"agent_id", agent},   {"alpha", alpha},
          {"scores", s.vector()},         {"scores_hex", hex}};
}

// Loads an agent's calibration scores; the hex array is authoritative when present.
inline std::pair<AgentId, ScoreSample> load_score_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot read score file " + path);
  try {
    const auto j = nlohmann::json::parse(in);
    std::vector<double> values;
    if (j.contains("scores_hex")) {
      for (const auto& h : j.at("scores_hex")) values.push_back(wire::parse_hex_double(h.get<std::string>()));
    } else {
      values = j.at("scores").get<std::vector<double>>();
    }
    return {j.value("agent_id", AgentId{0}), ScoreSample(std::move(values))};
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("score file " + path + ": " + e.what());
  }
}

inline void write_artifacts(const ExperimentResult& r, const std::filesystem::path& dir) {
  write_file_atomic(dir / "config.json", experiment_config_to_json(r.config).dump(2) + "\n");
  write_file_atomic(dir / "coverage.csv", coverage_csv(r));
  const auto rows = summarize(r);
  write_file_atomic(dir / "summary.csv", summary_csv(rows));
  write_file_atomic(dir / "summary.json", summary_json(rows).dump(2) + "\n");

  std::string rounds;
  std::string audit;
  for (const auto& sr : r.seeds) {
    const auto sdir = dir / ("seed_" + std::to_string(sr.seed));
    write_file_atomic(sdir / "partition.json", nlohmann::json(sr.prepared.plan).dump() + "\n");
    for (const auto& a : sr.prepared.participants) {
      write_file_atomic(sdir / ("agent_" + std::to_string(a.agent_id) + "_scores.json"),
                        score_file_json(a.agent_id, r.config.alpha, a.sample).dump() + "\n");
    }
    for (const auto& a : sr.prepared.agents) {
      nlohmann::json model = std::visit([](const auto& m) { return nlohmann::json(m); }, a.model);
      model["strength"] = to_string(a.strength);
      write_file_atomic(sdir / ("agent_" + std::to_string(a.id) + "_model.json"),
                        model.dump() + "\n");
    }
    for (const auto& o : sr.outcomes) {
      const auto& t = o.round.threshold;
      nlohmann::json per_agent = nlohmann::json::array();
      for (const auto& s : t.per_agent) {
        per_agent.push_back({{"agent_id", s.agent_id},
                             {"q_hex", wire::hex_double(s.q)},
                             {"n", s.n}});
      }
      rounds += nlohmann::json{{"seed", sr.seed},
                               {"method", to_string(o.method)},
                               {"round_id", round_id_for(r.config, sr.seed, o.method)},
                               {"q_hat_hex", wire::hex_double(t.q_hat)},
                               {"total_n", t.total_n},
                               {"agent_count", t.agent_count},
                               {"per_agent", per_agent}}
                    .dump() +
                "\n";
      audit += o.round.audit.to_jsonl();
    }
  }
  write_file_atomic(dir / "rounds.jsonl", rounds);
  write_file_atomic(dir / "audit.jsonl", audit);
}

}  // namespace fedwq
