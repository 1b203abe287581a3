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
#include <optional>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "fedwq/error.hpp"
#include "fedwq/partition.hpp"
#include "fedwq/random.hpp"
#include "fedwq/scores.hpp"

namespace fedwq {

enum class AgentStrength { Strong, Weak };

inline std::string_view to_string(AgentStrength s) {
  return s == AgentStrength::Strong ? "strong" : "weak";
}

struct QuantileLevels {
  double lo = 0.025;
  double hi = 0.975;
};

// Training knobs for one agent's predictor. Strong agents see every feature
// for 5 epochs; weak agents see a seeded 25% feature subset for 1 epoch.
struct AgentModelConfig {
  AgentStrength strength = AgentStrength::Strong;
  std::size_t epochs = 5;
  std::size_t steps_per_epoch = 100;
  double learning_rate = 2.0;
  double feature_fraction = 1.0;                   // used when feature_mask is unset
  std::optional<std::vector<std::size_t>> feature_mask;
  QuantileLevels quantile_levels;

  // Pinball steps move the intercept by up to lr per step, so quantile heads
  // need a smaller rate than the softmax model.
  static constexpr double kRegressionLearningRate = 0.5;

  static AgentModelConfig strong() { return {}; }
  static AgentModelConfig weak() {
    AgentModelConfig c;
    c.strength = AgentStrength::Weak;
    c.epochs = 1;
    c.feature_fraction = 0.25;
    return c;
  }
  static QuantileLevels levels_for_alpha(double alpha) { return {alpha / 2.0, 1.0 - alpha / 2.0}; }

  void validate() const {
    if (!(learning_rate > 0.0)) throw ValidationError("AgentModelConfig: learning_rate must be > 0");
    if (!(feature_fraction > 0.0 && feature_fraction <= 1.0)) {
      throw ValidationError("AgentModelConfig: feature_fraction must lie in (0, 1]");
    }
    if (!(quantile_levels.lo > 0.0 && quantile_levels.lo < quantile_levels.hi &&
          quantile_levels.hi < 1.0)) {
      throw ValidationError("AgentModelConfig: need 0 < quantile lo < hi < 1");
    }
  }
};

// Sorted random subset of max(1, round(fraction * dim)) feature indices.
inline std::vector<std::size_t> random_feature_mask(std::size_t dim, double fraction,
                                                    std::uint64_t seed) {
  auto rng = random::make_engine(seed, 0xfea7);
  auto perm = random::permutation(rng, dim);
  auto keep = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(dim)));
  keep = std::clamp<std::size_t>(keep, 1, dim);
  std::vector<std::size_t> mask(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(keep));
  std::sort(mask.begin(), mask.end());
  return mask;
}

namespace detail {

inline std::vector<std::size_t> resolve_mask(const AgentModelConfig& cfg, std::size_t dim,
                                             std::uint64_t seed) {
  std::vector<std::size_t> mask;
  if (cfg.feature_mask) {
    mask = *cfg.feature_mask;
    std::sort(mask.begin(), mask.end());
    mask.erase(std::unique(mask.begin(), mask.end()), mask.end());
    if (mask.empty() || mask.back() >= dim) {
      throw ValidationError("AgentModelConfig: feature_mask out of range");
    }
  } else if (cfg.feature_fraction < 1.0) {
    mask = random_feature_mask(dim, cfg.feature_fraction, seed);
  } else {
    mask.resize(dim);
    for (std::size_t j = 0; j < dim; ++j) mask[j] = j;
  }
  return mask;
}

}  // namespace detail

// Multinomial logistic regression over a fixed subset of the input features.
struct Classifier {
  std::size_t input_dim = 0;
  std::size_t num_classes = 0;
  std::vector<std::size_t> feature_mask;  // indices into the input vector
  std::vector<double> weights;            // num_classes x feature_mask.size(), row-major
  std::vector<double> bias;               // num_classes

  static Classifier zeros(std::size_t input_dim, std::size_t classes,
                          std::vector<std::size_t> mask) {
    Classifier c;
    c.input_dim = input_dim;
    c.num_classes = classes;
    c.feature_mask = std::move(mask);
    c.weights.assign(classes * c.feature_mask.size(), 0.0);
    c.bias.assign(classes, 0.0);
    return c;
  }

  std::size_t effective_dim() const noexcept { return feature_mask.size(); }

  void logits(std::span<const double> x, std::span<double> out) const {
    const std::size_t d = effective_dim();
    for (std::size_t c = 0; c < num_classes; ++c) {
      double z = bias[c];
      const double* w = weights.data() + c * d;
      for (std::size_t j = 0; j < d; ++j) z += w[j] * x[feature_mask[j]];
      out[c] = z;
    }
  }
};

// Max-subtracted softmax, in place.
inline void softmax_inplace(std::span<double> z) {
  const double m = *std::max_element(z.begin(), z.end());
  double total = 0.0;
  for (auto& v : z) {
    v = std::exp(v - m);
    total += v;
  }
  for (auto& v : z) v /= total;
}

inline ProbabilityVector predict_proba(const Classifier& model, std::span<const double> x) {
  if (x.size() != model.input_dim) {
    throw ValidationError("predict_proba: expected " + std::to_string(model.input_dim) +
                          " features, got " + std::to_string(x.size()));
  }
  std::vector<double> z(model.num_classes);
  model.logits(x, z);
  softmax_inplace(z);
  return ProbabilityVector(std::move(z));
}

// Mean softmax cross-entropy over `data`.
inline double cross_entropy_loss(const Classifier& model, const Dataset& data) {
  std::vector<double> z(model.num_classes);
  double loss = 0.0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    model.logits(data.row(i), z);
    const double m = *std::max_element(z.begin(), z.end());
    double lse = 0.0;
    for (double v : z) lse += std::exp(v - m);
    lse = m + std::log(lse);
    loss += lse - z[data.label(i)];
  }
  return loss / static_cast<double>(data.size());
}

// Gradient of cross_entropy_loss with respect to weights and bias, returned in
// a Classifier-shaped container.
inline Classifier cross_entropy_gradient(const Classifier& model, const Dataset& data) {
  Classifier grad = Classifier::zeros(model.input_dim, model.num_classes, model.feature_mask);
  const std::size_t d = model.effective_dim();
  const double inv_n = 1.0 / static_cast<double>(data.size());
  std::vector<double> p(model.num_classes);
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto x = data.row(i);
    model.logits(x, p);
    softmax_inplace(p);
    p[data.label(i)] -= 1.0;
    for (std::size_t c = 0; c < model.num_classes; ++c) {
      const double r = p[c] * inv_n;
      grad.bias[c] += r;
      double* g = grad.weights.data() + c * d;
      for (std::size_t j = 0; j < d; ++j) g[j] += r * x[model.feature_mask[j]];
    }
  }
  return grad;
}

// Full-batch gradient descent on softmax cross-entropy from zero parameters,
// epochs * steps_per_epoch steps.
inline Classifier train_classifier(const Dataset& train, const AgentModelConfig& cfg,
                                   std::uint64_t seed) {
  if (!train.task().is_classification()) {
    throw TaskMismatchError("train_classifier: requires a classification dataset");
  }
  cfg.validate();
  if (train.empty()) throw ValidationError("train_classifier: empty training set");
  std::set<std::size_t> labels;
  for (std::size_t i = 0; i < train.size() && labels.size() < 2; ++i) labels.insert(train.label(i));
  if (labels.size() < 2) throw ValidationError("train_classifier: single-class training data");

  auto model = Classifier::zeros(train.dim(), train.task().num_classes,
                                 detail::resolve_mask(cfg, train.dim(), seed));
  const std::size_t steps = cfg.epochs * cfg.steps_per_epoch;
  for (std::size_t step = 0; step < steps; ++step) {
    const auto grad = cross_entropy_gradient(model, train);
    for (std::size_t k = 0; k < model.weights.size(); ++k) {
      model.weights[k] -= cfg.learning_rate * grad.weights[k];
    }
    for (std::size_t c = 0; c < model.bias.size(); ++c) {
      model.bias[c] -= cfg.learning_rate * grad.bias[c];
    }
  }
  return model;
}

// Pinball loss rho_tau(u) = u * (tau - 1{u < 0}).
inline double pinball_loss(double u, double tau) { return u * (tau - (u < 0.0 ? 1.0 : 0.0)); }

// d rho / d u; at the kink the u < 0 branch value tau - 1 is used.
inline double pinball_derivative(double u, double tau) { return u > 0.0 ? tau : tau - 1.0; }

// One linear quantile head over masked features.
struct LinearHead {
  std::vector<double> weights;
  double bias = 0.0;

  double predict(std::span<const double> x, std::span<const std::size_t> mask) const {
    double z = bias;
    for (std::size_t j = 0; j < mask.size(); ++j) z += weights[j] * x[mask[j]];
    return z;
  }
};

inline double pinball_head_loss(const LinearHead& head, std::span<const std::size_t> mask,
                                const Dataset& data, double tau) {
  double loss = 0.0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    loss += pinball_loss(data.target(i) - head.predict(data.row(i), mask), tau);
  }
  return loss / static_cast<double>(data.size());
}

inline LinearHead pinball_head_gradient(const LinearHead& head, std::span<const std::size_t> mask,
                                        const Dataset& data, double tau) {
  LinearHead grad{std::vector<double>(head.weights.size(), 0.0), 0.0};
  const double inv_n = 1.0 / static_cast<double>(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto x = data.row(i);
    const double u = data.target(i) - head.predict(x, mask);
    const double r = -pinball_derivative(u, tau) * inv_n;  // du/dprediction = -1
    grad.bias += r;
    for (std::size_t j = 0; j < mask.size(); ++j) grad.weights[j] += r * x[mask[j]];
  }
  return grad;
}

// Two pinball-trained linear heads producing a (lo, hi) quantile band.
struct QuantileRegressor {
  std::size_t input_dim = 0;
  std::vector<std::size_t> feature_mask;
  QuantileLevels levels;
  LinearHead lo;
  LinearHead hi;
};

inline QuantileRegressor train_quantile_regressor(const Dataset& train,
                                                  const AgentModelConfig& cfg,
                                                  std::uint64_t seed) {
  if (train.task().is_classification()) {
    throw TaskMismatchError("train_quantile_regressor: requires a regression dataset");
  }
  cfg.validate();
  if (train.empty()) throw ValidationError("train_quantile_regressor: empty training set");
  QuantileRegressor model;
  model.input_dim = train.dim();
  model.feature_mask = detail::resolve_mask(cfg, train.dim(), seed);
  model.levels = cfg.quantile_levels;
  model.lo.weights.assign(model.feature_mask.size(), 0.0);
  model.hi.weights.assign(model.feature_mask.size(), 0.0);

  const std::size_t steps = cfg.epochs * cfg.steps_per_epoch;
  for (auto [head, tau] : {std::pair{&model.lo, model.levels.lo},
                           std::pair{&model.hi, model.levels.hi}}) {
    for (std::size_t step = 0; step < steps; ++step) {
      const auto grad = pinball_head_gradient(*head, model.feature_mask, train, tau);
      for (std::size_t j = 0; j < head->weights.size(); ++j) {
        head->weights[j] -= cfg.learning_rate * grad.weights[j];
      }
      head->bias -= cfg.learning_rate * grad.bias;
    }
  }
  return model;
}

inline QuantilePair predict_quantiles(const QuantileRegressor& model, std::span<const double> x) {
  if (x.size() != model.input_dim) {
    throw ValidationError("predict_quantiles: expected " + std::to_string(model.input_dim) +
                          " features, got " + std::to_string(x.size()));
  }
  return QuantilePair::make(model.lo.predict(x, model.feature_mask),
                            model.hi.predict(x, model.feature_mask));
}

inline void to_json(nlohmann::json& j, const Classifier& m) {
  j = nlohmann::json{{"kind", "softmax_classifier"}, {"input_dim", m.input_dim},
                     {"num_classes", m.num_classes}, {"feature_mask", m.feature_mask},
                     {"weights", m.weights},        {"bias", m.bias}};
}

inline void from_json(const nlohmann::json& j, Classifier& m) {
  m.input_dim = j.at("input_dim").get<std::size_t>();
  m.num_classes = j.at("num_classes").get<std::size_t>();
  m.feature_mask = j.at("feature_mask").get<std::vector<std::size_t>>();
  m.weights = j.at("weights").get<std::vector<double>>();
  m.bias = j.at("bias").get<std::vector<double>>();
  if (m.weights.size() != m.num_classes * m.feature_mask.size() || m.bias.size() != m.num_classes) {
    throw ValidationError("Classifier JSON: parameter shapes disagree");
  }
}

inline void to_json(nlohmann::json& j, const QuantileRegressor& m) {
  j = nlohmann::json{{"kind", "quantile_regressor"},
                     {"input_dim", m.input_dim},
                     {"feature_mask", m.feature_mask},
                     {"levels", {m.levels.lo, m.levels.hi}},
                     {"lo", {{"weights", m.lo.weights}, {"bias", m.lo.bias}}},
                     {"hi", {{"weights", m.hi.weights}, {"bias", m.hi.bias}}}};
}

inline void from_json(const nlohmann::json& j, QuantileRegressor& m) {
  m.input_dim = j.at("input_dim").get<std::size_t>();
  m.feature_mask = j.at("feature_mask").get<std::vector<std::size_t>>();
  const auto levels = j.at("levels").get<std::vector<double>>();
  if (levels.size() != 2) throw ValidationError("QuantileRegressor JSON: levels must be a pair");
  m.levels = {levels[0], levels[1]};
  m.lo = {j.at("lo").at("weights").get<std::vector<double>>(), j.at("lo").at("bias").get<double>()};
  m.hi = {j.at("hi").at("weights").get<std::vector<double>>(), j.at("hi").at("bias").get<double>()};
}

}  // namespace fedwq
