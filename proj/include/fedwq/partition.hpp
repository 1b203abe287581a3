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
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "fedwq/error.hpp"
#include "fedwq/random.hpp"

namespace fedwq {

enum class TaskKind { Classification, Regression };

struct Task {
  TaskKind kind = TaskKind::Classification;
  std::size_t num_classes = 0;  // classification only

  static Task classification(std::size_t classes) { return {TaskKind::Classification, classes}; }
  static Task regression() { return {TaskKind::Regression, 0}; }
  bool is_classification() const noexcept { return kind == TaskKind::Classification; }
};

// Row-major feature matrix plus one target per row. Classification targets
// hold integral class indices.
class Dataset {
 public:
  Dataset() = default;
  Dataset(Task task, std::size_t dim) : task_(task), dim_(dim) {}

  Dataset(Task task, std::size_t dim, std::vector<double> features, std::vector<double> targets)
      : task_(task), dim_(dim), features_(std::move(features)), targets_(std::move(targets)) {
    validate();
  }

  const Task& task() const noexcept { return task_; }
  std::size_t dim() const noexcept { return dim_; }
  std::size_t size() const noexcept { return targets_.size(); }
  bool empty() const noexcept { return targets_.empty(); }

  std::span<const double> row(std::size_t i) const {
    return std::span<const double>(features_).subspan(i * dim_, dim_);
  }
  std::span<double> row(std::size_t i) {
    return std::span<double>(features_).subspan(i * dim_, dim_);
  }
  double target(std::size_t i) const { return targets_[i]; }
  std::size_t label(std::size_t i) const { return static_cast<std::size_t>(targets_[i]); }
  const std::vector<double>& targets() const noexcept { return targets_; }
  const std::vector<double>& features() const noexcept { return features_; }

  void push_back(std::span<const double> x, double y) {
    if (x.size() != dim_) throw ValidationError("Dataset::push_back: feature dimension mismatch");
    features_.insert(features_.end(), x.begin(), x.end());
    targets_.push_back(y);
  }

  Dataset subset(std::span<const std::size_t> indices) const {
    Dataset out(task_, dim_);
    out.features_.reserve(indices.size() * dim_);
    out.targets_.reserve(indices.size());
    for (auto i : indices) {
      if (i >= size()) throw IndexError("Dataset::subset: index out of range");
      out.push_back(row(i), targets_[i]);
    }
    return out;
  }

  void validate() const {
    if (dim_ == 0 || features_.size() != targets_.size() * dim_) {
      throw ValidationError("Dataset: features and targets differ in length");
    }
    if (task_.is_classification()) {
      if (task_.num_classes < 2) throw ValidationError("Dataset: need at least 2 classes");
      for (double y : targets_) {
        if (!(y >= 0.0) || y != std::floor(y) ||
            y >= static_cast<double>(task_.num_classes)) {
          throw ValidationError("Dataset: classification target out of range");
        }
      }
    }
    for (double v : features_) {
      if (!std::isfinite(v)) throw ValidationError("Dataset: non-finite feature");
    }
  }

 private:
  Task task_;
  std::size_t dim_ = 0;
  std::vector<double> features_;
  std::vector<double> targets_;
};

// Per-feature affine map to zero mean and unit variance, fitted on one split
// and applied to the others. Constant features are centered only.
struct Standardizer {
  std::vector<double> mean;
  std::vector<double> scale;

  static Standardizer fit(const Dataset& data) {
    if (data.empty()) throw ValidationError("Standardizer: empty dataset");
    Standardizer s;
    s.mean.assign(data.dim(), 0.0);
    s.scale.assign(data.dim(), 1.0);
    const auto n = static_cast<double>(data.size());
    for (std::size_t i = 0; i < data.size(); ++i) {
      auto x = data.row(i);
      for (std::size_t j = 0; j < data.dim(); ++j) s.mean[j] += x[j];
    }
    for (auto& m : s.mean) m /= n;
    std::vector<double> var(data.dim(), 0.0);
    for (std::size_t i = 0; i < data.size(); ++i) {
      auto x = data.row(i);
      for (std::size_t j = 0; j < data.dim(); ++j) {
        const double d = x[j] - s.mean[j];
        var[j] += d * d;
      }
    }
    for (std::size_t j = 0; j < data.dim(); ++j) {
      const double sd = std::sqrt(var[j] / n);
      s.scale[j] = sd > 1e-12 ? sd : 1.0;
    }
    return s;
  }

  Dataset apply(const Dataset& data) const {
    if (data.dim() != mean.size()) throw ValidationError("Standardizer: dimension mismatch");
    Dataset out = data;
    for (std::size_t i = 0; i < out.size(); ++i) {
      auto x = out.row(i);
      for (std::size_t j = 0; j < x.size(); ++j) x[j] = (x[j] - mean[j]) / scale[j];
    }
    return out;
  }
};

struct TrainCalSplit {
  Dataset train;
  Dataset cal;
  std::vector<std::size_t> train_indices;
  std::vector<std::size_t> cal_indices;
};

// Random disjoint split; the calibration side gets round(n * cal_fraction)
// rows (at least one, at most n - 1) and training gets the rest.
inline TrainCalSplit train_cal_split(const Dataset& data, double cal_fraction,
                                     std::uint64_t seed) {
  if (!(cal_fraction > 0.0 && cal_fraction < 1.0)) {
    throw ValidationError("train_cal_split: cal_fraction must lie in (0, 1)");
  }
  if (data.size() < 2) throw ValidationError("train_cal_split: need at least 2 samples");
  const std::size_t n = data.size();
  auto cal_size = static_cast<std::size_t>(std::llround(static_cast<double>(n) * cal_fraction));
  cal_size = std::clamp<std::size_t>(cal_size, 1, n - 1);

  auto rng = random::make_engine(seed, 0x5b11);
  auto perm = random::permutation(rng, n);
  TrainCalSplit out;
  out.cal_indices.assign(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(cal_size));
  out.train_indices.assign(perm.begin() + static_cast<std::ptrdiff_t>(cal_size), perm.end());
  std::sort(out.cal_indices.begin(), out.cal_indices.end());
  std::sort(out.train_indices.begin(), out.train_indices.end());
  out.train = data.subset(out.train_indices);
  out.cal = data.subset(out.cal_indices);
  return out;
}

// M disjoint index lists whose union is the calibration pool.
struct PartitionPlan {
  std::vector<std::vector<std::size_t>> assignments;
  double beta = 0.0;
  std::uint64_t seed = 0;
  std::size_t bins = 0;          // covariate partitions only
  bool has_empty_agent = false;  // some agent received no samples

  std::size_t agent_count() const noexcept { return assignments.size(); }
  std::size_t total() const noexcept {
    std::size_t t = 0;
    for (const auto& a : assignments) t += a.size();
    return t;
  }

  // Throws unless the lists are pairwise disjoint and cover [0, pool_size).
  void check_partition(std::size_t pool_size) const {
    std::vector<char> seen(pool_size, 0);
    for (const auto& a : assignments) {
      for (auto i : a) {
        if (i >= pool_size) throw ValidationError("PartitionPlan: index out of pool");
        if (seen[i]) throw ValidationError("PartitionPlan: index assigned twice");
        seen[i] = 1;
      }
    }
    if (std::find(seen.begin(), seen.end(), 0) != seen.end()) {
      throw ValidationError("PartitionPlan: pool not covered");
    }
  }
};

inline void to_json(nlohmann::json& j, const PartitionPlan& p) {
  j = nlohmann::json{{"schema", "fedwq.partition/1"},
                     {"beta", p.beta},
                     {"seed", p.seed},
                     {"bins", p.bins},
                     {"has_empty_agent", p.has_empty_agent},
                     {"assignments", p.assignments}};
}

inline void from_json(const nlohmann::json& j, PartitionPlan& p) {
  p.beta = j.at("beta").get<double>();
  p.seed = j.at("seed").get<std::uint64_t>();
  p.bins = j.value("bins", std::size_t{0});
  p.has_empty_agent = j.value("has_empty_agent", false);
  p.assignments = j.at("assignments").get<std::vector<std::vector<std::size_t>>>();
}

// Integer counts summing to `total` with counts[k] ~ weights[k] * total,
// by largest remainder (ties to the lower index).
inline std::vector<std::size_t> largest_remainder_counts(std::span<const double> weights,
                                                         std::size_t total) {
  std::vector<std::size_t> counts(weights.size(), 0);
  std::vector<std::pair<double, std::size_t>> remainders;
  std::size_t assigned = 0;
  for (std::size_t k = 0; k < weights.size(); ++k) {
    const double exact = weights[k] * static_cast<double>(total);
    counts[k] = static_cast<std::size_t>(std::floor(exact));
    assigned += counts[k];
    remainders.emplace_back(exact - std::floor(exact), k);
  }
  // Guard against floor() overshooting when weights sum a hair above 1.
  while (assigned > total) {
    auto it = std::max_element(counts.begin(), counts.end());
    --*it;
    --assigned;
  }
  std::stable_sort(remainders.begin(), remainders.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  for (std::size_t i = 0; assigned < total; i = (i + 1) % remainders.size()) {
    ++counts[remainders[i].second];
    ++assigned;
  }
  return counts;
}

namespace detail {

// Splits every group across M agents with one Dirichlet(beta * 1_M) draw per
// group; groups are visited in ascending group id.
inline PartitionPlan dirichlet_group_split(const std::vector<std::size_t>& group_of,
                                           std::size_t groups, std::size_t agents, double beta,
                                           std::uint64_t seed) {
  if (agents < 1) throw ValidationError("dirichlet partition: need at least one agent");
  if (!(beta > 0.0) || !std::isfinite(beta)) {
    throw ValidationError("dirichlet partition: beta must be positive");
  }
  std::vector<std::vector<std::size_t>> members(groups);
  for (std::size_t i = 0; i < group_of.size(); ++i) members[group_of[i]].push_back(i);

  auto rng = random::make_engine(seed, 0xd1c1);
  PartitionPlan plan;
  plan.beta = beta;
  plan.seed = seed;
  plan.assignments.resize(agents);
  for (auto& idx : members) {
    const auto w = random::dirichlet(rng, agents, beta);
    random::shuffle(rng, idx);
    const auto counts = largest_remainder_counts(w, idx.size());
    std::size_t cursor = 0;
    for (std::size_t k = 0; k < agents; ++k) {
      for (std::size_t c = 0; c < counts[k]; ++c) plan.assignments[k].push_back(idx[cursor++]);
    }
  }
  for (auto& a : plan.assignments) {
    std::sort(a.begin(), a.end());
    if (a.empty()) plan.has_empty_agent = true;
  }
  return plan;
}

inline double squared_distance(std::span<const double> a, std::span<const double> b) {
  double d = 0.0;
  for (std::size_t j = 0; j < a.size(); ++j) d += (a[j] - b[j]) * (a[j] - b[j]);
  return d;
}

}  // namespace detail

// Label-skew partition: each class is spread over agents by its own
// Dirichlet(beta) proportions.
inline PartitionPlan dirichlet_label_partition(const Dataset& cal, std::size_t agents,
                                               double beta, std::uint64_t seed) {
  if (!cal.task().is_classification()) {
    throw TaskMismatchError("dirichlet_label_partition: requires a classification dataset");
  }
  std::vector<std::size_t> group_of(cal.size());
  for (std::size_t i = 0; i < cal.size(); ++i) group_of[i] = cal.label(i);
  auto plan = detail::dirichlet_group_split(group_of, cal.task().num_classes, agents, beta, seed);
  if (cal.size() < agents) plan.has_empty_agent = true;
  return plan;
}

// Lloyd's algorithm over the rows of `data`. Initial centroids are distinct
// random rows; a bin left empty is reseeded at the point farthest from its
// current centroid.
inline std::vector<std::size_t> kmeans_bins(const Dataset& data, std::size_t bins,
                                            std::uint64_t seed, std::size_t max_iters = 100) {
  if (bins < 1) throw ValidationError("kmeans_bins: need at least one bin");
  if (data.size() < bins) throw ValidationError("kmeans_bins: fewer samples than bins");
  const std::size_t n = data.size();
  const std::size_t dim = data.dim();
  std::vector<std::size_t> assign(n, 0);
  if (bins == 1) return assign;

  auto rng = random::make_engine(seed, 0x6ea5);
  const auto perm = random::permutation(rng, n);
  std::vector<double> centroids(bins * dim);
  auto centroid = [&](std::size_t b) {
    return std::span<double>(centroids).subspan(b * dim, dim);
  };
  for (std::size_t b = 0; b < bins; ++b) {
    auto x = data.row(perm[b]);
    std::copy(x.begin(), x.end(), centroid(b).begin());
  }

  auto nearest = [&](std::size_t i) {
    std::size_t best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t b = 0; b < bins; ++b) {
      const double d = detail::squared_distance(data.row(i), centroid(b));
      if (d < best_d) {
        best_d = d;
        best = b;
      }
    }
    return best;
  };
  auto reassign = [&]() {
    bool changed = false;
    for (std::size_t i = 0; i < n; ++i) {
      const auto b = nearest(i);
      if (b != assign[i]) changed = true;
      assign[i] = b;
    }
    return changed;
  };
  // Reseeds each empty bin at the farthest point taken from a bin that keeps
  // at least one other member, so no repair empties another bin.
  auto repair_empty = [&]() {
    std::vector<std::size_t> counts(bins, 0);
    for (auto b : assign) ++counts[b];
    for (std::size_t b = 0; b < bins; ++b) {
      if (counts[b] > 0) continue;
      std::size_t far = 0;
      double far_d = -1.0;
      for (std::size_t i = 0; i < n; ++i) {
        if (counts[assign[i]] < 2) continue;
        const double d = detail::squared_distance(data.row(i), centroid(assign[i]));
        if (d > far_d) {
          far_d = d;
          far = i;
        }
      }
      auto x = data.row(far);
      std::copy(x.begin(), x.end(), centroid(b).begin());
      --counts[assign[far]];
      assign[far] = b;
      counts[b] = 1;
    }
  };

  reassign();
  for (std::size_t iter = 0; iter < max_iters; ++iter) {
    repair_empty();
    std::vector<double> sums(bins * dim, 0.0);
    std::vector<std::size_t> counts(bins, 0);
    for (std::size_t i = 0; i < n; ++i) {
      auto x = data.row(i);
      for (std::size_t j = 0; j < dim; ++j) sums[assign[i] * dim + j] += x[j];
      ++counts[assign[i]];
    }
    for (std::size_t b = 0; b < bins; ++b) {
      if (counts[b] == 0) continue;
      for (std::size_t j = 0; j < dim; ++j) {
        centroids[b * dim + j] = sums[b * dim + j] / static_cast<double>(counts[b]);
      }
    }
    if (!reassign()) break;
  }
  repair_empty();
  return assign;
}

// Covariate-shift partition: K-means bins over the features, then one
// Dirichlet split per bin.
inline PartitionPlan dirichlet_covariate_partition(const Dataset& cal, std::size_t agents,
                                                   double beta, std::size_t bins,
                                                   std::uint64_t seed) {
  if (cal.task().is_classification()) {
    throw TaskMismatchError("dirichlet_covariate_partition: requires a regression dataset");
  }
  const auto bin_of = kmeans_bins(cal, bins, random::derive_seed(seed, 0xb1));
  auto plan = detail::dirichlet_group_split(bin_of, bins, agents, beta, seed);
  plan.bins = bins;
  if (cal.size() < agents) plan.has_empty_agent = true;
  return plan;
}

}  // namespace fedwq
