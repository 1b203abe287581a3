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
#include <cstddef>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "fedwq/error.hpp"

namespace fedwq {

// Threshold value meaning "calibration set too small to certify anything":
// every label enters the set, intervals cover the whole line.
inline constexpr double kUnboundedThreshold = std::numeric_limits<double>::infinity();

inline bool is_unbounded(double threshold) { return threshold == kUnboundedThreshold; }

using ClassIndex = std::size_t;

// Softmax output of a classifier: at least two non-negative entries summing
// to one within 1e-6.
class ProbabilityVector {
 public:
  static constexpr double kSumTolerance = 1e-6;

  explicit ProbabilityVector(std::vector<double> probs) : probs_(std::move(probs)) {
    if (probs_.size() < 2) throw ValidationError("ProbabilityVector: need at least 2 classes");
    double total = 0.0;
    for (double p : probs_) {
      if (!(p >= 0.0 && p <= 1.0)) {
        throw ValidationError("ProbabilityVector: entry outside [0, 1]");
      }
      total += p;
    }
    if (std::abs(total - 1.0) > kSumTolerance) {
      throw ValidationError("ProbabilityVector: entries sum to " + std::to_string(total));
    }
  }

  std::size_t size() const noexcept { return probs_.size(); }
  double operator[](ClassIndex c) const { return probs_[c]; }
  std::span<const double> values() const noexcept { return probs_; }

 private:
  std::vector<double> probs_;
};

// Lower/upper conditional quantile predictions. Crossed inputs are swapped
// and the repair is remembered.
struct QuantilePair {
  double lo = 0.0;
  double hi = 0.0;
  bool repaired = false;

  static QuantilePair make(double lo, double hi) {
    if (!std::isfinite(lo) || !std::isfinite(hi)) {
      throw ValidationError("QuantilePair: non-finite prediction");
    }
    if (lo > hi) return {hi, lo, true};
    return {lo, hi, false};
  }
};

struct PredictionInterval {
  double lo = 0.0;
  double hi = 0.0;
  bool unbounded = false;

  bool contains(double y) const noexcept { return unbounded || (lo <= y && y <= hi); }
  double length() const noexcept {
    // Thresholds below -(hi - lo) / 2 invert the endpoints: an empty interval.
    return unbounded ? std::numeric_limits<double>::infinity() : std::max(0.0, hi - lo);
  }
};

namespace detail {

// Class indices by descending probability, ascending index on ties.
inline std::vector<ClassIndex> aps_order(const ProbabilityVector& probs) {
  std::vector<ClassIndex> order(probs.size());
  std::iota(order.begin(), order.end(), ClassIndex{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](ClassIndex a, ClassIndex b) { return probs[a] > probs[b]; });
  return order;
}

}  // namespace detail

// APS scores of every class, indexed by class. Scores are prefix sums taken
// in rank order, so aps_score and aps_prediction_set see identical bits. The
// last-ranked class is pinned to exactly 1.0 and rounding never exceeds 1.
inline std::vector<double> aps_scores(const ProbabilityVector& probs) {
  const auto order = detail::aps_order(probs);
  std::vector<double> scores(probs.size());
  double cumulative = 0.0;
  for (std::size_t rank = 0; rank < order.size(); ++rank) {
    cumulative += probs[order[rank]];
    scores[order[rank]] = std::min(cumulative, 1.0);
  }
  scores[order.back()] = 1.0;
  return scores;
}

// Deterministic (non-randomized) APS score of `label`.
inline double aps_score(const ProbabilityVector& probs, ClassIndex label) {
  if (label >= probs.size()) {
    throw IndexError("aps_score: label " + std::to_string(label) + " out of range");
  }
  return aps_scores(probs)[label];
}

// { y : aps_score(probs, y) <= threshold }, ascending. May be empty.
inline std::vector<ClassIndex> aps_prediction_set(const ProbabilityVector& probs,
                                                  double threshold) {
  if (std::isnan(threshold)) throw ValidationError("aps_prediction_set: NaN threshold");
  const auto scores = aps_scores(probs);
  std::vector<ClassIndex> set;
  for (ClassIndex y = 0; y < scores.size(); ++y) {
    if (scores[y] <= threshold) set.push_back(y);
  }
  return set;
}

// CQR score max(lo - y, y - hi); negative strictly inside the band.
inline double cqr_score(double y, const QuantilePair& pred) {
  if (!std::isfinite(y)) throw ValidationError("cqr_score: non-finite target");
  return std::max(pred.lo - y, y - pred.hi);
}

inline PredictionInterval cqr_prediction_interval(const QuantilePair& pred, double threshold) {
  if (std::isnan(threshold)) throw ValidationError("cqr_prediction_interval: NaN threshold");
  if (is_unbounded(threshold)) {
    return {-std::numeric_limits<double>::infinity(), std::numeric_limits<double>::infinity(),
            true};
  }
  return {pred.lo - threshold, pred.hi + threshold, false};
}

}  // namespace fedwq
