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

#include <cmath>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "fedwq/error.hpp"
#include "fedwq/partition.hpp"
#include "fedwq/random.hpp"

namespace fedwq::synthetic {

struct ClassificationParams {
  std::size_t classes = 10;
  std::size_t dim = 8;
  double separation = 1.5;  // norm of every class mean
  double sigma = 1.0;       // within-class standard deviation
  std::size_t pool_size = 6000;
  std::size_t test_size = 2000;
};

// Gaussian blobs: class c has mean separation * u_c with u_c a seeded random
// unit vector, so pairwise class distances (and difficulty) vary.
class GaussianBlobs {
 public:
  GaussianBlobs(const ClassificationParams& p, std::uint64_t seed) : params_(p) {
    if (p.classes < 2 || p.dim < 1) throw ValidationError("GaussianBlobs: need classes >= 2, dim >= 1");
    if (!(p.sigma > 0.0)) throw ValidationError("GaussianBlobs: sigma must be positive");
    auto rng = random::make_engine(seed, 0xb10b);
    means_.resize(p.classes * p.dim);
    for (std::size_t c = 0; c < p.classes; ++c) {
      double norm = 0.0;
      for (std::size_t j = 0; j < p.dim; ++j) {
        means_[c * p.dim + j] = random::standard_normal(rng);
        norm += means_[c * p.dim + j] * means_[c * p.dim + j];
      }
      norm = std::sqrt(norm);
      for (std::size_t j = 0; j < p.dim; ++j) means_[c * p.dim + j] *= p.separation / norm;
    }
  }

  Task task() const { return Task::classification(params_.classes); }

  // n points with uniformly drawn labels.
  Dataset sample(std::size_t n, random::Engine& rng) const {
    Dataset out(task(), params_.dim);
    std::vector<double> x(params_.dim);
    for (std::size_t i = 0; i < n; ++i) {
      const auto c = static_cast<std::size_t>(random::uniform_index(rng, params_.classes));
      for (std::size_t j = 0; j < params_.dim; ++j) {
        x[j] = means_[c * params_.dim + j] + params_.sigma * random::standard_normal(rng);
      }
      out.push_back(x, static_cast<double>(c));
    }
    return out;
  }

 private:
  ClassificationParams params_;
  std::vector<double> means_;
};

struct RegressionParams {
  std::size_t dim = 8;
  double noise = 0.5;           // base noise standard deviation
  double heteroscedastic = 1.0;  // extra noise per unit of ||x|| / sqrt(dim)
  std::size_t pool_size = 6000;
  std::size_t test_size = 2000;
};

// y = w . x + (noise + heteroscedastic * ||x|| / sqrt(dim)) * eps, x ~ N(0, I).
class HeteroscedasticLinear {
 public:
  HeteroscedasticLinear(const RegressionParams& p, std::uint64_t seed) : params_(p) {
    if (p.dim < 1) throw ValidationError("HeteroscedasticLinear: dim must be >= 1");
    auto rng = random::make_engine(seed, 0x4e6);
    weights_.resize(p.dim);
    for (auto& w : weights_) w = random::standard_normal(rng);
  }

  Task task() const { return Task::regression(); }

  Dataset sample(std::size_t n, random::Engine& rng) const {
    Dataset out(task(), params_.dim);
    std::vector<double> x(params_.dim);
    const double root_dim = std::sqrt(static_cast<double>(params_.dim));
    for (std::size_t i = 0; i < n; ++i) {
      double signal = 0.0;
      double norm = 0.0;
      for (std::size_t j = 0; j < params_.dim; ++j) {
        x[j] = random::standard_normal(rng);
        signal += weights_[j] * x[j];
        norm += x[j] * x[j];
      }
      const double scale = params_.noise + params_.heteroscedastic * std::sqrt(norm) / root_dim;
      out.push_back(x, signal + scale * random::standard_normal(rng));
    }
    return out;
  }

 private:
  RegressionParams params_;
  std::vector<double> weights_;
};

// Numeric CSV with a header row. The target column is `target_column` when
// present, otherwise the last column.
inline Dataset load_csv(const std::string& path, Task task, const std::string& target_column = "target") {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open CSV file " + path);
  std::string line;
  if (!std::getline(in, line)) throw ValidationError("CSV file " + path + " is empty");
  auto split = [](const std::string& s) {
    std::vector<std::string> cells;
    std::stringstream ss(s);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
      while (!cell.empty() && (cell.back() == '\r' || cell.back() == ' ')) cell.pop_back();
      cells.push_back(cell);
    }
    return cells;
  };
  const auto header = split(line);
  if (header.size() < 2) throw ValidationError("CSV " + path + ": need a feature and a target");
  std::size_t target = header.size() - 1;
  for (std::size_t c = 0; c < header.size(); ++c) {
    if (header[c] == target_column) target = c;
  }
  Dataset out(task, header.size() - 1);
  std::vector<double> x;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    const auto cells = split(line);
    if (cells.size() != header.size()) {
      throw ValidationError("CSV " + path + ":" + std::to_string(line_no) + ": wrong column count");
    }
    x.clear();
    double y = 0.0;
    for (std::size_t c = 0; c < cells.size(); ++c) {
      char* end = nullptr;
      const double v = std::strtod(cells[c].c_str(), &end);
      if (cells[c].empty() || *end != '\0') {
        throw ValidationError("CSV " + path + ":" + std::to_string(line_no) + ": non-numeric cell");
      }
      if (c == target) y = v;
      else x.push_back(v);
    }
    out.push_back(x, y);
  }
  out.validate();
  return out;
}

}  // namespace fedwq::synthetic
