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
#include <numeric>
#include <random>
#include <span>
#include <utility>
#include <vector>

#include "fedwq/error.hpp"

// Seeded random primitives. Only the engine (std::mt19937_64, whose output
// sequence is fixed by the standard) comes from <random>; every distribution
// is written out here so a seed produces the same stream on every toolchain.
namespace fedwq::random {

using Engine = std::mt19937_64;

// Mixes (seed, stream) into an independent engine seed (splitmix64 finalizer).
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

inline Engine make_engine(std::uint64_t seed, std::uint64_t stream = 0) {
  return Engine(derive_seed(seed, stream));
}

// Uniform on [0, 1) with 53 random bits.
inline double uniform01(Engine& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

// Uniform on (0, 1); safe to pass to log().
inline double uniform_open01(Engine& rng) {
  double u = 0.0;
  while (u == 0.0) u = uniform01(rng);
  return u;
}

inline double uniform(Engine& rng, double lo, double hi) {
  return lo + (hi - lo) * uniform01(rng);
}

// Uniform integer in [0, bound) by rejection, no modulo bias.
inline std::uint64_t uniform_index(Engine& rng, std::uint64_t bound) {
  if (bound == 0) throw ValidationError("uniform_index: bound must be positive");
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                              std::numeric_limits<std::uint64_t>::max() % bound;
  std::uint64_t draw = rng();
  while (draw >= limit) draw = rng();
  return draw % bound;
}

// Marsaglia polar method.
inline double standard_normal(Engine& rng) {
  while (true) {
    const double u = 2.0 * uniform01(rng) - 1.0;
    const double v = 2.0 * uniform01(rng) - 1.0;
    const double s = u * u + v * v;
    if (s > 0.0 && s < 1.0) return u * std::sqrt(-2.0 * std::log(s) / s);
  }
}

inline double normal(Engine& rng, double mean, double stddev) {
  return mean + stddev * standard_normal(rng);
}

// Gamma(shape, 1) by Marsaglia-Tsang. For shape < 1 the draw is boosted:
// G(a) = G(a + 1) * U^(1/a).
inline double gamma(Engine& rng, double shape) {
  if (!(shape > 0.0) || !std::isfinite(shape)) {
    throw ValidationError("gamma: shape must be positive and finite");
  }
  if (shape < 1.0) {
    const double boost = std::pow(uniform_open01(rng), 1.0 / shape);
    return gamma(rng, shape + 1.0) * boost;
  }
  const double d = shape - 1.0 / 3.0;
  const double c = 1.0 / std::sqrt(9.0 * d);
  while (true) {
    double x = 0.0;
    double v = 0.0;
    do {
      x = standard_normal(rng);
      v = 1.0 + c * x;
    } while (v <= 0.0);
    v = v * v * v;
    const double u = uniform_open01(rng);
    if (u < 1.0 - 0.0331 * x * x * x * x) return d * v;
    if (std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v;
  }
}

// Symmetric Dirichlet(concentration * 1_k) via normalized Gamma draws.
inline std::vector<double> dirichlet(Engine& rng, std::size_t k, double concentration) {
  if (k == 0) throw ValidationError("dirichlet: dimension must be positive");
  std::vector<double> w(k);
  double total = 0.0;
  for (auto& x : w) {
    x = gamma(rng, concentration);
    total += x;
  }
  if (total <= 0.0) {
    // Every coordinate underflowed (tiny concentration); put the mass on one
    // uniformly chosen coordinate, the limit of Dirichlet(beta -> 0).
    std::fill(w.begin(), w.end(), 0.0);
    w[uniform_index(rng, k)] = 1.0;
    return w;
  }
  for (auto& x : w) x /= total;
  return w;
}

// Fisher-Yates with uniform_index.
template <typename T>
void shuffle(Engine& rng, std::span<T> items) {
  for (std::size_t i = items.size(); i > 1; --i) {
    const auto j = static_cast<std::size_t>(uniform_index(rng, i));
    std::swap(items[i - 1], items[j]);
  }
}

template <typename T>
void shuffle(Engine& rng, std::vector<T>& items) {
  shuffle(rng, std::span<T>(items));
}

inline std::vector<std::size_t> permutation(Engine& rng, std::size_t n) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  shuffle(rng, idx);
  return idx;
}

}  // namespace fedwq::random
