// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "kdsr/error.hpp"
#include "kdsr/numerics/dense_matrix.hpp"
#include "kdsr/numerics/functions.hpp"
#include "kdsr/rng.hpp"
#include "kdsr/teacher/scoring.hpp"

namespace kdsr::eval {

using ItemPair = std::pair<std::uint32_t, std::uint32_t>;

/// `count` uniformly drawn ordered pairs of distinct items.
inline std::vector<ItemPair> sample_drift_pairs(std::size_t items, std::size_t count,
                                                std::uint64_t seed) {
  if (items < 2) fail(ErrorKind::argument, "drift pairs need at least 2 items");
  Rng rng = Rng::stream(seed, "drift-pairs");
  std::vector<ItemPair> out;
  out.reserve(count);
  while (out.size() < count) {
    const auto i = static_cast<std::uint32_t>(rng.below(items));
    const auto j = static_cast<std::uint32_t>(rng.below(items));
    if (i != j) out.emplace_back(i, j);
  }
  return out;
}

/// Cosine similarity of each listed row pair, in order.
inline std::vector<double> pairwise_similarity_profile(const num::DenseMatrix& space,
                                                       std::span<const ItemPair> pairs) {
  std::vector<double> out;
  out.reserve(pairs.size());
  for (const auto& [i, j] : pairs) {
    if (i >= space.rows() || j >= space.rows()) {
      fail(ErrorKind::lookup, "pair (" + std::to_string(i) + ", " + std::to_string(j) +
                                  ") out of range for " + std::to_string(space.rows()) + " rows");
    }
    out.push_back(teacher::holistic_score(teacher::ScoringKind::cosine, space.row(i), space.row(j)));
  }
  return out;
}

struct Drift {
  double em = 0.0;
  double ev = 0.0;
};

inline double profile_pearson(const num::DenseMatrix& a, const num::DenseMatrix& b,
                              std::span<const ItemPair> pairs) {
  if (a.rows() != b.rows()) {
    fail(ErrorKind::dimension, "spaces disagree on item count: " + std::to_string(a.rows()) +
                                   " vs " + std::to_string(b.rows()));
  }
  return num::pearson(pairwise_similarity_profile(a, pairs), pairwise_similarity_profile(b, pairs));
}

/// Pearson correlation of E's similarity profile with M's and with V's.
inline Drift drift(const num::DenseMatrix& e, const num::DenseMatrix& m, const num::DenseMatrix& v,
                   std::span<const ItemPair> pairs) {
  return {profile_pearson(e, m, pairs), profile_pearson(e, v, pairs)};
}

}  // namespace kdsr::eval
