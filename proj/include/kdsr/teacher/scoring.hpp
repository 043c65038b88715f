// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>

#include "kdsr/error.hpp"
#include "kdsr/numerics/dense_matrix.hpp"

namespace kdsr::teacher {

/// Correlation scoring function. Distances are negated so that a larger
/// score always means "more correlated".
enum class ScoringKind : std::uint32_t { cosine = 0, dot = 1, euclidean = 2, manhattan = 3 };

constexpr std::string_view to_string(ScoringKind k) noexcept {
  switch (k) {
    case ScoringKind::cosine: return "cosine";
    case ScoringKind::dot: return "dot";
    case ScoringKind::euclidean: return "euclidean";
    case ScoringKind::manhattan: return "manhattan";
  }
  return "?";
}

inline ScoringKind parse_scoring(std::string_view s) {
  if (s == "cosine") return ScoringKind::cosine;
  if (s == "dot") return ScoringKind::dot;
  if (s == "euclidean") return ScoringKind::euclidean;
  if (s == "manhattan") return ScoringKind::manhattan;
  fail(ErrorKind::config, "unknown scoring function '" + std::string(s) + "'");
}

inline double holistic_score(ScoringKind kind, std::span<const double> u, std::span<const double> v) {
  if (u.size() != v.size()) {
    fail(ErrorKind::dimension, "scoring dimension mismatch: " + std::to_string(u.size()) + " vs " +
                                   std::to_string(v.size()));
  }
  switch (kind) {
    case ScoringKind::cosine: {
      const double nu = num::norm(u);
      const double nv = num::norm(v);
      if (nu == 0.0 || nv == 0.0) fail(ErrorKind::degenerate, "cosine of a zero vector");
      return num::dot(u, v) / (nu * nv);
    }
    case ScoringKind::dot:
      return num::dot(u, v);
    case ScoringKind::euclidean: {
      double s = 0.0;
      for (std::size_t i = 0; i < u.size(); ++i) s += (u[i] - v[i]) * (u[i] - v[i]);
      return -std::sqrt(s);
    }
    case ScoringKind::manhattan: {
      double s = 0.0;
      for (std::size_t i = 0; i < u.size(); ++i) s += std::abs(u[i] - v[i]);
      return -s;
    }
  }
  return 0.0;
}

/// Accumulates g * d(score)/du into du and g * d(score)/dv into dv.
inline void accumulate_score_gradient(ScoringKind kind, std::span<const double> u,
                                      std::span<const double> v, double g, std::span<double> du,
                                      std::span<double> dv) {
  const std::size_t n = u.size();
  switch (kind) {
    case ScoringKind::cosine: {
      const double nu = num::norm(u);
      const double nv = num::norm(v);
      const double s = num::dot(u, v) / (nu * nv);
      const double inv = 1.0 / (nu * nv);
      for (std::size_t i = 0; i < n; ++i) {
        du[i] += g * (v[i] * inv - s * u[i] / (nu * nu));
        dv[i] += g * (u[i] * inv - s * v[i] / (nv * nv));
      }
      break;
    }
    case ScoringKind::dot:
      for (std::size_t i = 0; i < n; ++i) {
        du[i] += g * v[i];
        dv[i] += g * u[i];
      }
      break;
    case ScoringKind::euclidean: {
      double s = 0.0;
      for (std::size_t i = 0; i < n; ++i) s += (u[i] - v[i]) * (u[i] - v[i]);
      const double dist = std::sqrt(s);
      if (dist == 0.0) break;
      for (std::size_t i = 0; i < n; ++i) {
        const double d = -g * (u[i] - v[i]) / dist;
        du[i] += d;
        dv[i] -= d;
      }
      break;
    }
    case ScoringKind::manhattan:
      for (std::size_t i = 0; i < n; ++i) {
        const double diff = u[i] - v[i];
        const double sgn = diff > 0.0 ? 1.0 : (diff < 0.0 ? -1.0 : 0.0);
        du[i] -= g * sgn;
        dv[i] += g * sgn;
      }
      break;
  }
}

}  // namespace kdsr::teacher
