// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "kdsr/error.hpp"

namespace kdsr::num {

inline constexpr double kSigmoidFloor = 1e-12;

/// Logistic function clamped to (1e-12, 1 - 1e-12).
inline double sigmoid(double x) noexcept {
  const double s = x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
  return std::clamp(s, kSigmoidFloor, 1.0 - kSigmoidFloor);
}

/// Writes softmax(logits) into probs and returns log-sum-exp.
inline double softmax(std::span<const double> logits, std::span<double> probs) {
  if (logits.empty()) fail(ErrorKind::argument, "softmax over empty logits");
  const double peak = *std::max_element(logits.begin(), logits.end());
  double total = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    probs[i] = std::exp(logits[i] - peak);
    total += probs[i];
  }
  for (double& p : probs) p /= total;
  return peak + std::log(total);
}

/// -log softmax(logits)[target], max-shift stabilised.
inline double softmax_cross_entropy(std::span<const double> logits, std::size_t target) {
  if (logits.empty()) fail(ErrorKind::argument, "cross entropy over empty logits");
  if (target >= logits.size()) {
    fail(ErrorKind::argument, "target " + std::to_string(target) + " out of range for " +
                                  std::to_string(logits.size()) + " logits");
  }
  const double peak = *std::max_element(logits.begin(), logits.end());
  double total = 0.0;
  for (double v : logits) total += std::exp(v - peak);
  return -(logits[target] - peak) + std::log(total);
}

/// Sample Pearson correlation coefficient.
inline double pearson(std::span<const double> u, std::span<const double> v) {
  if (u.size() != v.size()) {
    fail(ErrorKind::argument, "pearson length mismatch: " + std::to_string(u.size()) +
                                  " vs " + std::to_string(v.size()));
  }
  if (u.size() < 2) fail(ErrorKind::argument, "pearson needs at least 2 samples");
  const auto n = static_cast<double>(u.size());
  double mu = 0.0;
  double mv = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    mu += u[i];
    mv += v[i];
  }
  mu /= n;
  mv /= n;
  double suv = 0.0;
  double suu = 0.0;
  double svv = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    const double du = u[i] - mu;
    const double dv = v[i] - mv;
    suv += du * dv;
    suu += du * du;
    svv += dv * dv;
  }
  if (suu == 0.0 || svv == 0.0) {
    fail(ErrorKind::undefined_correlation, "pearson of a constant vector");
  }
  return std::clamp(suv / std::sqrt(suu * svv), -1.0, 1.0);
}

}  // namespace kdsr::num
