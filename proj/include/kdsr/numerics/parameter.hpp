// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <utility>

#include "kdsr/error.hpp"
#include "kdsr/numerics/dense_matrix.hpp"
#include "kdsr/rng.hpp"

namespace kdsr::num {

/// Which learning rate a parameter follows.
enum class ParamGroup { embedding, other };

struct Parameter {
  std::string name;
  ParamGroup group = ParamGroup::other;
  DenseMatrix value;
  DenseMatrix gradient;

  Parameter() = default;
  Parameter(std::string id, ParamGroup g, DenseMatrix v)
      : name(std::move(id)), group(g), value(std::move(v)), gradient(value.rows(), value.cols()) {}

  void zero_grad() { gradient.fill(0.0); }
};

inline Parameter gaussian_parameter(std::string name, ParamGroup group, std::size_t rows,
                                    std::size_t cols, double stddev, Rng& rng) {
  DenseMatrix m(rows, cols);
  for (double& v : m.values()) v = rng.normal(0.0, stddev);
  return {std::move(name), group, std::move(m)};
}

struct AdamState {
  DenseMatrix first_moment;
  DenseMatrix second_moment;
  std::uint64_t step = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  AdamState() = default;
  explicit AdamState(const Parameter& p)
      : first_moment(p.value.rows(), p.value.cols()),
        second_moment(p.value.rows(), p.value.cols()) {}
};

/// One bias-corrected Adam update. Throws numeric error naming the parameter
/// when its gradient holds a non-finite entry; nothing is modified then.
inline void adam_step(Parameter& p, AdamState& s, double lr) {
  if (!p.gradient.same_shape(p.value) || !s.first_moment.same_shape(p.value) ||
      !s.second_moment.same_shape(p.value)) {
    fail(ErrorKind::dimension, "adam shape mismatch for parameter " + p.name);
  }
  if (!(lr > 0.0)) fail(ErrorKind::argument, "adam learning rate must be positive");
  if (const auto bad = p.gradient.first_non_finite(); bad != p.gradient.size()) {
    fail(ErrorKind::numeric,
         "non-finite gradient in parameter " + p.name + " at flat index " + std::to_string(bad));
  }
  ++s.step;
  const double t = static_cast<double>(s.step);
  const double c1 = 1.0 - std::pow(s.beta1, t);
  const double c2 = 1.0 - std::pow(s.beta2, t);
  auto value = p.value.values();
  auto grad = p.gradient.values();
  auto m = s.first_moment.values();
  auto v = s.second_moment.values();
  for (std::size_t i = 0; i < value.size(); ++i) {
    const double g = grad[i];
    m[i] = s.beta1 * m[i] + (1.0 - s.beta1) * g;
    v[i] = s.beta2 * v[i] + (1.0 - s.beta2) * g * g;
    const double mhat = m[i] / c1;
    const double vhat = v[i] / c2;
    value[i] -= lr * mhat / (std::sqrt(vhat) + s.eps);
  }
}

}  // namespace kdsr::num
