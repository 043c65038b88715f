// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "kdsr/error.hpp"
#include "kdsr/numerics/parameter.hpp"
#include "kdsr/rng.hpp"

namespace kdsr::num {

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  std::string worst_parameter;
  std::size_t worst_index = 0;
  bool passed = false;
};

struct GradCheckOptions {
  double tolerance = 1e-4;
  double step = 1e-5;
  double sample_fraction = 0.01;
  // Small parameters would otherwise get no coordinates at all.
  std::size_t min_per_parameter = 8;
  // Keeps the relative error meaningful for near-zero gradients.
  double denominator_floor = 1e-6;
  std::uint64_t seed = 0x5EED;
};

/// Compares the analytic gradients already stored in params against central
/// differences of loss(). loss() must read the current parameter values.
inline GradCheckReport finite_diff_check(const std::function<double()>& loss,
                                         std::span<Parameter* const> params,
                                         const GradCheckOptions& opts = {}) {
  if (!(opts.tolerance > 0.0)) fail(ErrorKind::argument, "grad check tolerance must be > 0");
  Rng rng = Rng::stream(opts.seed, "grad-check");
  GradCheckReport report;
  auto eval = [&]() {
    const double v = loss();
    if (!std::isfinite(v)) fail(ErrorKind::numeric, "non-finite loss during gradient check");
    return v;
  };
  for (Parameter* p : params) {
    const std::size_t n = p->value.size();
    if (n == 0) continue;
    std::size_t take = static_cast<std::size_t>(std::ceil(opts.sample_fraction * n));
    take = std::min(n, std::max(take, opts.min_per_parameter));
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    for (std::size_t i = 0; i < take; ++i) {
      std::swap(idx[i], idx[i + rng.below(n - i)]);
    }
    std::sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(take));
    for (std::size_t s = 0; s < take; ++s) {
      const std::size_t k = idx[s];
      const double original = p->value[k];
      p->value[k] = original + opts.step;
      const double up = eval();
      p->value[k] = original - opts.step;
      const double down = eval();
      p->value[k] = original;
      const double numeric = (up - down) / (2.0 * opts.step);
      const double analytic = p->gradient[k];
      const double rel = std::abs(analytic - numeric) /
                         (std::max(std::abs(analytic), std::abs(numeric)) + opts.denominator_floor);
      ++report.checked;
      if (rel > report.max_rel_error) {
        report.max_rel_error = rel;
        report.worst_parameter = p->name;
        report.worst_index = k;
      }
    }
  }
  report.passed = report.max_rel_error <= opts.tolerance;
  return report;
}

}  // namespace kdsr::num
