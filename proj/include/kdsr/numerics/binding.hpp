// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <utility>
#include <vector>

#include "kdsr/numerics/parameter.hpp"
#include "kdsr/numerics/tape.hpp"

namespace kdsr::num {

/// Tracks which tape leaves stand for which parameters so gradients can be
/// added back after backward().
class ParameterBinding {
 public:
  ad::Var bind(ad::Tape& tape, Parameter& p, bool trainable = true) {
    ad::Var v = tape.input(p.value, trainable);
    leaves_.emplace_back(&p, v);
    return v;
  }

  /// parameter.gradient += tape gradient, for every leaf the backward pass
  /// reached.
  void accumulate_gradients(const ad::Tape& tape) const {
    for (const auto& [p, v] : leaves_) {
      if (const DenseMatrix* g = tape.grad_if_any(v)) p->gradient += *g;
    }
  }

  const std::vector<std::pair<Parameter*, ad::Var>>& leaves() const noexcept { return leaves_; }

 private:
  std::vector<std::pair<Parameter*, ad::Var>> leaves_;
};

}  // namespace kdsr::num
