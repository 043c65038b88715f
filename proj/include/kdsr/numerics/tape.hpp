// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "kdsr/error.hpp"
#include "kdsr/numerics/dense_matrix.hpp"
#include "kdsr/numerics/functions.hpp"

/// Minimal reverse-mode differentiation over DenseMatrix values.
///
/// A Tape records every operation in creation order. backward() walks the
/// records in reverse and lets each one push its output gradient into its
/// inputs. Leaves created with input() reference caller-owned storage (model
/// parameters) without copying; their gradients stay on the tape until the
/// caller collects them.
namespace kdsr::ad {

using num::DenseMatrix;

class Tape;

struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;

  const DenseMatrix& value() const;
};

class Tape {
 public:
  using Backward = std::function<void(Tape&, std::size_t self)>;

  explicit Tape(bool record = true) : record_(record) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const noexcept { return record_; }
  std::size_t size() const noexcept { return nodes_.size(); }

  Var constant(DenseMatrix v) {
    Node n;
    n.owned = std::move(v);
    nodes_.push_back(std::move(n));
    return {this, nodes_.size() - 1};
  }

  /// Leaf bound to external storage, which must outlive the tape.
  Var input(const DenseMatrix& external, bool trainable = true) {
    Node n;
    n.external = &external;
    n.needs_grad = record_ && trainable;
    nodes_.push_back(std::move(n));
    return {this, nodes_.size() - 1};
  }

  Var emit(DenseMatrix value, std::span<const Var> inputs, Backward back) {
    Node n;
    n.owned = std::move(value);
    if (record_) {
      for (const Var& v : inputs) n.needs_grad = n.needs_grad || nodes_[v.id].needs_grad;
      if (n.needs_grad) n.back = std::move(back);
    }
    nodes_.push_back(std::move(n));
    return {this, nodes_.size() - 1};
  }

  Var emit(DenseMatrix value, std::initializer_list<Var> inputs, Backward back) {
    return emit(std::move(value), std::span<const Var>(inputs.begin(), inputs.size()),
                std::move(back));
  }

  const DenseMatrix& value(std::size_t id) const {
    const Node& n = nodes_[id];
    return n.external != nullptr ? *n.external : n.owned;
  }

  bool needs_grad(std::size_t id) const { return nodes_[id].needs_grad; }
  bool needs_grad(Var v) const { return nodes_[v.id].needs_grad; }

  /// Gradient accumulator for a node, allocated as zeros on first touch.
  DenseMatrix& grad(std::size_t id) {
    Node& n = nodes_[id];
    if (n.grad.empty()) {
      const DenseMatrix& v = value(id);
      n.grad = DenseMatrix(v.rows(), v.cols());
    }
    return n.grad;
  }
  DenseMatrix& grad(Var v) { return grad(v.id); }

  const DenseMatrix* grad_if_any(Var v) const {
    const Node& n = nodes_[v.id];
    return n.grad.empty() ? nullptr : &n.grad;
  }

  void backward(Var root, double seed = 1.0) {
    if (!record_) fail(ErrorKind::argument, "backward on a non-recording tape");
    if (value(root.id).size() != 1) fail(ErrorKind::dimension, "backward root must be 1x1");
    if (!nodes_[root.id].needs_grad) return;
    grad(root.id)[0] += seed;
    for (std::size_t id = root.id + 1; id-- > 0;) {
      Node& n = nodes_[id];
      if (n.back && !n.grad.empty()) n.back(*this, id);
    }
  }

 private:
  struct Node {
    DenseMatrix owned;
    const DenseMatrix* external = nullptr;
    DenseMatrix grad;
    bool needs_grad = false;
    Backward back;
  };

  bool record_;
  std::vector<Node> nodes_;
};

inline const DenseMatrix& Var::value() const { return tape->value(id); }

namespace detail {

inline void require_same_shape(const DenseMatrix& a, const DenseMatrix& b, const char* op) {
  if (!a.same_shape(b)) {
    fail(ErrorKind::dimension,
         std::string(op) + " shape mismatch: " + a.shape_string() + " vs " + b.shape_string());
  }
}

template <class F>
DenseMatrix map(const DenseMatrix& a, F f) {
  DenseMatrix out(a.rows(), a.cols());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = f(a[i]);
  return out;
}

}  // namespace detail

inline Var matmul(Var a, Var b) {
  Tape& t = *a.tape;
  DenseMatrix out = num::matmul(a.value(), b.value());
  return t.emit(std::move(out), {a, b}, [a, b](Tape& t, std::size_t self) {
    const DenseMatrix& g = t.grad(self);
    if (t.needs_grad(a)) num::matmul_bt_acc(g, t.value(b.id), t.grad(a));
    if (t.needs_grad(b)) num::matmul_at_acc(t.value(a.id), g, t.grad(b));
  });
}

/// a * b^T
inline Var matmul_bt(Var a, Var b) {
  Tape& t = *a.tape;
  DenseMatrix out = num::matmul(a.value(), num::transpose(b.value()));
  return t.emit(std::move(out), {a, b}, [a, b](Tape& t, std::size_t self) {
    const DenseMatrix& g = t.grad(self);
    if (t.needs_grad(a)) num::matmul_acc(g, t.value(b.id), t.grad(a));
    if (t.needs_grad(b)) num::matmul_at_acc(g, t.value(a.id), t.grad(b));
  });
}

inline Var transpose(Var a) {
  Tape& t = *a.tape;
  return t.emit(num::transpose(a.value()), {a}, [a](Tape& t, std::size_t self) {
    t.grad(a) += num::transpose(t.grad(self));
  });
}

inline Var add(Var a, Var b) {
  detail::require_same_shape(a.value(), b.value(), "add");
  Tape& t = *a.tape;
  DenseMatrix out = a.value();
  out += b.value();
  return t.emit(std::move(out), {a, b}, [a, b](Tape& t, std::size_t self) {
    const DenseMatrix& g = t.grad(self);
    if (t.needs_grad(a)) t.grad(a) += g;
    if (t.needs_grad(b)) t.grad(b) += g;
  });
}

inline Var sub(Var a, Var b) {
  detail::require_same_shape(a.value(), b.value(), "sub");
  Tape& t = *a.tape;
  DenseMatrix out = a.value();
  const auto& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
  return t.emit(std::move(out), {a, b}, [a, b](Tape& t, std::size_t self) {
    const DenseMatrix& g = t.grad(self);
    if (t.needs_grad(a)) t.grad(a) += g;
    if (t.needs_grad(b)) {
      DenseMatrix& gb = t.grad(b);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
    }
  });
}

/// Adds a 1xC row to every row of a.
inline Var add_row(Var a, Var bias) {
  const auto& av = a.value();
  const auto& bv = bias.value();
  if (bv.rows() != 1 || bv.cols() != av.cols()) {
    fail(ErrorKind::dimension,
         "add_row shape mismatch: " + av.shape_string() + " + " + bv.shape_string());
  }
  Tape& t = *a.tape;
  DenseMatrix out = av;
  for (std::size_t r = 0; r < out.rows(); ++r) {
    auto row = out.row(r);
    for (std::size_t c = 0; c < row.size(); ++c) row[c] += bv[c];
  }
  return t.emit(std::move(out), {a, bias}, [a, bias](Tape& t, std::size_t self) {
    const DenseMatrix& g = t.grad(self);
    if (t.needs_grad(a)) t.grad(a) += g;
    if (t.needs_grad(bias)) {
      DenseMatrix& gb = t.grad(bias);
      for (std::size_t r = 0; r < g.rows(); ++r) {
        auto row = g.row(r);
        for (std::size_t c = 0; c < row.size(); ++c) gb[c] += row[c];
      }
    }
  });
}

inline Var hadamard(Var a, Var b) {
  detail::require_same_shape(a.value(), b.value(), "hadamard");
  Tape& t = *a.tape;
  DenseMatrix out = a.value();
  const auto& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  return t.emit(std::move(out), {a, b}, [a, b](Tape& t, std::size_t self) {
    const DenseMatrix& g = t.grad(self);
    if (t.needs_grad(a)) {
      DenseMatrix& ga = t.grad(a);
      const auto& bv = t.value(b.id);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
    }
    if (t.needs_grad(b)) {
      DenseMatrix& gb = t.grad(b);
      const auto& av = t.value(a.id);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
    }
  });
}

inline Var scale(Var a, double s) {
  Tape& t = *a.tape;
  DenseMatrix out = detail::map(a.value(), [s](double v) { return v * s; });
  return t.emit(std::move(out), {a}, [a, s](Tape& t, std::size_t self) {
    const DenseMatrix& g = t.grad(self);
    DenseMatrix& ga = t.grad(a);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * s;
  });
}

inline Var sigmoid(Var a) {
  Tape& t = *a.tape;
  DenseMatrix out = detail::map(a.value(), [](double v) { return num::sigmoid(v); });
  return t.emit(std::move(out), {a}, [a](Tape& t, std::size_t self) {
    const DenseMatrix& g = t.grad(self);
    const DenseMatrix& y = t.value(self);
    DenseMatrix& ga = t.grad(a);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * y[i] * (1.0 - y[i]);
  });
}

inline Var tanh(Var a) {
  Tape& t = *a.tape;
  DenseMatrix out = detail::map(a.value(), [](double v) { return std::tanh(v); });
  return t.emit(std::move(out), {a}, [a](Tape& t, std::size_t self) {
    const DenseMatrix& g = t.grad(self);
    const DenseMatrix& y = t.value(self);
    DenseMatrix& ga = t.grad(a);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * (1.0 - y[i] * y[i]);
  });
}

inline Var relu(Var a) {
  Tape& t = *a.tape;
  DenseMatrix out = detail::map(a.value(), [](double v) { return v > 0.0 ? v : 0.0; });
  return t.emit(std::move(out), {a}, [a](Tape& t, std::size_t self) {
    const DenseMatrix& g = t.grad(self);
    const DenseMatrix& x = t.value(a.id);
    DenseMatrix& ga = t.grad(a);
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (x[i] > 0.0) ga[i] += g[i];
    }
  });
}

/// Elementwise |a|; subgradient 0 at the kink.
inline Var abs(Var a) {
  Tape& t = *a.tape;
  DenseMatrix out = detail::map(a.value(), [](double v) { return std::abs(v); });
  return t.emit(std::move(out), {a}, [a](Tape& t, std::size_t self) {
    const DenseMatrix& g = t.grad(self);
    const DenseMatrix& x = t.value(a.id);
    DenseMatrix& ga = t.grad(a);
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (x[i] > 0.0) {
        ga[i] += g[i];
      } else if (x[i] < 0.0) {
        ga[i] -= g[i];
      }
    }
  });
}

inline Var gather_rows(Var table, std::vector<std::uint32_t> indices) {
  const auto& tv = table.value();
  DenseMatrix out(indices.size(), tv.cols());
  for (std::size_t r = 0; r < indices.size(); ++r) {
    if (indices[r] >= tv.rows()) {
      fail(ErrorKind::lookup, "row index " + std::to_string(indices[r]) +
                                  " out of range for table with " + std::to_string(tv.rows()) +
                                  " rows");
    }
    const auto src = tv.row(indices[r]);
    std::copy(src.begin(), src.end(), out.row(r).begin());
  }
  Tape& t = *table.tape;
  return t.emit(std::move(out), {table},
                [table, idx = std::move(indices)](Tape& t, std::size_t self) {
                  const DenseMatrix& g = t.grad(self);
                  DenseMatrix& gt = t.grad(table);
                  for (std::size_t r = 0; r < idx.size(); ++r) {
                    auto dst = gt.row(idx[r]);
                    auto src = g.row(r);
                    for (std::size_t c = 0; c < src.size(); ++c) dst[c] += src[c];
                  }
                });
}

inline Var slice_rows(Var a, std::size_t r0, std::size_t r1) {
  const auto& av = a.value();
  if (r0 > r1 || r1 > av.rows()) fail(ErrorKind::dimension, "slice_rows out of range");
  DenseMatrix out(r1 - r0, av.cols());
  std::copy(av.values().begin() + static_cast<std::ptrdiff_t>(r0 * av.cols()),
            av.values().begin() + static_cast<std::ptrdiff_t>(r1 * av.cols()),
            out.values().begin());
  Tape& t = *a.tape;
  return t.emit(std::move(out), {a}, [a, r0](Tape& t, std::size_t self) {
    const DenseMatrix& g = t.grad(self);
    DenseMatrix& ga = t.grad(a);
    const std::size_t off = r0 * ga.cols();
    for (std::size_t i = 0; i < g.size(); ++i) ga[off + i] += g[i];
  });
}

inline Var slice_cols(Var a, std::size_t c0, std::size_t c1) {
  const auto& av = a.value();
  if (c0 > c1 || c1 > av.cols()) fail(ErrorKind::dimension, "slice_cols out of range");
  DenseMatrix out(av.rows(), c1 - c0);
  for (std::size_t r = 0; r < av.rows(); ++r) {
    for (std::size_t c = c0; c < c1; ++c) out(r, c - c0) = av(r, c);
  }
  Tape& t = *a.tape;
  return t.emit(std::move(out), {a}, [a, c0](Tape& t, std::size_t self) {
    const DenseMatrix& g = t.grad(self);
    DenseMatrix& ga = t.grad(a);
    for (std::size_t r = 0; r < g.rows(); ++r) {
      for (std::size_t c = 0; c < g.cols(); ++c) ga(r, c0 + c) += g(r, c);
    }
  });
}

inline Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) fail(ErrorKind::argument, "concat_cols of nothing");
  const std::size_t rows = parts.front().value().rows();
  std::size_t cols = 0;
  for (const Var& p : parts) {
    if (p.value().rows() != rows) fail(ErrorKind::dimension, "concat_cols row mismatch");
    cols += p.value().cols();
  }
  DenseMatrix out(rows, cols);
  std::size_t off = 0;
  for (const Var& p : parts) {
    const auto& pv = p.value();
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t c = 0; c < pv.cols(); ++c) out(r, off + c) = pv(r, c);
    }
    off += pv.cols();
  }
  Tape& t = *parts.front().tape;
  std::vector<Var> inputs(parts.begin(), parts.end());
  return t.emit(std::move(out), parts, [inputs](Tape& t, std::size_t self) {
    const DenseMatrix& g = t.grad(self);
    std::size_t off = 0;
    for (const Var& p : inputs) {
      const std::size_t pc = t.value(p.id).cols();
      if (t.needs_grad(p)) {
        DenseMatrix& gp = t.grad(p);
        for (std::size_t r = 0; r < g.rows(); ++r) {
          for (std::size_t c = 0; c < pc; ++c) gp(r, c) += g(r, off + c);
        }
      }
      off += pc;
    }
  });
}

inline Var concat_cols(std::initializer_list<Var> parts) {
  return concat_cols(std::span<const Var>(parts.begin(), parts.size()));
}

inline Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) fail(ErrorKind::argument, "concat_rows of nothing");
  const std::size_t cols = parts.front().value().cols();
  std::size_t rows = 0;
  for (const Var& p : parts) {
    if (p.value().cols() != cols) fail(ErrorKind::dimension, "concat_rows column mismatch");
    rows += p.value().rows();
  }
  DenseMatrix out(rows, cols);
  std::size_t off = 0;
  for (const Var& p : parts) {
    const auto v = p.value().values();
    std::copy(v.begin(), v.end(), out.values().begin() + static_cast<std::ptrdiff_t>(off));
    off += v.size();
  }
  Tape& t = *parts.front().tape;
  std::vector<Var> inputs(parts.begin(), parts.end());
  return t.emit(std::move(out), parts, [inputs](Tape& t, std::size_t self) {
    const DenseMatrix& g = t.grad(self);
    std::size_t off = 0;
    for (const Var& p : inputs) {
      const std::size_t n = t.value(p.id).size();
      if (t.needs_grad(p)) {
        DenseMatrix& gp = t.grad(p);
        for (std::size_t i = 0; i < n; ++i) gp[i] += g[off + i];
      }
      off += n;
    }
  });
}

/// Row-wise softmax of a square score matrix where row i only sees columns
/// 0..i. Masked entries are exactly zero.
inline Var causal_softmax(Var a) {
  const auto& av = a.value();
  if (av.rows() != av.cols()) fail(ErrorKind::dimension, "causal_softmax needs a square matrix");
  DenseMatrix out(av.rows(), av.cols());
  for (std::size_t i = 0; i < av.rows(); ++i) {
    num::softmax(av.row(i).first(i + 1), out.row(i).first(i + 1));
  }
  Tape& t = *a.tape;
  return t.emit(std::move(out), {a}, [a](Tape& t, std::size_t self) {
    const DenseMatrix& g = t.grad(self);
    const DenseMatrix& y = t.value(self);
    DenseMatrix& ga = t.grad(a);
    for (std::size_t i = 0; i < y.rows(); ++i) {
      double inner = 0.0;
      for (std::size_t j = 0; j <= i; ++j) inner += y(i, j) * g(i, j);
      for (std::size_t j = 0; j <= i; ++j) ga(i, j) += y(i, j) * (g(i, j) - inner);
    }
  });
}

/// Per-row normalisation followed by a learned 1xC gain and bias.
inline Var layer_norm(Var a, Var gain, Var bias, double eps = 1e-5) {
  const auto& av = a.value();
  const auto& gv = gain.value();
  const auto& bv = bias.value();
  const std::size_t c = av.cols();
  if (gv.rows() != 1 || gv.cols() != c || !gv.same_shape(bv)) {
    fail(ErrorKind::dimension, "layer_norm parameter shape mismatch");
  }
  DenseMatrix normed(av.rows(), c);
  std::vector<double> inv_std(av.rows());
  DenseMatrix out(av.rows(), c);
  for (std::size_t r = 0; r < av.rows(); ++r) {
    const auto x = av.row(r);
    double mean = 0.0;
    for (double v : x) mean += v;
    mean /= static_cast<double>(c);
    double var = 0.0;
    for (double v : x) var += (v - mean) * (v - mean);
    var /= static_cast<double>(c);
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t k = 0; k < c; ++k) {
      normed(r, k) = (x[k] - mean) * inv_std[r];
      out(r, k) = normed(r, k) * gv[k] + bv[k];
    }
  }
  Tape& t = *a.tape;
  return t.emit(std::move(out), {a, gain, bias},
                [a, gain, bias, normed = std::move(normed), inv_std = std::move(inv_std)](
                    Tape& t, std::size_t self) {
                  const DenseMatrix& g = t.grad(self);
                  const std::size_t c = g.cols();
                  const auto& gv = t.value(gain.id);
                  if (t.needs_grad(gain) || t.needs_grad(bias)) {
                    DenseMatrix& gg = t.grad(gain);
                    DenseMatrix& gb = t.grad(bias);
                    for (std::size_t r = 0; r < g.rows(); ++r) {
                      for (std::size_t k = 0; k < c; ++k) {
                        gg[k] += g(r, k) * normed(r, k);
                        gb[k] += g(r, k);
                      }
                    }
                  }
                  if (t.needs_grad(a)) {
                    DenseMatrix& ga = t.grad(a);
                    const auto n = static_cast<double>(c);
                    for (std::size_t r = 0; r < g.rows(); ++r) {
                      double sum_dy = 0.0;
                      double sum_dy_x = 0.0;
                      for (std::size_t k = 0; k < c; ++k) {
                        const double dy = g(r, k) * gv[k];
                        sum_dy += dy;
                        sum_dy_x += dy * normed(r, k);
                      }
                      for (std::size_t k = 0; k < c; ++k) {
                        const double dy = g(r, k) * gv[k];
                        ga(r, k) += inv_std[r] * (dy - sum_dy / n - normed(r, k) * sum_dy_x / n);
                      }
                    }
                  }
                });
}

inline Var sum(Var a) {
  double s = 0.0;
  for (double v : a.value().values()) s += v;
  Tape& t = *a.tape;
  return t.emit(DenseMatrix(1, 1, s), {a}, [a](Tape& t, std::size_t self) {
    const double g = t.grad(self)[0];
    DenseMatrix& ga = t.grad(a);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g;
  });
}

/// Sum over rows of -log softmax(row)[target]. Rows whose target is negative
/// are skipped.
inline Var softmax_xent_sum(Var logits, std::vector<std::int64_t> targets) {
  const auto& lv = logits.value();
  if (targets.size() != lv.rows()) fail(ErrorKind::dimension, "target count != logit rows");
  DenseMatrix probs(lv.rows(), lv.cols());
  double total = 0.0;
  for (std::size_t r = 0; r < lv.rows(); ++r) {
    if (targets[r] < 0) continue;
    if (static_cast<std::size_t>(targets[r]) >= lv.cols()) {
      fail(ErrorKind::argument, "target " + std::to_string(targets[r]) + " out of range for " +
                                    std::to_string(lv.cols()) + " classes");
    }
    const double lse = num::softmax(lv.row(r), probs.row(r));
    total += lse - lv(r, static_cast<std::size_t>(targets[r]));
  }
  Tape& t = *logits.tape;
  return t.emit(DenseMatrix(1, 1, total), {logits},
                [logits, probs = std::move(probs), tg = std::move(targets)](Tape& t,
                                                                            std::size_t self) {
                  const double g = t.grad(self)[0];
                  DenseMatrix& gl = t.grad(logits);
                  for (std::size_t r = 0; r < tg.size(); ++r) {
                    if (tg[r] < 0) continue;
                    auto dst = gl.row(r);
                    auto p = probs.row(r);
                    for (std::size_t c = 0; c < dst.size(); ++c) dst[c] += g * p[c];
                    dst[static_cast<std::size_t>(tg[r])] -= g;
                  }
                });
}

/// sum_k coeff_k * term_k over 1x1 terms.
inline Var weighted_sum(std::span<const std::pair<Var, double>> terms) {
  if (terms.empty()) fail(ErrorKind::argument, "weighted_sum of nothing");
  double total = 0.0;
  std::vector<Var> inputs;
  for (const auto& [v, w] : terms) {
    if (v.value().size() != 1) fail(ErrorKind::dimension, "weighted_sum terms must be 1x1");
    total += w * v.value()[0];
    inputs.push_back(v);
  }
  Tape& t = *terms.front().first.tape;
  std::vector<std::pair<Var, double>> saved(terms.begin(), terms.end());
  return t.emit(DenseMatrix(1, 1, total), inputs, [saved](Tape& t, std::size_t self) {
    const double g = t.grad(self)[0];
    for (const auto& [v, w] : saved) {
      if (t.needs_grad(v)) t.grad(v)[0] += g * w;
    }
  });
}

}  // namespace kdsr::ad
