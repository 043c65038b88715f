// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "kdsr/backbone/gru.hpp"
#include "kdsr/error.hpp"
#include "kdsr/numerics/binding.hpp"
#include "kdsr/numerics/functions.hpp"
#include "kdsr/numerics/tape.hpp"

namespace kdsr::backbone {

/// Long/short-term readout applied at every position t of a sequence:
///   h^l_t = mean(h_1..h_t)
///   a_i   = ReLU(h_i W1) W2,   alpha = softmax over the last q positions <= t
///   h^s_t = sum_i alpha_i h_i
///   P_t   = [h^s_t, h^l_t] W3
struct ReadoutParams {
  Parameter w1;  // d x d
  Parameter w2;  // d x 1
  Parameter w3;  // 2d x d

  std::vector<Parameter*> parameters() { return {&w1, &w2, &w3}; }
};

inline ReadoutParams init_readout(std::size_t dim, Rng& rng) {
  const double sd = 1.0 / std::sqrt(static_cast<double>(dim));
  return {num::gaussian_parameter("readout.w1", ParamGroup::other, dim, dim, sd, rng),
          num::gaussian_parameter("readout.w2", ParamGroup::other, dim, 1, sd, rng),
          num::gaussian_parameter("readout.w3", ParamGroup::other, 2 * dim, dim,
                                  1.0 / std::sqrt(static_cast<double>(2 * dim)), rng)};
}

namespace ops {

/// Row t = mean of rows begin(s)..t of its segment.
inline ad::Var prefix_mean(ad::Var h, Segments seg) {
  const DenseMatrix& hv = h.value();
  if (hv.rows() != seg.total()) fail(ErrorKind::dimension, "prefix_mean row count mismatch");
  const std::size_t d = hv.cols();
  DenseMatrix out(hv.rows(), d);
  std::vector<double> run(d);
  for (std::size_t s = 0; s < seg.count(); ++s) {
    std::fill(run.begin(), run.end(), 0.0);
    for (std::size_t t = seg.begin(s); t < seg.end(s); ++t) {
      const double inv = 1.0 / static_cast<double>(t - seg.begin(s) + 1);
      for (std::size_t c = 0; c < d; ++c) {
        run[c] += hv(t, c);
        out(t, c) = run[c] * inv;
      }
    }
  }
  ad::Tape& tape = *h.tape;
  return tape.emit(std::move(out), {h}, [h, seg = std::move(seg)](ad::Tape& tape, std::size_t self) {
    const DenseMatrix& g = tape.grad(self);
    DenseMatrix& gh = tape.grad(h);
    const std::size_t d = g.cols();
    std::vector<double> acc(d);
    for (std::size_t s = 0; s < seg.count(); ++s) {
      std::fill(acc.begin(), acc.end(), 0.0);
      for (std::size_t t = seg.end(s); t-- > seg.begin(s);) {
        const double inv = 1.0 / static_cast<double>(t - seg.begin(s) + 1);
        for (std::size_t c = 0; c < d; ++c) {
          acc[c] += g(t, c) * inv;
          gh(t, c) += acc[c];
        }
      }
    }
  });
}

/// Row t = sum over i in [max(begin, t-q+1), t] of softmax(a)_i * h_i, where
/// a holds one attention logit per row.
inline ad::Var window_pool(ad::Var h, ad::Var a, Segments seg, std::size_t q) {
  const DenseMatrix& hv = h.value();
  const DenseMatrix& av = a.value();
  if (q < 1) fail(ErrorKind::argument, "readout window must be >= 1");
  if (hv.rows() != seg.total() || av.rows() != seg.total() || av.cols() != 1) {
    fail(ErrorKind::dimension, "window_pool shape mismatch");
  }
  const std::size_t d = hv.cols();
  DenseMatrix out(hv.rows(), d);
  // alpha weights per row, stored for the window [lo, t].
  DenseMatrix alpha(hv.rows(), q);
  std::vector<double> logits(q);
  for (std::size_t s = 0; s < seg.count(); ++s) {
    for (std::size_t t = seg.begin(s); t < seg.end(s); ++t) {
      const std::size_t lo = t + 1 - std::min(q, t - seg.begin(s) + 1);
      const std::size_t w = t - lo + 1;
      for (std::size_t i = 0; i < w; ++i) logits[i] = av(lo + i, 0);
      num::softmax(std::span<const double>(logits).first(w), alpha.row(t).first(w));
      for (std::size_t i = 0; i < w; ++i) {
        const double wt = alpha(t, i);
        const auto src = hv.row(lo + i);
        for (std::size_t c = 0; c < d; ++c) out(t, c) += wt * src[c];
      }
    }
  }
  ad::Tape& tape = *h.tape;
  return tape.emit(
      std::move(out), {h, a},
      [h, a, seg = std::move(seg), q, alpha = std::move(alpha)](ad::Tape& tape, std::size_t self) {
        const DenseMatrix& g = tape.grad(self);
        const DenseMatrix& hv = tape.value(h.id);
        const std::size_t d = hv.cols();
        DenseMatrix* gh = tape.needs_grad(h) ? &tape.grad(h) : nullptr;
        DenseMatrix* ga = tape.needs_grad(a) ? &tape.grad(a) : nullptr;
        std::vector<double> dalpha(q);
        for (std::size_t s = 0; s < seg.count(); ++s) {
          for (std::size_t t = seg.begin(s); t < seg.end(s); ++t) {
            const std::size_t lo = t + 1 - std::min(q, t - seg.begin(s) + 1);
            const std::size_t w = t - lo + 1;
            const auto gt = g.row(t);
            double inner = 0.0;
            for (std::size_t i = 0; i < w; ++i) {
              const auto src = hv.row(lo + i);
              double acc = 0.0;
              for (std::size_t c = 0; c < d; ++c) acc += gt[c] * src[c];
              dalpha[i] = acc;
              inner += alpha(t, i) * acc;
              if (gh != nullptr) {
                auto dst = gh->row(lo + i);
                const double wt = alpha(t, i);
                for (std::size_t c = 0; c < d; ++c) dst[c] += wt * gt[c];
              }
            }
            if (ga != nullptr) {
              for (std::size_t i = 0; i < w; ++i) {
                (*ga)(lo + i, 0) += alpha(t, i) * (dalpha[i] - inner);
              }
            }
          }
        }
      });
}

}  // namespace ops

struct ReadoutVars {
  ad::Var w1;
  ad::Var w2;
  ad::Var w3;
};

inline ReadoutVars bind_readout(num::ParameterBinding& bind, ad::Tape& tape, ReadoutParams& p) {
  return {bind.bind(tape, p.w1), bind.bind(tape, p.w2), bind.bind(tape, p.w3)};
}

/// P for every position of every segment (total x d).
inline ad::Var readout(const ReadoutVars& v, ad::Var h, const Segments& seg, std::size_t q) {
  const ad::Var att = ad::matmul(ad::relu(ad::matmul(h, v.w1)), v.w2);
  const ad::Var hs = ops::window_pool(h, att, seg, q);
  const ad::Var hl = ops::prefix_mean(h, seg);
  return ad::matmul(ad::concat_cols({hs, hl}), v.w3);
}

}  // namespace kdsr::backbone
