// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "kdsr/error.hpp"
#include "kdsr/numerics/dense_matrix.hpp"
#include "kdsr/numerics/functions.hpp"
#include "kdsr/numerics/parameter.hpp"
#include "kdsr/numerics/tape.hpp"
#include "kdsr/rng.hpp"
#include "kdsr/teacher/scoring.hpp"

namespace kdsr::student {

using num::DenseMatrix;
using num::Parameter;
using num::ParamGroup;
using teacher::ScoringKind;

/// Item embedding tables: ID (e_v), image (e_a) and text (e_b).
struct EmbeddingBank {
  Parameter id;
  Parameter image;
  Parameter text;

  std::size_t items() const noexcept { return id.value.rows(); }
  std::size_t dim() const noexcept { return id.value.cols(); }
  std::vector<Parameter*> parameters() { return {&id, &image, &text}; }
};

/// ID table from N(0, 0.01^2); modality tables copied from the compressed
/// teacher matrices, or zero when a channel is absent.
inline EmbeddingBank init_embedding_bank(std::size_t items, std::size_t dim,
                                         const DenseMatrix* image, const DenseMatrix* text,
                                         Rng& rng) {
  EmbeddingBank bank;
  bank.id = num::gaussian_parameter("emb.id", ParamGroup::embedding, items, dim, 0.01, rng);
  auto table = [&](const char* name, const DenseMatrix* src) {
    if (src == nullptr) return Parameter(name, ParamGroup::embedding, DenseMatrix(items, dim));
    if (src->rows() != items || src->cols() != dim) {
      fail(ErrorKind::dimension, std::string(name) + " initializer is " + src->shape_string() +
                                     ", expected " + std::to_string(items) + "x" +
                                     std::to_string(dim));
    }
    return Parameter(name, ParamGroup::embedding, *src);
  };
  bank.image = table("emb.image", image);
  bank.text = table("emb.text", text);
  return bank;
}

/// g_phi: a square linear map with bias.
struct HolisticHead {
  Parameter w;
  Parameter b;

  std::vector<Parameter*> parameters() { return {&w, &b}; }
};

/// |e_i - e_j| -> Wc + bc -> ReLU -> Wout + bout.
struct DissectedHead {
  Parameter wc;
  Parameter bc;
  Parameter wout;
  Parameter bout;

  std::size_t codes() const noexcept { return wout.value.cols(); }
  std::vector<Parameter*> parameters() { return {&wc, &bc, &wout, &bout}; }
};

/// Identity transform, zero bias: the student starts out agreeing with the
/// teacher on every pair.
inline HolisticHead init_holistic_head(const std::string& prefix, std::size_t dim) {
  return {Parameter(prefix + ".g.w", ParamGroup::other, DenseMatrix::identity(dim)),
          Parameter(prefix + ".g.b", ParamGroup::other, DenseMatrix(1, dim))};
}

inline DissectedHead init_dissected_head(const std::string& prefix, std::size_t dim,
                                         std::size_t codes, Rng& rng) {
  const double sd = 1.0 / std::sqrt(static_cast<double>(dim));
  DissectedHead h;
  h.wc = num::gaussian_parameter(prefix + ".c.w", ParamGroup::other, dim, dim, sd, rng);
  h.bc = Parameter(prefix + ".c.b", ParamGroup::other, DenseMatrix(1, dim));
  h.wout = num::gaussian_parameter(prefix + ".out.w", ParamGroup::other, dim, codes, sd, rng);
  h.bout = Parameter(prefix + ".out.b", ParamGroup::other, DenseMatrix(1, codes));
  return h;
}

inline std::vector<double> affine(std::span<const double> e, const DenseMatrix& w,
                                  const DenseMatrix& b) {
  if (e.size() != w.rows()) {
    fail(ErrorKind::dimension, "vector of " + std::to_string(e.size()) +
                                   " dims against weights " + w.shape_string());
  }
  std::vector<double> out(b.values().begin(), b.values().end());
  for (std::size_t k = 0; k < e.size(); ++k) {
    const auto row = w.row(k);
    for (std::size_t c = 0; c < out.size(); ++c) out[c] += e[k] * row[c];
  }
  return out;
}

inline double holistic_predict(const HolisticHead& head, ScoringKind kind,
                               std::span<const double> e_i, std::span<const double> e_j) {
  const auto gi = affine(e_i, head.w.value, head.b.value);
  const auto gj = affine(e_j, head.w.value, head.b.value);
  return teacher::holistic_score(kind, gi, gj);
}

inline double soft_match_term(double r, double r_hat, double tau) {
  const double d = num::sigmoid(r / tau) - num::sigmoid(r_hat / tau);
  return d * d;
}

/// Mean over (r, r_hat) pairs of (sigma(r/tau) - sigma(r_hat/tau))^2.
inline double kd_soft_loss(std::span<const std::pair<double, double>> pairs, double tau) {
  if (!(tau > 0.0)) fail(ErrorKind::argument, "temperature must be > 0");
  if (pairs.empty()) fail(ErrorKind::argument, "soft-match loss over an empty pair set");
  double total = 0.0;
  for (const auto& [r, r_hat] : pairs) total += soft_match_term(r, r_hat, tau);
  return total / static_cast<double>(pairs.size());
}

inline std::vector<double> dissected_logits(const DissectedHead& head, std::span<const double> e_i,
                                            std::span<const double> e_j) {
  if (e_i.size() != e_j.size()) fail(ErrorKind::dimension, "dissected_logits dimension mismatch");
  std::vector<double> diff(e_i.size());
  for (std::size_t k = 0; k < diff.size(); ++k) diff[k] = std::abs(e_i[k] - e_j[k]);
  auto hidden = affine(diff, head.wc.value, head.bc.value);
  for (double& h : hidden) h = h > 0.0 ? h : 0.0;
  return affine(hidden, head.wout.value, head.bout.value);
}

/// Mean softmax cross-entropy of per-pair logits (rows) against teacher codes.
inline double kd_code_loss(const DenseMatrix& logits, std::span<const std::uint32_t> codes) {
  if (logits.rows() != codes.size()) {
    fail(ErrorKind::dimension, std::to_string(logits.rows()) + " logit rows for " +
                                   std::to_string(codes.size()) + " codes");
  }
  if (codes.empty()) fail(ErrorKind::argument, "code loss over an empty pair set");
  double total = 0.0;
  for (std::size_t p = 0; p < codes.size(); ++p) {
    total += num::softmax_cross_entropy(logits.row(p), codes[p]);
  }
  return total / static_cast<double>(codes.size());
}

/// Pairs as row indices into a gathered embedding block.
struct LocalPair {
  std::uint32_t a = 0;
  std::uint32_t b = 0;
};

namespace ops {

/// scale * sum_p (sigma(r_p/tau) - sigma(xi(t_a, t_b)/tau))^2 over rows of t.
inline ad::Var soft_match_sum(ad::Var t, std::vector<LocalPair> pairs, std::vector<double> teacher,
                              ScoringKind kind, double tau, double scale) {
  if (!(tau > 0.0)) fail(ErrorKind::argument, "temperature must be > 0");
  if (pairs.size() != teacher.size()) fail(ErrorKind::dimension, "pair/teacher count mismatch");
  const DenseMatrix& tv = t.value();
  std::vector<double> pred(pairs.size());
  double total = 0.0;
  for (std::size_t p = 0; p < pairs.size(); ++p) {
    pred[p] = teacher::holistic_score(kind, tv.row(pairs[p].a), tv.row(pairs[p].b));
    total += soft_match_term(teacher[p], pred[p], tau);
  }
  ad::Tape& tape = *t.tape;
  return tape.emit(
      DenseMatrix(1, 1, scale * total), {t},
      [t, pairs = std::move(pairs), teacher = std::move(teacher), pred = std::move(pred), kind, tau,
       scale](ad::Tape& tape, std::size_t self) {
        const double g = tape.grad(self)[0] * scale;
        const DenseMatrix& tv = tape.value(t.id);
        DenseMatrix& gt = tape.grad(t);
        for (std::size_t p = 0; p < pairs.size(); ++p) {
          const double sh = num::sigmoid(pred[p] / tau);
          const double d = sh - num::sigmoid(teacher[p] / tau);
          const double dpred = g * 2.0 * d * sh * (1.0 - sh) / tau;
          teacher::accumulate_score_gradient(kind, tv.row(pairs[p].a), tv.row(pairs[p].b), dpred,
                                             gt.row(pairs[p].a), gt.row(pairs[p].b));
        }
      });
}

/// Row p = |e_a - e_b| for pair p.
inline ad::Var pair_abs_diff(ad::Var e, std::vector<LocalPair> pairs) {
  const DenseMatrix& ev = e.value();
  DenseMatrix out(pairs.size(), ev.cols());
  for (std::size_t p = 0; p < pairs.size(); ++p) {
    const auto a = ev.row(pairs[p].a);
    const auto b = ev.row(pairs[p].b);
    auto dst = out.row(p);
    for (std::size_t c = 0; c < dst.size(); ++c) dst[c] = std::abs(a[c] - b[c]);
  }
  ad::Tape& tape = *e.tape;
  return tape.emit(std::move(out), {e}, [e, pairs = std::move(pairs)](ad::Tape& tape, std::size_t self) {
    const DenseMatrix& g = tape.grad(self);
    const DenseMatrix& ev = tape.value(e.id);
    DenseMatrix& ge = tape.grad(e);
    for (std::size_t p = 0; p < pairs.size(); ++p) {
      const auto a = ev.row(pairs[p].a);
      const auto b = ev.row(pairs[p].b);
      auto ga = ge.row(pairs[p].a);
      auto gb = ge.row(pairs[p].b);
      const auto gp = g.row(p);
      for (std::size_t c = 0; c < gp.size(); ++c) {
        const double diff = a[c] - b[c];
        const double s = diff > 0.0 ? gp[c] : (diff < 0.0 ? -gp[c] : 0.0);
        ga[c] += s;
        gb[c] -= s;
      }
    }
  });
}

}  // namespace ops

struct KdVars {
  ad::Var w;
  ad::Var b;
  ad::Var wc;
  ad::Var bc;
  ad::Var wout;
  ad::Var bout;
};

/// Both distillation terms for one channel on the tape. `rows` holds the
/// gathered embeddings of the items referenced by `pairs`; each loss is
/// scale * (sum over pairs).
struct KdTerms {
  ad::Var soft;
  ad::Var code;
};

inline KdTerms kd_terms(ad::Var rows, const KdVars& v, const std::vector<LocalPair>& pairs,
                        std::vector<double> scores, std::vector<std::int64_t> codes,
                        ScoringKind kind, double tau, double scale) {
  const ad::Var g = ad::add_row(ad::matmul(rows, v.w), v.b);
  KdTerms out;
  out.soft = ops::soft_match_sum(g, pairs, std::move(scores), kind, tau, scale);
  const ad::Var diff = ops::pair_abs_diff(rows, pairs);
  const ad::Var hidden = ad::relu(ad::add_row(ad::matmul(diff, v.wc), v.bc));
  const ad::Var logits = ad::add_row(ad::matmul(hidden, v.wout), v.bout);
  out.code = ad::scale(ad::softmax_xent_sum(logits, std::move(codes)), scale);
  return out;
}

}  // namespace kdsr::student
