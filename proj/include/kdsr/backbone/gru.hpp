// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "kdsr/error.hpp"
#include "kdsr/numerics/binding.hpp"
#include "kdsr/numerics/functions.hpp"
#include "kdsr/numerics/parameter.hpp"
#include "kdsr/numerics/tape.hpp"
#include "kdsr/rng.hpp"

namespace kdsr::backbone {

using num::DenseMatrix;
using num::Parameter;
using num::ParamGroup;

/// Several variable-length sequences stacked row-wise: sequence s owns rows
/// [offsets[s], offsets[s+1]).
struct Segments {
  std::vector<std::size_t> offsets{0};

  std::size_t count() const noexcept { return offsets.size() - 1; }
  std::size_t total() const noexcept { return offsets.back(); }
  std::size_t begin(std::size_t s) const noexcept { return offsets[s]; }
  std::size_t end(std::size_t s) const noexcept { return offsets[s + 1]; }
  std::size_t length(std::size_t s) const noexcept { return offsets[s + 1] - offsets[s]; }
  void push(std::size_t length) { offsets.push_back(offsets.back() + length); }
};

/// Gate blocks are laid out [update z | reset r | candidate n] along columns.
struct GruParams {
  Parameter wx;  // d x 3d
  Parameter uh;  // d x 3d
  Parameter b;   // 1 x 3d

  std::vector<Parameter*> parameters() { return {&wx, &uh, &b}; }
};

inline GruParams init_gru(std::size_t dim, Rng& rng) {
  const double sd = 1.0 / std::sqrt(static_cast<double>(dim));
  return {num::gaussian_parameter("gru.wx", ParamGroup::other, dim, 3 * dim, sd, rng),
          num::gaussian_parameter("gru.uh", ParamGroup::other, dim, 3 * dim, sd, rng),
          Parameter("gru.b", ParamGroup::other, DenseMatrix(1, 3 * dim))};
}

namespace ops {

/// Runs the recurrence for every segment from a zero state, given the input
/// projections gx = x Wx + b (total x 3d):
///   z = s(gx_z + h Uz), r = s(gx_r + h Ur), n = tanh(gx_n + (r*h) Un),
///   h' = (1 - z) * h + z * n.
inline ad::Var gru_recurrence(ad::Var gx, ad::Var uh, Segments seg) {
  const DenseMatrix& gv = gx.value();
  const DenseMatrix& uv = uh.value();
  const std::size_t d = uv.rows();
  if (uv.cols() != 3 * d || gv.cols() != 3 * d || gv.rows() != seg.total()) {
    fail(ErrorKind::dimension, "gru shapes: gx " + gv.shape_string() + ", uh " + uv.shape_string());
  }
  const std::size_t total = seg.total();
  DenseMatrix h(total, d);
  DenseMatrix z(total, d);
  DenseMatrix r(total, d);
  DenseMatrix n(total, d);
  DenseMatrix rh(total, d);
  std::vector<double> zero(d, 0.0);
  std::vector<double> pre(3 * d);
  for (std::size_t s = 0; s < seg.count(); ++s) {
    for (std::size_t t = seg.begin(s); t < seg.end(s); ++t) {
      const std::span<const double> prev =
          t == seg.begin(s) ? std::span<const double>(zero) : std::span<const double>(h.row(t - 1));
      const auto g = gv.row(t);
      std::copy(g.begin(), g.begin() + 2 * static_cast<std::ptrdiff_t>(d), pre.begin());
      for (std::size_t k = 0; k < d; ++k) {
        const double hk = prev[k];
        if (hk == 0.0) continue;
        const auto u = uv.row(k);
        for (std::size_t c = 0; c < 2 * d; ++c) pre[c] += hk * u[c];
      }
      for (std::size_t c = 0; c < d; ++c) {
        z(t, c) = num::sigmoid(pre[c]);
        r(t, c) = num::sigmoid(pre[d + c]);
        rh(t, c) = r(t, c) * prev[c];
      }
      for (std::size_t c = 0; c < d; ++c) pre[2 * d + c] = g[2 * d + c];
      for (std::size_t k = 0; k < d; ++k) {
        const double v = rh(t, k);
        if (v == 0.0) continue;
        const auto u = uv.row(k);
        for (std::size_t c = 0; c < d; ++c) pre[2 * d + c] += v * u[2 * d + c];
      }
      for (std::size_t c = 0; c < d; ++c) {
        n(t, c) = std::tanh(pre[2 * d + c]);
        h(t, c) = (1.0 - z(t, c)) * prev[c] + z(t, c) * n(t, c);
      }
    }
  }
  ad::Tape& tape = *gx.tape;
  return tape.emit(
      std::move(h), {gx, uh},
      [gx, uh, seg = std::move(seg), z = std::move(z), r = std::move(r), n = std::move(n),
       rh = std::move(rh)](ad::Tape& tape, std::size_t self) {
        const DenseMatrix& gh = tape.grad(self);
        const DenseMatrix& hv = tape.value(self);
        const DenseMatrix& uv = tape.value(uh.id);
        const std::size_t d = uv.rows();
        DenseMatrix& ggx = tape.grad(gx);
        const bool want_u = tape.needs_grad(uh);
        DenseMatrix* gu = want_u ? &tape.grad(uh) : nullptr;
        std::vector<double> dh(d);
        std::vector<double> da(3 * d);
        std::vector<double> drh(d);
        std::vector<double> zero(d, 0.0);
        for (std::size_t s = seg.count(); s-- > 0;) {
          std::fill(dh.begin(), dh.end(), 0.0);
          for (std::size_t t = seg.end(s); t-- > seg.begin(s);) {
            const bool first = t == seg.begin(s);
            const std::span<const double> prev =
                first ? std::span<const double>(zero) : hv.row(t - 1);
            for (std::size_t c = 0; c < d; ++c) dh[c] += gh(t, c);
            // dh now holds dL/dh_t; rebuild it as dL/dh_{t-1} below.
            for (std::size_t c = 0; c < d; ++c) {
              const double zc = z(t, c);
              const double nc = n(t, c);
              const double dn = dh[c] * zc;
              const double dz = dh[c] * (nc - prev[c]);
              da[2 * d + c] = dn * (1.0 - nc * nc);
              da[c] = dz * zc * (1.0 - zc);
              dh[c] = dh[c] * (1.0 - zc);
            }
            std::fill(drh.begin(), drh.end(), 0.0);
            for (std::size_t k = 0; k < d; ++k) {
              const auto u = uv.row(k);
              double acc = 0.0;
              for (std::size_t c = 0; c < d; ++c) acc += da[2 * d + c] * u[2 * d + c];
              drh[k] = acc;
            }
            for (std::size_t c = 0; c < d; ++c) {
              const double rc = r(t, c);
              const double dr = drh[c] * prev[c];
              da[d + c] = dr * rc * (1.0 - rc);
              dh[c] += drh[c] * rc;
            }
            for (std::size_t k = 0; k < d; ++k) {
              const auto u = uv.row(k);
              double acc = 0.0;
              for (std::size_t c = 0; c < 2 * d; ++c) acc += da[c] * u[c];
              dh[k] += acc;
            }
            auto gxr = ggx.row(t);
            for (std::size_t c = 0; c < 3 * d; ++c) gxr[c] += da[c];
            if (gu != nullptr) {
              for (std::size_t k = 0; k < d; ++k) {
                auto gur = gu->row(k);
                const double hk = prev[k];
                const double rk = rh(t, k);
                if (hk != 0.0) {
                  for (std::size_t c = 0; c < 2 * d; ++c) gur[c] += hk * da[c];
                }
                if (rk != 0.0) {
                  for (std::size_t c = 0; c < d; ++c) gur[2 * d + c] += rk * da[2 * d + c];
                }
              }
            }
          }
        }
      });
}

}  // namespace ops

struct GruVars {
  ad::Var wx;
  ad::Var uh;
  ad::Var b;
};

inline GruVars bind_gru(num::ParameterBinding& bind, ad::Tape& tape, GruParams& p) {
  return {bind.bind(tape, p.wx), bind.bind(tape, p.uh), bind.bind(tape, p.b)};
}

/// Hidden states for stacked fused inputs x (total x d).
inline ad::Var gru_encode(const GruVars& v, ad::Var x, const Segments& seg) {
  const ad::Var gx = ad::add_row(ad::matmul(x, v.wx), v.b);
  return ops::gru_recurrence(gx, v.uh, seg);
}

}  // namespace kdsr::backbone
