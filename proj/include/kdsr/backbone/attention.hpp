// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "kdsr/backbone/gru.hpp"
#include "kdsr/error.hpp"
#include "kdsr/numerics/binding.hpp"
#include "kdsr/numerics/functions.hpp"
#include "kdsr/numerics/tape.hpp"

namespace kdsr::backbone {

/// Pre-norm transformer block with causal multi-head self-attention.
struct AttnLayer {
  Parameter ln1_g, ln1_b;
  Parameter wq, wk, wv, wo;
  Parameter ln2_g, ln2_b;
  Parameter f1, f1_b, f2, f2_b;

  std::vector<Parameter*> parameters() {
    return {&ln1_g, &ln1_b, &wq, &wk, &wv, &wo, &ln2_g, &ln2_b, &f1, &f1_b, &f2, &f2_b};
  }
};

struct AttnParams {
  Parameter pos;  // max_length x d
  std::vector<AttnLayer> layers;
  Parameter lnf_g, lnf_b;
  std::size_t heads = 2;

  std::vector<Parameter*> parameters() {
    std::vector<Parameter*> out{&pos};
    for (auto& l : layers) {
      for (Parameter* p : l.parameters()) out.push_back(p);
    }
    out.push_back(&lnf_g);
    out.push_back(&lnf_b);
    return out;
  }
};

inline AttnParams init_attention(std::size_t dim, std::size_t layers, std::size_t heads,
                                 std::size_t max_length, Rng& rng) {
  if (heads == 0 || dim % heads != 0) {
    fail(ErrorKind::config, "attention heads " + std::to_string(heads) + " must divide dim " +
                                std::to_string(dim));
  }
  const double sd = 1.0 / std::sqrt(static_cast<double>(dim));
  const double sd_ff = 1.0 / std::sqrt(static_cast<double>(4 * dim));
  auto ones = [dim](std::string name) {
    return Parameter(std::move(name), ParamGroup::other, DenseMatrix(1, dim, 1.0));
  };
  auto zeros = [](std::string name, std::size_t cols) {
    return Parameter(std::move(name), ParamGroup::other, DenseMatrix(1, cols));
  };
  AttnParams p;
  p.heads = heads;
  p.pos = num::gaussian_parameter("attn.pos", ParamGroup::other, max_length, dim, 0.01, rng);
  for (std::size_t l = 0; l < layers; ++l) {
    const std::string pre = "attn." + std::to_string(l) + ".";
    AttnLayer layer;
    layer.ln1_g = ones(pre + "ln1.g");
    layer.ln1_b = zeros(pre + "ln1.b", dim);
    layer.wq = num::gaussian_parameter(pre + "wq", ParamGroup::other, dim, dim, sd, rng);
    layer.wk = num::gaussian_parameter(pre + "wk", ParamGroup::other, dim, dim, sd, rng);
    layer.wv = num::gaussian_parameter(pre + "wv", ParamGroup::other, dim, dim, sd, rng);
    layer.wo = num::gaussian_parameter(pre + "wo", ParamGroup::other, dim, dim, sd, rng);
    layer.ln2_g = ones(pre + "ln2.g");
    layer.ln2_b = zeros(pre + "ln2.b", dim);
    layer.f1 = num::gaussian_parameter(pre + "ff1.w", ParamGroup::other, dim, 4 * dim, sd, rng);
    layer.f1_b = zeros(pre + "ff1.b", 4 * dim);
    layer.f2 = num::gaussian_parameter(pre + "ff2.w", ParamGroup::other, 4 * dim, dim, sd_ff, rng);
    layer.f2_b = zeros(pre + "ff2.b", dim);
    p.layers.push_back(std::move(layer));
  }
  p.lnf_g = ones("attn.lnf.g");
  p.lnf_b = zeros("attn.lnf.b", dim);
  return p;
}

namespace ops {

/// Causal scaled dot-product attention inside each segment, per head.
inline ad::Var causal_attention(ad::Var q, ad::Var k, ad::Var v, Segments seg, std::size_t heads) {
  const DenseMatrix& qv = q.value();
  const DenseMatrix& kv = k.value();
  const DenseMatrix& vv = v.value();
  if (!qv.same_shape(kv) || !qv.same_shape(vv) || qv.rows() != seg.total()) {
    fail(ErrorKind::dimension, "causal_attention shape mismatch");
  }
  const std::size_t d = qv.cols();
  const std::size_t dh = d / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  // Attention weights, row i of segment s stores entries for j = begin..i.
  std::vector<std::size_t> base(seg.total() + 1, 0);
  for (std::size_t s = 0; s < seg.count(); ++s) {
    for (std::size_t i = seg.begin(s); i < seg.end(s); ++i) {
      base[i + 1] = base[i] + (i - seg.begin(s) + 1) * heads;
    }
  }
  std::vector<double> weights(base.back());
  DenseMatrix out(qv.rows(), d);
  std::vector<double> scores;
  for (std::size_t s = 0; s < seg.count(); ++s) {
    const std::size_t b0 = seg.begin(s);
    for (std::size_t i = b0; i < seg.end(s); ++i) {
      const std::size_t w = i - b0 + 1;
      scores.assign(w, 0.0);
      for (std::size_t h = 0; h < heads; ++h) {
        const std::size_t c0 = h * dh;
        for (std::size_t j = 0; j < w; ++j) {
          double acc = 0.0;
          for (std::size_t c = c0; c < c0 + dh; ++c) acc += qv(i, c) * kv(b0 + j, c);
          scores[j] = acc * scale;
        }
        double* a = weights.data() + base[i] + h * w;
        num::softmax(scores, std::span<double>(a, w));
        for (std::size_t j = 0; j < w; ++j) {
          for (std::size_t c = c0; c < c0 + dh; ++c) out(i, c) += a[j] * vv(b0 + j, c);
        }
      }
    }
  }
  ad::Tape& tape = *q.tape;
  return tape.emit(
      std::move(out), {q, k, v},
      [q, k, v, seg = std::move(seg), heads, base = std::move(base), weights = std::move(weights)](
          ad::Tape& tape, std::size_t self) {
        const DenseMatrix& g = tape.grad(self);
        const DenseMatrix& qv = tape.value(q.id);
        const DenseMatrix& kv = tape.value(k.id);
        const DenseMatrix& vv = tape.value(v.id);
        const std::size_t d = qv.cols();
        const std::size_t dh = d / heads;
        const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
        DenseMatrix& gq = tape.grad(q);
        DenseMatrix& gk = tape.grad(k);
        DenseMatrix& gv = tape.grad(v);
        std::vector<double> da;
        for (std::size_t s = 0; s < seg.count(); ++s) {
          const std::size_t b0 = seg.begin(s);
          for (std::size_t i = b0; i < seg.end(s); ++i) {
            const std::size_t w = i - b0 + 1;
            da.assign(w, 0.0);
            for (std::size_t h = 0; h < heads; ++h) {
              const std::size_t c0 = h * dh;
              const double* a = weights.data() + base[i] + h * w;
              double inner = 0.0;
              for (std::size_t j = 0; j < w; ++j) {
                double acc = 0.0;
                for (std::size_t c = c0; c < c0 + dh; ++c) {
                  acc += g(i, c) * vv(b0 + j, c);
                  gv(b0 + j, c) += a[j] * g(i, c);
                }
                da[j] = acc;
                inner += a[j] * acc;
              }
              for (std::size_t j = 0; j < w; ++j) {
                const double ds = a[j] * (da[j] - inner) * scale;
                if (ds == 0.0) continue;
                for (std::size_t c = c0; c < c0 + dh; ++c) {
                  gq(i, c) += ds * kv(b0 + j, c);
                  gk(b0 + j, c) += ds * qv(i, c);
                }
              }
            }
          }
        }
      });
}

}  // namespace ops

struct AttnLayerVars {
  ad::Var ln1_g, ln1_b, wq, wk, wv, wo, ln2_g, ln2_b, f1, f1_b, f2, f2_b;
};

struct AttnVars {
  ad::Var pos;
  std::vector<AttnLayerVars> layers;
  ad::Var lnf_g, lnf_b;
  std::size_t heads = 2;
};

inline AttnVars bind_attention(num::ParameterBinding& bind, ad::Tape& tape, AttnParams& p) {
  AttnVars v;
  v.heads = p.heads;
  v.pos = bind.bind(tape, p.pos);
  for (auto& l : p.layers) {
    v.layers.push_back({bind.bind(tape, l.ln1_g), bind.bind(tape, l.ln1_b), bind.bind(tape, l.wq),
                        bind.bind(tape, l.wk), bind.bind(tape, l.wv), bind.bind(tape, l.wo),
                        bind.bind(tape, l.ln2_g), bind.bind(tape, l.ln2_b), bind.bind(tape, l.f1),
                        bind.bind(tape, l.f1_b), bind.bind(tape, l.f2), bind.bind(tape, l.f2_b)});
  }
  v.lnf_g = bind.bind(tape, p.lnf_g);
  v.lnf_b = bind.bind(tape, p.lnf_b);
  return v;
}

/// Hidden states for stacked fused inputs x (total x d). Every segment must
/// fit in the positional table.
inline ad::Var attention_encode(const AttnVars& v, ad::Var x, const Segments& seg) {
  const std::size_t max_len = v.pos.value().rows();
  std::vector<std::uint32_t> positions;
  positions.reserve(seg.total());
  for (std::size_t s = 0; s < seg.count(); ++s) {
    if (seg.length(s) > max_len) {
      fail(ErrorKind::argument, "sequence of length " + std::to_string(seg.length(s)) +
                                    " exceeds max length " + std::to_string(max_len));
    }
    for (std::size_t t = 0; t < seg.length(s); ++t) positions.push_back(static_cast<std::uint32_t>(t));
  }
  ad::Var h = ad::add(x, ad::gather_rows(v.pos, std::move(positions)));
  for (const auto& l : v.layers) {
    const ad::Var n1 = ad::layer_norm(h, l.ln1_g, l.ln1_b);
    const ad::Var att = ops::causal_attention(ad::matmul(n1, l.wq), ad::matmul(n1, l.wk),
                                              ad::matmul(n1, l.wv), seg, v.heads);
    h = ad::add(h, ad::matmul(att, l.wo));
    const ad::Var n2 = ad::layer_norm(h, l.ln2_g, l.ln2_b);
    const ad::Var ff = ad::relu(ad::add_row(ad::matmul(n2, l.f1), l.f1_b));
    h = ad::add(h, ad::add_row(ad::matmul(ff, l.f2), l.f2_b));
  }
  return ad::layer_norm(h, v.lnf_g, v.lnf_b);
}

}  // namespace kdsr::backbone
