// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "kdsr/backbone/attention.hpp"
#include "kdsr/backbone/gru.hpp"
#include "kdsr/backbone/readout.hpp"
#include "kdsr/corpus/dataset.hpp"
#include "kdsr/error.hpp"
#include "kdsr/numerics/binding.hpp"
#include "kdsr/numerics/tape.hpp"
#include "kdsr/student/heads.hpp"

namespace kdsr::backbone {

enum class BackboneKind : std::uint32_t { gru = 0, attention = 1 };

constexpr std::string_view to_string(BackboneKind k) noexcept {
  return k == BackboneKind::gru ? "gru" : "attention";
}

inline BackboneKind parse_backbone(std::string_view s) {
  if (s == "gru") return BackboneKind::gru;
  if (s == "attention") return BackboneKind::attention;
  fail(ErrorKind::config, "unknown backbone '" + std::string(s) + "'");
}

struct BackboneConfig {
  BackboneKind kind = BackboneKind::gru;
  std::size_t layers = 2;
  std::size_t heads = 2;
  std::size_t window = 5;
  std::size_t max_length = 50;
};

struct Encoder {
  BackboneConfig cfg;
  GruParams gru;
  AttnParams attn;
  ReadoutParams readout;

  std::vector<Parameter*> parameters() {
    std::vector<Parameter*> out;
    if (cfg.kind == BackboneKind::gru) {
      out = gru.parameters();
    } else {
      out = attn.parameters();
    }
    for (Parameter* p : readout.parameters()) out.push_back(p);
    return out;
  }
};

inline Encoder init_encoder(std::size_t dim, const BackboneConfig& cfg, Rng& rng) {
  if (cfg.window < 1) fail(ErrorKind::config, "readout window must be >= 1");
  if (cfg.max_length < 1) fail(ErrorKind::config, "max length must be >= 1");
  Encoder e;
  e.cfg = cfg;
  if (cfg.kind == BackboneKind::gru) {
    e.gru = init_gru(dim, rng);
  } else {
    e.attn = init_attention(dim, cfg.layers, cfg.heads, cfg.max_length, rng);
  }
  e.readout = init_readout(dim, rng);
  return e;
}

/// Embedding bank plus sequence encoder and readout: everything that
/// produces next-item logits.
struct Recommender {
  student::EmbeddingBank bank;
  Encoder encoder;
  bool use_modality = true;

  std::size_t items() const noexcept { return bank.items(); }
  std::size_t dim() const noexcept { return bank.dim(); }

  /// Trainable parameters; modality tables only when they are in use.
  std::vector<Parameter*> parameters() {
    std::vector<Parameter*> out{&bank.id};
    if (use_modality) {
      out.push_back(&bank.image);
      out.push_back(&bank.text);
    }
    for (Parameter* p : encoder.parameters()) out.push_back(p);
    return out;
  }
};

/// Tape handles for one forward pass.
struct NetVars {
  ad::Var id;
  ad::Var image;
  ad::Var text;
  GruVars gru;
  AttnVars attn;
  ReadoutVars readout;
};

inline NetVars bind_network(num::ParameterBinding& bind, ad::Tape& tape, Recommender& m) {
  NetVars v;
  v.id = bind.bind(tape, m.bank.id);
  if (m.use_modality) {
    v.image = bind.bind(tape, m.bank.image);
    v.text = bind.bind(tape, m.bank.text);
  }
  if (m.encoder.cfg.kind == BackboneKind::gru) {
    v.gru = bind_gru(bind, tape, m.encoder.gru);
  } else {
    v.attn = bind_attention(bind, tape, m.encoder.attn);
  }
  v.readout = bind_readout(bind, tape, m.encoder.readout);
  return v;
}

/// e_v + e_a + e_b for each listed item (ID rows only without modality).
inline ad::Var fuse(const NetVars& v, bool use_modality, const std::vector<std::uint32_t>& items) {
  ad::Var x = ad::gather_rows(v.id, items);
  if (use_modality) {
    x = ad::add(ad::add(x, ad::gather_rows(v.image, items)), ad::gather_rows(v.text, items));
  }
  return x;
}

inline ad::Var encode_hidden(const NetVars& v, const BackboneConfig& cfg, ad::Var x,
                             const Segments& seg) {
  return cfg.kind == BackboneKind::gru ? gru_encode(v.gru, x, seg) : attention_encode(v.attn, x, seg);
}

/// P at every position of the stacked item sequences.
inline ad::Var represent(const NetVars& v, const Recommender& m, const std::vector<std::uint32_t>& items,
                         const Segments& seg) {
  const ad::Var x = fuse(v, m.use_modality, items);
  const ad::Var h = encode_hidden(v, m.encoder.cfg, x, seg);
  return readout(v.readout, h, seg, m.encoder.cfg.window);
}

/// The most recent max_length items.
inline std::span<const corpus::ItemIndex> truncate(std::span<const corpus::ItemIndex> seq,
                                                   std::size_t max_length) {
  return seq.size() > max_length ? seq.last(max_length) : seq;
}

struct RecTerms {
  ad::Var loss_sum;       // summed cross-entropy, scaled by `scale`
  std::size_t predictions = 0;
};

/// Teacher-forced next-item prediction at every position of each sequence.
inline std::size_t count_predictions(std::span<const corpus::Sequence> sequences,
                                     std::size_t max_length) {
  std::size_t n = 0;
  for (const auto& s : sequences) {
    const std::size_t len = std::min(s.size(), max_length);
    if (len >= 2) n += len - 1;
  }
  return n;
}

/// scale * sum of cross-entropies; an empty batch yields a zero constant.
inline RecTerms rec_terms(ad::Tape& tape, const NetVars& v, const Recommender& m,
                          std::span<const corpus::Sequence> sequences, double scale) {
  std::vector<std::uint32_t> items;
  std::vector<std::int64_t> targets;
  Segments seg;
  for (const auto& full : sequences) {
    const auto s = truncate(full, m.encoder.cfg.max_length);
    if (s.size() < 2) continue;
    for (std::size_t t = 0; t + 1 < s.size(); ++t) {
      items.push_back(s[t]);
      targets.push_back(s[t + 1]);
    }
    seg.push(s.size() - 1);
  }
  RecTerms out;
  out.predictions = targets.size();
  if (targets.empty()) {
    out.loss_sum = tape.constant(DenseMatrix(1, 1));
    return out;
  }
  const ad::Var p = represent(v, m, items, seg);
  const ad::Var logits = ad::matmul_bt(p, v.id);
  out.loss_sum = ad::scale(ad::softmax_xent_sum(logits, std::move(targets)), scale);
  return out;
}

// Value-level entry points, evaluated on a non-recording tape.

inline DenseMatrix fuse(Recommender& m, std::span<const corpus::ItemIndex> seq) {
  ad::Tape tape(false);
  num::ParameterBinding bind;
  const NetVars v = bind_network(bind, tape, m);
  return fuse(v, m.use_modality, std::vector<std::uint32_t>(seq.begin(), seq.end())).value();
}

inline DenseMatrix encode(Recommender& m, std::span<const corpus::ItemIndex> seq) {
  if (seq.empty()) fail(ErrorKind::argument, "cannot encode an empty sequence");
  const auto s = truncate(seq, m.encoder.cfg.max_length);
  ad::Tape tape(false);
  num::ParameterBinding bind;
  const NetVars v = bind_network(bind, tape, m);
  Segments seg;
  seg.push(s.size());
  const ad::Var x = fuse(v, m.use_modality, std::vector<std::uint32_t>(s.begin(), s.end()));
  return encode_hidden(v, m.encoder.cfg, x, seg).value();
}

/// P for the final position of `hiddens` (rows h_1..h_m).
inline DenseMatrix readout(ReadoutParams& r, const DenseMatrix& hiddens, std::size_t q) {
  if (hiddens.rows() == 0) fail(ErrorKind::argument, "readout over no hidden states");
  ad::Tape tape(false);
  num::ParameterBinding bind;
  const ReadoutVars v = bind_readout(bind, tape, r);
  Segments seg;
  seg.push(hiddens.rows());
  const ad::Var p = readout(v, tape.input(hiddens, false), seg, q);
  const std::size_t last = hiddens.rows() - 1;
  return DenseMatrix(1, p.value().cols(),
                     std::vector<double>(p.value().row(last).begin(), p.value().row(last).end()));
}

/// Logits over the full catalog: P times the ID table transposed.
inline std::vector<double> score_items(std::span<const double> p, const student::EmbeddingBank& bank) {
  const DenseMatrix& e = bank.id.value;
  if (p.size() != e.cols()) {
    fail(ErrorKind::dimension, "P has " + std::to_string(p.size()) + " dims, ID table " +
                                   e.shape_string());
  }
  std::vector<double> out(e.rows());
  for (std::size_t i = 0; i < e.rows(); ++i) out[i] = num::dot(p, e.row(i));
  return out;
}

/// Mean teacher-forced cross-entropy over all positions of all sequences.
inline double rec_loss(Recommender& m, std::span<const corpus::Sequence> sequences) {
  const std::size_t n = count_predictions(sequences, m.encoder.cfg.max_length);
  if (n == 0) fail(ErrorKind::argument, "no next-item targets in batch");
  ad::Tape tape(false);
  num::ParameterBinding bind;
  const NetVars v = bind_network(bind, tape, m);
  return rec_terms(tape, v, m, sequences, 1.0 / static_cast<double>(n)).loss_sum.value()[0];
}

}  // namespace kdsr::backbone
