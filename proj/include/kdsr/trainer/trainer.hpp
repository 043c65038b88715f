// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "kdsr/backbone/network.hpp"
#include "kdsr/corpus/dataset.hpp"
#include "kdsr/error.hpp"
#include "kdsr/eval/drift.hpp"
#include "kdsr/eval/metrics.hpp"
#include "kdsr/eval/report.hpp"
#include "kdsr/numerics/binding.hpp"
#include "kdsr/numerics/parallel.hpp"
#include "kdsr/numerics/parameter.hpp"
#include "kdsr/rng.hpp"
#include "kdsr/student/heads.hpp"
#include "kdsr/trainer/config.hpp"
#include "kdsr/trainer/model.hpp"

namespace kdsr::trainer {

using eval::ItemPair;
using eval::LossTriple;
using eval::ReportRow;

/// Unordered pairs of distinct items from one sequence, at most `cap`,
/// drawn uniformly without replacement when there are more. Pairs are
/// (smaller index, larger index), sorted.
inline std::vector<ItemPair> sample_pairs(std::span<const corpus::ItemIndex> seq, std::size_t cap,
                                          Rng rng) {
  std::vector<std::uint32_t> items(seq.begin(), seq.end());
  std::sort(items.begin(), items.end());
  items.erase(std::unique(items.begin(), items.end()), items.end());
  const std::size_t u = items.size();
  const std::size_t total = u < 2 ? 0 : u * (u - 1) / 2;
  std::vector<ItemPair> out;
  if (total <= cap) {
    out.reserve(total);
    for (std::size_t a = 0; a < u; ++a) {
      for (std::size_t b = a + 1; b < u; ++b) out.emplace_back(items[a], items[b]);
    }
    return out;
  }
  std::vector<std::size_t> picks(total);
  std::iota(picks.begin(), picks.end(), std::size_t{0});
  for (std::size_t i = 0; i < cap; ++i) std::swap(picks[i], picks[i + rng.below(total - i)]);
  picks.resize(cap);
  std::sort(picks.begin(), picks.end());
  // Pair index k enumerates (a, b) row by row of the upper triangle.
  std::size_t a = 0;
  std::size_t row_start = 0;
  for (std::size_t k : picks) {
    while (k >= row_start + (u - 1 - a)) {
      row_start += u - 1 - a;
      ++a;
    }
    out.emplace_back(items[a], items[a + 1 + (k - row_start)]);
  }
  return out;
}

/// Learning rate for embedding parameters in (0-based) epoch t.
inline double embedding_lr(std::size_t t, double eps, std::size_t eta) {
  if (!(eps > 0.0)) fail(ErrorKind::argument, "base learning rate must be > 0");
  if (eta < 1) fail(ErrorKind::argument, "async epochs must be >= 1");
  const double frac = static_cast<double>(std::min(t, eta)) / static_cast<double>(eta);
  return eps * (0.1 + 0.9 * frac);
}

/// Per-parameter gradients from one chunk, aligned with Model::parameters().
struct ChunkResult {
  LossTriple losses;
  std::vector<DenseMatrix> grads;
};

struct Scales {
  double rs = 0.0;  // 1 / predictions in the batch
  double kd = 0.0;  // 1 / (pairs in the batch * channels)
};

/// Forward (and optionally backward) pass over some sequences and their KD
/// pairs. Loss values are already multiplied by the batch-level scales, so
/// chunk results add up to batch means.
inline ChunkResult run_chunk(Model& model, const TrainConfig& cfg, const Teachers& teachers,
                             std::span<const corpus::Sequence> seqs,
                             std::span<const std::vector<ItemPair>> pairs, const Scales& scales,
                             bool backward) {
  ad::Tape tape(backward);
  num::ParameterBinding bind;
  const backbone::NetVars v = backbone::bind_network(bind, tape, model.net);
  const auto rs = backbone::rec_terms(tape, v, model.net, seqs, scales.rs);
  ChunkResult out;
  out.losses.rs = rs.loss_sum.value()[0];
  std::vector<std::pair<ad::Var, double>> terms{{rs.loss_sum, 1.0}};

  if (!model.heads.empty()) {
    std::vector<std::uint32_t> uniq;
    for (const auto& ps : pairs) {
      for (const auto& [i, j] : ps) {
        uniq.push_back(i);
        uniq.push_back(j);
      }
    }
    std::sort(uniq.begin(), uniq.end());
    uniq.erase(std::unique(uniq.begin(), uniq.end()), uniq.end());
    if (!uniq.empty()) {
      std::vector<student::LocalPair> local;
      for (const auto& ps : pairs) {
        for (const auto& [i, j] : ps) {
          auto pos = [&uniq](std::uint32_t item) {
            return static_cast<std::uint32_t>(std::lower_bound(uniq.begin(), uniq.end(), item) -
                                              uniq.begin());
          };
          local.push_back({pos(i), pos(j)});
        }
      }
      for (std::size_t c = 0; c < kChannels.size(); ++c) {
        const auto& sig = teachers.at(kChannels[c]);
        std::vector<double> scores;
        std::vector<std::int64_t> codes;
        scores.reserve(local.size());
        codes.reserve(local.size());
        for (const auto& ps : pairs) {
          for (const auto& [i, j] : ps) {
            const auto s = sig.distill_pair(i, j);
            scores.push_back(s.score);
            codes.push_back(s.code);
          }
        }
        KdHeads& h = model.heads[c];
        const student::KdVars hv{bind.bind(tape, h.holistic.w), bind.bind(tape, h.holistic.b),
                                 bind.bind(tape, h.dissected.wc), bind.bind(tape, h.dissected.bc),
                                 bind.bind(tape, h.dissected.wout), bind.bind(tape, h.dissected.bout)};
        const ad::Var table = kChannels[c] == corpus::Channel::image ? v.image : v.text;
        const ad::Var rows = ad::gather_rows(table, uniq);
        const auto kd = student::kd_terms(rows, hv, local, std::move(scores), std::move(codes),
                                          cfg.teacher.scoring, cfg.tau, scales.kd);
        out.losses.kds += kd.soft.value()[0];
        out.losses.kdc += kd.code.value()[0];
        if (cfg.lambda1 > 0.0) terms.emplace_back(kd.soft, cfg.lambda1);
        if (cfg.lambda2 > 0.0) terms.emplace_back(kd.code, cfg.lambda2);
      }
    }
  }

  if (backward) {
    const ad::Var root = ad::weighted_sum(terms);
    tape.backward(root);
    // Leaves bound twice (none today) would need merging; params map 1:1.
    const auto params = model.parameters();
    out.grads.resize(params.size());
    for (const auto& [p, var] : bind.leaves()) {
      const DenseMatrix* g = tape.grad_if_any(var);
      if (g == nullptr) continue;
      const auto idx = static_cast<std::size_t>(std::find(params.begin(), params.end(), p) - params.begin());
      if (idx == params.size()) continue;
      if (out.grads[idx].empty()) {
        out.grads[idx] = *g;
      } else {
        out.grads[idx] += *g;
      }
    }
  }
  return out;
}

/// Sequences truncated to the model's window, the form both losses see.
inline std::vector<corpus::Sequence> batch_sequences(const corpus::SplitDataset& split,
                                                     std::span<const std::uint32_t> users,
                                                     std::size_t max_length) {
  std::vector<corpus::Sequence> out;
  out.reserve(users.size());
  for (auto u : users) {
    const auto s = backbone::truncate(split.train[u], max_length);
    out.emplace_back(s.begin(), s.end());
  }
  return out;
}

inline Rng pair_rng(const TrainConfig& cfg, std::size_t epoch, std::uint32_t user) {
  return Rng::stream(cfg.seed, "pairs").fork(epoch).fork(user);
}

struct BatchResult {
  LossTriple losses;
  double total = 0.0;
};

/// Loss components over one batch of users; with `update` also backprop,
/// clip and apply Adam with group learning rates.
inline BatchResult run_batch(Model& model, std::vector<num::AdamState>* adam,
                             const corpus::SplitDataset& split, const Teachers& teachers,
                             const TrainConfig& cfg, std::span<const std::uint32_t> users,
                             std::size_t epoch, bool update) {
  const auto seqs = batch_sequences(split, users, cfg.backbone.max_length);
  std::vector<std::vector<ItemPair>> pairs(seqs.size());
  std::size_t pair_total = 0;
  if (!model.heads.empty()) {
    for (std::size_t s = 0; s < seqs.size(); ++s) {
      pairs[s] = sample_pairs(seqs[s], cfg.pair_cap, pair_rng(cfg, epoch, users[s]));
      pair_total += pairs[s].size();
    }
  }
  const std::size_t preds = backbone::count_predictions(seqs, cfg.backbone.max_length);
  Scales scales;
  scales.rs = preds == 0 ? 0.0 : 1.0 / static_cast<double>(preds);
  scales.kd = pair_total == 0 ? 0.0
                              : 1.0 / (static_cast<double>(pair_total) * static_cast<double>(kChannels.size()));

  const std::size_t chunks = std::min(cfg.grad_chunks, seqs.size());
  std::vector<ChunkResult> results(chunks);
  parallel_for(chunks, [&](std::size_t c) {
    const std::size_t b = c * seqs.size() / chunks;
    const std::size_t e = (c + 1) * seqs.size() / chunks;
    results[c] = run_chunk(model, cfg, teachers, std::span(seqs).subspan(b, e - b),
                           std::span<const std::vector<ItemPair>>(pairs).subspan(b, e - b), scales,
                           update);
  });

  BatchResult out;
  for (const auto& r : results) {
    out.losses.rs += r.losses.rs;
    out.losses.kds += r.losses.kds;
    out.losses.kdc += r.losses.kdc;
  }
  if (model.heads.empty()) {
    out.losses.kds = std::nan("");
    out.losses.kdc = std::nan("");
    out.total = out.losses.rs;
  } else {
    out.total = out.losses.rs + cfg.lambda1 * out.losses.kds + cfg.lambda2 * out.losses.kdc;
  }
  if (!std::isfinite(out.total)) {
    char buf[256];
    std::snprintf(buf, sizeof buf,
                  "non-finite loss at epoch %zu: total=%g rs=%g kds=%g kdc=%g (batch of %zu users, "
                  "first user %u)",
                  epoch + 1, out.total, out.losses.rs, out.losses.kds, out.losses.kdc, users.size(),
                  users.empty() ? 0U : users.front());
    std::string msg = buf;
    for (Parameter* p : model.parameters()) {
      if (const auto bad = p->value.first_non_finite(); bad != p->value.size()) {
        msg += "; parameter " + p->name + " has a non-finite value at index " + std::to_string(bad);
        break;
      }
    }
    fail(ErrorKind::training, msg);
  }
  if (!update) return out;

  const auto params = model.parameters();
  for (Parameter* p : params) p->zero_grad();
  for (const auto& r : results) {
    for (std::size_t i = 0; i < params.size(); ++i) {
      if (!r.grads[i].empty()) params[i]->gradient += r.grads[i];
    }
  }
  double sq = 0.0;
  for (Parameter* p : params) {
    for (double g : p->gradient.values()) sq += g * g;
  }
  const double norm = std::sqrt(sq);
  if (norm > cfg.clip_norm) {
    const double k = cfg.clip_norm / norm;
    for (Parameter* p : params) {
      for (double& g : p->gradient.values()) g *= k;
    }
  }
  const double emb_lr = embedding_lr(epoch, cfg.lr, cfg.async_epochs);
  for (std::size_t i = 0; i < params.size(); ++i) {
    num::adam_step(*params[i], (*adam)[i],
                   params[i]->group == num::ParamGroup::embedding ? emb_lr : cfg.lr);
  }
  return out;
}

/// Users in shuffled batches for one (0-based) epoch.
inline std::vector<std::vector<std::uint32_t>> epoch_batches(const TrainConfig& cfg,
                                                             std::size_t users, std::size_t epoch) {
  std::vector<std::uint32_t> order(users);
  std::iota(order.begin(), order.end(), 0U);
  Rng rng = Rng::stream(cfg.seed, "batches").fork(epoch);
  rng.shuffle(std::span<std::uint32_t>(order));
  std::vector<std::vector<std::uint32_t>> out;
  for (std::size_t b = 0; b < users; b += cfg.batch) {
    out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(b),
                     order.begin() + static_cast<std::ptrdiff_t>(std::min(users, b + cfg.batch)));
  }
  return out;
}

/// Everything needed to continue training: checkpointed as a unit.
struct TrainState {
  Model model;
  std::vector<num::AdamState> adam;
  std::uint32_t epoch = 0;
  std::vector<ReportRow> rows;
};

/// Fixed inputs of a training run.
struct RunContext {
  const corpus::SplitDataset* split = nullptr;
  Teachers teachers;
  const DenseMatrix* reference = nullptr;  // V space, optional
  std::vector<ItemPair> drift_pairs;
};

inline RunContext make_context(const corpus::SplitDataset& split, Teachers teachers,
                               const DenseMatrix* reference, const TrainConfig& cfg) {
  RunContext ctx;
  ctx.split = &split;
  ctx.teachers = std::move(teachers);
  ctx.reference = reference;
  ctx.drift_pairs = eval::sample_drift_pairs(split.item_count, cfg.drift_pairs, cfg.seed);
  return ctx;
}

/// Metrics and drift for the current parameters.
inline void fill_evaluation(Model& model, const RunContext& ctx, const TrainConfig& cfg,
                            ReportRow& row) {
  row.metrics = eval::evaluate(model.net, *ctx.split);
  if (model.net.use_modality) {
    const DenseMatrix& e = cfg.drift_channel == corpus::Channel::image ? model.net.bank.image.value
                                                                        : model.net.bank.text.value;
    row.em = eval::profile_pearson(e, ctx.teachers.at(cfg.drift_channel).compressed(), ctx.drift_pairs);
    if (ctx.reference != nullptr) row.ev = eval::profile_pearson(e, *ctx.reference, ctx.drift_pairs);
  }
}

/// Fresh model plus the epoch-0 report row (losses evaluated without updates
/// on the first epoch's batches).
inline TrainState start_training(const TrainConfig& cfg, const RunContext& ctx) {
  TrainState st;
  st.model = init_model(cfg, ctx.split->item_count, ctx.teachers);
  for (Parameter* p : st.model.parameters()) st.adam.emplace_back(*p);
  ReportRow row;
  const auto batches = epoch_batches(cfg, ctx.split->train.size(), 0);
  for (const auto& b : batches) {
    const auto r = run_batch(st.model, nullptr, *ctx.split, ctx.teachers, cfg, b, 0, false);
    row.losses.rs += r.losses.rs;
    row.losses.kds += r.losses.kds;
    row.losses.kdc += r.losses.kdc;
  }
  const auto nb = static_cast<double>(batches.size());
  row.losses = {row.losses.rs / nb, row.losses.kds / nb, row.losses.kdc / nb};
  fill_evaluation(st.model, ctx, cfg, row);
  st.rows.push_back(row);
  return st;
}

/// One epoch of updates followed by evaluation; appends a report row.
inline const ReportRow& train_epoch(TrainState& st, const TrainConfig& cfg, const RunContext& ctx) {
  const std::size_t epoch = st.epoch;
  ReportRow row;
  row.epoch = st.epoch + 1;
  const auto batches = epoch_batches(cfg, ctx.split->train.size(), epoch);
  for (const auto& b : batches) {
    const auto r = run_batch(st.model, &st.adam, *ctx.split, ctx.teachers, cfg, b, epoch, true);
    row.losses.rs += r.losses.rs;
    row.losses.kds += r.losses.kds;
    row.losses.kdc += r.losses.kdc;
  }
  const auto nb = static_cast<double>(batches.size());
  row.losses = {row.losses.rs / nb, row.losses.kds / nb, row.losses.kdc / nb};
  fill_evaluation(st.model, ctx, cfg, row);
  st.rows.push_back(row);
  st.epoch += 1;
  return st.rows.back();
}

using EpochCallback = std::function<void(const TrainState&)>;

/// Trains until cfg.epochs epochs are done.
inline void fit(TrainState& st, const TrainConfig& cfg, const RunContext& ctx,
                const EpochCallback& on_epoch = {}) {
  while (st.epoch < cfg.epochs) {
    train_epoch(st, cfg, ctx);
    if (on_epoch) on_epoch(st);
  }
}

inline TrainState fit(const TrainConfig& cfg, const RunContext& ctx, const EpochCallback& on_epoch = {}) {
  TrainState st = start_training(cfg, ctx);
  fit(st, cfg, ctx, on_epoch);
  return st;
}

}  // namespace kdsr::trainer
