// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "kdsr/backbone/network.hpp"
#include "kdsr/corpus/dataset.hpp"
#include "kdsr/error.hpp"
#include "kdsr/numerics/parallel.hpp"

namespace kdsr::eval {

using num::DenseMatrix;

struct MetricsReport {
  double hr5 = 0.0;
  double hr20 = 0.0;
  double mrr5 = 0.0;
  double mrr20 = 0.0;
  std::size_t events = 0;
};

/// 1 + number of non-excluded items ranked above the target. An item ranks
/// above on a strictly greater logit, or an equal logit and a lower index.
/// `excluded` must be sorted.
inline std::size_t rank_of_target(std::span<const double> logits, std::size_t target,
                                  std::span<const std::uint32_t> excluded) {
  if (target >= logits.size()) {
    fail(ErrorKind::argument, "target " + std::to_string(target) + " out of range for " +
                                  std::to_string(logits.size()) + " items");
  }
  if (std::binary_search(excluded.begin(), excluded.end(), static_cast<std::uint32_t>(target))) {
    fail(ErrorKind::argument, "target " + std::to_string(target) + " is excluded from ranking");
  }
  const double tv = logits[target];
  std::size_t rank = 1;
  auto ex = excluded.begin();
  for (std::size_t i = 0; i < logits.size(); ++i) {
    while (ex != excluded.end() && *ex < i) ++ex;
    if (ex != excluded.end() && *ex == i) continue;
    if (logits[i] > tv || (logits[i] == tv && i < target)) ++rank;
  }
  return rank;
}

struct HitRate {
  double hr = 0.0;
  double mrr = 0.0;
};

inline HitRate hr_mrr(std::span<const std::size_t> ranks, std::size_t k) {
  if (k < 1) fail(ErrorKind::argument, "cutoff k must be >= 1");
  if (ranks.empty()) fail(ErrorKind::argument, "no ranks to aggregate");
  double hits = 0.0;
  double rr = 0.0;
  for (std::size_t r : ranks) {
    if (r < 1) fail(ErrorKind::argument, "ranks are 1-based");
    if (r <= k) {
      hits += 1.0;
      rr += 1.0 / static_cast<double>(r);
    }
  }
  const auto n = static_cast<double>(ranks.size());
  return {hits / n, rr / n};
}

/// Distinct prefix items other than the target, sorted.
inline std::vector<std::uint32_t> seen_items(std::span<const corpus::ItemIndex> prefix,
                                             corpus::ItemIndex target) {
  std::vector<std::uint32_t> out;
  for (auto i : prefix) {
    if (i != target) out.push_back(i);
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

/// Rank of every test event, in the order of split.test.
inline std::vector<std::size_t> test_ranks(backbone::Recommender& m, const corpus::SplitDataset& split) {
  const std::size_t max_len = m.encoder.cfg.max_length;
  // Events grouped by user; test events are stored per user in order.
  std::vector<std::size_t> starts;
  for (std::size_t e = 0; e < split.test.size(); ++e) {
    if (e == 0 || split.test[e].user != split.test[e - 1].user) starts.push_back(e);
  }
  starts.push_back(split.test.size());
  const std::size_t groups = starts.size() - 1;
  std::vector<std::size_t> ranks(split.test.size(), 0);
  const std::size_t per_chunk = 64;
  const std::size_t chunks = (groups + per_chunk - 1) / per_chunk;
  parallel_for(chunks, [&](std::size_t c) {
    ad::Tape tape(false);
    num::ParameterBinding bind;
    const backbone::NetVars v = backbone::bind_network(bind, tape, m);
    std::vector<std::uint32_t> items;
    backbone::Segments seg;
    std::vector<std::size_t> rows;  // per event, row of P in the stacked output
    const std::size_t g1 = std::min(groups, (c + 1) * per_chunk);
    for (std::size_t g = c * per_chunk; g < g1; ++g) {
      const auto& full = split.full[split.test[starts[g]].user];
      const std::size_t last = split.test[starts[g + 1] - 1].position;
      if (last <= max_len) {
        // One causal pass over the longest prefix serves every event.
        const std::size_t base = items.size();
        items.insert(items.end(), full.begin(), full.begin() + static_cast<std::ptrdiff_t>(last));
        seg.push(last);
        for (std::size_t e = starts[g]; e < starts[g + 1]; ++e) {
          rows.push_back(base + split.test[e].position - 1);
        }
      } else {
        for (std::size_t e = starts[g]; e < starts[g + 1]; ++e) {
          const auto prefix = backbone::truncate(split.prefix(split.test[e]), max_len);
          items.insert(items.end(), prefix.begin(), prefix.end());
          seg.push(prefix.size());
          rows.push_back(items.size() - 1);
        }
      }
    }
    if (rows.empty()) return;
    const ad::Var p = backbone::represent(v, m, items, seg);
    const DenseMatrix& pv = p.value();
    DenseMatrix sel(rows.size(), pv.cols());
    for (std::size_t r = 0; r < rows.size(); ++r) {
      std::copy(pv.row(rows[r]).begin(), pv.row(rows[r]).end(), sel.row(r).begin());
    }
    const DenseMatrix logits = num::matmul(sel, num::transpose(m.bank.id.value));
    std::size_t r = 0;
    for (std::size_t g = c * per_chunk; g < g1; ++g) {
      for (std::size_t e = starts[g]; e < starts[g + 1]; ++e, ++r) {
        const auto& ev = split.test[e];
        ranks[e] = rank_of_target(logits.row(r), ev.target, seen_items(split.prefix(ev), ev.target));
      }
    }
  });
  return ranks;
}

/// HR/MRR at 5 and 20 over all test events, ranking the full catalog with
/// the user's other seen items excluded.
inline MetricsReport evaluate(backbone::Recommender& m, const corpus::SplitDataset& split) {
  if (split.test.empty()) fail(ErrorKind::argument, "no test events");
  const auto ranks = test_ranks(m, split);
  const auto at5 = hr_mrr(ranks, 5);
  const auto at20 = hr_mrr(ranks, 20);
  return {at5.hr, at20.hr, at5.mrr, at20.mrr, ranks.size()};
}

}  // namespace kdsr::eval
