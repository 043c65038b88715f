// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include "support.hpp"

namespace kdsr {
namespace {

using eval::ItemPair;
using num::DenseMatrix;
using testing::random_matrix;

std::vector<double> vec(std::initializer_list<double> v) { return v; }

TEST(Rank, Examples) {
  const std::vector<std::uint32_t> none;
  EXPECT_EQ(eval::rank_of_target(vec({0.9, 0.1, 0.5}), 2, none), 2U);
  EXPECT_EQ(eval::rank_of_target(vec({0.9, 0.1, 0.5}), 0, none), 1U);
  EXPECT_EQ(eval::rank_of_target(vec({0.9, 0.1, 0.5}), 1, none), 3U);
  EXPECT_EQ(eval::rank_of_target(vec({0.9, 0.1, 0.5}), 2, std::vector<std::uint32_t>{0}), 1U);
}

TEST(Rank, TiesGoToLowerIndex) {
  const std::vector<std::uint32_t> none;
  EXPECT_EQ(eval::rank_of_target(vec({0.5, 0.5, 0.5}), 0, none), 1U);
  EXPECT_EQ(eval::rank_of_target(vec({0.5, 0.5, 0.5}), 2, none), 3U);
  EXPECT_EQ(eval::rank_of_target(vec({0.5, 0.5, 0.5}), 2, std::vector<std::uint32_t>{1}), 2U);
}

TEST(Rank, RejectsExcludedOrMissingTarget) {
  EXPECT_THROW(eval::rank_of_target(vec({1, 2}), 1, std::vector<std::uint32_t>{1}), Error);
  EXPECT_THROW(eval::rank_of_target(vec({1, 2}), 2, std::vector<std::uint32_t>{}), Error);
}

TEST(Rank, MatchesBruteForceSort) {
  Rng rng(3);
  for (int t = 0; t < 300; ++t) {
    const std::size_t n = 2 + rng.below(30);
    std::vector<double> logits(n);
    for (double& l : logits) l = static_cast<double>(rng.below(6));
    std::vector<std::uint32_t> excluded;
    const std::size_t target = rng.below(n);
    for (std::uint32_t i = 0; i < n; ++i) {
      if (i != target && rng.uniform() < 0.3) excluded.push_back(i);
    }
    EXPECT_EQ(eval::rank_of_target(logits, target, excluded), testing::oracle::rank(logits, target, excluded));
  }
}

TEST(HitRate, Examples) {
  const std::vector<std::size_t> ranks{1, 3, 10};
  const auto at5 = eval::hr_mrr(ranks, 5);
  EXPECT_DOUBLE_EQ(at5.hr, 2.0 / 3.0);
  EXPECT_DOUBLE_EQ(at5.mrr, (1.0 + 1.0 / 3.0) / 3.0);
  const auto at20 = eval::hr_mrr(ranks, 20);
  EXPECT_DOUBLE_EQ(at20.hr, 1.0);
  EXPECT_DOUBLE_EQ(at20.mrr, (1.0 + 1.0 / 3.0 + 0.1) / 3.0);
  EXPECT_THROW(eval::hr_mrr(ranks, 0), Error);
  EXPECT_THROW(eval::hr_mrr(std::vector<std::size_t>{}, 5), Error);
}

TEST(HitRate, BoundedAndMonotoneInK) {
  Rng rng(4);
  std::vector<std::size_t> ranks(50);
  for (auto& r : ranks) r = 1 + rng.below(40);
  double prev_hr = 0.0, prev_mrr = 0.0;
  for (std::size_t k = 1; k <= 45; ++k) {
    const auto h = eval::hr_mrr(ranks, k);
    EXPECT_GE(h.hr, prev_hr);
    EXPECT_GE(h.mrr, prev_mrr);
    EXPECT_LE(h.mrr, h.hr);
    EXPECT_LE(h.hr, 1.0);
    prev_hr = h.hr;
    prev_mrr = h.mrr;
  }
}

TEST(HitRate, OrthonormalEmbeddingsRankTargetFirst) {
  student::EmbeddingBank bank;
  bank.id = num::Parameter("emb.id", num::ParamGroup::embedding, DenseMatrix::identity(8));
  std::vector<std::size_t> ranks;
  for (std::size_t target = 0; target < 8; ++target) {
    const auto logits = backbone::score_items(bank.id.value.row(target), bank);
    ranks.push_back(eval::rank_of_target(logits, target, std::vector<std::uint32_t>{}));
  }
  EXPECT_EQ(eval::hr_mrr(ranks, 5).hr, 1.0);
  EXPECT_EQ(eval::hr_mrr(ranks, 5).mrr, 1.0);
}

TEST(SeenItems, DistinctSortedWithoutTarget) {
  const corpus::Sequence prefix{5, 2, 5, 9, 2};
  EXPECT_EQ(eval::seen_items(prefix, 9), (std::vector<std::uint32_t>{2, 5}));
  EXPECT_EQ(eval::seen_items(prefix, 7), (std::vector<std::uint32_t>{2, 5, 9}));
}

backbone::Recommender model_for(std::size_t items, backbone::BackboneKind kind, std::size_t max_length) {
  Rng rng(5);
  backbone::Recommender m;
  m.bank = student::init_embedding_bank(items, 4, nullptr, nullptr, rng);
  m.bank.id.value = random_matrix(items, 4, rng);
  backbone::BackboneConfig cfg;
  cfg.kind = kind;
  cfg.layers = 1;
  cfg.max_length = max_length;
  m.encoder = backbone::init_encoder(4, cfg, rng);
  m.use_modality = false;
  return m;
}

// Reference evaluation: each event scored from its own truncated prefix.
eval::MetricsReport brute_force(backbone::Recommender& m, const corpus::SplitDataset& split) {
  std::vector<std::size_t> ranks;
  for (const auto& ev : split.test) {
    const auto prefix = backbone::truncate(split.prefix(ev), m.encoder.cfg.max_length);
    const auto h = backbone::encode(m, prefix);
    const auto p = backbone::readout(m.encoder.readout, h, m.encoder.cfg.window);
    const auto logits = backbone::score_items(p.row(0), m.bank);
    std::vector<std::uint32_t> seen;
    for (auto i : split.prefix(ev)) {
      if (i != ev.target) seen.push_back(i);
    }
    ranks.push_back(testing::oracle::rank(logits, ev.target, seen));
  }
  auto at = [&](std::size_t k) {
    double hr = 0.0, mrr = 0.0;
    for (auto r : ranks) {
      if (r <= k) {
        hr += 1.0;
        mrr += 1.0 / static_cast<double>(r);
      }
    }
    return std::pair{hr / static_cast<double>(ranks.size()), mrr / static_cast<double>(ranks.size())};
  };
  return {at(5).first, at(20).first, at(5).second, at(20).second, ranks.size()};
}

corpus::SplitDataset three_users() {
  corpus::Dataset ds;
  ds.user_ids = {"a", "b", "c"};
  for (int i = 0; i < 25; ++i) ds.item_ids.push_back("i" + std::to_string(i));
  ds.sequences = {{0, 3, 7, 3, 9, 12, 1, 4, 20, 3}, {5, 6}, {24, 23, 22, 21, 20, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10}};
  return corpus::split_train_test(ds);
}

void expect_same(const eval::MetricsReport& a, const eval::MetricsReport& b) {
  EXPECT_EQ(a.events, b.events);
  EXPECT_NEAR(a.hr5, b.hr5, 1e-15);
  EXPECT_NEAR(a.hr20, b.hr20, 1e-15);
  EXPECT_NEAR(a.mrr5, b.mrr5, 1e-15);
  EXPECT_NEAR(a.mrr20, b.mrr20, 1e-15);
}

TEST(Evaluate, ThreeUserFixtureMatchesBruteForce) {
  const auto split = three_users();
  for (auto kind : {backbone::BackboneKind::gru, backbone::BackboneKind::attention}) {
    for (std::size_t max_length : {4, 50}) {
      auto m = model_for(25, kind, max_length);
      const auto got = eval::evaluate(m, split);
      EXPECT_EQ(got.events, 6U);
      expect_same(got, brute_force(m, split));
    }
  }
}

TEST(Evaluate, SyntheticFixtureMatchesBruteForce) {
  const auto f = testing::make_fixture();
  auto m = model_for(f.split.item_count, backbone::BackboneKind::gru, 6);
  expect_same(eval::evaluate(m, f.split), brute_force(m, f.split));
}

TEST(DriftPairs, DistinctAndReproducible) {
  const auto a = eval::sample_drift_pairs(10, 500, 3);
  EXPECT_EQ(a.size(), 500U);
  for (const auto& [i, j] : a) {
    EXPECT_NE(i, j);
    EXPECT_LT(i, 10U);
    EXPECT_LT(j, 10U);
  }
  EXPECT_EQ(a, eval::sample_drift_pairs(10, 500, 3));
  EXPECT_NE(a, eval::sample_drift_pairs(10, 500, 4));
  EXPECT_THROW(eval::sample_drift_pairs(1, 5, 3), Error);
}

TEST(Drift, ProfileIsCosinePerPair) {
  const auto space = DenseMatrix::from_rows({{1, 0}, {0, 1}, {1, 1}});
  const std::vector<ItemPair> pairs{{0, 1}, {0, 2}, {2, 2}};
  const auto prof = eval::pairwise_similarity_profile(space, pairs);
  EXPECT_NEAR(prof[0], 0.0, 1e-15);
  EXPECT_NEAR(prof[1], 1.0 / std::sqrt(2.0), 1e-15);
  EXPECT_NEAR(prof[2], 1.0, 1e-15);
  EXPECT_THROW(eval::pairwise_similarity_profile(space, std::vector<ItemPair>{{0, 3}}), Error);
}

TEST(Drift, InvariantToRowScaling) {
  Rng rng(6);
  const auto m = random_matrix(40, 5, rng);
  auto scaled = m;
  for (std::size_t r = 0; r < scaled.rows(); ++r) {
    const double k = 0.5 + rng.uniform() * 3.0;
    for (double& v : scaled.row(r)) v *= k;
  }
  const auto pairs = eval::sample_drift_pairs(40, 300, 1);
  EXPECT_NEAR(eval::profile_pearson(scaled, m, pairs), 1.0, 1e-12);
  const auto d = eval::drift(m, m, scaled, pairs);
  EXPECT_NEAR(d.em, 1.0, 1e-12);
  EXPECT_NEAR(d.ev, 1.0, 1e-12);
}

TEST(Drift, IndependentSpacesAreUncorrelated) {
  Rng rng(7);
  const auto a = random_matrix(500, 32, rng);
  const auto b = random_matrix(500, 32, rng);
  const auto pairs = eval::sample_drift_pairs(500, 10000, 2);
  EXPECT_LT(std::abs(eval::profile_pearson(a, b, pairs)), 0.05);
}

TEST(Drift, PartialMixTracksMixingWeight) {
  Rng rng(8);
  const auto a = random_matrix(300, 16, rng);
  const auto noise = random_matrix(300, 16, rng);
  const auto pairs = eval::sample_drift_pairs(300, 5000, 3);
  double prev = 1.0;
  for (double w : {0.2, 0.5, 1.0, 2.0}) {
    auto mix = a;
    for (std::size_t i = 0; i < mix.size(); ++i) mix[i] += w * noise[i];
    const double r = eval::profile_pearson(mix, a, pairs);
    EXPECT_LT(r, prev);
    prev = r;
  }
}

TEST(Report, JsonRoundTripKeepsMissingValues) {
  eval::ReportRow r0;
  r0.losses = {4.5, std::nan(""), std::nan("")};
  r0.metrics = {0.1, 0.3, 0.05, 0.07, 12};
  eval::ReportRow r1 = r0;
  r1.epoch = 1;
  r1.losses = {3.25, 0.125, 2.0};
  r1.em = 0.75;
  r1.ev = -0.5;
  const std::vector<eval::ReportRow> rows{r0, r1};
  const auto back = eval::rows_from_json(eval::Json::parse(eval::rows_to_json(rows).dump()));
  EXPECT_EQ(back, rows);
  EXPECT_FALSE(back[0].em.has_value());
}

TEST(Report, CsvLeavesMissingCellsEmpty) {
  eval::ReportRow r;
  r.losses = {1.5, std::nan(""), std::nan("")};
  const auto csv = eval::rows_to_csv({r});
  EXPECT_EQ(csv, "epoch,rs,kds,kdc,hr5,hr20,mrr5,mrr20,em,ev\n0,1.5,,,0,0,0,0,,\n");
}

TEST(Report, BestEpochPrefersEarliestTie) {
  std::vector<eval::ReportRow> rows(4);
  for (std::uint32_t e = 0; e < 4; ++e) rows[e].epoch = e;
  rows[1].metrics.hr20 = 0.4;
  rows[2].metrics.hr20 = 0.4;
  rows[3].metrics.hr20 = 0.3;
  EXPECT_EQ(eval::best_epoch(rows), 1U);
  const auto rep = eval::make_report(eval::Json::object(), 9, eval::Json::object(), rows);
  EXPECT_EQ(rep["best_epoch"], 1);
  EXPECT_EQ(rep["seed"], 9);
  EXPECT_EQ(rep["rows"].size(), 4U);
}

}  // namespace
}  // namespace kdsr
