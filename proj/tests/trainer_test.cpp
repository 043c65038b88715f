// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <fstream>
#include <map>
#include <set>

#include "support.hpp"

namespace kdsr {
namespace {

using eval::ItemPair;
using num::DenseMatrix;
using num::Parameter;
using testing::TempDir;

void expect_valid_pairs(const std::vector<ItemPair>& pairs, const corpus::Sequence& seq) {
  std::set<ItemPair> seen;
  for (const auto& [a, b] : pairs) {
    EXPECT_LT(a, b);
    EXPECT_NE(std::find(seq.begin(), seq.end(), a), seq.end());
    EXPECT_NE(std::find(seq.begin(), seq.end(), b), seq.end());
    EXPECT_TRUE(seen.insert({a, b}).second);
  }
  EXPECT_TRUE(std::is_sorted(pairs.begin(), pairs.end()));
}

TEST(SamplePairs, AllPairsWhenUnderCap) {
  const corpus::Sequence seq{7, 2, 9, 2, 4};
  const auto pairs = trainer::sample_pairs(seq, 10, Rng(1));
  const std::vector<ItemPair> want{{2, 4}, {2, 7}, {2, 9}, {4, 7}, {4, 9}, {7, 9}};
  EXPECT_EQ(pairs, want);
}

TEST(SamplePairs, CapRespected) {
  const corpus::Sequence seq{0, 1, 2, 3, 4, 5, 6, 7};
  for (std::size_t cap : {1, 8, 27}) {
    const auto pairs = trainer::sample_pairs(seq, cap, Rng(cap));
    EXPECT_EQ(pairs.size(), cap);
    expect_valid_pairs(pairs, seq);
  }
  EXPECT_TRUE(trainer::sample_pairs(corpus::Sequence{3, 3, 3}, 5, Rng(1)).empty());
}

TEST(SamplePairs, SingleDrawIsUniform) {
  const corpus::Sequence seq{10, 11, 12, 13};
  std::map<ItemPair, int> counts;
  const int draws = 12000;
  for (int t = 0; t < draws; ++t) counts[trainer::sample_pairs(seq, 1, Rng::stream(5, "t").fork(t))[0]]++;
  ASSERT_EQ(counts.size(), 6U);
  for (const auto& [p, c] : counts) EXPECT_NEAR(c, draws / 6.0, 5 * std::sqrt(draws / 6.0));
}

TEST(EmbeddingSchedule, WarmsUpLinearlyThenHolds) {
  EXPECT_DOUBLE_EQ(trainer::embedding_lr(0, 0.01, 5), 0.001);
  EXPECT_DOUBLE_EQ(trainer::embedding_lr(2, 0.01, 5), 0.01 * (0.1 + 0.9 * 0.4));
  EXPECT_DOUBLE_EQ(trainer::embedding_lr(5, 0.01, 5), 0.01);
  EXPECT_DOUBLE_EQ(trainer::embedding_lr(40, 0.01, 5), 0.01);
  EXPECT_DOUBLE_EQ(trainer::embedding_lr(0, 0.5, 1), 0.05);
  EXPECT_THROW(trainer::embedding_lr(0, 0.01, 0), Error);
  EXPECT_THROW(trainer::embedding_lr(0, 0.0, 3), Error);
}

TEST(EpochBatches, PartitionUsers) {
  auto cfg = testing::small_train_config();
  cfg.batch = 7;
  const auto batches = trainer::epoch_batches(cfg, 30, 3);
  EXPECT_EQ(batches.size(), 5U);
  std::vector<std::uint32_t> all;
  for (const auto& b : batches) all.insert(all.end(), b.begin(), b.end());
  std::sort(all.begin(), all.end());
  for (std::uint32_t u = 0; u < 30; ++u) EXPECT_EQ(all[u], u);
  EXPECT_NE(batches, trainer::epoch_batches(cfg, 30, 4));
  EXPECT_EQ(batches, trainer::epoch_batches(cfg, 30, 3));
}

struct ChunkInputs {
  std::vector<corpus::Sequence> seqs;
  std::vector<std::vector<ItemPair>> pairs;
  trainer::Scales scales;
};

ChunkInputs chunk_inputs(const testing::Fixture& f, std::size_t users) {
  ChunkInputs in;
  std::vector<std::uint32_t> ids(users);
  std::iota(ids.begin(), ids.end(), 0U);
  in.seqs = trainer::batch_sequences(f.split, ids, f.cfg.backbone.max_length);
  std::size_t total = 0;
  for (std::size_t s = 0; s < users; ++s) {
    in.pairs.push_back(trainer::sample_pairs(in.seqs[s], f.cfg.pair_cap, Rng(s)));
    total += in.pairs.back().size();
  }
  in.scales.rs = 1.0 / static_cast<double>(backbone::count_predictions(in.seqs, f.cfg.backbone.max_length));
  in.scales.kd = 1.0 / (2.0 * static_cast<double>(total));
  return in;
}

TEST(RunChunk, ZeroWeightsLeaveHeadsWithoutGradient) {
  auto f = testing::make_fixture();
  f.cfg.lambda1 = 0.0;
  f.cfg.lambda2 = 0.0;
  auto model = trainer::init_model(f.cfg, f.split.item_count, f.teachers);
  const auto in = chunk_inputs(f, 6);
  const auto r = trainer::run_chunk(model, f.cfg, f.teachers, in.seqs, in.pairs, in.scales, true);
  EXPECT_GT(r.losses.kdc, 0.0);
  const auto params = model.parameters();
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i]->name.rfind("kd.", 0) == 0) {
      for (double g : r.grads[i].values()) EXPECT_EQ(g, 0.0) << params[i]->name;
    }
  }
  EXPECT_FALSE(r.grads[0].empty());
}

TEST(RunChunk, ChunksAddUpToWholeBatch) {
  auto f = testing::make_fixture();
  auto model = trainer::init_model(f.cfg, f.split.item_count, f.teachers);
  const auto in = chunk_inputs(f, 8);
  const auto whole = trainer::run_chunk(model, f.cfg, f.teachers, in.seqs, in.pairs, in.scales, true);
  const std::span<const corpus::Sequence> seqs(in.seqs);
  const std::span<const std::vector<ItemPair>> pairs(in.pairs);
  const auto a = trainer::run_chunk(model, f.cfg, f.teachers, seqs.first(3), pairs.first(3), in.scales, true);
  const auto b = trainer::run_chunk(model, f.cfg, f.teachers, seqs.subspan(3), pairs.subspan(3), in.scales, true);
  EXPECT_NEAR(a.losses.rs + b.losses.rs, whole.losses.rs, 1e-12);
  EXPECT_NEAR(a.losses.kds + b.losses.kds, whole.losses.kds, 1e-12);
  EXPECT_NEAR(a.losses.kdc + b.losses.kdc, whole.losses.kdc, 1e-12);
  for (std::size_t i = 0; i < whole.grads.size(); ++i) {
    DenseMatrix sum = a.grads[i].empty() ? DenseMatrix(whole.grads[i].rows(), whole.grads[i].cols()) : a.grads[i];
    if (!b.grads[i].empty()) sum += b.grads[i];
    EXPECT_LT(testing::max_abs_diff(sum, whole.grads[i]), 1e-12) << i;
  }
}

TEST(RunChunk, TotalLossGradientMatchesFiniteDifferences) {
  auto f = testing::make_fixture();
  auto model = trainer::init_model(f.cfg, f.split.item_count, f.teachers);
  for (auto& h : model.heads) {
    Rng rng(3);
    h.holistic.w.value = testing::random_matrix(f.cfg.dim, f.cfg.dim, rng, 0.4);
  }
  const auto in = chunk_inputs(f, 4);
  const auto r = trainer::run_chunk(model, f.cfg, f.teachers, in.seqs, in.pairs, in.scales, true);
  const auto params = model.parameters();
  for (std::size_t i = 0; i < params.size(); ++i) {
    params[i]->gradient = r.grads[i].empty() ? DenseMatrix(params[i]->value.rows(), params[i]->value.cols()) : r.grads[i];
  }
  const auto rep = num::finite_diff_check(
      [&] {
        const auto l = trainer::run_chunk(model, f.cfg, f.teachers, in.seqs, in.pairs, in.scales, false).losses;
        return l.rs + f.cfg.lambda1 * l.kds + f.cfg.lambda2 * l.kdc;
      },
      params);
  EXPECT_TRUE(rep.passed) << rep.worst_parameter << " " << rep.max_rel_error;
}

trainer::RunContext context(const testing::Fixture& f) {
  return trainer::make_context(f.split, f.teachers, nullptr, f.cfg);
}

TEST(Training, InitialStudentMatchesTeacherScores) {
  const auto f = testing::make_fixture();
  const auto ctx = context(f);
  const auto st = trainer::start_training(f.cfg, ctx);
  ASSERT_EQ(st.rows.size(), 1U);
  EXPECT_EQ(st.rows[0].epoch, 0U);
  EXPECT_LT(st.rows[0].losses.kds, 1e-20);
  EXPECT_GT(st.rows[0].losses.kdc, 0.0);
  EXPECT_NEAR(*st.rows[0].em, 1.0, 1e-12);
}

TEST(Training, ZeroEpochsGivesOnlyInitialRow) {
  auto f = testing::make_fixture();
  f.cfg.epochs = 0;
  const auto st = trainer::fit(f.cfg, context(f));
  EXPECT_EQ(st.rows.size(), 1U);
  EXPECT_EQ(st.epoch, 0U);
}

TEST(Training, IdOnlyReportsNoDistillation) {
  auto cfg = testing::small_train_config();
  cfg.use_modality = false;
  const auto f = testing::make_fixture(testing::small_spec(), cfg);
  const auto st = trainer::fit(cfg, context(f));
  EXPECT_TRUE(st.model.heads.empty());
  ASSERT_EQ(st.rows.size(), 3U);
  for (const auto& r : st.rows) {
    EXPECT_TRUE(std::isnan(r.losses.kds));
    EXPECT_TRUE(std::isnan(r.losses.kdc));
    EXPECT_FALSE(r.em.has_value());
  }
  EXPECT_NEAR(st.rows[0].losses.rs, std::log(static_cast<double>(f.split.item_count)), 0.05);
}

TEST(Training, SameSeedIsBitwiseReproducible) {
  const auto f = testing::make_fixture();
  auto a = trainer::fit(f.cfg, context(f));
  auto b = trainer::fit(f.cfg, context(f));
  EXPECT_EQ(a.rows, b.rows);
  const auto pa = a.model.parameters();
  const auto pb = b.model.parameters();
  for (std::size_t i = 0; i < pa.size(); ++i) EXPECT_EQ(pa[i]->value, pb[i]->value) << pa[i]->name;
  auto other = f.cfg;
  other.seed = 99;
  EXPECT_NE(trainer::fit(other, context(f)).rows.back().losses.rs, a.rows.back().losses.rs);
}

TEST(Training, ThreadCountDoesNotChangeResults) {
  const auto f = testing::make_fixture();
  ::setenv("KDSR_THREADS", "1", 1);
  const auto one = trainer::fit(f.cfg, context(f)).rows;
  ::setenv("KDSR_THREADS", "3", 1);
  const auto three = trainer::fit(f.cfg, context(f)).rows;
  ::unsetenv("KDSR_THREADS");
  EXPECT_EQ(one, three);
}

TEST(Training, LossDecreasesOverEpochs) {
  auto f = testing::make_fixture();
  f.cfg.epochs = 6;
  f.cfg.lr = 0.02;
  const auto st = trainer::fit(f.cfg, context(f));
  EXPECT_LT(st.rows.back().losses.rs, st.rows[0].losses.rs);
}

TEST(Training, DefaultCorpusLossNonIncreasingEarly) {
  corpus::SyntheticSpec spec;
  spec.modality_dim = 64;
  auto cfg = testing::small_train_config(32);
  cfg.batch = 64;
  cfg.epochs = 3;
  cfg.pair_cap = 32;
  cfg.grad_chunks = 8;
  cfg.teacher.segments = 8;
  cfg.teacher.codes = 100;
  cfg.teacher.ae_epochs = 200;
  cfg.teacher.vq_passes = 5;
  std::vector<double> mean(4, 0.0);
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    spec.seed = seed;
    cfg.seed = seed;
    cfg.teacher.seed = seed;
    const auto f = testing::make_fixture(spec, cfg);
    const auto st = trainer::fit(cfg, context(f));
    for (std::size_t e = 0; e < 4; ++e) mean[e] += st.rows[e].losses.rs / 3.0;
  }
  for (std::size_t e = 1; e < 4; ++e) EXPECT_LE(mean[e], mean[e - 1]) << e;
}

TEST(Checkpoint, ResumeMatchesUninterruptedRun) {
  TempDir dir;
  auto f = testing::make_fixture();
  f.cfg.epochs = 3;
  const auto ctx = context(f);
  auto full = trainer::fit(f.cfg, ctx);
  auto partial_cfg = f.cfg;
  partial_cfg.epochs = 1;
  const auto partial = trainer::fit(partial_cfg, ctx);
  trainer::save_checkpoint(dir / "m.kdck", partial, partial_cfg);
  auto resumed = trainer::restore(trainer::load_checkpoint(dir / "m.kdck"), f.cfg, ctx);
  EXPECT_EQ(resumed.epoch, 1U);
  trainer::fit(resumed, f.cfg, ctx);
  EXPECT_EQ(resumed.rows, full.rows);
  const auto pa = resumed.model.parameters();
  const auto pb = full.model.parameters();
  for (std::size_t i = 0; i < pa.size(); ++i) EXPECT_EQ(pa[i]->value, pb[i]->value) << pa[i]->name;
}

TEST(Checkpoint, EncodeDecodeRoundTrip) {
  const auto f = testing::make_fixture();
  const auto st = trainer::fit(f.cfg, context(f));
  const auto bytes = trainer::encode_checkpoint(st, f.cfg);
  const auto ck = trainer::decode_checkpoint(bytes, "mem");
  EXPECT_EQ(ck.config_hash, f.cfg.hash());
  EXPECT_EQ(ck.epoch, 2U);
  EXPECT_EQ(ck.rows, st.rows);
  auto params = const_cast<trainer::Model&>(st.model).parameters();
  ASSERT_EQ(ck.params.size(), params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    EXPECT_EQ(ck.params[i].name, params[i]->name);
    EXPECT_EQ(ck.params[i].value, params[i]->value);
    EXPECT_EQ(ck.adam[i].first, st.adam[i].first_moment);
    EXPECT_EQ(ck.adam[i].step, st.adam[i].step);
  }
}

ErrorKind kind_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.kind();
  }
  ADD_FAILURE() << "expected an error";
  return ErrorKind::argument;
}

TEST(Checkpoint, CorruptionAndMismatchRejected) {
  TempDir dir;
  const auto f = testing::make_fixture();
  const auto ctx = context(f);
  const auto st = trainer::fit(f.cfg, ctx);
  const auto bytes = trainer::encode_checkpoint(st, f.cfg);
  EXPECT_EQ(kind_of([&] { trainer::decode_checkpoint(bytes.substr(0, bytes.size() - 9), "t"); }),
            ErrorKind::checkpoint);
  EXPECT_EQ(kind_of([&] { trainer::decode_checkpoint(bytes + "z", "t"); }), ErrorKind::checkpoint);
  EXPECT_EQ(kind_of([&] { trainer::decode_checkpoint("KDCX" + bytes.substr(4), "t"); }), ErrorKind::checkpoint);
  auto other = f.cfg;
  other.lambda1 = 0.25;
  EXPECT_EQ(kind_of([&] { trainer::restore(trainer::decode_checkpoint(bytes, "t"), other, ctx); }),
            ErrorKind::checkpoint);
  auto longer = f.cfg;
  longer.epochs = 10;
  EXPECT_NO_THROW(trainer::restore(trainer::decode_checkpoint(bytes, "t"), longer, ctx));
}

}  // namespace
}  // namespace kdsr
