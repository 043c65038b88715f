// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <fstream>
#include <map>
#include <sstream>

#include "support.hpp"

namespace kdsr {
namespace {

using corpus::Interaction;
using testing::TempDir;

ErrorKind kind_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind();
  }
  ADD_FAILURE() << "expected an error";
  return ErrorKind::argument;
}

TEST(LoadInteractions, WellFormedLines) {
  std::istringstream in("u1\ti1\t10\nu1\ti2\t20\nu2\ti1\t5\n");
  EXPECT_EQ(corpus::parse_interactions(in).size(), 3U);
}

TEST(LoadInteractions, WrongFieldCountReportsLine) {
  std::istringstream in("u1\ti1\t10\nu1\ti1\n");
  try {
    corpus::parse_interactions(in);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::parse);
    EXPECT_NE(std::string(e.what()).find("line 2"), std::string::npos);
  }
}

TEST(LoadInteractions, NonIntegerTimestampIsParseError) {
  std::istringstream in("u1\ti1\t1.5\n");
  EXPECT_EQ(kind_of([&] { corpus::parse_interactions(in); }), ErrorKind::parse);
}

TEST(LoadInteractions, SortsPerUserByTimestamp) {
  std::istringstream in("u2\tc\t3\nu1\tb\t9\nu1\ta\t1\nu2\td\t1\nu1\tz\t9\n");
  const auto log = corpus::parse_interactions(in);
  const std::vector<Interaction> want{
      {"u1", "a", 1}, {"u1", "b", 9}, {"u1", "z", 9}, {"u2", "d", 1}, {"u2", "c", 3}};
  EXPECT_EQ(log, want);
}

TEST(LoadInteractions, MissingFileIsFileError) {
  EXPECT_EQ(kind_of([] { corpus::load_interactions("/nonexistent/kdsr.tsv"); }), ErrorKind::file);
}

std::vector<Interaction> log_of(const std::map<std::string, std::vector<std::string>>& seqs) {
  std::vector<Interaction> out;
  for (const auto& [u, items] : seqs) {
    for (std::size_t t = 0; t < items.size(); ++t) out.push_back({u, items[t], static_cast<std::int64_t>(t)});
  }
  return out;
}

TEST(CoreK, FixpointKeepsCounts) {
  const auto log = log_of({{"u1", {"a", "b", "a"}}, {"u2", {"b", "a"}}});
  const auto ds = corpus::core_k_filter(log, 2);
  EXPECT_EQ(ds.user_count(), 2U);
  EXPECT_EQ(ds.item_count(), 2U);
  EXPECT_EQ(ds.interaction_count(), 5U);
}

TEST(CoreK, CascadeToEmptyDataset) {
  const auto log = log_of({{"u1", {"a", "b"}}, {"u2", {"a"}}});
  EXPECT_EQ(kind_of([&] { corpus::core_k_filter(log, 2); }), ErrorKind::empty_dataset);
}

TEST(CoreK, SurvivorsMeetThresholdOnRandomLogs) {
  Rng rng(17);
  for (int trial = 0; trial < 10; ++trial) {
    std::vector<Interaction> log;
    for (int u = 0; u < 60; ++u) {
      const auto len = 1 + rng.below(12);
      for (std::size_t t = 0; t < len; ++t) {
        log.push_back({"u" + std::to_string(u), "i" + std::to_string(rng.below(25)), static_cast<std::int64_t>(t)});
      }
    }
    std::stable_sort(log.begin(), log.end(), [](const auto& a, const auto& b) { return a.user < b.user; });
    const auto ds = corpus::core_k_filter(log, 5);
    std::vector<std::size_t> item_counts(ds.item_count(), 0);
    for (const auto& s : ds.sequences) {
      EXPECT_GE(s.size(), 5U);
      for (auto i : s) item_counts[i]++;
    }
    for (auto c : item_counts) EXPECT_GE(c, 5U);
  }
}

TEST(CoreK, IndexesItemsByFirstAppearance) {
  const auto ds = corpus::core_k_filter(log_of({{"u1", {"x", "y", "x"}}, {"u2", {"y", "z"}}}), 1);
  EXPECT_EQ(ds.item_ids, (std::vector<std::string>{"x", "y", "z"}));
  EXPECT_EQ(ds.sequences[1], (corpus::Sequence{1, 2}));
}

corpus::Dataset single_user(std::size_t len) {
  corpus::Dataset ds;
  ds.user_ids = {"u"};
  ds.sequences.emplace_back();
  for (std::size_t i = 0; i < len; ++i) {
    ds.sequences[0].push_back(static_cast<corpus::ItemIndex>(i));
    ds.item_ids.push_back("i" + std::to_string(i));
  }
  return ds;
}

TEST(Split, FloorOfEightyPercent) {
  for (auto [len, train] : std::vector<std::pair<std::size_t, std::size_t>>{{10, 8}, {2, 1}, {5, 4}}) {
    const auto s = corpus::split_train_test(single_user(len));
    EXPECT_EQ(s.train[0].size(), train) << len;
    EXPECT_EQ(s.test.size(), len - train) << len;
  }
}

TEST(Split, TestEventsCarryFullPrefix) {
  const auto s = corpus::split_train_test(single_user(10));
  ASSERT_EQ(s.test.size(), 2U);
  EXPECT_EQ(s.test[1].position, 9U);
  EXPECT_EQ(s.prefix(s.test[1]).size(), 9U);
  EXPECT_EQ(s.test[1].target, 9U);
}

TEST(Split, SingleInteractionUserIsSplitError) {
  EXPECT_EQ(kind_of([] { corpus::split_train_test(single_user(1)); }), ErrorKind::split);
}

TEST(Modality, BinaryHeaderAndPayload) {
  TempDir dir;
  corpus::ModalityMatrix m{corpus::Channel::image, num::DenseMatrix::from_rows({{1, 2}, {3, 4}, {5, 6}})};
  corpus::write_modality_binary(dir / "m.modf", m);
  const auto bytes = corpus::io::read_file(dir / "m.modf");
  EXPECT_EQ(bytes.size(), 4U + 12U + 6U * 4U);
  EXPECT_EQ(bytes.substr(0, 4), "MODF");
  const auto back = corpus::load_modality_matrix(dir / "m.modf", 3, corpus::Channel::image);
  EXPECT_EQ(back, m);
}

TEST(Modality, RowCountMismatchIsShapeError) {
  TempDir dir;
  corpus::ModalityMatrix m{corpus::Channel::text, num::DenseMatrix(3, 2, 0.5)};
  corpus::write_modality_binary(dir / "m.modf", m);
  EXPECT_EQ(kind_of([&] { corpus::load_modality_matrix(dir / "m.modf", 4, corpus::Channel::text); }),
            ErrorKind::shape);
}

TEST(Modality, CsvMatchesBinaryTwin) {
  TempDir dir;
  Rng rng(2);
  corpus::ModalityMatrix m{corpus::Channel::image, testing::random_matrix(3, 2, rng)};
  corpus::write_modality_binary(dir / "m.modf", m);
  corpus::write_modality_csv(dir / "m.csv", m);
  EXPECT_EQ(corpus::load_modality_matrix(dir / "m.csv", 3, corpus::Channel::image),
            corpus::load_modality_matrix(dir / "m.modf", 3, corpus::Channel::image));
}

TEST(Modality, TruncatedBinaryIsParseError) {
  TempDir dir;
  corpus::write_modality_binary(dir / "m.modf", {corpus::Channel::image, num::DenseMatrix(3, 2, 1.0)});
  auto bytes = corpus::io::read_file(dir / "m.modf");
  bytes.resize(bytes.size() - 3);
  std::ofstream(dir / "t.modf", std::ios::binary) << bytes;
  EXPECT_EQ(kind_of([&] { corpus::load_modality_matrix(dir / "t.modf", 3, corpus::Channel::image); }),
            ErrorKind::parse);
}

TEST(Modality, NonFiniteValueRejected) {
  TempDir dir;
  std::ofstream(dir / "m.csv") << "1,2\nnan,3\n";
  EXPECT_THROW(corpus::load_modality_matrix(dir / "m.csv", 2, corpus::Channel::image), Error);
}

TEST(Synthetic, SameSeedIsBitwiseIdentical) {
  const auto spec = testing::small_spec(9);
  const auto a = corpus::generate_synthetic(spec);
  const auto b = corpus::generate_synthetic(spec);
  EXPECT_EQ(a.interactions, b.interactions);
  EXPECT_EQ(a.image, b.image);
  EXPECT_EQ(a.text, b.text);
  EXPECT_NE(a.interactions, corpus::generate_synthetic(testing::small_spec(10)).interactions);
}

TEST(Synthetic, ZeroNoiseGivesEqualVectorsForEqualAttributes) {
  auto spec = testing::small_spec();
  spec.noise = 0.0;
  const auto c = corpus::generate_synthetic(spec);
  for (std::size_t i = 0; i < c.attributes.size(); ++i) {
    for (std::size_t j = i + 1; j < c.attributes.size(); ++j) {
      const auto& a = c.attributes[i];
      const auto& b = c.attributes[j];
      if (a.color == b.color && a.shape == b.shape) {
        EXPECT_TRUE(std::equal(c.image.values.row(i).begin(), c.image.values.row(i).end(),
                               c.image.values.row(j).begin()));
      }
      if (a.category == b.category && a.brand == b.brand) {
        EXPECT_TRUE(std::equal(c.text.values.row(i).begin(), c.text.values.row(i).end(),
                               c.text.values.row(j).begin()));
      }
    }
  }
}

TEST(Synthetic, FullMixingConcentratesOnComplementaryTransitions) {
  corpus::SyntheticSpec spec;
  spec.items = 500;
  spec.users = 2000;
  spec.mixing = 1.0;
  spec.modality_dim = 16;
  const auto c = corpus::generate_synthetic(spec);
  std::size_t total = 0, comp = 0;
  for (const auto& s : c.dataset.sequences) {
    for (std::size_t t = 0; t + 1 < s.size(); ++t) {
      ++total;
      comp += corpus::is_complementary(c.attributes[s[t]], c.attributes[s[t + 1]], spec.attribute_values);
    }
  }
  EXPECT_GT(static_cast<double>(comp) / static_cast<double>(total), 0.8);
}

TEST(Synthetic, FilesReloadToInMemoryCorpus) {
  TempDir dir;
  const auto c = corpus::generate_synthetic(testing::small_spec());
  {
    std::ofstream out(dir / "log.tsv");
    corpus::write_interactions(out, c.interactions);
  }
  corpus::write_modality_binary(dir / "image.modf", c.image);
  const auto ds = corpus::core_k_filter(corpus::load_interactions(dir / "log.tsv"), testing::small_spec().core_k);
  EXPECT_EQ(ds.sequences, c.dataset.sequences);
  EXPECT_EQ(ds.item_ids, c.dataset.item_ids);
  EXPECT_EQ(corpus::load_modality_matrix(dir / "image.modf", ds.item_count(), corpus::Channel::image), c.image);
}

}  // namespace
}  // namespace kdsr
