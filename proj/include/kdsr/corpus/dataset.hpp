// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <istream>
#include <ostream>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "kdsr/error.hpp"

namespace kdsr::corpus {

using ItemIndex = std::uint32_t;
using Sequence = std::vector<ItemIndex>;

struct Interaction {
  std::string user;
  std::string item;
  std::int64_t timestamp = 0;

  bool operator==(const Interaction&) const = default;
};

/// Chronological item sequences with contiguous item indices 0..N-1.
struct Dataset {
  std::vector<Sequence> sequences;     // one per user
  std::vector<std::string> user_ids;   // parallel to sequences
  std::vector<std::string> item_ids;   // item index -> original identifier

  std::size_t item_count() const noexcept { return item_ids.size(); }
  std::size_t user_count() const noexcept { return sequences.size(); }
  std::size_t interaction_count() const noexcept {
    std::size_t n = 0;
    for (const auto& s : sequences) n += s.size();
    return n;
  }
};

/// One held-out next-item event: the user's items before `position` form the
/// prefix and the item at `position` is the target.
struct TestEvent {
  std::uint32_t user = 0;
  std::uint32_t position = 0;
  ItemIndex target = 0;
};

struct SplitDataset {
  std::vector<Sequence> train;  // chronological first part per user
  std::vector<Sequence> full;   // complete sequences, for prefixes
  std::vector<TestEvent> test;
  std::size_t item_count = 0;

  std::span<const ItemIndex> prefix(const TestEvent& e) const {
    return std::span<const ItemIndex>(full[e.user]).first(e.position);
  }
};

namespace detail {

inline std::vector<std::string_view> split_tabs(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t tab = line.find('\t', start);
    out.push_back(line.substr(start, tab == std::string_view::npos ? tab : tab - start));
    if (tab == std::string_view::npos) break;
    start = tab + 1;
  }
  return out;
}

}  // namespace detail

/// Parses "user \t item \t timestamp" lines. Empty lines are skipped. The
/// result is stably ordered by (user, timestamp), keeping file order for
/// equal timestamps.
inline std::vector<Interaction> parse_interactions(std::istream& in) {
  std::vector<Interaction> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto fields = detail::split_tabs(line);
    if (fields.size() != 3) {
      fail(ErrorKind::parse, "line " + std::to_string(line_no) + ": expected 3 tab-separated fields, got " +
                                 std::to_string(fields.size()));
    }
    if (fields[0].empty() || fields[1].empty()) {
      fail(ErrorKind::parse, "line " + std::to_string(line_no) + ": empty user or item");
    }
    std::int64_t ts = 0;
    const auto ts_field = fields[2];
    const auto [ptr, ec] = std::from_chars(ts_field.data(), ts_field.data() + ts_field.size(), ts);
    if (ec != std::errc{} || ptr != ts_field.data() + ts_field.size()) {
      fail(ErrorKind::parse, "line " + std::to_string(line_no) + ": timestamp '" +
                                 std::string(ts_field) + "' is not an integer");
    }
    out.push_back({std::string(fields[0]), std::string(fields[1]), ts});
  }
  std::stable_sort(out.begin(), out.end(), [](const Interaction& a, const Interaction& b) {
    if (a.user != b.user) return a.user < b.user;
    return a.timestamp < b.timestamp;
  });
  return out;
}

inline std::vector<Interaction> load_interactions(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::file, "cannot open interactions file " + path.string());
  return parse_interactions(in);
}

inline void write_interactions(std::ostream& out, std::span<const Interaction> log) {
  for (const auto& it : log) out << it.user << '\t' << it.item << '\t' << it.timestamp << '\n';
}

/// Repeatedly drops users and items with fewer than k interactions until
/// nothing changes, then indexes items by first appearance in the filtered
/// log. Input must be ordered as parse_interactions returns it.
inline Dataset core_k_filter(std::span<const Interaction> log, std::size_t k) {
  if (k < 1) fail(ErrorKind::argument, "core-k filter needs k >= 1");
  std::vector<bool> alive(log.size(), true);
  bool changed = true;
  while (changed) {
    changed = false;
    std::unordered_map<std::string_view, std::size_t> users;
    std::unordered_map<std::string_view, std::size_t> items;
    for (std::size_t i = 0; i < log.size(); ++i) {
      if (!alive[i]) continue;
      ++users[log[i].user];
      ++items[log[i].item];
    }
    for (std::size_t i = 0; i < log.size(); ++i) {
      if (alive[i] && (users[log[i].user] < k || items[log[i].item] < k)) {
        alive[i] = false;
        changed = true;
      }
    }
  }
  Dataset ds;
  std::unordered_map<std::string_view, ItemIndex> item_index;
  const std::string* current_user = nullptr;
  for (std::size_t i = 0; i < log.size(); ++i) {
    if (!alive[i]) continue;
    const auto& rec = log[i];
    auto [it, inserted] = item_index.try_emplace(rec.item, static_cast<ItemIndex>(ds.item_ids.size()));
    if (inserted) ds.item_ids.push_back(rec.item);
    if (current_user == nullptr || *current_user != rec.user) {
      ds.user_ids.push_back(rec.user);
      ds.sequences.emplace_back();
      current_user = &rec.user;
    }
    ds.sequences.back().push_back(it->second);
  }
  if (ds.sequences.empty()) {
    fail(ErrorKind::empty_dataset, "core-" + std::to_string(k) + " filtering removed every interaction");
  }
  return ds;
}

/// Number of leading events that go to training for a sequence of length n.
inline std::size_t train_length(std::size_t n) {
  return std::max<std::size_t>(1, (n * 4) / 5);
}

/// Per user: the first floor(0.8 * len) events (at least one) train, every
/// later event becomes a test event with its full preceding prefix.
inline SplitDataset split_train_test(const Dataset& ds) {
  SplitDataset out;
  out.item_count = ds.item_count();
  out.full = ds.sequences;
  out.train.reserve(ds.sequences.size());
  for (std::size_t u = 0; u < ds.sequences.size(); ++u) {
    const auto& seq = ds.sequences[u];
    if (seq.size() < 2) {
      const std::string name = u < ds.user_ids.size() ? ds.user_ids[u] : std::to_string(u);
      fail(ErrorKind::split, "user " + name + " has fewer than 2 interactions");
    }
    const std::size_t n_train = train_length(seq.size());
    out.train.emplace_back(seq.begin(), seq.begin() + static_cast<std::ptrdiff_t>(n_train));
    for (std::size_t p = n_train; p < seq.size(); ++p) {
      out.test.push_back({static_cast<std::uint32_t>(u), static_cast<std::uint32_t>(p), seq[p]});
    }
  }
  return out;
}

}  // namespace kdsr::corpus
