// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <cstdio>
#include <string>
#include <vector>

#include "kdsr/corpus/dataset.hpp"
#include "kdsr/corpus/modality.hpp"
#include "kdsr/error.hpp"
#include "kdsr/rng.hpp"

namespace kdsr::corpus {

/// Desk-scale corpus with planted modality structure.
struct SyntheticSpec {
  std::size_t items = 500;
  std::size_t users = 2000;
  std::size_t attribute_values = 5;  // categories per attribute
  std::size_t modality_dim = 128;
  double noise = 0.1;
  double mixing = 0.8;  // probability of a complementary transition
  std::size_t min_length = 5;
  std::size_t max_length = 15;
  std::size_t core_k = 5;
  std::uint64_t seed = 1;

  void validate() const {
    if (items < 1 || users < 1) fail(ErrorKind::config, "synthetic items and users must be >= 1");
    if (attribute_values < 1) fail(ErrorKind::config, "synthetic attribute_values must be >= 1");
    if (modality_dim < 2 * attribute_values) {
      fail(ErrorKind::config, "synthetic modality_dim must hold two one-hot attribute blocks (>= " +
                                  std::to_string(2 * attribute_values) + ")");
    }
    if (!(noise >= 0.0)) fail(ErrorKind::config, "synthetic noise must be >= 0");
    if (!(mixing >= 0.0 && mixing <= 1.0)) fail(ErrorKind::config, "synthetic mixing must lie in [0, 1]");
    if (min_length < 2 || max_length < min_length) {
      fail(ErrorKind::config, "synthetic lengths need 2 <= min_length <= max_length");
    }
  }
};

/// Latent attributes. The image channel encodes {color, shape}, the text
/// channel {category, brand}.
struct ItemAttributes {
  std::uint32_t color = 0;
  std::uint32_t shape = 0;
  std::uint32_t category = 0;
  std::uint32_t brand = 0;
};

/// Complementary successor: next category in the cycle, same color
/// (a black suit is followed by a black tie).
inline bool is_complementary(const ItemAttributes& from, const ItemAttributes& to,
                             std::size_t attribute_values) {
  return to.category == (from.category + 1) % attribute_values && to.color == from.color;
}

struct SyntheticCorpus {
  std::vector<Interaction> interactions;  // filtered log, loader order
  Dataset dataset;
  ModalityMatrix image;
  ModalityMatrix text;
  std::vector<ItemAttributes> attributes;  // by dataset item index
};

namespace detail {

inline std::string padded(char prefix, std::size_t v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%c%06zu", prefix, v);
  return buf;
}

}  // namespace detail

/// Generates interactions and both modality channels from spec.seed alone.
/// The result is already core-k filtered and indexed exactly as loading the
/// written interaction log would index it, so modality rows line up.
inline SyntheticCorpus generate_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  const Rng root = Rng::stream(spec.seed, "synthetic");
  Rng attr_rng = root.fork(0);
  Rng noise_rng = root.fork(1);
  Rng seq_rng = root.fork(2);
  const std::size_t n = spec.items;
  const std::size_t a = spec.attribute_values;

  std::vector<ItemAttributes> attrs(n);
  for (auto& it : attrs) {
    it.color = static_cast<std::uint32_t>(attr_rng.below(a));
    it.shape = static_cast<std::uint32_t>(attr_rng.below(a));
    it.category = static_cast<std::uint32_t>(attr_rng.below(a));
    it.brand = static_cast<std::uint32_t>(attr_rng.below(a));
  }

  num::DenseMatrix image(n, spec.modality_dim);
  num::DenseMatrix text(n, spec.modality_dim);
  for (std::size_t i = 0; i < n; ++i) {
    image(i, attrs[i].color) = 1.0;
    image(i, a + attrs[i].shape) = 1.0;
    text(i, attrs[i].category) = 1.0;
    text(i, a + attrs[i].brand) = 1.0;
  }
  if (spec.noise > 0.0) {
    for (double& v : image.values()) v += noise_rng.normal(0.0, spec.noise);
    for (double& v : text.values()) v += noise_rng.normal(0.0, spec.noise);
  }

  // successors[c][color]: items in category c with that color
  std::vector<std::vector<std::vector<std::uint32_t>>> by_cat_color(
      a, std::vector<std::vector<std::uint32_t>>(a));
  std::vector<std::vector<std::uint32_t>> by_cat(a);
  for (std::size_t i = 0; i < n; ++i) {
    by_cat_color[attrs[i].category][attrs[i].color].push_back(static_cast<std::uint32_t>(i));
    by_cat[attrs[i].category].push_back(static_cast<std::uint32_t>(i));
  }

  std::vector<Interaction> log;
  for (std::size_t u = 0; u < spec.users; ++u) {
    Rng r = seq_rng.fork(u);
    const std::size_t len = spec.min_length + r.below(spec.max_length - spec.min_length + 1);
    std::size_t cur = r.below(n);
    const std::string user = detail::padded('u', u);
    for (std::size_t t = 0; t < len; ++t) {
      log.push_back({user, detail::padded('i', cur), static_cast<std::int64_t>(1'000'000 + t)});
      std::size_t next = 0;
      if (r.uniform() < spec.mixing) {
        const auto target_cat = (attrs[cur].category + 1) % a;
        const auto& exact = by_cat_color[target_cat][attrs[cur].color];
        const auto& loose = by_cat[target_cat];
        if (!exact.empty()) {
          next = exact[r.below(exact.size())];
        } else if (!loose.empty()) {
          next = loose[r.below(loose.size())];
        } else {
          next = r.below(n);
        }
      } else {
        next = r.below(n);
      }
      cur = next;
    }
  }

  SyntheticCorpus out;
  out.dataset = core_k_filter(log, spec.core_k);
  const Dataset& ds = out.dataset;
  for (std::size_t u = 0; u < ds.sequences.size(); ++u) {
    for (std::size_t t = 0; t < ds.sequences[u].size(); ++t) {
      out.interactions.push_back({ds.user_ids[u], ds.item_ids[ds.sequences[u][t]],
                                  static_cast<std::int64_t>(1'000'000 + t)});
    }
  }
  out.image.channel = Channel::image;
  out.text.channel = Channel::text;
  out.image.values = num::DenseMatrix(ds.item_count(), spec.modality_dim);
  out.text.values = num::DenseMatrix(ds.item_count(), spec.modality_dim);
  out.attributes.resize(ds.item_count());
  for (std::size_t i = 0; i < ds.item_count(); ++i) {
    const std::size_t gen = std::stoul(ds.item_ids[i].substr(1));
    // Values pass through float32 so in-memory corpora equal their files.
    for (std::size_t c = 0; c < spec.modality_dim; ++c) {
      out.image.values(i, c) = static_cast<double>(static_cast<float>(image(gen, c)));
      out.text.values(i, c) = static_cast<double>(static_cast<float>(text(gen, c)));
    }
    out.attributes[i] = attrs[gen];
  }
  return out;
}

}  // namespace kdsr::corpus
