// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <memory>
#include <mutex>
#include <numeric>
#include <shared_mutex>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "kdsr/corpus/dataset.hpp"
#include "kdsr/corpus/modality.hpp"
#include "kdsr/error.hpp"
#include "kdsr/numerics/dense_matrix.hpp"
#include "kdsr/rng.hpp"
#include "kdsr/teacher/autoencoder.hpp"
#include "kdsr/teacher/codebook.hpp"
#include "kdsr/teacher/scoring.hpp"

namespace kdsr::teacher {

/// Per-segment scores of two compressed vectors split into D equal slices.
/// A zero slice under cosine scores 0.
inline std::vector<double> correlation_vector(ScoringKind kind, std::span<const double> u,
                                              std::span<const double> v, std::size_t segments) {
  if (u.size() != v.size()) {
    fail(ErrorKind::dimension, "correlation_vector dimension mismatch: " +
                                   std::to_string(u.size()) + " vs " + std::to_string(v.size()));
  }
  if (segments == 0 || u.size() % segments != 0) {
    fail(ErrorKind::config, "dimension " + std::to_string(u.size()) + " is not divisible by " +
                                std::to_string(segments) + " segments");
  }
  const std::size_t w = u.size() / segments;
  std::vector<double> out(segments, 0.0);
  for (std::size_t s = 0; s < segments; ++s) {
    const auto a = u.subspan(s * w, w);
    const auto b = v.subspan(s * w, w);
    if (kind == ScoringKind::cosine && (num::norm(a) == 0.0 || num::norm(b) == 0.0)) continue;
    out[s] = holistic_score(kind, a, b);
  }
  return out;
}

struct TeacherConfig {
  std::size_t compressed_dim = 128;
  std::size_t segments = 8;
  std::size_t codes = 100;
  ScoringKind scoring = ScoringKind::cosine;
  QuantizerKind quantizer = QuantizerKind::vq;
  std::size_t ae_epochs = 300;
  double ae_lr = 0.01;
  std::size_t kmeans_iters = 50;
  std::size_t vq_passes = 10;
  double vq_rate = 0.05;
  std::size_t sample_size = 200'000;
  std::uint64_t seed = 1;

  void validate(std::size_t modality_dim) const {
    if (compressed_dim == 0 || compressed_dim > modality_dim) {
      fail(ErrorKind::config, "compressed dim " + std::to_string(compressed_dim) +
                                  " must lie in [1, " + std::to_string(modality_dim) + "]");
    }
    if (segments == 0 || compressed_dim % segments != 0) {
      fail(ErrorKind::config, "compressed dim " + std::to_string(compressed_dim) +
                                  " is not divisible by " + std::to_string(segments) + " segments");
    }
    if (codes < 2) fail(ErrorKind::config, "codebook needs at least 2 codes");
    if (!(ae_lr > 0.0)) fail(ErrorKind::config, "autoencoder lr must be > 0");
    if (!(vq_rate > 0.0 && vq_rate <= 1.0)) fail(ErrorKind::config, "vq rate must lie in (0, 1]");
    if (sample_size == 0) fail(ErrorKind::config, "teacher sample size must be >= 1");
  }
};

struct PairSignal {
  double score = 0.0;
  std::uint32_t code = 0;

  bool operator==(const PairSignal&) const = default;
};

/// Distilled knowledge for one modality channel.
class TeacherSignals {
 public:
  TeacherSignals() = default;
  TeacherSignals(corpus::Channel channel, Autoencoder ae, DenseMatrix compressed,
                 ScoringKind scoring, std::size_t segments, Codebook codebook)
      : channel_(channel),
        ae_(std::move(ae)),
        compressed_(std::move(compressed)),
        scoring_(scoring),
        segments_(segments),
        codebook_(std::move(codebook)) {
    if (codebook_.dim() != segments_) {
      fail(ErrorKind::dimension, "codebook dimension " + std::to_string(codebook_.dim()) +
                                     " != segments " + std::to_string(segments_));
    }
  }

  corpus::Channel channel() const noexcept { return channel_; }
  const Autoencoder& autoencoder() const noexcept { return ae_; }
  const DenseMatrix& compressed() const noexcept { return compressed_; }
  ScoringKind scoring() const noexcept { return scoring_; }
  std::size_t segments() const noexcept { return segments_; }
  const Codebook& codebook() const noexcept { return codebook_; }
  std::size_t items() const noexcept { return compressed_.rows(); }

  /// (r_ij, c_ij) for an unordered pair; computed once, then cached.
  PairSignal distill_pair(std::size_t i, std::size_t j) const {
    const std::size_t n = items();
    if (i >= n || j >= n) {
      fail(ErrorKind::lookup, "pair (" + std::to_string(i) + ", " + std::to_string(j) +
                                  ") out of range for " + std::to_string(n) + " items");
    }
    if (i == j) fail(ErrorKind::self_pair, "item " + std::to_string(i) + " paired with itself");
    if (j < i) std::swap(i, j);
    const std::uint64_t key = static_cast<std::uint64_t>(i) * n + j;
    {
      std::shared_lock lock(cache_->mutex);
      if (auto it = cache_->map.find(key); it != cache_->map.end()) return it->second;
    }
    const PairSignal s = compute(i, j);
    std::unique_lock lock(cache_->mutex);
    return cache_->map.try_emplace(key, s).first->second;
  }

  /// Uncached evaluation, canonical order i < j.
  PairSignal compute(std::size_t i, std::size_t j) const {
    const auto a = compressed_.row(i);
    const auto b = compressed_.row(j);
    PairSignal s;
    s.score = holistic_score(scoring_, a, b);
    s.code = assign_code(codebook_, correlation_vector(scoring_, a, b, segments_));
    return s;
  }

 private:
  struct Cache {
    std::shared_mutex mutex;
    std::unordered_map<std::uint64_t, PairSignal> map;
  };

  corpus::Channel channel_ = corpus::Channel::image;
  Autoencoder ae_;
  DenseMatrix compressed_;
  ScoringKind scoring_ = ScoringKind::cosine;
  std::size_t segments_ = 1;
  Codebook codebook_;
  std::shared_ptr<Cache> cache_ = std::make_shared<Cache>();
};

/// Unordered distinct-item pairs co-occurring in a training sequence, with
/// repetition across sequences; at most `limit`, sampled without replacement.
inline std::vector<std::pair<std::uint32_t, std::uint32_t>> within_sequence_pairs(
    std::span<const corpus::Sequence> sequences, std::size_t limit, std::uint64_t seed) {
  std::vector<std::pair<std::uint32_t, std::uint32_t>> pairs;
  for (const auto& seq : sequences) {
    std::vector<std::uint32_t> items(seq.begin(), seq.end());
    std::sort(items.begin(), items.end());
    items.erase(std::unique(items.begin(), items.end()), items.end());
    for (std::size_t a = 0; a < items.size(); ++a) {
      for (std::size_t b = a + 1; b < items.size(); ++b) pairs.emplace_back(items[a], items[b]);
    }
  }
  if (pairs.size() > limit) {
    Rng rng = Rng::stream(seed, "teacher-pairs");
    for (std::size_t i = 0; i < limit; ++i) std::swap(pairs[i], pairs[i + rng.below(pairs.size() - i)]);
    pairs.resize(limit);
  }
  return pairs;
}

/// Trains the autoencoder, compresses, and fits the codebook on correlation
/// vectors of within-sequence training pairs.
inline TeacherSignals build_teacher(std::span<const corpus::Sequence> train,
                                    const corpus::ModalityMatrix& m, const TeacherConfig& cfg) {
  cfg.validate(m.dim());
  AutoencoderOptions ae_opt;
  ae_opt.compressed_dim = cfg.compressed_dim;
  ae_opt.segments = cfg.segments;
  ae_opt.epochs = cfg.ae_epochs;
  ae_opt.lr = cfg.ae_lr;
  ae_opt.seed = Rng::stream(cfg.seed, "teacher").fork(static_cast<std::uint64_t>(m.channel)).next_u64();
  Autoencoder ae = train_autoencoder(m.values, ae_opt);
  DenseMatrix compressed = compress(ae, m.values);

  const auto pairs = within_sequence_pairs(train, cfg.sample_size, ae_opt.seed);
  if (pairs.size() < cfg.codes && cfg.quantizer == QuantizerKind::kmeans) {
    fail(ErrorKind::argument, "only " + std::to_string(pairs.size()) +
                                  " training pairs for a k-means codebook of " +
                                  std::to_string(cfg.codes));
  }
  DenseMatrix vectors(pairs.size(), cfg.segments);
  for (std::size_t p = 0; p < pairs.size(); ++p) {
    const auto cv = correlation_vector(cfg.scoring, compressed.row(pairs[p].first),
                                       compressed.row(pairs[p].second), cfg.segments);
    std::copy(cv.begin(), cv.end(), vectors.row(p).begin());
  }
  Codebook cb = cfg.quantizer == QuantizerKind::kmeans
                    ? fit_codebook_kmeans(vectors, cfg.codes, cfg.kmeans_iters, ae_opt.seed)
                    : fit_codebook_vq(vectors, cfg.codes, cfg.vq_passes, cfg.vq_rate, ae_opt.seed);
  return TeacherSignals(m.channel, std::move(ae), std::move(compressed), cfg.scoring, cfg.segments,
                        std::move(cb));
}

inline constexpr std::array<char, 4> kTeacherMagic{'K', 'D', 'T', 'C'};
inline constexpr std::uint32_t kTeacherVersion = 1;

inline void save_teacher(const std::filesystem::path& path, const TeacherSignals& t) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::file, "cannot write " + path.string());
  const Autoencoder& ae = t.autoencoder();
  const Codebook& cb = t.codebook();
  out.write(kTeacherMagic.data(), 4);
  corpus::io::put_u32(out, kTeacherVersion);
  corpus::io::put_u32(out, static_cast<std::uint32_t>(t.channel()));
  corpus::io::put_u32(out, static_cast<std::uint32_t>(ae.input_dim()));
  corpus::io::put_u32(out, static_cast<std::uint32_t>(ae.compressed_dim()));
  corpus::io::put_u32(out, static_cast<std::uint32_t>(t.segments()));
  corpus::io::put_u32(out, static_cast<std::uint32_t>(cb.size()));
  corpus::io::put_u32(out, static_cast<std::uint32_t>(t.scoring()));
  corpus::io::put_u32(out, static_cast<std::uint32_t>(cb.kind));
  for (const DenseMatrix* w : {&ae.enc_w.value, &ae.enc_b.value, &ae.dec_w.value, &ae.dec_b.value,
                               &cb.codewords}) {
    for (double v : w->values()) corpus::io::put_f64(out, v);
  }
  for (std::uint64_t c : cb.usage) corpus::io::put_u64(out, c);
  corpus::io::put_f64(out, ae.initial_error);
  corpus::io::put_f64(out, ae.final_error);
  if (!out) fail(ErrorKind::file, "write failed for " + path.string());
}

/// Reads a teacher artifact and recompresses `m` with the stored encoder.
inline TeacherSignals load_teacher(const std::filesystem::path& path,
                                   const corpus::ModalityMatrix& m) {
  corpus::io::Reader in(corpus::io::read_file(path), ErrorKind::parse);
  const std::string where = path.string();
  if (in.remaining() < 4 || in.bytes(4) != std::string(kTeacherMagic.data(), 4)) {
    fail(ErrorKind::parse, where + ": not a teacher artifact");
  }
  if (const auto v = in.u32(); v != kTeacherVersion) {
    fail(ErrorKind::parse, where + ": unsupported teacher version " + std::to_string(v));
  }
  const auto channel = in.u32();
  const std::size_t d_m = in.u32();
  const std::size_t d_c = in.u32();
  const std::size_t segments = in.u32();
  const std::size_t codes = in.u32();
  const auto scoring = in.u32();
  const auto quantizer = in.u32();
  if (channel > 1 || scoring > 3 || quantizer > 1 || segments == 0 || d_c % segments != 0) {
    fail(ErrorKind::parse, where + ": corrupt teacher header");
  }
  if (static_cast<corpus::Channel>(channel) != m.channel) {
    fail(ErrorKind::shape, where + ": artifact is for the " +
                               std::string(corpus::to_string(static_cast<corpus::Channel>(channel))) +
                               " channel");
  }
  if (d_m != m.dim()) {
    fail(ErrorKind::shape, where + ": artifact expects modality dim " + std::to_string(d_m) +
                               ", matrix has " + std::to_string(m.dim()));
  }
  auto read_matrix = [&](std::size_t r, std::size_t c) {
    in.need(r * c * 8);
    DenseMatrix out(r, c);
    for (double& v : out.values()) v = in.f64();
    return out;
  };
  Autoencoder ae;
  ae.enc_w = Parameter("ae.enc.w", num::ParamGroup::other, read_matrix(d_m, d_c));
  ae.enc_b = Parameter("ae.enc.b", num::ParamGroup::other, read_matrix(1, d_c));
  ae.dec_w = Parameter("ae.dec.w", num::ParamGroup::other, read_matrix(d_c, d_m));
  ae.dec_b = Parameter("ae.dec.b", num::ParamGroup::other, read_matrix(1, d_m));
  Codebook cb;
  cb.kind = static_cast<QuantizerKind>(quantizer);
  cb.codewords = read_matrix(codes, segments);
  cb.usage.resize(codes);
  for (auto& c : cb.usage) c = in.u64();
  ae.initial_error = in.f64();
  ae.final_error = in.f64();
  if (!in.at_end()) fail(ErrorKind::parse, where + ": trailing bytes in teacher artifact");
  DenseMatrix compressed = compress(ae, m.values);
  return TeacherSignals(m.channel, std::move(ae), std::move(compressed),
                        static_cast<ScoringKind>(scoring), segments, std::move(cb));
}

}  // namespace kdsr::teacher
