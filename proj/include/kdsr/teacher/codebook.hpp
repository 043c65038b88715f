// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "kdsr/error.hpp"
#include "kdsr/numerics/dense_matrix.hpp"
#include "kdsr/rng.hpp"

namespace kdsr::teacher {

using num::DenseMatrix;

enum class QuantizerKind : std::uint32_t { vq = 0, kmeans = 1 };

constexpr std::string_view to_string(QuantizerKind k) noexcept {
  return k == QuantizerKind::vq ? "vq" : "kmeans";
}

inline QuantizerKind parse_quantizer(std::string_view s) {
  if (s == "vq") return QuantizerKind::vq;
  if (s == "kmeans") return QuantizerKind::kmeans;
  fail(ErrorKind::config, "unknown quantizer '" + std::string(s) + "'");
}

/// x codewords of dimension D; each one names a correlation pattern.
struct Codebook {
  DenseMatrix codewords;  // x rows, D columns
  QuantizerKind kind = QuantizerKind::vq;
  // Final-assignment histogram over the fitting vectors.
  std::vector<std::uint64_t> usage;
  // k-means only: quantization error observed at each assignment step.
  std::vector<double> error_trace;

  std::size_t size() const noexcept { return codewords.rows(); }
  std::size_t dim() const noexcept { return codewords.cols(); }
};

inline double squared_distance(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

inline std::uint32_t nearest(const DenseMatrix& codewords, std::span<const double> v) {
  std::uint32_t best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < codewords.rows(); ++k) {
    const double d = squared_distance(codewords.row(k), v);
    if (d < best_d) {  // strict: ties keep the lower index
      best_d = d;
      best = static_cast<std::uint32_t>(k);
    }
  }
  return best;
}

/// Index of the Euclidean-nearest codeword; ties go to the lowest index.
inline std::uint32_t assign_code(const Codebook& cb, std::span<const double> v) {
  if (v.size() != cb.dim()) {
    fail(ErrorKind::dimension, "assign_code: vector has " + std::to_string(v.size()) +
                                   " dims, codebook " + std::to_string(cb.dim()));
  }
  return nearest(cb.codewords, v);
}

inline std::vector<std::uint64_t> usage_histogram(const DenseMatrix& codewords,
                                                  const DenseMatrix& vectors) {
  std::vector<std::uint64_t> usage(codewords.rows(), 0);
  for (std::size_t i = 0; i < vectors.rows(); ++i) ++usage[nearest(codewords, vectors.row(i))];
  return usage;
}

inline double quantization_error(const DenseMatrix& codewords, const DenseMatrix& vectors) {
  double total = 0.0;
  for (std::size_t i = 0; i < vectors.rows(); ++i) {
    const auto k = nearest(codewords, vectors.row(i));
    total += squared_distance(codewords.row(k), vectors.row(i));
  }
  return total;
}

/// Lloyd's algorithm. Centroids start at x distinct input vectors; an empty
/// cluster is reseeded with the point farthest from its current centroid.
inline Codebook fit_codebook_kmeans(const DenseMatrix& vectors, std::size_t x, std::size_t iters,
                                    std::uint64_t seed) {
  const std::size_t n = vectors.rows();
  const std::size_t dim = vectors.cols();
  if (x < 1) fail(ErrorKind::argument, "codebook size must be >= 1");
  if (n < x) {
    fail(ErrorKind::argument, "k-means needs at least " + std::to_string(x) + " vectors, got " +
                                  std::to_string(n));
  }
  Rng rng = Rng::stream(seed, "kmeans");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (std::size_t i = 0; i < x; ++i) std::swap(order[i], order[i + rng.below(n - i)]);

  Codebook cb;
  cb.kind = QuantizerKind::kmeans;
  cb.codewords = DenseMatrix(x, dim);
  for (std::size_t k = 0; k < x; ++k) {
    const auto src = vectors.row(order[k]);
    std::copy(src.begin(), src.end(), cb.codewords.row(k).begin());
  }

  std::vector<std::uint32_t> assign(n, 0);
  std::vector<double> dist(n, 0.0);
  for (std::size_t it = 0; it < std::max<std::size_t>(iters, 1); ++it) {
    bool changed = it == 0;
    double err = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const auto k = nearest(cb.codewords, vectors.row(i));
      if (k != assign[i]) changed = true;
      assign[i] = k;
      dist[i] = squared_distance(cb.codewords.row(k), vectors.row(i));
      err += dist[i];
    }
    cb.error_trace.push_back(err);
    if (!changed || it + 1 >= iters) break;

    DenseMatrix sums(x, dim);
    std::vector<std::size_t> counts(x, 0);
    for (std::size_t i = 0; i < n; ++i) {
      auto dst = sums.row(assign[i]);
      const auto src = vectors.row(i);
      for (std::size_t c = 0; c < dim; ++c) dst[c] += src[c];
      ++counts[assign[i]];
    }
    std::vector<bool> taken(n, false);
    for (std::size_t k = 0; k < x; ++k) {
      auto dst = cb.codewords.row(k);
      if (counts[k] > 0) {
        const auto src = sums.row(k);
        for (std::size_t c = 0; c < dim; ++c) dst[c] = src[c] / static_cast<double>(counts[k]);
        continue;
      }
      std::size_t far = n;
      for (std::size_t i = 0; i < n; ++i) {
        if (!taken[i] && (far == n || dist[i] > dist[far])) far = i;
      }
      taken[far] = true;
      const auto src = vectors.row(far);
      std::copy(src.begin(), src.end(), dst.begin());
    }
  }
  cb.usage = usage_histogram(cb.codewords, vectors);
  return cb;
}

/// Online vector quantisation. Codewords start from a small Gaussian; each
/// streamed vector pulls its nearest codeword toward it with rate `rate`.
/// Codewords unused for a whole pass are reseeded to a random data vector.
inline Codebook fit_codebook_vq(const DenseMatrix& vectors, std::size_t x, std::size_t passes,
                                double rate, std::uint64_t seed) {
  if (x < 2) fail(ErrorKind::argument, "VQ codebook size must be >= 2");
  if (!(rate > 0.0 && rate <= 1.0)) fail(ErrorKind::argument, "VQ rate must lie in (0, 1]");
  const std::size_t n = vectors.rows();
  const std::size_t dim = vectors.cols();
  Rng rng = Rng::stream(seed, "vq");
  Codebook cb;
  cb.kind = QuantizerKind::vq;
  cb.codewords = DenseMatrix(x, dim);
  for (double& v : cb.codewords.values()) v = rng.normal(0.0, 0.01);
  if (n == 0) {
    cb.usage.assign(x, 0);
    return cb;
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (std::size_t pass = 0; pass < passes; ++pass) {
    rng.shuffle(std::span<std::size_t>(order));
    std::vector<std::uint64_t> hits(x, 0);
    for (std::size_t i : order) {
      const auto src = vectors.row(i);
      const auto k = nearest(cb.codewords, src);
      auto dst = cb.codewords.row(k);
      for (std::size_t c = 0; c < dim; ++c) dst[c] = (1.0 - rate) * dst[c] + rate * src[c];
      ++hits[k];
    }
    for (std::size_t k = 0; k < x; ++k) {
      if (hits[k] != 0) continue;
      const auto src = vectors.row(rng.below(n));
      std::copy(src.begin(), src.end(), cb.codewords.row(k).begin());
    }
  }
  cb.usage = usage_histogram(cb.codewords, vectors);
  return cb;
}

}  // namespace kdsr::teacher
