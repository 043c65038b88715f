// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "kdsr/error.hpp"
#include "kdsr/numerics/dense_matrix.hpp"

namespace kdsr::corpus {

enum class Channel : std::uint32_t { image = 0, text = 1 };

constexpr std::string_view to_string(Channel c) noexcept {
  return c == Channel::image ? "image" : "text";
}

/// Frozen per-item modality vectors; row i belongs to item index i.
struct ModalityMatrix {
  Channel channel = Channel::image;
  num::DenseMatrix values;

  std::size_t items() const noexcept { return values.rows(); }
  std::size_t dim() const noexcept { return values.cols(); }
  bool operator==(const ModalityMatrix&) const = default;
};

inline constexpr std::array<char, 4> kModalityMagic{'M', 'O', 'D', 'F'};
inline constexpr std::uint32_t kModalityVersion = 1;

namespace io {

inline void put_u32(std::ostream& out, std::uint32_t v) {
  std::array<char, 4> b{};
  for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
  out.write(b.data(), 4);
}

inline void put_u64(std::ostream& out, std::uint64_t v) {
  std::array<char, 8> b{};
  for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
  out.write(b.data(), 8);
}

inline void put_f32(std::ostream& out, float v) { put_u32(out, std::bit_cast<std::uint32_t>(v)); }
inline void put_f64(std::ostream& out, double v) { put_u64(out, std::bit_cast<std::uint64_t>(v)); }

/// Little-endian reader over an in-memory buffer; throws `kind` on underrun.
class Reader {
 public:
  Reader(std::string bytes, ErrorKind kind) : bytes_(std::move(bytes)), kind_(kind) {}

  void need(std::size_t n) const {
    if (pos_ + n > bytes_.size()) {
      fail(kind_, "truncated file: needed " + std::to_string(n) + " bytes at offset " +
                      std::to_string(pos_) + ", file has " + std::to_string(bytes_.size()));
    }
  }
  std::string bytes(std::size_t n) {
    need(n);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) {
      v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    }
    pos_ += 4;
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) {
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    }
    pos_ += 8;
    return v;
  }
  float f32() { return std::bit_cast<float>(u32()); }
  double f64() { return std::bit_cast<double>(u64()); }
  bool at_end() const noexcept { return pos_ == bytes_.size(); }
  std::size_t remaining() const noexcept { return bytes_.size() - pos_; }

 private:
  std::string bytes_;
  std::size_t pos_ = 0;
  ErrorKind kind_;
};

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::file, "cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace io

inline void write_modality_binary(const std::filesystem::path& path, const ModalityMatrix& m) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::file, "cannot write " + path.string());
  out.write(kModalityMagic.data(), 4);
  io::put_u32(out, kModalityVersion);
  io::put_u32(out, static_cast<std::uint32_t>(m.items()));
  io::put_u32(out, static_cast<std::uint32_t>(m.dim()));
  for (double v : m.values.values()) io::put_f32(out, static_cast<float>(v));
  if (!out) fail(ErrorKind::file, "write failed for " + path.string());
}

inline void write_modality_csv(const std::filesystem::path& path, const ModalityMatrix& m) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) fail(ErrorKind::file, "cannot write " + path.string());
  out.precision(9);
  for (std::size_t r = 0; r < m.items(); ++r) {
    for (std::size_t c = 0; c < m.dim(); ++c) {
      if (c > 0) out << ',';
      out << static_cast<float>(m.values(r, c));
    }
    out << '\n';
  }
}

namespace detail {

inline void check_finite(const num::DenseMatrix& values, const std::string& source) {
  for (std::size_t r = 0; r < values.rows(); ++r) {
    for (std::size_t c = 0; c < values.cols(); ++c) {
      if (!std::isfinite(values(r, c))) {
        fail(ErrorKind::numeric, source + ": non-finite value at row " + std::to_string(r) +
                                     ", col " + std::to_string(c));
      }
    }
  }
}

inline num::DenseMatrix parse_modality_binary(const std::string& bytes, const std::string& source) {
  io::Reader in(bytes, ErrorKind::parse);
  in.bytes(4);
  const std::uint32_t version = in.u32();
  if (version != kModalityVersion) {
    fail(ErrorKind::parse, source + ": unsupported modality version " + std::to_string(version));
  }
  const std::uint32_t n = in.u32();
  const std::uint32_t dim = in.u32();
  const std::size_t count = static_cast<std::size_t>(n) * dim;
  in.need(count * 4);
  num::DenseMatrix m(n, dim);
  for (std::size_t i = 0; i < count; ++i) m[i] = static_cast<double>(in.f32());
  if (!in.at_end()) fail(ErrorKind::parse, source + ": trailing bytes after modality payload");
  return m;
}

// Values are rounded through float32 so a CSV file and its binary twin load
// to identical matrices.
inline num::DenseMatrix parse_modality_csv(const std::string& text, const std::string& source) {
  std::vector<double> values;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::size_t count = 0;
    std::size_t start = 0;
    while (start <= line.size()) {
      const std::size_t comma = std::min(line.find(',', start), line.size());
      const std::string field = line.substr(start, comma - start);
      try {
        std::size_t used = 0;
        const double v = std::stod(field, &used);
        if (used != field.size()) throw std::invalid_argument(field);
        values.push_back(static_cast<double>(static_cast<float>(v)));
      } catch (const std::exception&) {
        fail(ErrorKind::parse, source + ": line " + std::to_string(line_no) + ": bad number '" +
                                   field + "'");
      }
      ++count;
      start = comma + 1;
    }
    if (rows == 0) {
      cols = count;
    } else if (count != cols) {
      fail(ErrorKind::parse, source + ": line " + std::to_string(line_no) + " has " +
                                 std::to_string(count) + " values, expected " + std::to_string(cols));
    }
    ++rows;
  }
  return num::DenseMatrix(rows, cols, std::move(values));
}

}  // namespace detail

/// Loads the "MODF" binary format, or comma-separated rows when the magic is
/// absent. Throws shape error when the row count differs from expected_items.
inline ModalityMatrix load_modality_matrix(const std::filesystem::path& path,
                                           std::size_t expected_items, Channel channel) {
  const std::string bytes = io::read_file(path);
  const std::string source = path.string();
  const bool binary = bytes.size() >= 4 && std::equal(kModalityMagic.begin(), kModalityMagic.end(), bytes.begin());
  ModalityMatrix m;
  m.channel = channel;
  m.values = binary ? detail::parse_modality_binary(bytes, source)
                    : detail::parse_modality_csv(bytes, source);
  if (m.items() != expected_items) {
    fail(ErrorKind::shape, source + ": modality matrix has " + std::to_string(m.items()) +
                               " rows but the dataset has " + std::to_string(expected_items) +
                               " items");
  }
  detail::check_finite(m.values, source);
  return m;
}

}  // namespace kdsr::corpus
