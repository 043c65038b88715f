// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "kdsr/corpus/modality.hpp"
#include "kdsr/error.hpp"
#include "kdsr/eval/report.hpp"
#include "kdsr/rng.hpp"
#include "kdsr/trainer/trainer.hpp"

namespace kdsr::trainer {

inline constexpr std::array<char, 4> kCheckpointMagic{'K', 'D', 'C', 'K'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct NamedMatrix {
  std::string name;
  DenseMatrix value;
};

struct AdamBlock {
  std::string name;
  std::uint64_t step = 0;
  DenseMatrix first;
  DenseMatrix second;
};

struct RngBlock {
  std::string name;
  Rng::State state;
};

struct Checkpoint {
  std::uint64_t config_hash = 0;
  std::uint32_t epoch = 0;
  std::vector<NamedMatrix> params;
  std::vector<AdamBlock> adam;
  std::vector<RngBlock> rngs;
  std::vector<ReportRow> rows;
};

/// Streams for the next epoch; training derives all randomness from these.
inline std::vector<RngBlock> rng_blocks(const TrainConfig& cfg, std::uint32_t epoch) {
  return {{"batches", Rng::stream(cfg.seed, "batches").fork(epoch).state()},
          {"pairs", Rng::stream(cfg.seed, "pairs").fork(epoch).state()}};
}

namespace detail {

inline void put_name(std::ostream& out, const std::string& name) {
  corpus::io::put_u32(out, static_cast<std::uint32_t>(name.size()));
  out.write(name.data(), static_cast<std::streamsize>(name.size()));
}

inline void put_matrix_values(std::ostream& out, const DenseMatrix& m) {
  for (double v : m.values()) corpus::io::put_f64(out, v);
}

inline std::string get_name(corpus::io::Reader& in) {
  const std::uint32_t n = in.u32();
  return in.bytes(n);
}

inline DenseMatrix get_matrix(corpus::io::Reader& in, std::size_t rows, std::size_t cols) {
  in.need(rows * cols * 8);
  DenseMatrix m(rows, cols);
  for (double& v : m.values()) v = in.f64();
  return m;
}

}  // namespace detail

inline std::string encode_checkpoint(const TrainState& st, const TrainConfig& cfg) {
  std::ostringstream out(std::ios::binary);
  using namespace corpus::io;
  out.write(kCheckpointMagic.data(), 4);
  put_u32(out, kCheckpointVersion);
  put_u64(out, cfg.hash());
  put_u32(out, st.epoch);
  auto params = const_cast<Model&>(st.model).parameters();
  put_u32(out, static_cast<std::uint32_t>(params.size()));
  for (const Parameter* p : params) {
    detail::put_name(out, p->name);
    put_u32(out, static_cast<std::uint32_t>(p->value.rows()));
    put_u32(out, static_cast<std::uint32_t>(p->value.cols()));
    detail::put_matrix_values(out, p->value);
  }
  put_u32(out, static_cast<std::uint32_t>(st.adam.size()));
  for (std::size_t i = 0; i < st.adam.size(); ++i) {
    detail::put_name(out, params[i]->name);
    put_u64(out, st.adam[i].step);
    detail::put_matrix_values(out, st.adam[i].first_moment);
    detail::put_matrix_values(out, st.adam[i].second_moment);
  }
  const auto rngs = rng_blocks(cfg, st.epoch);
  put_u32(out, static_cast<std::uint32_t>(rngs.size()));
  for (const auto& r : rngs) {
    detail::put_name(out, r.name);
    put_u64(out, r.state.key);
    put_u64(out, r.state.counter);
  }
  const std::string rows = eval::rows_to_json(st.rows).dump();
  put_u64(out, rows.size());
  out.write(rows.data(), static_cast<std::streamsize>(rows.size()));
  return out.str();
}

/// Written to a sibling temporary and renamed into place.
inline void save_checkpoint(const std::filesystem::path& path, const TrainState& st,
                            const TrainConfig& cfg) {
  const std::string bytes = encode_checkpoint(st, cfg);
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorKind::file, "cannot write " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) fail(ErrorKind::file, "write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

inline Checkpoint decode_checkpoint(const std::string& bytes, const std::string& where) {
  corpus::io::Reader in(bytes, ErrorKind::checkpoint);
  if (in.remaining() < 4 || in.bytes(4) != std::string(kCheckpointMagic.data(), 4)) {
    fail(ErrorKind::checkpoint, where + ": not a checkpoint file");
  }
  if (const auto v = in.u32(); v != kCheckpointVersion) {
    fail(ErrorKind::checkpoint, where + ": unsupported checkpoint version " + std::to_string(v));
  }
  Checkpoint ck;
  ck.config_hash = in.u64();
  ck.epoch = in.u32();
  const std::uint32_t np = in.u32();
  for (std::uint32_t i = 0; i < np; ++i) {
    NamedMatrix m;
    m.name = detail::get_name(in);
    const std::uint32_t r = in.u32();
    const std::uint32_t c = in.u32();
    m.value = detail::get_matrix(in, r, c);
    ck.params.push_back(std::move(m));
  }
  const std::uint32_t na = in.u32();
  if (na != np) fail(ErrorKind::checkpoint, where + ": optimizer state count mismatch");
  for (std::uint32_t i = 0; i < na; ++i) {
    AdamBlock a;
    a.name = detail::get_name(in);
    if (a.name != ck.params[i].name) {
      fail(ErrorKind::checkpoint, where + ": optimizer block " + a.name + " out of order");
    }
    a.step = in.u64();
    const auto& shape = ck.params[i].value;
    a.first = detail::get_matrix(in, shape.rows(), shape.cols());
    a.second = detail::get_matrix(in, shape.rows(), shape.cols());
    ck.adam.push_back(std::move(a));
  }
  const std::uint32_t nr = in.u32();
  for (std::uint32_t i = 0; i < nr; ++i) {
    RngBlock r;
    r.name = detail::get_name(in);
    r.state.key = in.u64();
    r.state.counter = in.u64();
    ck.rngs.push_back(std::move(r));
  }
  const std::uint64_t len = in.u64();
  const std::string rows = in.bytes(len);
  if (!in.at_end()) fail(ErrorKind::checkpoint, where + ": trailing bytes");
  try {
    ck.rows = eval::rows_from_json(eval::Json::parse(rows));
  } catch (const eval::Json::exception& e) {
    fail(ErrorKind::checkpoint, where + ": corrupt report rows (" + e.what() + ")");
  }
  return ck;
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  return decode_checkpoint(corpus::io::read_file(path), path.string());
}

/// Rebuilds a training state from a checkpoint. The checkpoint must come
/// from the same training configuration.
inline TrainState restore(const Checkpoint& ck, const TrainConfig& cfg, const RunContext& ctx) {
  if (ck.config_hash != cfg.hash()) {
    fail(ErrorKind::checkpoint, "checkpoint was written under a different training configuration");
  }
  TrainState st;
  st.model = init_model(cfg, ctx.split->item_count, ctx.teachers);
  const auto params = st.model.parameters();
  if (params.size() != ck.params.size()) {
    fail(ErrorKind::checkpoint, "checkpoint holds " + std::to_string(ck.params.size()) +
                                    " parameters, model has " + std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& src = ck.params[i];
    if (src.name != params[i]->name || !src.value.same_shape(params[i]->value)) {
      fail(ErrorKind::checkpoint, "checkpoint parameter " + src.name + " " +
                                      src.value.shape_string() + " does not match model parameter " +
                                      params[i]->name + " " + params[i]->value.shape_string());
    }
    params[i]->value = src.value;
    num::AdamState a(*params[i]);
    a.step = ck.adam[i].step;
    a.first_moment = ck.adam[i].first;
    a.second_moment = ck.adam[i].second;
    st.adam.push_back(std::move(a));
  }
  st.epoch = ck.epoch;
  st.rows = ck.rows;
  return st;
}

}  // namespace kdsr::trainer
