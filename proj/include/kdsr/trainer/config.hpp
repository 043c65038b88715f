// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <cstdio>
#include <limits>
#include <string>

#include "kdsr/backbone/network.hpp"
#include "kdsr/corpus/modality.hpp"
#include "kdsr/error.hpp"
#include "kdsr/teacher/signals.hpp"

namespace kdsr::trainer {

inline constexpr std::size_t kUnlimitedPairs = std::numeric_limits<std::size_t>::max();

struct TrainConfig {
  std::size_t dim = 128;
  std::size_t batch = 512;
  std::size_t epochs = 50;
  double lr = 0.001;           // epsilon
  std::size_t async_epochs = 5;  // eta
  double lambda1 = 1.0;
  double lambda2 = 0.5;
  double tau = 1.5;
  std::size_t pair_cap = 64;
  double clip_norm = 5.0;
  std::size_t grad_chunks = 8;
  bool use_modality = true;
  std::uint64_t seed = 1;
  backbone::BackboneConfig backbone;
  teacher::TeacherConfig teacher;
  std::size_t drift_pairs = 10'000;
  corpus::Channel drift_channel = corpus::Channel::image;

  bool distills() const noexcept { return use_modality && (lambda1 > 0.0 || lambda2 > 0.0); }

  void validate() const {
    auto need = [](bool ok, const std::string& what) {
      if (!ok) fail(ErrorKind::config, what);
    };
    need(dim >= 1, "trainer dim must be >= 1");
    need(batch >= 1, "batch size must be >= 1");
    need(lr > 0.0, "learning rate must be > 0");
    need(async_epochs >= 1, "async epochs must be >= 1");
    need(lambda1 >= 0.0 && lambda2 >= 0.0, "lambda weights must be >= 0");
    need(tau > 0.0, "temperature must be > 0");
    need(pair_cap >= 1, "pair cap must be >= 1");
    need(clip_norm > 0.0, "clip norm must be > 0");
    need(grad_chunks >= 1, "grad chunks must be >= 1");
    need(drift_pairs >= 2, "drift pairs must be >= 2");
    need(backbone.window >= 1, "readout window must be >= 1");
    need(backbone.max_length >= 1, "max length must be >= 1");
    if (backbone.kind == backbone::BackboneKind::attention) {
      need(backbone.layers >= 1, "attention needs at least one layer");
      need(backbone.heads >= 1 && dim % backbone.heads == 0,
           "attention heads " + std::to_string(backbone.heads) + " must divide dim " +
               std::to_string(dim));
    }
    need(teacher.compressed_dim == dim,
         "teacher compressed dim " + std::to_string(teacher.compressed_dim) +
             " must equal embedding dim " + std::to_string(dim));
    need(dim % teacher.segments == 0, "embedding dim " + std::to_string(dim) +
                                          " is not divisible by " +
                                          std::to_string(teacher.segments) + " segments");
    need(teacher.codes >= 2, "codebook needs at least 2 codes");
  }

  /// Canonical text of everything that shapes training; epochs and file
  /// locations are left out so a run can be extended.
  std::string canonical() const {
    char buf[64];
    auto real = [&buf](double v) {
      std::snprintf(buf, sizeof buf, "%.17g", v);
      return std::string(buf);
    };
    std::string s;
    auto add = [&s](const char* key, const std::string& v) { s += std::string(key) + "=" + v + "\n"; };
    add("dim", std::to_string(dim));
    add("batch", std::to_string(batch));
    add("lr", real(lr));
    add("async_epochs", std::to_string(async_epochs));
    add("lambda1", real(lambda1));
    add("lambda2", real(lambda2));
    add("tau", real(tau));
    add("pair_cap", std::to_string(pair_cap));
    add("clip_norm", real(clip_norm));
    add("grad_chunks", std::to_string(grad_chunks));
    add("modality", use_modality ? "1" : "0");
    add("seed", std::to_string(seed));
    add("backbone", std::string(backbone::to_string(backbone.kind)));
    add("layers", std::to_string(backbone.layers));
    add("heads", std::to_string(backbone.heads));
    add("window", std::to_string(backbone.window));
    add("max_length", std::to_string(backbone.max_length));
    add("segments", std::to_string(teacher.segments));
    add("codes", std::to_string(teacher.codes));
    add("scoring", std::string(teacher::to_string(teacher.scoring)));
    add("quantizer", std::string(teacher::to_string(teacher.quantizer)));
    add("drift_pairs", std::to_string(drift_pairs));
    add("drift_channel", std::string(corpus::to_string(drift_channel)));
    return s;
  }

  /// FNV-1a over canonical().
  std::uint64_t hash() const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : canonical()) {
      h ^= c;
      h *= 0x100000001b3ULL;
    }
    return h;
  }
};

}  // namespace kdsr::trainer
