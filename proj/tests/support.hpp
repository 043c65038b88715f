// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <filesystem>
#include <memory>
#include <string>
#include <unistd.h>
#include <vector>

#include "kdsr/kdsr.hpp"

namespace kdsr::testing {

namespace fs = std::filesystem;
using num::DenseMatrix;
using num::Parameter;

class TempDir {
 public:
  TempDir() {
    static std::atomic<int> counter{0};
    path_ = fs::temp_directory_path() /
            ("kdsr-test-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const fs::path& path() const { return path_; }
  fs::path operator/(const std::string& name) const { return path_ / name; }

 private:
  fs::path path_;
};

inline DenseMatrix random_matrix(std::size_t r, std::size_t c, Rng& rng, double scale = 1.0) {
  DenseMatrix m(r, c);
  for (double& v : m.values()) v = rng.normal(0.0, scale);
  return m;
}

inline double max_abs_diff(const DenseMatrix& a, const DenseMatrix& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

// Plain reference implementations, written independently of the library.
namespace oracle {

inline DenseMatrix matmul(const DenseMatrix& a, const DenseMatrix& b) {
  DenseMatrix out(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t j = 0; j < b.cols(); ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < a.cols(); ++k) s += a(i, k) * b(k, j);
      out(i, j) = s;
    }
  }
  return out;
}

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

inline double cosine(const std::vector<double>& u, const std::vector<double>& v) {
  double uv = 0.0, uu = 0.0, vv = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    uv += u[i] * v[i];
    uu += u[i] * u[i];
    vv += v[i] * v[i];
  }
  return uv / std::sqrt(uu * vv);
}

inline std::vector<double> row(const DenseMatrix& m, std::size_t r) {
  return {m.row(r).begin(), m.row(r).end()};
}

/// Rank by brute force: count excluded-free items that sort ahead under
/// (logit descending, index ascending).
inline std::size_t rank(const std::vector<double>& logits, std::size_t target,
                        const std::vector<std::uint32_t>& excluded) {
  std::vector<std::size_t> order;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    if (std::find(excluded.begin(), excluded.end(), i) == excluded.end()) order.push_back(i);
  }
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return logits[a] > logits[b]; });
  return static_cast<std::size_t>(std::find(order.begin(), order.end(), target) - order.begin()) + 1;
}

inline double softmax_xent(const std::vector<double>& logits, std::size_t target) {
  double z = 0.0;
  for (double l : logits) z += std::exp(l);
  return std::log(z) - logits[target];
}

}  // namespace oracle

/// Evaluates `build` on a fresh tape over the parameters, accumulates
/// analytic gradients, then compares them with central differences.
template <class Build>
num::GradCheckReport check_gradients(const std::vector<Parameter*>& params, Build build,
                                     num::GradCheckOptions opts = {}) {
  auto run = [&](bool grad) {
    ad::Tape tape(grad);
    num::ParameterBinding bind;
    std::vector<ad::Var> vars;
    for (Parameter* p : params) vars.push_back(bind.bind(tape, *p));
    const ad::Var root = build(tape, vars);
    if (grad) {
      tape.backward(root);
      bind.accumulate_gradients(tape);
    }
    return root.value()[0];
  };
  for (Parameter* p : params) p->zero_grad();
  run(true);
  return num::finite_diff_check([&] { return run(false); }, params, opts);
}

/// A small synthetic corpus with its split and both teachers.
struct Fixture {
  corpus::SyntheticCorpus corpus;
  corpus::SplitDataset split;
  trainer::Teachers teachers;
  trainer::TrainConfig cfg;
};

inline trainer::TrainConfig small_train_config(std::size_t dim = 8) {
  trainer::TrainConfig c;
  c.dim = dim;
  c.batch = 16;
  c.epochs = 2;
  c.lr = 0.01;
  c.pair_cap = 8;
  c.grad_chunks = 3;
  c.drift_pairs = 200;
  c.teacher.compressed_dim = dim;
  c.teacher.segments = 4;
  c.teacher.codes = 6;
  c.teacher.ae_epochs = 40;
  c.teacher.vq_passes = 3;
  return c;
}

inline corpus::SyntheticSpec small_spec(std::uint64_t seed = 3) {
  corpus::SyntheticSpec s;
  s.items = 30;
  s.users = 60;
  s.attribute_values = 3;
  s.modality_dim = 12;
  s.min_length = 4;
  s.max_length = 9;
  s.core_k = 2;
  s.seed = seed;
  return s;
}

inline Fixture make_fixture(const corpus::SyntheticSpec& spec = small_spec(),
                            trainer::TrainConfig cfg = small_train_config()) {
  Fixture f;
  f.corpus = corpus::generate_synthetic(spec);
  f.split = corpus::split_train_test(f.corpus.dataset);
  f.cfg = cfg;
  if (cfg.use_modality) {
    f.teachers.image = std::make_shared<const teacher::TeacherSignals>(
        teacher::build_teacher(f.split.train, f.corpus.image, cfg.teacher));
    f.teachers.text = std::make_shared<const teacher::TeacherSignals>(
        teacher::build_teacher(f.split.train, f.corpus.text, cfg.teacher));
  }
  return f;
}

}  // namespace kdsr::testing
