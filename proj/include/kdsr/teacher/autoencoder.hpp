// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "kdsr/error.hpp"
#include "kdsr/numerics/binding.hpp"
#include "kdsr/numerics/parameter.hpp"
#include "kdsr/numerics/tape.hpp"
#include "kdsr/rng.hpp"

namespace kdsr::teacher {

using num::DenseMatrix;
using num::Parameter;

struct AutoencoderOptions {
  std::size_t compressed_dim = 128;
  std::size_t segments = 8;
  std::size_t epochs = 300;
  double lr = 0.01;
  std::uint64_t seed = 1;
};

/// Linear encoder/decoder pair: x -> x*We + be -> (.)*Wd + bd.
struct Autoencoder {
  Parameter enc_w;
  Parameter enc_b;
  Parameter dec_w;
  Parameter dec_b;
  double initial_error = 0.0;
  double final_error = 0.0;

  std::size_t input_dim() const noexcept { return enc_w.value.rows(); }
  std::size_t compressed_dim() const noexcept { return enc_w.value.cols(); }

  std::vector<Parameter*> parameters() { return {&enc_w, &enc_b, &dec_w, &dec_b}; }

  /// Mean squared reconstruction error over every entry of x. With
  /// accumulate_grad the gradient is added into the parameters.
  double reconstruction_loss(const DenseMatrix& x, bool accumulate_grad) {
    ad::Tape tape(accumulate_grad);
    num::ParameterBinding bind;
    const ad::Var ew = bind.bind(tape, enc_w);
    const ad::Var eb = bind.bind(tape, enc_b);
    const ad::Var dw = bind.bind(tape, dec_w);
    const ad::Var db = bind.bind(tape, dec_b);
    const ad::Var in = tape.input(x, false);
    const ad::Var code = ad::add_row(ad::matmul(in, ew), eb);
    const ad::Var recon = ad::add_row(ad::matmul(code, dw), db);
    const ad::Var diff = ad::sub(recon, in);
    const ad::Var loss =
        ad::scale(ad::sum(ad::hadamard(diff, diff)), 1.0 / static_cast<double>(x.size()));
    if (accumulate_grad) {
      tape.backward(loss);
      bind.accumulate_gradients(tape);
    }
    return loss.value()[0];
  }
};

inline Autoencoder init_autoencoder(std::size_t input_dim, std::size_t compressed_dim,
                                    std::uint64_t seed) {
  Rng rng = Rng::stream(seed, "autoencoder");
  Autoencoder ae;
  ae.enc_w = num::gaussian_parameter("ae.enc.w", num::ParamGroup::other, input_dim, compressed_dim,
                                     1.0 / std::sqrt(static_cast<double>(input_dim)), rng);
  ae.enc_b = Parameter("ae.enc.b", num::ParamGroup::other, DenseMatrix(1, compressed_dim));
  ae.dec_w = num::gaussian_parameter("ae.dec.w", num::ParamGroup::other, compressed_dim, input_dim,
                                     1.0 / std::sqrt(static_cast<double>(compressed_dim)), rng);
  ae.dec_b = Parameter("ae.dec.b", num::ParamGroup::other, DenseMatrix(1, input_dim));
  return ae;
}

/// Full-batch Adam on the mean squared reconstruction error.
inline Autoencoder train_autoencoder(const DenseMatrix& m, const AutoencoderOptions& opt) {
  if (opt.compressed_dim == 0 || opt.compressed_dim > m.cols()) {
    fail(ErrorKind::config, "autoencoder compressed dim " + std::to_string(opt.compressed_dim) +
                                " must lie in [1, " + std::to_string(m.cols()) + "]");
  }
  if (opt.segments == 0 || opt.compressed_dim % opt.segments != 0) {
    fail(ErrorKind::config, "compressed dim " + std::to_string(opt.compressed_dim) +
                                " is not divisible by " + std::to_string(opt.segments) + " segments");
  }
  Autoencoder ae = init_autoencoder(m.cols(), opt.compressed_dim, opt.seed);
  std::vector<num::AdamState> states;
  for (Parameter* p : ae.parameters()) states.emplace_back(*p);
  ae.initial_error = ae.reconstruction_loss(m, false);
  for (std::size_t epoch = 0; epoch < opt.epochs; ++epoch) {
    for (Parameter* p : ae.parameters()) p->zero_grad();
    const double loss = ae.reconstruction_loss(m, true);
    if (!std::isfinite(loss)) {
      fail(ErrorKind::training, "autoencoder diverged at epoch " + std::to_string(epoch));
    }
    auto params = ae.parameters();
    for (std::size_t i = 0; i < params.size(); ++i) num::adam_step(*params[i], states[i], opt.lr);
  }
  ae.final_error = opt.epochs == 0 ? ae.initial_error : ae.reconstruction_loss(m, false);
  if (!std::isfinite(ae.final_error)) fail(ErrorKind::training, "autoencoder diverged");
  return ae;
}

/// Applies the encoder row-wise: m * We + be.
inline DenseMatrix compress(const Autoencoder& ae, const DenseMatrix& m) {
  if (m.cols() != ae.input_dim()) {
    fail(ErrorKind::dimension, "compress: matrix has " + std::to_string(m.cols()) +
                                   " columns, encoder expects " + std::to_string(ae.input_dim()));
  }
  DenseMatrix out = num::matmul(m, ae.enc_w.value);
  for (std::size_t r = 0; r < out.rows(); ++r) {
    auto row = out.row(r);
    for (std::size_t c = 0; c < row.size(); ++c) row[c] += ae.enc_b.value[c];
  }
  return out;
}

}  // namespace kdsr::teacher
