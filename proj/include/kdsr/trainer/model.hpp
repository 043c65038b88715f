// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <memory>
#include <string>
#include <vector>

#include "kdsr/backbone/network.hpp"
#include "kdsr/corpus/modality.hpp"
#include "kdsr/error.hpp"
#include "kdsr/student/heads.hpp"
#include "kdsr/teacher/signals.hpp"
#include "kdsr/trainer/config.hpp"

namespace kdsr::trainer {

using num::DenseMatrix;
using num::Parameter;

inline constexpr std::array<corpus::Channel, 2> kChannels{corpus::Channel::image,
                                                          corpus::Channel::text};

/// Teacher signals for both channels; empty for ID-only training.
struct Teachers {
  std::shared_ptr<const teacher::TeacherSignals> image;
  std::shared_ptr<const teacher::TeacherSignals> text;

  bool present() const noexcept { return image != nullptr && text != nullptr; }
  const teacher::TeacherSignals& at(corpus::Channel c) const {
    const auto& p = c == corpus::Channel::image ? image : text;
    if (p == nullptr) {
      fail(ErrorKind::argument, "no teacher for the " + std::string(corpus::to_string(c)) + " channel");
    }
    return *p;
  }
};

struct KdHeads {
  student::HolisticHead holistic;
  student::DissectedHead dissected;

  std::vector<Parameter*> parameters() {
    std::vector<Parameter*> out = holistic.parameters();
    for (Parameter* p : dissected.parameters()) out.push_back(p);
    return out;
  }
};

/// Student: recommender plus one pair of distillation heads per channel.
struct Model {
  backbone::Recommender net;
  std::vector<KdHeads> heads;  // indexed like kChannels; empty without modality

  std::vector<Parameter*> parameters() {
    std::vector<Parameter*> out = net.parameters();
    for (auto& h : heads) {
      for (Parameter* p : h.parameters()) out.push_back(p);
    }
    return out;
  }
};

inline Model init_model(const TrainConfig& cfg, std::size_t items, const Teachers& teachers) {
  cfg.validate();
  const Rng root = Rng::stream(cfg.seed, "init");
  Rng bank_rng = root.fork(0);
  Rng enc_rng = root.fork(1);
  Model m;
  m.net.use_modality = cfg.use_modality;
  const DenseMatrix* image = nullptr;
  const DenseMatrix* text = nullptr;
  if (cfg.use_modality) {
    if (!teachers.present()) fail(ErrorKind::argument, "modality training needs teachers for both channels");
    for (auto c : kChannels) {
      const auto& t = teachers.at(c);
      if (t.items() != items) {
        fail(ErrorKind::shape, std::string(corpus::to_string(c)) + " teacher covers " +
                                   std::to_string(t.items()) + " items, dataset has " +
                                   std::to_string(items));
      }
      if (t.scoring() != cfg.teacher.scoring) {
        fail(ErrorKind::config, "student scoring " + std::string(teacher::to_string(cfg.teacher.scoring)) +
                                    " differs from the " + std::string(corpus::to_string(c)) +
                                    " teacher's " + std::string(teacher::to_string(t.scoring())));
      }
    }
    image = &teachers.image->compressed();
    text = &teachers.text->compressed();
  }
  m.net.bank = student::init_embedding_bank(items, cfg.dim, image, text, bank_rng);
  m.net.encoder = backbone::init_encoder(cfg.dim, cfg.backbone, enc_rng);
  if (cfg.use_modality) {
    for (std::size_t c = 0; c < kChannels.size(); ++c) {
      Rng head_rng = root.fork(2 + c);
      const std::string prefix = "kd." + std::string(corpus::to_string(kChannels[c]));
      const std::size_t codes = teachers.at(kChannels[c]).codebook().size();
      m.heads.push_back({student::init_holistic_head(prefix, cfg.dim),
                         student::init_dissected_head(prefix, cfg.dim, codes, head_rng)});
    }
  }
  return m;
}

}  // namespace kdsr::trainer
