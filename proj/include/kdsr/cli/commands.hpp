// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cstdio>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <memory>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "kdsr/cli/run_config.hpp"
#include "kdsr/corpus/dataset.hpp"
#include "kdsr/corpus/modality.hpp"
#include "kdsr/corpus/synthetic.hpp"
#include "kdsr/error.hpp"
#include "kdsr/eval/report.hpp"
#include "kdsr/teacher/signals.hpp"
#include "kdsr/trainer/checkpoint.hpp"
#include "kdsr/trainer/trainer.hpp"

namespace kdsr::cli {

/// Refuses to replace existing files unless forced.
inline void guard_outputs(const std::vector<fs::path>& paths, bool force) {
  if (force) return;
  for (const auto& p : paths) {
    if (fs::exists(p)) {
      fail(ErrorKind::file, p.string() + " already exists (use --force to overwrite)");
    }
  }
}

inline void ensure_parent(const fs::path& p) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
}

inline std::string fixed(double v, int digits = 4) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

inline void print_dataset_summary(std::ostream& out, const corpus::Dataset& ds) {
  const double avg = static_cast<double>(ds.interaction_count()) / static_cast<double>(ds.user_count());
  out << "items " << ds.item_count() << ", users " << ds.user_count() << ", interactions "
      << ds.interaction_count() << ", avg length " << fixed(avg, 2) << '\n';
}

inline int cmd_gen_data(const RunConfig& cfg, bool force, std::ostream& out) {
  cfg.synthetic.validate();
  const std::vector<fs::path> files{cfg.interactions_path(), cfg.image_path(), cfg.text_path()};
  guard_outputs(files, force);
  const auto corpus = corpus::generate_synthetic(cfg.synthetic);
  for (const auto& f : files) ensure_parent(f);
  {
    std::ofstream tsv(cfg.interactions_path(), std::ios::binary | std::ios::trunc);
    if (!tsv) fail(ErrorKind::file, "cannot write " + cfg.interactions_path().string());
    corpus::write_interactions(tsv, corpus.interactions);
    if (!tsv) fail(ErrorKind::file, "write failed for " + cfg.interactions_path().string());
  }
  corpus::write_modality_binary(cfg.image_path(), corpus.image);
  corpus::write_modality_binary(cfg.text_path(), corpus.text);
  print_dataset_summary(out, corpus.dataset);
  for (const auto& f : files) out << "wrote " << f.string() << '\n';
  return 0;
}

struct LoadedCorpus {
  corpus::Dataset dataset;
  corpus::SplitDataset split;
  corpus::ModalityMatrix image;
  corpus::ModalityMatrix text;
};

inline LoadedCorpus load_corpus(const RunConfig& cfg, bool with_modality) {
  LoadedCorpus c;
  const auto log = corpus::load_interactions(cfg.interactions_path());
  c.dataset = corpus::core_k_filter(log, cfg.core_k);
  c.split = corpus::split_train_test(c.dataset);
  if (with_modality) {
    c.image = corpus::load_modality_matrix(cfg.image_path(), c.dataset.item_count(), corpus::Channel::image);
    c.text = corpus::load_modality_matrix(cfg.text_path(), c.dataset.item_count(), corpus::Channel::text);
  }
  return c;
}

inline trainer::Teachers build_teachers(const LoadedCorpus& c, const teacher::TeacherConfig& tc) {
  trainer::Teachers t;
  t.image = std::make_shared<const teacher::TeacherSignals>(teacher::build_teacher(c.split.train, c.image, tc));
  t.text = std::make_shared<const teacher::TeacherSignals>(teacher::build_teacher(c.split.train, c.text, tc));
  return t;
}

inline trainer::Teachers load_teachers(const RunConfig& cfg, const LoadedCorpus& c) {
  trainer::Teachers t;
  for (auto ch : trainer::kChannels) {
    const fs::path p = cfg.teacher_path(ch);
    if (!fs::exists(p)) {
      fail(ErrorKind::file, "missing teacher artifact " + p.string() +
                                " (run distill first or pass --distill-inline)");
    }
    auto sig = std::make_shared<const teacher::TeacherSignals>(
        teacher::load_teacher(p, ch == corpus::Channel::image ? c.image : c.text));
    if (sig->scoring() != cfg.train.teacher.scoring || sig->segments() != cfg.train.teacher.segments ||
        sig->codebook().size() != cfg.train.teacher.codes ||
        sig->compressed().cols() != cfg.train.teacher.compressed_dim) {
      fail(ErrorKind::config, p.string() + " was distilled under different teacher settings");
    }
    (ch == corpus::Channel::image ? t.image : t.text) = std::move(sig);
  }
  return t;
}

inline void print_usage_histogram(std::ostream& out, const teacher::TeacherSignals& t) {
  const auto& usage = t.codebook().usage;
  std::uint64_t total = 0;
  std::size_t used = 0;
  for (auto u : usage) {
    total += u;
    used += u > 0 ? 1 : 0;
  }
  out << corpus::to_string(t.channel()) << ": reconstruction error "
      << fixed(t.autoencoder().initial_error, 6) << " -> " << fixed(t.autoencoder().final_error, 6)
      << ", " << used << "/" << usage.size() << " codes used by " << total << " vectors\n";
  out << "  usage:";
  for (std::size_t k = 0; k < usage.size(); ++k) out << (k % 20 == 0 && k > 0 ? "\n        " : " ") << usage[k];
  out << '\n';
}

inline int cmd_distill(const RunConfig& cfg, bool force, std::ostream& out) {
  cfg.validate();
  std::vector<fs::path> files;
  for (auto ch : trainer::kChannels) files.push_back(cfg.teacher_path(ch));
  guard_outputs(files, force);
  const auto c = load_corpus(cfg, true);
  cfg.train.teacher.validate(std::min(c.image.dim(), c.text.dim()));
  const auto t = build_teachers(c, cfg.train.teacher);
  fs::create_directories(cfg.out_dir());
  for (auto ch : trainer::kChannels) {
    teacher::save_teacher(cfg.teacher_path(ch), t.at(ch));
    print_usage_histogram(out, t.at(ch));
    out << "wrote " << cfg.teacher_path(ch).string() << '\n';
  }
  return 0;
}

inline void print_row(std::ostream& out, const eval::ReportRow& r) {
  auto opt = [](const std::optional<double>& v) { return v ? fixed(*v) : std::string("-"); };
  auto num = [](double v) { return std::isfinite(v) ? fixed(v) : std::string("-"); };
  out << "epoch " << r.epoch << "  rs " << num(r.losses.rs) << "  kds " << num(r.losses.kds)
      << "  kdc " << num(r.losses.kdc) << "  hr@5 " << fixed(r.metrics.hr5) << "  hr@20 "
      << fixed(r.metrics.hr20) << "  mrr@5 " << fixed(r.metrics.mrr5) << "  mrr@20 "
      << fixed(r.metrics.mrr20) << "  em " << opt(r.em) << "  ev " << opt(r.ev) << '\n';
}

inline eval::Json drift_info(const trainer::TrainConfig& tc) {
  return {{"pairs", tc.drift_pairs}, {"seed", tc.seed}, {"channel", corpus::to_string(tc.drift_channel)}};
}

inline void write_reports(const RunConfig& cfg, const fs::path& stem,
                          const std::vector<eval::ReportRow>& rows) {
  const auto report = eval::make_report(resolved(cfg), cfg.train.seed, drift_info(cfg.train), rows);
  eval::write_text(stem.string() + ".json", report.dump(2) + "\n");
  eval::write_text(stem.string() + ".csv", eval::rows_to_csv(rows));
}

struct TrainOptions {
  bool distill_inline = false;
  bool resume = false;
};

inline trainer::Teachers teachers_for(const RunConfig& cfg, const LoadedCorpus& c, bool inline_build) {
  if (!cfg.train.use_modality) return {};
  return inline_build ? build_teachers(c, cfg.train.teacher) : load_teachers(cfg, c);
}

inline int cmd_train(const RunConfig& cfg, const TrainOptions& opt, bool force, std::ostream& out) {
  cfg.validate();
  const fs::path ckpt = cfg.out_dir() / "model.kdck";
  const fs::path report = cfg.out_dir() / "report";
  if (!opt.resume) {
    guard_outputs({ckpt, report.string() + ".json", report.string() + ".csv"}, force);
  }
  const auto c = load_corpus(cfg, cfg.train.use_modality);
  const auto teachers = teachers_for(cfg, c, opt.distill_inline);
  const auto ctx = trainer::make_context(c.split, teachers, nullptr, cfg.train);
  fs::create_directories(cfg.out_dir());
  trainer::TrainState st;
  if (opt.resume) {
    st = trainer::restore(trainer::load_checkpoint(ckpt), cfg.train, ctx);
    out << "resumed at epoch " << st.epoch << '\n';
  } else {
    st = trainer::start_training(cfg.train, ctx);
    print_row(out, st.rows.back());
  }
  trainer::fit(st, cfg.train, ctx, [&](const trainer::TrainState& s) { print_row(out, s.rows.back()); });
  trainer::save_checkpoint(ckpt, st, cfg.train);
  write_reports(cfg, report, st.rows);
  out << "best epoch " << eval::best_epoch(st.rows) << '\n';
  out << "wrote " << ckpt.string() << ", " << report.string() << ".json, " << report.string() << ".csv\n";
  return 0;
}

inline int cmd_evaluate(const RunConfig& cfg, const fs::path& checkpoint, bool force, std::ostream& out) {
  cfg.validate();
  const fs::path metrics_path = cfg.out_dir() / "metrics.json";
  guard_outputs({metrics_path}, force);
  const auto ck = trainer::load_checkpoint(checkpoint);
  const auto c = load_corpus(cfg, cfg.train.use_modality);
  for (const auto& p : ck.params) {
    if (p.name == "emb.id" && p.value.rows() != c.dataset.item_count()) {
      fail(ErrorKind::shape, "checkpoint covers " + std::to_string(p.value.rows()) +
                                 " items, dataset has " + std::to_string(c.dataset.item_count()));
    }
  }
  const auto teachers = teachers_for(cfg, c, false);
  const auto ctx = trainer::make_context(c.split, teachers, nullptr, cfg.train);
  auto st = trainer::restore(ck, cfg.train, ctx);
  const auto m = eval::evaluate(st.model.net, c.split);
  out << "test events " << m.events << "\n"
      << "HR@5 " << fixed(m.hr5) << "  HR@20 " << fixed(m.hr20) << "  MRR@5 " << fixed(m.mrr5)
      << "  MRR@20 " << fixed(m.mrr20) << '\n';
  eval::Json j;
  j["config"] = resolved(cfg);
  j["checkpoint"] = checkpoint.string();
  j["epoch"] = st.epoch;
  j["metrics"] = {{"hr5", m.hr5}, {"hr20", m.hr20}, {"mrr5", m.mrr5}, {"mrr20", m.mrr20}, {"events", m.events}};
  fs::create_directories(cfg.out_dir());
  eval::write_text(metrics_path, j.dump(2) + "\n");
  return 0;
}

/// Three runs sharing corpus, teachers and drift pairs: an ID-only model
/// (source of V), a modality model without distillation and one with it.
struct Diagnosis {
  std::vector<eval::ReportRow> id_only;
  std::vector<eval::ReportRow> no_kd;
  std::vector<eval::ReportRow> kd;
};

inline trainer::TrainConfig id_only_config(trainer::TrainConfig tc) {
  tc.use_modality = false;
  tc.lambda1 = 0.0;
  tc.lambda2 = 0.0;
  return tc;
}

inline trainer::TrainConfig no_kd_config(trainer::TrainConfig tc) {
  tc.lambda1 = 0.0;
  tc.lambda2 = 0.0;
  return tc;
}

inline Diagnosis diagnose(const trainer::TrainConfig& tc, const corpus::SplitDataset& split,
                          const trainer::Teachers& teachers,
                          const std::function<void(const char*, const eval::ReportRow&)>& progress = {}) {
  auto report = [&](const char* name) {
    return [&progress, name](const trainer::TrainState& s) {
      if (progress) progress(name, s.rows.back());
    };
  };
  Diagnosis d;
  const auto id_cfg = id_only_config(tc);
  const auto id_ctx = trainer::make_context(split, {}, nullptr, id_cfg);
  const auto id_state = trainer::fit(id_cfg, id_ctx, report("id-only"));
  d.id_only = id_state.rows;
  const num::DenseMatrix& v = id_state.model.net.bank.id.value;

  const auto nokd_cfg = no_kd_config(tc);
  d.no_kd = trainer::fit(nokd_cfg, trainer::make_context(split, teachers, &v, nokd_cfg), report("no-kd")).rows;
  d.kd = trainer::fit(tc, trainer::make_context(split, teachers, &v, tc), report("kd")).rows;
  return d;
}

inline std::string drift_csv(const Diagnosis& d) {
  std::string out = "variant,epoch,em,ev\n";
  auto add = [&out](const char* name, const std::vector<eval::ReportRow>& rows) {
    for (const auto& r : rows) {
      out += std::string(name) + ',' + std::to_string(r.epoch) + ',' + eval::format_optional(r.em) +
             ',' + eval::format_optional(r.ev) + '\n';
    }
  };
  add("no-kd", d.no_kd);
  add("kd", d.kd);
  return out;
}

inline int cmd_diagnose(const RunConfig& cfg, bool force, std::ostream& out) {
  cfg.validate();
  if (!cfg.train.use_modality) fail(ErrorKind::config, "diagnose needs trainer.modality = true");
  const fs::path dir = cfg.out_dir();
  const fs::path csv = dir / "drift.csv";
  std::vector<fs::path> files{csv};
  for (const char* v : {"id_only", "no_kd", "kd"}) {
    files.push_back(dir / ("diagnose_" + std::string(v) + ".json"));
    files.push_back(dir / ("diagnose_" + std::string(v) + ".csv"));
  }
  guard_outputs(files, force);
  const auto c = load_corpus(cfg, true);
  const auto teachers = build_teachers(c, cfg.train.teacher);
  const auto d = diagnose(cfg.train, c.split, teachers, [&out](const char* name, const eval::ReportRow& r) {
    out << name << "  ";
    print_row(out, r);
  });
  fs::create_directories(dir);
  eval::write_text(csv, drift_csv(d));
  write_reports(cfg, dir / "diagnose_id_only", d.id_only);
  write_reports(cfg, dir / "diagnose_no_kd", d.no_kd);
  write_reports(cfg, dir / "diagnose_kd", d.kd);
  auto final_em = [](const std::vector<eval::ReportRow>& rows) {
    return rows.back().em ? fixed(*rows.back().em) : std::string("-");
  };
  out << "pearson_EM final: no-kd " << final_em(d.no_kd) << ", kd " << final_em(d.kd) << '\n';
  out << "wrote " << csv.string() << '\n';
  return 0;
}

}  // namespace kdsr::cli
