// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "kdsr/cli/commands.hpp"
#include "kdsr/cli/run_config.hpp"
#include "kdsr/error.hpp"

namespace kdsr::cli {

inline constexpr int kExitError = 1;
inline constexpr int kExitUsage = 2;

/// Parses argv and runs one command. Precedence, lowest first: built-in
/// defaults, --config file, --set assignments, dedicated flags.
inline int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Correlation-distilled sequential recommendation", "kdsr"};
  app.require_subcommand(1);
  app.fallthrough();

  std::string config_path;
  std::vector<std::string> assignments;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out_dir;
  bool force = false;
  app.add_option("--config", config_path, "INI configuration file");
  app.add_option("--set", assignments, "override one key, section.key=value (repeatable)");
  app.add_option("--seed", seed, "seed for data generation and training");
  app.add_option("--out", out_dir, "output directory");
  app.add_flag("--force", force, "overwrite existing outputs");

  auto* gen = app.add_subcommand("gen-data", "write a synthetic interaction log and modality files");
  auto* distill = app.add_subcommand("distill", "fit teacher signals for both modality channels");
  auto* train = app.add_subcommand("train", "train the student and write a checkpoint and reports");
  auto* evaluate = app.add_subcommand("evaluate", "score a checkpoint on the held-out events");
  auto* diag = app.add_subcommand("diagnose", "measure modality forgetting with and without distillation");

  TrainOptions topt;
  std::optional<std::size_t> epochs;
  std::optional<double> lambda1;
  std::optional<double> lambda2;
  train->add_flag("--distill-inline", topt.distill_inline, "build teachers instead of loading artifacts");
  train->add_flag("--resume", topt.resume, "continue from <out>/model.kdck");
  train->add_option("--epochs", epochs, "training epochs");
  train->add_option("--lambda1", lambda1, "weight of the holistic distillation loss");
  train->add_option("--lambda2", lambda2, "weight of the dissected distillation loss");
  diag->add_option("--epochs", epochs, "training epochs per variant");
  std::string checkpoint;
  evaluate->add_option("--checkpoint", checkpoint, "checkpoint file (default <out>/model.kdck)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : kExitUsage;
  }

  try {
    RunConfig cfg;
    if (!config_path.empty()) apply_ini_file(cfg, config_path);
    for (const auto& a : assignments) apply_assignment(cfg, a);
    if (seed) {
      set_value(cfg, "run.seed", std::to_string(*seed));
      set_value(cfg, "synthetic.seed", std::to_string(*seed));
    }
    if (out_dir) set_value(cfg, "run.out", *out_dir);
    if (epochs) set_value(cfg, "trainer.epochs", std::to_string(*epochs));
    if (lambda1) set_value(cfg, "trainer.lambda1", detail::real_text(*lambda1));
    if (lambda2) set_value(cfg, "trainer.lambda2", detail::real_text(*lambda2));
    cfg.validate();

    if (gen->parsed()) return cmd_gen_data(cfg, force, out);
    if (distill->parsed()) return cmd_distill(cfg, force, out);
    if (train->parsed()) return cmd_train(cfg, topt, force, out);
    if (evaluate->parsed()) {
      const fs::path ck = checkpoint.empty() ? cfg.out_dir() / "model.kdck" : fs::path(checkpoint);
      return cmd_evaluate(cfg, ck, force, out);
    }
    if (diag->parsed()) return cmd_diagnose(cfg, force, out);
  } catch (const Error& e) {
    err << "kdsr: error[" << to_string(e.kind()) << "]: " << e.what() << '\n';
    return kExitError;
  } catch (const std::filesystem::filesystem_error& e) {
    err << "kdsr: error[file]: " << e.what() << '\n';
    return kExitError;
  } catch (const std::bad_alloc&) {
    err << "kdsr: error[numeric]: out of memory\n";
    return kExitError;
  }
  return kExitUsage;
}

}  // namespace kdsr::cli
