// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <nlohmann/json.hpp>

#include "kdsr/corpus/synthetic.hpp"
#include "kdsr/error.hpp"
#include "kdsr/trainer/config.hpp"

namespace kdsr::cli {

namespace fs = std::filesystem;

/// Everything a command needs: training hyperparameters, corpus locations,
/// the synthetic generator and the output directory.
struct RunConfig {
  trainer::TrainConfig train;
  corpus::SyntheticSpec synthetic;
  teacher::ScoringKind student_scoring = teacher::ScoringKind::cosine;
  std::string interactions;  // empty: <out>/interactions.tsv
  std::string image;         // empty: <out>/image.modf
  std::string text;          // empty: <out>/text.modf
  std::size_t core_k = 5;
  std::string out = "out";

  fs::path out_dir() const { return out; }
  fs::path interactions_path() const { return interactions.empty() ? out_dir() / "interactions.tsv" : fs::path(interactions); }
  fs::path image_path() const { return image.empty() ? out_dir() / "image.modf" : fs::path(image); }
  fs::path text_path() const { return text.empty() ? out_dir() / "text.modf" : fs::path(text); }
  fs::path teacher_path(corpus::Channel c) const {
    return out_dir() / ("teacher_" + std::string(corpus::to_string(c)) + ".kdtc");
  }

  void validate() const {
    if (student_scoring != train.teacher.scoring) {
      fail(ErrorKind::config, "student scoring " + std::string(teacher::to_string(student_scoring)) +
                                  " must match teacher scoring " +
                                  std::string(teacher::to_string(train.teacher.scoring)));
    }
    if (core_k < 1) fail(ErrorKind::config, "core_k must be >= 1");
    synthetic.validate();
    train.validate();
  }
};

namespace detail {

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

inline std::uint64_t parse_u64(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size() || v.empty()) {
    fail(ErrorKind::config, key + ": expected a non-negative integer, got '" + v + "'");
  }
  return out;
}

inline double parse_real(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  double out = 0.0;
  try {
    out = std::stod(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (v.empty() || used != v.size() || !std::isfinite(out)) {
    fail(ErrorKind::config, key + ": expected a real number, got '" + v + "'");
  }
  return out;
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  fail(ErrorKind::config, key + ": expected true or false, got '" + v + "'");
}

inline std::string real_text(double v) {
  char buf[40];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

struct Key {
  std::string section;
  std::string name;
  std::function<void(RunConfig&, const std::string& key, const std::string& value)> set;
  std::function<std::string(const RunConfig&)> get;
};

template <class T>
Key count_key(std::string section, std::string name, T RunConfig::*outer, std::size_t T::*field) {
  return {std::move(section), std::move(name),
          [outer, field](RunConfig& c, const std::string& k, const std::string& v) {
            (c.*outer).*field = static_cast<std::size_t>(parse_u64(k, v));
          },
          [outer, field](const RunConfig& c) { return std::to_string((c.*outer).*field); }};
}

template <class T>
Key real_key(std::string section, std::string name, T RunConfig::*outer, double T::*field) {
  return {std::move(section), std::move(name),
          [outer, field](RunConfig& c, const std::string& k, const std::string& v) {
            (c.*outer).*field = parse_real(k, v);
          },
          [outer, field](const RunConfig& c) { return real_text((c.*outer).*field); }};
}

inline Key string_key(std::string section, std::string name, std::string RunConfig::*field) {
  return {std::move(section), std::move(name),
          [field](RunConfig& c, const std::string&, const std::string& v) { c.*field = v; },
          [field](const RunConfig& c) { return c.*field; }};
}

inline const std::vector<Key>& keys() {
  using trainer::TrainConfig;
  using corpus::SyntheticSpec;
  static const std::vector<Key> table = [] {
    std::vector<Key> k;
    k.push_back({"run", "seed",
                 [](RunConfig& c, const std::string& key, const std::string& v) {
                   c.train.seed = parse_u64(key, v);
                   c.train.teacher.seed = c.train.seed;
                 },
                 [](const RunConfig& c) { return std::to_string(c.train.seed); }});
    k.push_back(string_key("run", "out", &RunConfig::out));
    k.push_back(string_key("corpus", "interactions", &RunConfig::interactions));
    k.push_back(string_key("corpus", "image", &RunConfig::image));
    k.push_back(string_key("corpus", "text", &RunConfig::text));
    k.push_back({"corpus", "core_k",
                 [](RunConfig& c, const std::string& key, const std::string& v) {
                   c.core_k = static_cast<std::size_t>(parse_u64(key, v));
                   c.synthetic.core_k = c.core_k;
                 },
                 [](const RunConfig& c) { return std::to_string(c.core_k); }});

    k.push_back(count_key("synthetic", "items", &RunConfig::synthetic, &SyntheticSpec::items));
    k.push_back(count_key("synthetic", "users", &RunConfig::synthetic, &SyntheticSpec::users));
    k.push_back(count_key("synthetic", "attribute_values", &RunConfig::synthetic,
                          &SyntheticSpec::attribute_values));
    k.push_back(count_key("synthetic", "modality_dim", &RunConfig::synthetic, &SyntheticSpec::modality_dim));
    k.push_back(real_key("synthetic", "noise", &RunConfig::synthetic, &SyntheticSpec::noise));
    k.push_back(real_key("synthetic", "mixing", &RunConfig::synthetic, &SyntheticSpec::mixing));
    k.push_back(count_key("synthetic", "min_length", &RunConfig::synthetic, &SyntheticSpec::min_length));
    k.push_back(count_key("synthetic", "max_length", &RunConfig::synthetic, &SyntheticSpec::max_length));
    k.push_back({"synthetic", "seed",
                 [](RunConfig& c, const std::string& key, const std::string& v) {
                   c.synthetic.seed = parse_u64(key, v);
                 },
                 [](const RunConfig& c) { return std::to_string(c.synthetic.seed); }});

    auto teacher_count = [&k](const char* name, std::size_t teacher::TeacherConfig::*f) {
      k.push_back({"teacher", name,
                   [f](RunConfig& c, const std::string& key, const std::string& v) {
                     c.train.teacher.*f = static_cast<std::size_t>(parse_u64(key, v));
                   },
                   [f](const RunConfig& c) { return std::to_string(c.train.teacher.*f); }});
    };
    auto teacher_real = [&k](const char* name, double teacher::TeacherConfig::*f) {
      k.push_back({"teacher", name,
                   [f](RunConfig& c, const std::string& key, const std::string& v) {
                     c.train.teacher.*f = parse_real(key, v);
                   },
                   [f](const RunConfig& c) { return real_text(c.train.teacher.*f); }});
    };
    teacher_count("segments", &teacher::TeacherConfig::segments);
    teacher_count("codes", &teacher::TeacherConfig::codes);
    k.push_back({"teacher", "scoring",
                 [](RunConfig& c, const std::string&, const std::string& v) {
                   c.train.teacher.scoring = teacher::parse_scoring(v);
                 },
                 [](const RunConfig& c) { return std::string(teacher::to_string(c.train.teacher.scoring)); }});
    k.push_back({"teacher", "quantizer",
                 [](RunConfig& c, const std::string&, const std::string& v) {
                   c.train.teacher.quantizer = teacher::parse_quantizer(v);
                 },
                 [](const RunConfig& c) { return std::string(teacher::to_string(c.train.teacher.quantizer)); }});
    teacher_count("ae_epochs", &teacher::TeacherConfig::ae_epochs);
    teacher_real("ae_lr", &teacher::TeacherConfig::ae_lr);
    teacher_count("kmeans_iters", &teacher::TeacherConfig::kmeans_iters);
    teacher_count("vq_passes", &teacher::TeacherConfig::vq_passes);
    teacher_real("vq_rate", &teacher::TeacherConfig::vq_rate);
    teacher_count("sample_size", &teacher::TeacherConfig::sample_size);

    k.push_back(real_key("student", "tau", &RunConfig::train, &TrainConfig::tau));
    k.push_back({"student", "scoring",
                 [](RunConfig& c, const std::string&, const std::string& v) {
                   c.student_scoring = teacher::parse_scoring(v);
                 },
                 [](const RunConfig& c) { return std::string(teacher::to_string(c.student_scoring)); }});

    auto backbone_count = [&k](const char* name, std::size_t backbone::BackboneConfig::*f) {
      k.push_back({"backbone", name,
                   [f](RunConfig& c, const std::string& key, const std::string& v) {
                     c.train.backbone.*f = static_cast<std::size_t>(parse_u64(key, v));
                   },
                   [f](const RunConfig& c) { return std::to_string(c.train.backbone.*f); }});
    };
    k.push_back({"backbone", "kind",
                 [](RunConfig& c, const std::string&, const std::string& v) {
                   c.train.backbone.kind = backbone::parse_backbone(v);
                 },
                 [](const RunConfig& c) { return std::string(backbone::to_string(c.train.backbone.kind)); }});
    backbone_count("layers", &backbone::BackboneConfig::layers);
    backbone_count("heads", &backbone::BackboneConfig::heads);
    backbone_count("window", &backbone::BackboneConfig::window);
    backbone_count("max_length", &backbone::BackboneConfig::max_length);

    k.push_back({"trainer", "dim",
                 [](RunConfig& c, const std::string& key, const std::string& v) {
                   c.train.dim = static_cast<std::size_t>(parse_u64(key, v));
                   c.train.teacher.compressed_dim = c.train.dim;
                 },
                 [](const RunConfig& c) { return std::to_string(c.train.dim); }});
    k.push_back(count_key("trainer", "batch", &RunConfig::train, &TrainConfig::batch));
    k.push_back(count_key("trainer", "epochs", &RunConfig::train, &TrainConfig::epochs));
    k.push_back(real_key("trainer", "lr", &RunConfig::train, &TrainConfig::lr));
    k.push_back(count_key("trainer", "async_epochs", &RunConfig::train, &TrainConfig::async_epochs));
    k.push_back(real_key("trainer", "lambda1", &RunConfig::train, &TrainConfig::lambda1));
    k.push_back(real_key("trainer", "lambda2", &RunConfig::train, &TrainConfig::lambda2));
    k.push_back({"trainer", "pair_cap",
                 [](RunConfig& c, const std::string& key, const std::string& v) {
                   c.train.pair_cap = v == "unlimited" ? trainer::kUnlimitedPairs
                                                       : static_cast<std::size_t>(parse_u64(key, v));
                 },
                 [](const RunConfig& c) {
                   return c.train.pair_cap == trainer::kUnlimitedPairs ? std::string("unlimited")
                                                                       : std::to_string(c.train.pair_cap);
                 }});
    k.push_back(real_key("trainer", "clip_norm", &RunConfig::train, &TrainConfig::clip_norm));
    k.push_back(count_key("trainer", "grad_chunks", &RunConfig::train, &TrainConfig::grad_chunks));
    k.push_back({"trainer", "modality",
                 [](RunConfig& c, const std::string& key, const std::string& v) {
                   c.train.use_modality = parse_bool(key, v);
                 },
                 [](const RunConfig& c) { return std::string(c.train.use_modality ? "true" : "false"); }});

    k.push_back(count_key("eval", "drift_pairs", &RunConfig::train, &TrainConfig::drift_pairs));
    k.push_back({"eval", "drift_channel",
                 [](RunConfig& c, const std::string& key, const std::string& v) {
                   if (v == "image") {
                     c.train.drift_channel = corpus::Channel::image;
                   } else if (v == "text") {
                     c.train.drift_channel = corpus::Channel::text;
                   } else {
                     fail(ErrorKind::config, key + ": expected image or text, got '" + v + "'");
                   }
                 },
                 [](const RunConfig& c) { return std::string(corpus::to_string(c.train.drift_channel)); }});
    return k;
  }();
  return table;
}

inline const Key* find_key(std::string_view section, std::string_view name) {
  for (const auto& k : keys()) {
    if (k.section == section && k.name == name) return &k;
  }
  return nullptr;
}

}  // namespace detail

/// Sets "section.key" to a textual value.
inline void set_value(RunConfig& c, std::string_view dotted, const std::string& value) {
  const auto dot = dotted.find('.');
  if (dot == std::string_view::npos) {
    fail(ErrorKind::config, "config key '" + std::string(dotted) + "' must look like section.key");
  }
  const auto* k = detail::find_key(dotted.substr(0, dot), dotted.substr(dot + 1));
  if (k == nullptr) fail(ErrorKind::config, "unknown config key '" + std::string(dotted) + "'");
  k->set(c, std::string(dotted), detail::trim(value));
}

/// Applies a "section.key=value" assignment.
inline void apply_assignment(RunConfig& c, std::string_view assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string_view::npos) {
    fail(ErrorKind::config, "override '" + std::string(assignment) + "' must look like section.key=value");
  }
  set_value(c, detail::trim(assignment.substr(0, eq)), std::string(assignment.substr(eq + 1)));
}

inline void apply_ini(RunConfig& c, std::istream& in, const std::string& source) {
  boost::property_tree::ptree tree;
  try {
    boost::property_tree::read_ini(in, tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    fail(ErrorKind::config, source + ": " + e.message() + " at line " + std::to_string(e.line()));
  }
  for (const auto& [section, body] : tree) {
    if (body.empty()) {
      fail(ErrorKind::config, source + ": key '" + section + "' must appear inside a [section]");
    }
    for (const auto& [key, value] : body) {
      set_value(c, section + "." + key, value.get_value<std::string>());
    }
  }
}

inline void apply_ini_file(RunConfig& c, const fs::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::file, "cannot open config file " + path.string());
  apply_ini(c, in, path.string());
}

/// The resolved configuration as {section: {key: value}}, every key present.
inline nlohmann::ordered_json resolved(const RunConfig& c) {
  nlohmann::ordered_json out = nlohmann::ordered_json::object();
  for (const auto& k : detail::keys()) out[k.section][k.name] = k.get(c);
  return out;
}

/// The resolved configuration as INI text.
inline std::string to_ini(const RunConfig& c) {
  std::string out;
  std::string section;
  for (const auto& k : detail::keys()) {
    if (k.section != section) {
      section = k.section;
      out += (out.empty() ? "[" : "\n[") + section + "]\n";
    }
    out += k.name + " = " + k.get(c) + "\n";
  }
  return out;
}

}  // namespace kdsr::cli
