// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "kdsr/error.hpp"
#include "kdsr/eval/metrics.hpp"

namespace kdsr::eval {

using Json = nlohmann::ordered_json;

struct LossTriple {
  double rs = 0.0;
  double kds = 0.0;
  double kdc = 0.0;
};

/// One line of a training report. Epoch 0 describes the initialised model.
struct ReportRow {
  std::uint32_t epoch = 0;
  LossTriple losses;
  MetricsReport metrics;
  std::optional<double> em;
  std::optional<double> ev;

  bool operator==(const ReportRow& o) const {
    auto same = [](double a, double b) { return a == b || (std::isnan(a) && std::isnan(b)); };
    return epoch == o.epoch && same(losses.rs, o.losses.rs) && same(losses.kds, o.losses.kds) &&
           same(losses.kdc, o.losses.kdc) && metrics.hr5 == o.metrics.hr5 &&
           metrics.hr20 == o.metrics.hr20 && metrics.mrr5 == o.metrics.mrr5 &&
           metrics.mrr20 == o.metrics.mrr20 && metrics.events == o.metrics.events &&
           em == o.em && ev == o.ev;
  }
};

/// Epoch with the highest HR@20; earliest wins ties.
inline std::uint32_t best_epoch(const std::vector<ReportRow>& rows) {
  std::uint32_t best = 0;
  double top = -1.0;
  for (const auto& r : rows) {
    if (r.metrics.hr20 > top) {
      top = r.metrics.hr20;
      best = r.epoch;
    }
  }
  return best;
}

inline Json number_or_null(double v) { return std::isfinite(v) ? Json(v) : Json(nullptr); }

inline Json optional_number(const std::optional<double>& v) {
  return v ? number_or_null(*v) : Json(nullptr);
}

inline Json row_to_json(const ReportRow& r) {
  Json j;
  j["epoch"] = r.epoch;
  j["losses"] = {{"rs", number_or_null(r.losses.rs)},
                 {"kds", number_or_null(r.losses.kds)},
                 {"kdc", number_or_null(r.losses.kdc)}};
  j["metrics"] = {{"hr5", r.metrics.hr5},
                  {"hr20", r.metrics.hr20},
                  {"mrr5", r.metrics.mrr5},
                  {"mrr20", r.metrics.mrr20},
                  {"events", r.metrics.events}};
  j["drift"] = {{"em", optional_number(r.em)}, {"ev", optional_number(r.ev)}};
  return j;
}

inline std::optional<double> read_optional(const Json& j) {
  if (j.is_null()) return std::nullopt;
  return j.get<double>();
}

inline double read_number(const Json& j) {
  return j.is_null() ? std::nan("") : j.get<double>();
}

inline ReportRow row_from_json(const Json& j) {
  ReportRow r;
  r.epoch = j.at("epoch").get<std::uint32_t>();
  r.losses.rs = read_number(j.at("losses").at("rs"));
  r.losses.kds = read_number(j.at("losses").at("kds"));
  r.losses.kdc = read_number(j.at("losses").at("kdc"));
  const Json& m = j.at("metrics");
  r.metrics.hr5 = m.at("hr5").get<double>();
  r.metrics.hr20 = m.at("hr20").get<double>();
  r.metrics.mrr5 = m.at("mrr5").get<double>();
  r.metrics.mrr20 = m.at("mrr20").get<double>();
  r.metrics.events = m.at("events").get<std::size_t>();
  r.em = read_optional(j.at("drift").at("em"));
  r.ev = read_optional(j.at("drift").at("ev"));
  return r;
}

inline Json rows_to_json(const std::vector<ReportRow>& rows) {
  Json arr = Json::array();
  for (const auto& r : rows) arr.push_back(row_to_json(r));
  return arr;
}

inline std::vector<ReportRow> rows_from_json(const Json& arr) {
  std::vector<ReportRow> out;
  for (const auto& j : arr) out.push_back(row_from_json(j));
  return out;
}

/// Full report: resolved config, seed, drift sampling, rows, best epoch.
inline Json make_report(const Json& config, std::uint64_t seed, const Json& drift_info,
                        const std::vector<ReportRow>& rows) {
  Json j;
  j["config"] = config;
  j["seed"] = seed;
  j["drift"] = drift_info;
  j["rows"] = rows_to_json(rows);
  j["best_epoch"] = best_epoch(rows);
  return j;
}

inline std::string format_real(double v) {
  if (!std::isfinite(v)) return "";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::string format_optional(const std::optional<double>& v) {
  return v ? format_real(*v) : "";
}

inline std::string rows_to_csv(const std::vector<ReportRow>& rows) {
  std::string out = "epoch,rs,kds,kdc,hr5,hr20,mrr5,mrr20,em,ev\n";
  for (const auto& r : rows) {
    out += std::to_string(r.epoch) + ',' + format_real(r.losses.rs) + ',' +
           format_real(r.losses.kds) + ',' + format_real(r.losses.kdc) + ',' +
           format_real(r.metrics.hr5) + ',' + format_real(r.metrics.hr20) + ',' +
           format_real(r.metrics.mrr5) + ',' + format_real(r.metrics.mrr20) + ',' +
           format_optional(r.em) + ',' + format_optional(r.ev) + '\n';
  }
  return out;
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::file, "cannot write " + path.string());
  out << text;
  if (!out) fail(ErrorKind::file, "write failed for " + path.string());
}

}  // namespace kdsr::eval
