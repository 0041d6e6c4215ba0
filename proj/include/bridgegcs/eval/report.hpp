#pragma once

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "bridgegcs/core/io.hpp"
#include "bridgegcs/eval/experiments.hpp"
#include "bridgegcs/eval/metrics.hpp"

namespace bridgegcs::report {

/// Round-trip text for a double; empty for NaN (a missing value).
inline std::string number(double v) {
  if (std::isnan(v)) return "";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::string number(const std::optional<double>& v) { return v ? number(*v) : std::string(); }

/// RFC 4180 field: quoted when it holds a comma, quote, CR or LF; quotes doubled.
inline std::string csv_field(std::string_view s) {
  if (s.find_first_of(",\"\r\n") == std::string_view::npos) return std::string(s);
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  out += '"';
  return out;
}

class Csv {
 public:
  explicit Csv(std::vector<std::string> header) : width_(header.size()) { add(header); }

  void add(const std::vector<std::string>& row) {
    if (row.size() != width_) throw RejectedInput("csv: row width differs from header");
    for (std::size_t i = 0; i < row.size(); ++i) {
      if (i) text_ += ',';
      text_ += csv_field(row[i]);
    }
    text_ += "\r\n";
  }

  const std::string& str() const { return text_; }
  void write(const std::filesystem::path& p) const { io::write_file_atomic(p, text_); }

 private:
  std::size_t width_;
  std::string text_;
};

/// Splits RFC 4180 text back into rows; used to check round-trips.
inline std::vector<std::vector<std::string>> parse_csv(std::string_view text) {
  std::vector<std::vector<std::string>> rows;
  std::vector<std::string> row;
  std::string field;
  bool quoted = false, any = false;
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if (quoted) {
      if (c == '"' && i + 1 < text.size() && text[i + 1] == '"') {
        field += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        field += c;
      }
      continue;
    }
    any = true;
    if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      row.push_back(std::move(field));
      field.clear();
    } else if (c == '\r' && i + 1 < text.size() && text[i + 1] == '\n') {
      // handled on the '\n'
    } else if (c == '\n') {
      row.push_back(std::move(field));
      field.clear();
      rows.push_back(std::move(row));
      row.clear();
      any = false;
    } else {
      field += c;
    }
  }
  if (quoted) throw CorruptionError("csv: unterminated quoted field");
  if (any) {
    row.push_back(std::move(field));
    rows.push_back(std::move(row));
  }
  return rows;
}

/// One row per lifecycle, appended under spi_header().
inline void add_spi_rows(Csv& csv, std::string_view method, const SpiReport& rep) {
  for (std::size_t k = 0; k < rep.details.size(); ++k) {
    const auto& b = rep.details[k];
    csv.add({std::string(method), std::to_string(k), b ? number(b->value) : "", b ? number(b->mean_fgir) : "",
             b ? number(b->mean_fgpr) : "", b ? number(b->retention) : "", b ? number(b->sigma_fpr) : ""});
  }
}

inline std::vector<std::string> spi_header() {
  return {"method", "lifecycle", "spi", "mean_fgir", "mean_fgpr", "retention", "sigma_fpr"};
}

inline nlohmann::json to_json(const SpiReport& r) {
  nlohmann::json per = nlohmann::json::array();
  for (const auto& v : r.per_lifecycle) per.push_back(v ? nlohmann::json(*v) : nlohmann::json());
  return {{"per_lifecycle", per},
          {"mean", std::isnan(r.mean) ? nlohmann::json() : nlohmann::json(r.mean)},
          {"missing", r.missing},
          {"diverged", r.diverged},
          {"mean_fgir", r.mean_breakdown.mean_fgir},
          {"mean_fgpr", r.mean_breakdown.mean_fgpr},
          {"retention", r.mean_breakdown.retention},
          {"sigma_fpr", r.mean_breakdown.sigma_fpr},
          {"sigma_fpr_kind", "population"}};
}

inline Csv ablation_csv(const AblationReport& r) {
  Csv csv({"kind", "metric", "seed", "treatment", "control", "random_policy", "win", "failure"});
  for (const auto& row : r.rows) {
    csv.add({std::string(to_string(r.kind)), r.metric, std::to_string(row.seed), number(row.treatment),
             number(row.control), number(row.reference), row.win ? "1" : "0", row.failure});
  }
  return csv;
}

inline nlohmann::json to_json(const AblationReport& r) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& row : r.rows) {
    rows.push_back({{"seed", row.seed},
                    {"treatment", std::isnan(row.treatment) ? nlohmann::json() : nlohmann::json(row.treatment)},
                    {"control", std::isnan(row.control) ? nlohmann::json() : nlohmann::json(row.control)},
                    {"random_policy", row.reference ? nlohmann::json(*row.reference) : nlohmann::json()},
                    {"win", row.win},
                    {"failure", row.failure}});
  }
  return {{"kind", to_string(r.kind)},
          {"metric", r.metric},
          {"lower_is_better", r.lower_is_better},
          {"rows", rows},
          {"wins", r.wins()},
          {"seeds", r.rows.size()}};
}

/// (x, y) pairs, one row per grid point; failed points keep an empty y.
inline Csv sweep_csv(const SweepReport& r) {
  Csv csv({r.param, r.metric, "best", "failure"});
  for (std::size_t i = 0; i < r.points.size(); ++i) {
    const auto& p = r.points[i];
    csv.add({number(p.value), number(p.metric), r.argbest == i ? "1" : "0", p.failure});
  }
  return csv;
}

inline nlohmann::json to_json(const SweepReport& r) {
  nlohmann::json pts = nlohmann::json::array();
  for (const auto& p : r.points) {
    pts.push_back({{"value", p.value},
                   {"metric", std::isnan(p.metric) ? nlohmann::json() : nlohmann::json(p.metric)},
                   {"failure", p.failure}});
  }
  return {{"param", r.param},
          {"metric", r.metric},
          {"lower_is_better", r.lower_is_better},
          {"points", pts},
          {"argbest", r.argbest ? nlohmann::json(r.points[*r.argbest].value) : nlohmann::json()}};
}

/// Per-step utilities of one lifecycle for plotting.
inline Csv trajectory_csv(const LifecycleTrajectory& t) {
  std::vector<std::string> header{"t"};
  for (const char* n : StorageUtility::kNames) header.emplace_back(n);
  for (std::size_t w = 0; w < (t.plans.empty() ? 0 : t.plans.front().rates.size()); ++w)
    header.push_back("rate_" + std::to_string(w));
  Csv csv(header);
  for (std::size_t k = 0; k < t.length(); ++k) {
    std::vector<std::string> row{std::to_string(k)};
    for (double v : t.utilities[k].values) row.push_back(number(v));
    for (double v : t.plans[k].rates) row.push_back(number(v));
    csv.add(row);
  }
  return csv;
}

}  // namespace bridgegcs::report
