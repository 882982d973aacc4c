#pragma once

// Metrics serialization: full-precision JSON artifacts for single
// runs, and 4-decimal tabular reports (CSV or JSON rows) for grids.

#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "mbrec/core.hpp"
#include "mbrec/eval.hpp"

namespace mbrec {

enum class ReportFormat { kCsv, kJson };

inline ReportFormat report_format_from_string(const std::string& s) {
  if (s == "csv") return ReportFormat::kCsv;
  if (s == "json") return ReportFormat::kJson;
  throw ConfigError("unknown report format: " + s);
}

// Table precision: four decimal places.
inline std::string format_metric_value(double value) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.4f", value);
  return buf;
}

// Full-precision metrics object: label, user count, metric -> K -> value.
inline nlohmann::json metrics_to_json(const MetricsReport& report) {
  nlohmann::json recall = nlohmann::json::object();
  nlohmann::json ndcg = nlohmann::json::object();
  for (std::size_t i = 0; i < report.ks.size(); ++i) {
    const std::string key = std::to_string(report.ks[i]);
    recall[key] = report.recall[i];
    ndcg[key] = report.ndcg[i];
  }
  return nlohmann::json{{"label", report.label},
                        {"users_evaluated", report.users_evaluated},
                        {"recall", recall},
                        {"ndcg", ndcg}};
}

inline MetricsReport metrics_from_json(const nlohmann::json& j) {
  MetricsReport report;
  report.label = j.at("label").get<std::string>();
  report.users_evaluated = j.at("users_evaluated").get<Index>();
  const auto& recall = j.at("recall");
  const auto& ndcg = j.at("ndcg");
  std::vector<Index> ks;
  for (const auto& [key, value] : recall.items()) ks.push_back(std::stoll(key));
  std::sort(ks.begin(), ks.end());
  for (Index k : ks) {
    const std::string key = std::to_string(k);
    report.ks.push_back(k);
    report.recall.push_back(recall.at(key).get<double>());
    report.ndcg.push_back(ndcg.at(key).get<double>());
  }
  return report;
}

inline void save_metrics_json(const std::string& path, const MetricsReport& report) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write metrics file: " + path);
  out << metrics_to_json(report).dump(2) << "\n";
  if (!out) throw IoError("cannot write metrics file: " + path);
}

inline MetricsReport load_metrics_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open metrics file: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("metrics file: ") + e.what(), 0);
  }
  return metrics_from_json(j);
}

// Tabular rows in a fixed order: reports as given, recall before ndcg,
// cutoffs ascending as stored.
inline std::string report_to_csv(const std::vector<MetricsReport>& reports) {
  std::string out = "label,metric,K,value\n";
  for (const MetricsReport& report : reports) {
    for (const char* metric : {"recall", "ndcg"}) {
      const std::vector<double>& values =
          std::string(metric) == "recall" ? report.recall : report.ndcg;
      for (std::size_t i = 0; i < report.ks.size(); ++i) {
        out += report.label + "," + metric + "," + std::to_string(report.ks[i]) + "," +
               format_metric_value(values[i]) + "\n";
      }
    }
  }
  return out;
}

inline nlohmann::json report_to_json_rows(const std::vector<MetricsReport>& reports) {
  nlohmann::json rows = nlohmann::json::array();
  for (const MetricsReport& report : reports) {
    for (const char* metric : {"recall", "ndcg"}) {
      const std::vector<double>& values =
          std::string(metric) == "recall" ? report.recall : report.ndcg;
      for (std::size_t i = 0; i < report.ks.size(); ++i) {
        rows.push_back({{"label", report.label},
                        {"metric", metric},
                        {"K", report.ks[i]},
                        {"value", std::stod(format_metric_value(values[i]))}});
      }
    }
  }
  return rows;
}

// Writes the tabular report. An empty report list is an error and
// creates no file.
inline void write_report(const std::vector<MetricsReport>& reports, ReportFormat format,
                         const std::string& path) {
  if (reports.empty()) throw ConfigError("write_report: no reports to write");
  std::ofstream out(path);
  if (!out) throw IoError("cannot write report: " + path);
  if (format == ReportFormat::kCsv)
    out << report_to_csv(reports);
  else
    out << report_to_json_rows(reports).dump(2) << "\n";
  if (!out) throw IoError("cannot write report: " + path);
}

}  // namespace mbrec
