// Copyright 2026 The focus-sim Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <iomanip>
#include <optional>
#include <sstream>
#include <string>

#include <nlohmann/json.hpp>

#include "focus/error.hpp"
#include "focus/metrics.hpp"

namespace focus {

struct ReportTotals {
  double redundancy_ratio = 0.0;
  double tokens_per_gflop = 0.0;
  double decoded = 0.0;
  double flops_total = 0.0;
};

namespace detail {

inline double report_number(const nlohmann::json& report, const char* key, const char* which) {
  const nlohmann::json::json_pointer ptr(std::string("/totals/") + key);
  require(report.contains(ptr), ErrorCode::kSchema, std::string(which) + " report is missing totals." + key);
  const auto& v = report.at(ptr);
  require(v.is_number(), ErrorCode::kSchema, std::string(which) + " report: totals." + key + " is not a number");
  return v.get<double>();
}

}  // namespace detail

inline ReportTotals report_totals(const nlohmann::json& report, const char* which) {
  require(report.is_object() && report.contains("schema_version"), ErrorCode::kSchema,
          std::string(which) + " report has no schema_version");
  require(report["schema_version"] == kReportSchemaVersion, ErrorCode::kSchema,
          std::string(which) + " report schema version " + report["schema_version"].dump() + " is not supported");
  ReportTotals t;
  t.redundancy_ratio = detail::report_number(report, "redundancy_ratio", which);
  t.tokens_per_gflop = detail::report_number(report, "tokens_per_gflop", which);
  t.decoded = detail::report_number(report, "decoded", which);
  t.flops_total = detail::report_number(report, "flops_total", which);
  return t;
}

// Percent by which `b` lowers `a`.
inline double reduction_percent(double a, double b) {
  require(a > 0.0, ErrorCode::kInvalidArgument, "reduction needs a positive reference value");
  return (a - b) / a * 100.0;
}

// Side-by-side of two run reports; `a` is the reference.
inline nlohmann::ordered_json compare_reports(const nlohmann::json& a, const nlohmann::json& b) {
  const ReportTotals ta = report_totals(a, "first");
  const ReportTotals tb = report_totals(b, "second");
  nlohmann::ordered_json out;
  auto row = [&](const char* name, double va, double vb) {
    nlohmann::ordered_json r;
    r["a"] = va;
    r["b"] = vb;
    r["delta"] = vb - va;
    r["ratio"] = va != 0.0 ? nlohmann::ordered_json(vb / va) : nlohmann::ordered_json(nullptr);
    out[name] = r;
  };
  row("redundancy_ratio", ta.redundancy_ratio, tb.redundancy_ratio);
  row("tokens_per_gflop", ta.tokens_per_gflop, tb.tokens_per_gflop);
  row("decoded", ta.decoded, tb.decoded);
  row("flops_total", ta.flops_total, tb.flops_total);
  out["redundancy_reduction_pct"] = reduction_percent(ta.redundancy_ratio, tb.redundancy_ratio);
  return out;
}

inline std::string format_comparison(const nlohmann::ordered_json& cmp) {
  std::ostringstream os;
  os << std::left << std::setw(20) << "metric" << std::right << std::setw(15) << "a" << std::setw(15) << "b"
     << std::setw(15) << "delta" << '\n';
  for (const char* k : {"redundancy_ratio", "tokens_per_gflop", "decoded", "flops_total"}) {
    const auto& r = cmp.at(k);
    os << std::left << std::setw(20) << k << std::right << std::setw(15) << r["a"].get<double>() << std::setw(15)
       << r["b"].get<double>() << std::setw(15) << r["delta"].get<double>() << '\n';
  }
  os << "redundancy reduction " << cmp["redundancy_reduction_pct"].get<double>() << "%\n";
  return os.str();
}

}  // namespace focus
