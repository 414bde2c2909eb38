// Copyright 2026 The focus-sim Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cstddef>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "focus/error.hpp"
#include "focus/model.hpp"

namespace focus {

inline constexpr int kReportSchemaVersion = 1;

// Per-token, per-layer cost: projections 8h^2, MLP 4*d_ff*h, attention over
// a context of L keys 4hL.
inline double flops_per_token_layer(std::size_t hidden, std::size_t d_ff, std::size_t context_len) {
  const double h = static_cast<double>(hidden);
  return 8.0 * h * h + 4.0 * static_cast<double>(d_ff) * h + 4.0 * h * static_cast<double>(context_len);
}

struct StepMetrics {
  std::size_t step = 0;      // engine iteration
  std::string seq;
  std::size_t retained = 0;  // |S|, queries entering Layers 2+
  std::size_t decoded = 0;
  std::size_t budget_k = 0;
  std::size_t n_sigma = 0;
  std::size_t committed = 0;  // positions committed by this step, including the block flush
  std::size_t bucketized = 0;
  std::size_t prefix_tokens = 0;  // queries through Layers 0-1
  std::size_t flush_tokens = 0;   // extra forward of uncommitted positions at block completion
  std::size_t context_len = 0;    // L
  double flops_prefix = 0.0;
  double flops_suffix = 0.0;
  double flops_padded_suffix = 0.0;

  std::size_t processed() const { return retained + flush_tokens; }
};

struct LedgerDims {
  std::size_t hidden = 32;
  std::size_t d_ff = 64;
  std::size_t n_layers = 4;
};

// Accumulates per-step cost. Layers 0-1 are charged at prefix width;
// Layers 2+ at the retained width. The redundancy ratio covers Layers 2+.
class FlopsLedger {
 public:
  explicit FlopsLedger(LedgerDims dims) : dims_(dims) {}

  const LedgerDims& dims() const { return dims_; }

  void record_step(StepMetrics m) {
    const double per = flops_per_token_layer(dims_.hidden, dims_.d_ff, m.context_len);
    const double head_layers = static_cast<double>(std::min<std::size_t>(2, dims_.n_layers));
    const double tail_layers = static_cast<double>(dims_.n_layers > 2 ? dims_.n_layers - 2 : 0);
    m.flops_prefix = static_cast<double>(m.prefix_tokens + m.flush_tokens) * head_layers * per;
    m.flops_suffix = static_cast<double>(m.processed()) * tail_layers * per;
    m.flops_padded_suffix = static_cast<double>(m.bucketized + m.flush_tokens) * tail_layers * per;
    processed_ += m.processed();
    decoded_ += m.decoded;
    flops_prefix_ += m.flops_prefix;
    flops_suffix_ += m.flops_suffix;
    flops_padded_ += m.flops_padded_suffix;
    records_.push_back(std::move(m));
  }

  const std::vector<StepMetrics>& records() const { return records_; }
  std::size_t processed_total() const { return processed_; }
  std::size_t decoded_total() const { return decoded_; }
  double flops_prefix() const { return flops_prefix_; }
  double flops_suffix() const { return flops_suffix_; }
  double flops_total() const { return flops_prefix_ + flops_suffix_; }
  double flops_padded_suffix() const { return flops_padded_; }

  std::optional<double> redundancy_ratio() const {
    if (decoded_ == 0) return std::nullopt;
    return static_cast<double>(processed_) / static_cast<double>(decoded_);
  }

 private:
  LedgerDims dims_;
  std::vector<StepMetrics> records_;
  std::size_t processed_ = 0;
  std::size_t decoded_ = 0;
  double flops_prefix_ = 0.0;
  double flops_suffix_ = 0.0;
  double flops_padded_ = 0.0;
};

struct DecodedHistogram {
  std::map<std::size_t, std::size_t> counts;
  std::size_t steps = 0;
  std::optional<double> mean;
  std::optional<double> mean_proportion;
};

inline DecodedHistogram histogram_decoded_per_step(std::span<const std::size_t> decoded_per_step,
                                                   std::size_t block_size) {
  DecodedHistogram h;
  std::size_t total = 0;
  for (std::size_t d : decoded_per_step) {
    ++h.counts[d];
    total += d;
  }
  h.steps = decoded_per_step.size();
  if (h.steps > 0) {
    h.mean = static_cast<double>(total) / static_cast<double>(h.steps);
    if (block_size > 0) h.mean_proportion = *h.mean / static_cast<double>(block_size);
  }
  return h;
}

struct SequenceSummary {
  std::string id;
  std::size_t prompt_len = 0;
  std::size_t target_len = 0;
  std::vector<TokenId> generated;
  std::size_t steps = 0;
  std::size_t decoded = 0;
  std::size_t processed = 0;
};

namespace detail {

inline nlohmann::ordered_json optional_number(std::optional<double> v) {
  return v ? nlohmann::ordered_json(*v) : nlohmann::ordered_json(nullptr);
}

inline std::string format_double(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

}  // namespace detail

inline nlohmann::ordered_json build_report(const nlohmann::ordered_json& config, const FlopsLedger& ledger,
                                           std::span<const SequenceSummary> sequences, std::size_t engine_steps,
                                           std::size_t block_size) {
  std::vector<std::size_t> per_step;
  per_step.reserve(ledger.records().size());
  for (const auto& r : ledger.records()) per_step.push_back(r.decoded);
  const DecodedHistogram hist = histogram_decoded_per_step(per_step, block_size);

  nlohmann::ordered_json report;
  report["schema_version"] = kReportSchemaVersion;
  report["config"] = config;

  nlohmann::ordered_json totals;
  totals["engine_steps"] = engine_steps;
  totals["sequence_steps"] = ledger.records().size();
  totals["processed_layer2plus"] = ledger.processed_total();
  totals["decoded"] = ledger.decoded_total();
  totals["redundancy_ratio"] = detail::optional_number(ledger.redundancy_ratio());
  totals["flops_prefix"] = ledger.flops_prefix();
  totals["flops_suffix"] = ledger.flops_suffix();
  totals["flops_total"] = ledger.flops_total();
  totals["flops_padded_suffix"] = ledger.flops_padded_suffix();
  totals["tokens_per_gflop"] =
      ledger.flops_total() > 0.0
          ? nlohmann::ordered_json(static_cast<double>(ledger.decoded_total()) / (ledger.flops_total() * 1e-9))
          : nlohmann::ordered_json(nullptr);
  report["totals"] = totals;

  nlohmann::ordered_json h;
  nlohmann::ordered_json counts = nlohmann::ordered_json::object();
  for (const auto& [k, v] : hist.counts) counts[std::to_string(k)] = v;
  h["counts"] = counts;
  h["steps"] = hist.steps;
  h["mean"] = detail::optional_number(hist.mean);
  h["mean_proportion"] = detail::optional_number(hist.mean_proportion);
  report["decoded_per_step"] = h;

  nlohmann::ordered_json seqs = nlohmann::ordered_json::array();
  for (const auto& s : sequences) {
    nlohmann::ordered_json j;
    j["id"] = s.id;
    j["prompt_len"] = s.prompt_len;
    j["target_len"] = s.target_len;
    j["generated_len"] = s.generated.size();
    j["steps"] = s.steps;
    j["decoded"] = s.decoded;
    j["processed"] = s.processed;
    j["tokens"] = s.generated;
    seqs.push_back(j);
  }
  report["sequences"] = seqs;
  return report;
}

inline constexpr const char* kStepsCsvHeader =
    "step,seq,retained,decoded,budget_k,n_sigma,committed,bucketized,prefix_tokens,flush_tokens,context_len,"
    "flops_prefix,flops_suffix,flops_padded_suffix";

inline std::string steps_csv(const FlopsLedger& ledger) {
  std::ostringstream os;
  os << kStepsCsvHeader << '\n';
  for (const auto& r : ledger.records()) {
    os << r.step << ',' << r.seq << ',' << r.retained << ',' << r.decoded << ',' << r.budget_k << ','
       << r.n_sigma << ',' << r.committed << ',' << r.bucketized << ',' << r.prefix_tokens << ','
       << r.flush_tokens << ',' << r.context_len << ',' << detail::format_double(r.flops_prefix) << ','
       << detail::format_double(r.flops_suffix) << ',' << detail::format_double(r.flops_padded_suffix) << '\n';
  }
  return os.str();
}

inline void write_text_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary);
  require(static_cast<bool>(os), ErrorCode::kIo, "cannot open " + path.string() + " for writing");
  os << text;
  os.flush();
  require(static_cast<bool>(os), ErrorCode::kIo, "write failed: " + path.string());
}

// Writes report.json and steps.csv into `out_dir`.
inline void emit_report(const std::filesystem::path& out_dir, const nlohmann::ordered_json& report,
                        const FlopsLedger& ledger) {
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  require(!ec, ErrorCode::kIo, "cannot create " + out_dir.string() + ": " + ec.message());
  write_text_file(out_dir / "report.json", report.dump(2) + "\n");
  write_text_file(out_dir / "steps.csv", steps_csv(ledger));
}

}  // namespace focus
