// Copyright 2026 The focus-sim Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <istream>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "focus/error.hpp"
#include "focus/model.hpp"
#include "focus/rng.hpp"
#include "focus/tensor.hpp"

namespace focus {

// One scripted denoising step for a whole block: logits for every block
// position and full B x B intra-block scores per head for Layers 0 and 1.
// `block` is optional; when every step carries it, steps are replayed per
// block instead of strictly in file order.
struct OracleStep {
  std::size_t step = 0;
  std::optional<std::size_t> block;
  Matrix logits;
  AttentionScores scores_l0;
  AttentionScores scores_l1;
};

struct OracleTrace {
  std::vector<OracleStep> steps;

  std::size_t size() const noexcept { return steps.size(); }
  bool block_indexed() const {
    return !steps.empty() &&
           std::all_of(steps.begin(), steps.end(), [](const OracleStep& s) { return s.block.has_value(); });
  }
};

inline const OracleStep& oracle_step(const OracleTrace& trace, std::size_t step) {
  require(step < trace.size(), ErrorCode::kTrace,
          "oracle step " + std::to_string(step) + " out of range (trace has " + std::to_string(trace.size()) +
              " steps)");
  return trace.steps[step];
}

namespace detail {

inline nlohmann::json matrix_to_json(const Matrix& m) {
  nlohmann::json rows = nlohmann::json::array();
  for (std::size_t r = 0; r < m.rows(); ++r) rows.push_back(std::vector<double>(m.row(r).begin(), m.row(r).end()));
  return rows;
}

inline Matrix matrix_from_json(const nlohmann::json& j, const char* field) {
  require(j.is_array() && !j.empty(), ErrorCode::kTrace, std::string(field) + " must be a nonempty 2-d array");
  std::vector<std::vector<double>> rows;
  for (const auto& r : j) {
    require(r.is_array(), ErrorCode::kTrace, std::string(field) + " rows must be arrays");
    rows.push_back(r.get<std::vector<double>>());
  }
  try {
    return Matrix::from_rows(rows);
  } catch (const Error&) {
    throw Error(ErrorCode::kTrace, std::string(field) + " is ragged");
  }
}

inline nlohmann::json scores_to_json(const AttentionScores& s) {
  nlohmann::json heads = nlohmann::json::array();
  for (const Matrix& m : s.heads) heads.push_back(matrix_to_json(m));
  return heads;
}

inline AttentionScores scores_from_json(const nlohmann::json& j, const char* field) {
  require(j.is_array() && !j.empty(), ErrorCode::kTrace, std::string(field) + " must be a nonempty 3-d array");
  AttentionScores s;
  for (const auto& h : j) s.heads.push_back(matrix_from_json(h, field));
  return s;
}

}  // namespace detail

inline void validate_trace(const OracleTrace& trace) {
  require(!trace.steps.empty(), ErrorCode::kTrace, "empty oracle trace");
  const std::size_t b = trace.steps.front().logits.rows();
  const std::size_t v = trace.steps.front().logits.cols();
  const bool blocked = trace.steps.front().block.has_value();
  for (const OracleStep& s : trace.steps) {
    require(s.logits.rows() == b && s.logits.cols() == v, ErrorCode::kTrace,
            "step " + std::to_string(s.step) + ": logits shape differs across steps");
    require(s.block.has_value() == blocked, ErrorCode::kTrace, "block field present on some steps only");
    for (const auto* sc : {&s.scores_l0, &s.scores_l1}) {
      require(sc->heads.size() == s.scores_l0.heads.size(), ErrorCode::kTrace, "head count differs by layer");
      for (const Matrix& m : sc->heads) {
        require(m.rows() == b && m.cols() == b, ErrorCode::kTrace,
                "step " + std::to_string(s.step) + ": scores must be block x block");
      }
    }
  }
}

inline std::string trace_line(const OracleStep& s) {
  nlohmann::ordered_json j;
  j["step"] = s.step;
  if (s.block) j["block"] = *s.block;
  j["logits"] = detail::matrix_to_json(s.logits);
  j["scores_l0"] = detail::scores_to_json(s.scores_l0);
  j["scores_l1"] = detail::scores_to_json(s.scores_l1);
  return j.dump();
}

inline void write_trace(std::ostream& os, const OracleTrace& trace) {
  for (const OracleStep& s : trace.steps) os << trace_line(s) << '\n';
}

inline OracleTrace read_trace(std::istream& is) {
  OracleTrace trace;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::kTrace, "trace line " + std::to_string(lineno) + ": " + e.what());
    }
    try {
      OracleStep s;
      s.step = j.at("step").get<std::size_t>();
      if (j.contains("block")) s.block = j["block"].get<std::size_t>();
      s.logits = detail::matrix_from_json(j.at("logits"), "logits");
      s.scores_l0 = detail::scores_from_json(j.at("scores_l0"), "scores_l0");
      s.scores_l1 = detail::scores_from_json(j.at("scores_l1"), "scores_l1");
      trace.steps.push_back(std::move(s));
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::kTrace, "trace line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  validate_trace(trace);
  return trace;
}

inline void save_trace(const std::string& path, const OracleTrace& trace) {
  std::ofstream os(path);
  require(static_cast<bool>(os), ErrorCode::kIo, "cannot open " + path + " for writing");
  write_trace(os, trace);
  require(static_cast<bool>(os), ErrorCode::kIo, "write failed: " + path);
}

inline OracleTrace load_trace(const std::string& path) {
  std::ifstream is(path);
  require(static_cast<bool>(is), ErrorCode::kIo, "cannot open trace " + path);
  return read_trace(is);
}

// Synthetic decodability: within each block, positions become decodable
// ("ready") a few per step, chosen from the leftmost not-yet-ready
// positions. Once ready a position stays ready. Ready positions get a
// dominant logit and a Layer 1 column boost, so the importance delta tracks
// decodability; everything else is noise.
struct ScriptedProfile {
  std::size_t block_size = 32;
  std::size_t vocab = 16;
  std::size_t heads = 2;
  std::size_t min_ready_per_step = 1;
  std::size_t max_ready_per_step = 1;
  std::size_t window = 4;        // ready positions are drawn from this many leftmost candidates
  double ready_logit = 10.0;
  double logit_noise = 0.5;      // clamped to +-3 sigma; keeps non-ready confidence below 0.6 at vocab 16
  double column_boost = 4.0;
  double score_noise = 1.0;
  double layer1_noise = 0.3;

  TokenId mask_token() const { return static_cast<TokenId>(vocab) - 1; }

  void validate() const {
    require(block_size >= 1 && vocab >= 3 && heads >= 1, ErrorCode::kConfig, "invalid scripted profile dims");
    require(min_ready_per_step >= 1 && min_ready_per_step <= max_ready_per_step, ErrorCode::kConfig,
            "ready-per-step range invalid");
    require(window >= 1, ErrorCode::kConfig, "window must be >= 1");
  }
};

// Returns a block-indexed trace covering ceil(n_tokens / B) blocks.
inline OracleTrace generate_scripted_trace(const ScriptedProfile& profile, std::size_t n_tokens, std::uint64_t seed) {
  profile.validate();
  const std::size_t b = profile.block_size;
  const std::size_t n_blocks = std::max<std::size_t>(1, (n_tokens + b - 1) / b);
  Rng rng(seed);
  OracleTrace trace;
  std::size_t global = 0;
  for (std::size_t blk = 0; blk < n_blocks; ++blk) {
    std::vector<TokenId> target(b);
    for (auto& t : target) t = static_cast<TokenId>(rng.below(profile.vocab - 1));
    std::vector<bool> ready(b, false);
    std::size_t n_ready = 0;
    while (n_ready < b) {
      const std::size_t span = profile.max_ready_per_step - profile.min_ready_per_step + 1;
      std::size_t c = profile.min_ready_per_step + rng.below(span);
      c = std::min(c, b - n_ready);
      for (std::size_t added = 0; added < c; ++added) {
        std::vector<std::size_t> pool;
        for (std::size_t i = 0; i < b && pool.size() < profile.window; ++i) {
          if (!ready[i]) pool.push_back(i);
        }
        ready[pool[rng.below(pool.size())]] = true;
        ++n_ready;
      }
      OracleStep s;
      s.step = global++;
      s.block = blk;
      s.logits = Matrix(b, profile.vocab);
      for (std::size_t i = 0; i < b; ++i) {
        for (std::size_t t = 0; t < profile.vocab; ++t) {
          const double z = std::clamp(rng.normal(), -3.0, 3.0);
          s.logits(i, t) = z * profile.logit_noise;
        }
        s.logits(i, static_cast<std::size_t>(profile.mask_token())) = -profile.ready_logit;
        if (ready[i]) s.logits(i, static_cast<std::size_t>(target[i])) = profile.ready_logit;
      }
      for (std::size_t h = 0; h < profile.heads; ++h) {
        Matrix l0(b, b);
        Matrix l1(b, b);
        for (std::size_t i = 0; i < b; ++i) {
          for (std::size_t j = 0; j < b; ++j) {
            l0(i, j) = rng.normal(0.0, profile.score_noise);
            l1(i, j) = l0(i, j) + rng.normal(0.0, profile.layer1_noise) + (ready[j] ? profile.column_boost : 0.0);
          }
        }
        s.scores_l0.heads.push_back(std::move(l0));
        s.scores_l1.heads.push_back(std::move(l1));
      }
      trace.steps.push_back(std::move(s));
    }
  }
  return trace;
}

}  // namespace focus
