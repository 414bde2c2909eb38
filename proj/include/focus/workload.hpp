// Copyright 2026 The focus-sim Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "focus/error.hpp"
#include "focus/model.hpp"
#include "focus/oracle_trace.hpp"
#include "focus/rng.hpp"

namespace focus {

struct WorkloadEntry {
  std::string id;
  std::size_t prompt_len = 0;
  std::size_t target_len = 0;
  std::optional<std::string> oracle;  // trace path, relative to the workload file
};

inline std::string workload_line(const WorkloadEntry& e) {
  nlohmann::ordered_json j;
  j["id"] = e.id;
  j["prompt_len"] = e.prompt_len;
  j["target_len"] = e.target_len;
  if (e.oracle) j["oracle"] = *e.oracle;
  return j.dump();
}

inline std::vector<WorkloadEntry> parse_workload(std::istream& is) {
  std::vector<WorkloadEntry> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      WorkloadEntry e;
      e.id = j.at("id").get<std::string>();
      e.prompt_len = j.at("prompt_len").get<std::size_t>();
      e.target_len = j.at("target_len").get<std::size_t>();
      if (j.contains("oracle") && !j["oracle"].is_null()) e.oracle = j["oracle"].get<std::string>();
      require(e.target_len >= 1, ErrorCode::kConfig, "target_len must be >= 1");
      out.push_back(std::move(e));
    } catch (const nlohmann::json::exception& ex) {
      throw Error(ErrorCode::kConfig, "workload line " + std::to_string(lineno) + ": " + ex.what());
    }
  }
  return out;
}

inline std::vector<WorkloadEntry> load_workload(const std::filesystem::path& path) {
  std::ifstream is(path);
  require(static_cast<bool>(is), ErrorCode::kIo, "cannot open workload " + path.string());
  return parse_workload(is);
}

struct WorkloadSpec {
  std::size_t n_requests = 8;
  std::size_t prompt_min = 4;
  std::size_t prompt_max = 16;
  std::size_t target_min = 32;
  std::size_t target_max = 64;
  std::uint64_t seed = 0;
  std::optional<ScriptedProfile> profile;  // emit one oracle trace per request

  void validate() const {
    require(n_requests >= 1, ErrorCode::kConfig, "n_requests must be >= 1");
    require(prompt_min <= prompt_max, ErrorCode::kConfig, "prompt length range is empty");
    require(target_min >= 1 && target_min <= target_max, ErrorCode::kConfig, "target length range invalid");
    if (profile) profile->validate();
  }
};

struct GeneratedWorkload {
  std::vector<WorkloadEntry> entries;
  std::vector<OracleTrace> traces;  // parallel to entries when a profile is set
};

inline std::size_t draw_in_range(Rng& rng, std::size_t lo, std::size_t hi) {
  return lo + static_cast<std::size_t>(rng.below(hi - lo + 1));
}

// Trace files are named "<stem>.<id>.trace.jsonl".
inline GeneratedWorkload gen_workload(const WorkloadSpec& spec, const std::string& trace_stem = "workload") {
  spec.validate();
  Rng rng(spec.seed);
  GeneratedWorkload g;
  for (std::size_t i = 0; i < spec.n_requests; ++i) {
    WorkloadEntry e;
    e.id = "req-" + std::to_string(i);
    e.prompt_len = draw_in_range(rng, spec.prompt_min, spec.prompt_max);
    e.target_len = draw_in_range(rng, spec.target_min, spec.target_max);
    if (spec.profile) {
      e.oracle = trace_stem + "." + e.id + ".trace.jsonl";
      g.traces.push_back(generate_scripted_trace(*spec.profile, e.target_len, mix_seed(spec.seed, fnv1a(e.id))));
    }
    g.entries.push_back(std::move(e));
  }
  return g;
}

// Writes the JSONL file and any traces next to it.
inline void write_workload(const std::filesystem::path& path, const GeneratedWorkload& g) {
  std::ostringstream os;
  for (const auto& e : g.entries) os << workload_line(e) << '\n';
  if (path.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
    require(!ec, ErrorCode::kIo, "cannot create " + path.parent_path().string());
  }
  std::ofstream f(path, std::ios::binary);
  require(static_cast<bool>(f), ErrorCode::kIo, "cannot open " + path.string() + " for writing");
  f << os.str();
  require(static_cast<bool>(f), ErrorCode::kIo, "write failed: " + path.string());
  for (std::size_t i = 0; i < g.traces.size(); ++i) {
    save_trace((path.parent_path() / *g.entries[i].oracle).string(), g.traces[i]);
  }
}

// Prompt tokens are a pure function of (seed, id), never the mask token.
inline std::vector<TokenId> prompt_tokens(const std::string& id, std::size_t len, std::size_t vocab,
                                          TokenId mask_token, std::uint64_t seed) {
  require(vocab >= 2, ErrorCode::kConfig, "vocab too small for prompts");
  Rng rng(mix_seed(seed, fnv1a(id)));
  std::vector<TokenId> out(len);
  for (auto& t : out) {
    t = static_cast<TokenId>(rng.below(vocab - 1));
    if (t >= mask_token) ++t;
  }
  return out;
}

}  // namespace focus
