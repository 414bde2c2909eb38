// Copyright 2026 The focus-sim Authors
// SPDX-License-Identifier: Apache-2.0

#include <filesystem>
#include <optional>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include "focus/compare.hpp"
#include "focus/run.hpp"
#include "focus/workload.hpp"

namespace focus {
namespace {

namespace fs = std::filesystem;

fs::path scratch_dir(const std::string& name) {
  const fs::path p = fs::path(::testing::TempDir()) / ("focus_sim_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::ostringstream os;
  os << is.rdbuf();
  return os.str();
}

TEST(Config, PrecedenceMatrix) {
  const EngineConfig defaults;
  struct Case {
    const char* key;
    nlohmann::json file_value;
    nlohmann::json cli_value;
  };
  const Case cases[] = {{"alpha", 2.0, 3.0},
                        {"conf_threshold", 0.7, 0.8},
                        {"block_size", 16, 8},
                        {"max_batch", 2, 3},
                        {"max_gen_len", 100, 50},
                        {"seed", 5, 6}};
  for (const Case& c : cases) {
    for (int mask = 0; mask < 4; ++mask) {
      nlohmann::json file = nlohmann::json::object(), cli = nlohmann::json::object();
      if (mask & 1) file[c.key] = c.file_value;
      if (mask & 2) cli[c.key] = c.cli_value;
      const RunConfig rc = resolve_config(file, cli);
      const std::string got = rc.to_json()[c.key].dump();
      if (mask & 2) {
        EXPECT_EQ(got, c.cli_value.dump()) << c.key;
      } else if (mask & 1) {
        EXPECT_EQ(got, c.file_value.dump()) << c.key;
      } else {
        EXPECT_EQ(got, RunConfig{}.to_json()[c.key].dump()) << c.key;
      }
    }
  }
  EXPECT_EQ(defaults.alpha, 1.5);
  EXPECT_EQ(defaults.block_size, 32u);
}

TEST(Config, StringFieldsAndModelOverrides) {
  const nlohmann::json file = {{"strategy", "fixed_top"},
                               {"fixed_k", 3},
                               {"placeholder_mode", "all_masked"},
                               {"model", {{"hidden", 64}, {"heads", 8}}}};
  const nlohmann::json cli = {{"strategy", "fixed_random"}, {"model", {{"hidden", 16}, {"heads", 2}}}};
  const RunConfig rc = resolve_config(file, cli);
  EXPECT_EQ(rc.strategy_name, "fixed_random");
  EXPECT_EQ(rc.engine.strategy.kind, StrategyKind::kFixedRandomK);
  EXPECT_EQ(rc.engine.strategy.fixed_k, 3u);
  EXPECT_EQ(rc.engine.placeholder_mode, PlaceholderMode::kAllMasked);
  EXPECT_EQ(rc.model.hidden, 16u);
  EXPECT_EQ(rc.model.heads, 2u);
  EXPECT_EQ(rc.model.mask_token_id, static_cast<TokenId>(rc.model.vocab) - 1);
}

TEST(Config, CacheModeFollowsStrategy) {
  EXPECT_EQ(resolve_config({{"strategy", "dc_plus"}}, {}).engine.cache_mode, CacheMode::kDcPlus);
  EXPECT_EQ(resolve_config({{"strategy", "dc"}}, {}).engine.cache_mode, CacheMode::kDc);
  EXPECT_EQ(resolve_config({{"strategy", "dc"}}, {}).engine.strategy.kind, StrategyKind::kNone);
  EXPECT_EQ(resolve_config({{"strategy", "focus_top"}, {"cache_mode", "dc_plus"}}, {}).engine.cache_mode,
            CacheMode::kDcPlus);
  EXPECT_THROW(resolve_config({{"strategy", "dc"}, {"cache_mode", "dc_plus"}}, {}), Error);
}

TEST(Config, Rejections) {
  auto code = [](const nlohmann::json& file) -> std::optional<ErrorCode> {
    try {
      resolve_config(file, {});
    } catch (const Error& e) {
      return e.code();
    }
    return std::nullopt;
  };
  EXPECT_EQ(code({{"alpah", 2.0}}), ErrorCode::kConfig);
  EXPECT_EQ(code({{"strategy", "magic"}}), ErrorCode::kConfig);
  EXPECT_EQ(code({{"alpha", "high"}}), ErrorCode::kConfig);
  EXPECT_EQ(code({{"strategy", "focus_top"}, {"alpha", 1.0}}), ErrorCode::kConfig);
  EXPECT_EQ(code({{"strategy", "fixed_top"}}), ErrorCode::kConfig);
  EXPECT_EQ(code({{"fixed_k", 2}}), ErrorCode::kConfig);
  EXPECT_EQ(code({{"conf_threshold", 1.5}}), ErrorCode::kConfig);
  EXPECT_EQ(code(nlohmann::json::array()), ErrorCode::kConfig);
}

TEST(Config, LoadFileErrors) {
  const fs::path dir = scratch_dir("cfg");
  try {
    load_config_file(dir / "missing.json");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kIo);
  }
  std::ofstream(dir / "bad.json") << "{not json";
  try {
    load_config_file(dir / "bad.json");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kConfig);
  }
}

TEST(Workload, FixedLengths) {
  WorkloadSpec s;
  s.n_requests = 3;
  s.prompt_min = s.prompt_max = 5;
  s.target_min = s.target_max = 40;
  const auto g = gen_workload(s);
  ASSERT_EQ(g.entries.size(), 3u);
  for (const auto& e : g.entries) {
    EXPECT_EQ(e.prompt_len, 5u);
    EXPECT_EQ(e.target_len, 40u);
    EXPECT_FALSE(e.oracle.has_value());
  }
  std::stringstream ss;
  for (const auto& e : g.entries) ss << workload_line(e) << '\n';
  const auto parsed = parse_workload(ss);
  ASSERT_EQ(parsed.size(), 3u);
  EXPECT_EQ(parsed[2].id, "req-2");
}

TEST(Workload, SameSeedSameBytes) {
  const fs::path dir = scratch_dir("wl");
  WorkloadSpec s;
  s.seed = 17;
  s.profile = ScriptedProfile{};
  s.profile->block_size = 8;
  write_workload(dir / "a" / "w.jsonl", gen_workload(s, "w"));
  write_workload(dir / "b" / "w.jsonl", gen_workload(s, "w"));
  EXPECT_EQ(slurp(dir / "a" / "w.jsonl"), slurp(dir / "b" / "w.jsonl"));
  EXPECT_EQ(slurp(dir / "a" / "w.req-3.trace.jsonl"), slurp(dir / "b" / "w.req-3.trace.jsonl"));
  s.seed = 18;
  write_workload(dir / "c" / "w.jsonl", gen_workload(s, "w"));
  EXPECT_NE(slurp(dir / "a" / "w.jsonl"), slurp(dir / "c" / "w.jsonl"));
}

TEST(Workload, ParseErrors) {
  std::stringstream bad("{\"id\": \"a\", \"prompt_len\": 3}\n");
  try {
    parse_workload(bad);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kConfig);
  }
  try {
    load_workload("/nonexistent/focus-sim/w.jsonl");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kIo);
  }
  std::stringstream blank("\n  \n");
  EXPECT_TRUE(parse_workload(blank).empty());
}

TEST(Workload, PromptTokensAvoidMask) {
  const auto p = prompt_tokens("x", 500, 8, 3, 1);
  for (TokenId t : p) {
    EXPECT_NE(t, 3);
    EXPECT_LT(t, 8);
  }
  EXPECT_EQ(p, prompt_tokens("x", 500, 8, 3, 1));
  EXPECT_NE(p, prompt_tokens("y", 500, 8, 3, 1));
}

RunConfig make_config(const std::string& strategy, nlohmann::json extra = nlohmann::json::object()) {
  extra["strategy"] = strategy;
  extra["seed"] = 3;
  return resolve_config(extra, {});
}

TEST(Run, ScriptedBaselineTakesTargetSteps) {
  const fs::path dir = scratch_dir("scripted");
  WorkloadSpec s;
  s.n_requests = 4;
  s.target_min = 8;
  s.target_max = 40;
  s.profile = ScriptedProfile{};
  s.profile->block_size = 8;
  const auto g = gen_workload(s, "w");
  write_workload(dir / "w.jsonl", g);
  const auto entries = load_workload(dir / "w.jsonl");
  const RunResult r = run_workload(make_config("none", {{"block_size", 8}}), entries, dir);
  ASSERT_EQ(r.sequences.size(), 4u);
  for (std::size_t i = 0; i < 4; ++i) {
    const std::size_t t = entries[i].target_len;
    EXPECT_EQ(r.sequences[i].generated.size(), t);
    EXPECT_EQ(r.sequences[i].steps, (t + 7) / 8 * 8);
    EXPECT_EQ(r.sequences[i].decoded, (t + 7) / 8 * 8);
  }
}

TEST(Run, ForcedFullBudgetMatchesBaseline) {
  WorkloadSpec s;
  s.n_requests = 3;
  s.target_min = 8;
  s.target_max = 20;
  const auto g = gen_workload(s);
  const nlohmann::json base = {{"block_size", 8}, {"conf_threshold", 0.2}};
  nlohmann::json forced = base;
  forced["alpha"] = 1e9;
  const RunResult a = run_workload(make_config("none", base), g.entries, ".");
  const RunResult b = run_workload(make_config("focus_top", forced), g.entries, ".");
  ASSERT_EQ(a.sequences.size(), b.sequences.size());
  for (std::size_t i = 0; i < a.sequences.size(); ++i) EXPECT_EQ(a.sequences[i].generated, b.sequences[i].generated);
}

TEST(Run, FocusLowersRedundancyOnScriptedTrace) {
  const fs::path dir = scratch_dir("ratio");
  WorkloadSpec s;
  s.n_requests = 4;
  s.profile = ScriptedProfile{};
  s.profile->max_ready_per_step = 2;
  write_workload(dir / "w.jsonl", gen_workload(s, "w"));
  const auto entries = load_workload(dir / "w.jsonl");
  const RunResult a = run_workload(make_config("none"), entries, dir);
  const RunResult b = run_workload(make_config("focus_top", {{"conf_threshold", 0.8}, {"cache_mode", "dc_plus"}}),
                                   entries, dir);
  EXPECT_LT(*b.ledger.redundancy_ratio(), *a.ledger.redundancy_ratio());
}

TEST(Run, MissingTraceIsIoError) {
  const std::vector<WorkloadEntry> entries{{"a", 2, 8, std::string("nope.trace.jsonl")}};
  try {
    run_workload(make_config("none"), entries, "/nonexistent");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kIo);
  }
}

nlohmann::json report_with(double ratio, double tpg, double decoded, double flops) {
  return {{"schema_version", kReportSchemaVersion},
          {"totals",
           {{"redundancy_ratio", ratio}, {"tokens_per_gflop", tpg}, {"decoded", decoded}, {"flops_total", flops}}}};
}

TEST(Compare, ReductionArithmetic) {
  const auto cmp = compare_reports(report_with(15.02, 1.0, 100, 1e9), report_with(3.12, 2.0, 100, 5e8));
  EXPECT_NEAR(cmp["redundancy_reduction_pct"].get<double>(), 79.23, 0.005);
  EXPECT_DOUBLE_EQ(cmp["tokens_per_gflop"]["ratio"].get<double>(), 2.0);
  EXPECT_DOUBLE_EQ(cmp["flops_total"]["delta"].get<double>(), -5e8);
  EXPECT_FALSE(format_comparison(cmp).empty());
}

TEST(Compare, IdenticalReportsHaveZeroDeltas) {
  const auto r = report_with(4.5, 3.25, 77, 1234.5);
  const auto cmp = compare_reports(r, r);
  for (const char* k : {"redundancy_ratio", "tokens_per_gflop", "decoded", "flops_total"}) {
    EXPECT_EQ(cmp[k]["delta"].get<double>(), 0.0) << k;
  }
  EXPECT_EQ(cmp["redundancy_reduction_pct"].get<double>(), 0.0);
}

TEST(Compare, SchemaErrors) {
  auto code = [](const nlohmann::json& b) -> std::optional<ErrorCode> {
    try {
      compare_reports(report_with(1, 1, 1, 1), b);
    } catch (const Error& e) {
      return e.code();
    }
    return std::nullopt;
  };
  nlohmann::json missing = report_with(1, 1, 1, 1);
  missing["totals"].erase("flops_total");
  EXPECT_EQ(code(missing), ErrorCode::kSchema);
  nlohmann::json version = report_with(1, 1, 1, 1);
  version["schema_version"] = 99;
  EXPECT_EQ(code(version), ErrorCode::kSchema);
  nlohmann::json null_ratio = report_with(1, 1, 1, 1);
  null_ratio["totals"]["redundancy_ratio"] = nullptr;
  EXPECT_EQ(code(null_ratio), ErrorCode::kSchema);
  EXPECT_EQ(code(nlohmann::json::array()), ErrorCode::kSchema);
}

}  // namespace
}  // namespace focus
