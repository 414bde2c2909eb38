// Copyright 2026 The focus-sim Authors
// SPDX-License-Identifier: Apache-2.0

// focus_sim: workload generation, engine runs, theory checks and report
// comparison.
//
// Exit codes:
//   0  success
//   2  configuration or usage error
//   3  engine invariant violation
//   4  I/O error (missing workload, unwritable output)
//   5  malformed input data (oracle trace or report)

#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#if __has_include(<CLI/CLI.hpp>)
#include <CLI/CLI.hpp>
#else
#include <CLI11.hpp>
#endif
#include <nlohmann/json.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "focus/focus.hpp"

namespace {

enum ExitCode : int { kOk = 0, kConfigError = 2, kInvariantError = 3, kIoError = 4, kDataError = 5 };

int exit_code_for(focus::ErrorCode code) {
  using focus::ErrorCode;
  switch (code) {
    case ErrorCode::kConfig:
    case ErrorCode::kInvalidArgument:
      return kConfigError;
    case ErrorCode::kIo:
      return kIoError;
    case ErrorCode::kTrace:
    case ErrorCode::kSchema:
      return kDataError;
    case ErrorCode::kDimensionMismatch:
    case ErrorCode::kOutOfRange:
    case ErrorCode::kCommittedWrite:
    case ErrorCode::kBlockComplete:
    case ErrorCode::kInvariantViolation:
      return kInvariantError;
  }
  return kInvariantError;
}

void setup_logging() {
  auto logger = spdlog::stderr_color_mt("focus_sim");
  spdlog::set_default_logger(logger);
  spdlog::set_pattern("[%l] %v");
  spdlog::set_level(spdlog::level::warn);
  if (const char* env = std::getenv("FOCUS_SIM_LOG")) {
    const auto level = spdlog::level::from_str(env);
    // from_str maps unknown names to off; only "off" itself should mean that
    if (level != spdlog::level::off || std::string(env) == "off") spdlog::set_level(level);
  }
}

struct RunFlags {
  std::optional<std::string> config;
  std::optional<double> alpha;
  std::optional<double> conf_threshold;
  std::optional<std::size_t> block_size;
  std::optional<std::string> strategy;
  std::optional<std::string> cache_mode;
  std::optional<std::size_t> fixed_k;
  std::optional<std::string> placeholder_mode;
  std::optional<std::size_t> max_batch;
  std::optional<std::size_t> max_gen_len;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> workload;
  std::optional<std::string> out;
  std::optional<std::size_t> n_layers, hidden, heads, d_ff, vocab;

  nlohmann::json to_layer() const {
    nlohmann::json j = nlohmann::json::object();
    auto put = [&](const char* key, const auto& v) {
      if (v) j[key] = *v;
    };
    put("alpha", alpha);
    put("conf_threshold", conf_threshold);
    put("block_size", block_size);
    put("strategy", strategy);
    put("cache_mode", cache_mode);
    put("fixed_k", fixed_k);
    put("placeholder_mode", placeholder_mode);
    put("max_batch", max_batch);
    put("max_gen_len", max_gen_len);
    put("seed", seed);
    put("workload", workload);
    put("out", out);
    nlohmann::json m = nlohmann::json::object();
    auto put_model = [&](const char* key, const auto& v) {
      if (v) m[key] = *v;
    };
    put_model("n_layers", n_layers);
    put_model("hidden", hidden);
    put_model("heads", heads);
    put_model("d_ff", d_ff);
    put_model("vocab", vocab);
    if (!m.empty()) j["model"] = m;
    return j;
  }
};

int cmd_run(const RunFlags& flags) {
  const nlohmann::json file = flags.config ? focus::load_config_file(*flags.config) : nlohmann::json::object();
  const focus::RunConfig rc = focus::resolve_config(file, flags.to_layer());
  focus::require(rc.seed_given, focus::ErrorCode::kConfig, "run needs --seed (or \"seed\" in the config file)");
  focus::require(rc.workload.has_value(), focus::ErrorCode::kConfig, "run needs --workload");
  focus::require(rc.out.has_value(), focus::ErrorCode::kConfig, "run needs --out");

  const std::filesystem::path workload_path(*rc.workload);
  const auto entries = focus::load_workload(workload_path);
  spdlog::info("run: {} requests, strategy {}, cache {}", entries.size(), rc.strategy_name,
               focus::to_string(rc.engine.cache_mode));
  const auto result = focus::run_workload(rc, entries, workload_path.parent_path(), [](const focus::StepTrace& t) {
    spdlog::debug("step {} seq {} |S|={} K={} decoded={} committed={}", t.step, t.seq, t.selection.size(),
                  t.budget.k, t.decoded.size(), t.committed.size());
  });
  focus::emit_report(*rc.out, result.report, result.ledger);

  const auto& totals = result.report["totals"];
  std::cout << "sequences        " << result.sequences.size() << "\n"
            << "engine steps     " << result.engine_steps << "\n"
            << "decoded          " << totals["decoded"] << "\n"
            << "redundancy ratio " << totals["redundancy_ratio"] << "\n"
            << "tokens/GFLOP     " << totals["tokens_per_gflop"] << "\n"
            << "report           " << (std::filesystem::path(*rc.out) / "report.json").string() << "\n";
  return kOk;
}

struct GenFlags {
  std::size_t n = 8;
  std::vector<std::size_t> prompt_len{4, 16};
  std::vector<std::size_t> target_len{32, 64};
  std::optional<std::uint64_t> seed;
  std::string out;
  bool scripted = false;
  std::size_t block_size = 32;
  std::size_t vocab = 16;
  std::size_t ready_min = 1;
  std::size_t ready_max = 1;
  std::size_t window = 4;
};

int cmd_gen_workload(const GenFlags& g) {
  focus::require(g.prompt_len.size() == 2 && g.target_len.size() == 2, focus::ErrorCode::kConfig,
                 "length ranges take two values: MIN MAX");
  focus::WorkloadSpec spec;
  spec.n_requests = g.n;
  spec.prompt_min = g.prompt_len[0];
  spec.prompt_max = g.prompt_len[1];
  spec.target_min = g.target_len[0];
  spec.target_max = g.target_len[1];
  spec.seed = g.seed.value_or(0);
  if (g.scripted) {
    focus::ScriptedProfile p;
    p.block_size = g.block_size;
    p.vocab = g.vocab;
    p.min_ready_per_step = g.ready_min;
    p.max_ready_per_step = g.ready_max;
    p.window = g.window;
    spec.profile = p;
  }
  const std::filesystem::path out(g.out);
  const auto generated = focus::gen_workload(spec, out.stem().string());
  focus::write_workload(out, generated);
  std::cout << "wrote " << generated.entries.size() << " requests to " << out.string();
  if (!generated.traces.empty()) std::cout << " (+" << generated.traces.size() << " traces)";
  std::cout << "\n";
  return kOk;
}

struct TheoryFlags {
  std::optional<std::uint64_t> seed;
  std::size_t n = 1000000;
  std::vector<double> gammas{1.5, 2.0, 3.0, 5.0};
  std::size_t policy_n = 100000;
  double p_decodable = 0.1;
  double h0_mean = 0.0;
  std::optional<std::string> out;
};

int cmd_theory(const TheoryFlags& t) {
  focus::require(t.seed.has_value(), focus::ErrorCode::kConfig, "theory needs --seed");
  nlohmann::ordered_json doc;
  doc["seed"] = *t.seed;
  doc["n"] = t.n;
  nlohmann::ordered_json rows = nlohmann::ordered_json::array();
  for (const auto& r : focus::gamma_sweep(t.gammas, t.n, *t.seed)) {
    nlohmann::ordered_json j;
    j["gamma"] = r.gamma;
    j["empirical"] = r.mc.p_err;
    j["ci95_lo"] = r.mc.ci95.lo;
    j["ci95_hi"] = r.mc.ci95.hi;
    j["q"] = r.q;
    j["bound"] = r.bound ? nlohmann::ordered_json(*r.bound) : nlohmann::ordered_json(nullptr);
    rows.push_back(j);
  }
  doc["rows"] = rows;
  nlohmann::ordered_json policies = nlohmann::ordered_json::array();
  for (std::size_t i = 0; i < t.gammas.size(); ++i) {
    auto model = focus::GaussianEvictionModel::from_gamma(t.gammas[i]);
    model.h0_mean = t.h0_mean;
    const auto samples =
        focus::sample_labeled_deltas(model, t.policy_n, t.p_decodable, focus::mix_seed(*t.seed, 1000 + i));
    for (const auto& o : focus::threshold_policy_compare(samples, model.threshold())) {
      nlohmann::ordered_json j;
      j["gamma"] = t.gammas[i];
      j["policy"] = focus::to_string(o.policy);
      j["miss_rate"] = o.miss_rate;
      j["retention_rate"] = o.retention_rate;
      policies.push_back(j);
    }
  }
  doc["policies"] = policies;
  const std::string text = doc.dump(2) + "\n";
  if (t.out) {
    focus::write_text_file(*t.out, text);
  }
  std::cout << text;
  return kOk;
}

nlohmann::json read_report(const std::string& path) {
  std::ifstream is(path);
  focus::require(static_cast<bool>(is), focus::ErrorCode::kIo, "cannot open report " + path);
  try {
    return nlohmann::json::parse(is);
  } catch (const nlohmann::json::exception& e) {
    throw focus::Error(focus::ErrorCode::kSchema, "report " + path + ": " + e.what());
  }
}

int cmd_compare(const std::string& a, const std::string& b, const std::optional<std::string>& out) {
  const auto cmp = focus::compare_reports(read_report(a), read_report(b));
  std::cout << focus::format_comparison(cmp);
  if (out) focus::write_text_file(*out, cmp.dump(2) + "\n");
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  setup_logging();
  CLI::App app{"Block-diffusion inference simulator with importance-guided token eviction"};
  app.require_subcommand(1);

  RunFlags rf;
  auto* run = app.add_subcommand("run", "Run a workload through the engine and write report.json/steps.csv");
  run->add_option("--config", rf.config, "JSON config file; flags override its fields");
  run->add_option("--alpha", rf.alpha, "Budget multiplier on the mean decoded count (> 1)");
  run->add_option("--conf-threshold,--conf", rf.conf_threshold, "Decode confidence threshold in (0, 1]");
  run->add_option("--block-size", rf.block_size, "Block length B");
  run->add_option("--strategy", rf.strategy, "Retention strategy")
      ->check(CLI::IsMember(focus::strategy_names()));
  run->add_option("--cache-mode", rf.cache_mode, "Intra-block KV commit rule")
      ->check(CLI::IsMember({"none", "dc", "dc_plus"}));
  run->add_option("--fixed-k", rf.fixed_k, "K for fixed_* strategies");
  run->add_option("--placeholder-mode", rf.placeholder_mode, "Placeholder rule")
      ->check(CLI::IsMember({"all_masked", "unprocessed_only"}));
  run->add_option("--max-batch", rf.max_batch, "Concurrent sequences");
  run->add_option("--max-gen-len", rf.max_gen_len, "Per-sequence decoded-token cap");
  run->add_option("--seed", rf.seed, "Seed for weights, prompts and random selection");
  run->add_option("--workload", rf.workload, "Workload JSONL file");
  run->add_option("--out", rf.out, "Output directory");
  run->add_option("--n-layers", rf.n_layers, "Toy model layers");
  run->add_option("--hidden", rf.hidden, "Toy model hidden size");
  run->add_option("--heads", rf.heads, "Toy model heads");
  run->add_option("--d-ff", rf.d_ff, "Toy model MLP width");
  run->add_option("--vocab", rf.vocab, "Toy model vocabulary (last id is the mask token)");

  GenFlags gf;
  auto* gen = app.add_subcommand("gen-workload", "Write a synthetic workload (and optional oracle traces)");
  gen->add_option("-n,--requests", gf.n, "Number of requests");
  gen->add_option("--prompt-len", gf.prompt_len, "Prompt length range MIN MAX")->expected(2);
  gen->add_option("--target-len", gf.target_len, "Target length range MIN MAX")->expected(2);
  gen->add_option("--seed", gf.seed, "Seed");
  gen->add_option("--out", gf.out, "Output JSONL path")->required();
  gen->add_flag("--scripted", gf.scripted, "Emit a scripted oracle trace per request");
  gen->add_option("--block-size", gf.block_size, "Block length of the scripted traces");
  gen->add_option("--vocab", gf.vocab, "Vocabulary of the scripted traces");
  gen->add_option("--ready-min", gf.ready_min, "Minimum decodable positions per step");
  gen->add_option("--ready-max", gf.ready_max, "Maximum decodable positions per step");
  gen->add_option("--window", gf.window, "Leftmost candidates a decodable position is drawn from");

  TheoryFlags tf;
  auto* theory = app.add_subcommand("theory", "Monte Carlo check of the eviction error bound");
  theory->add_option("--seed", tf.seed, "Seed");
  theory->add_option("-n,--samples", tf.n, "Samples per gamma");
  theory->add_option("--gamma", tf.gammas, "Signal-to-noise ratios to sweep");
  theory->add_option("--policy-samples", tf.policy_n, "Samples per gamma for the policy comparison");
  theory->add_option("--p-decodable", tf.p_decodable, "Fraction of decodable samples in the policy comparison");
  theory->add_option("--h0-mean", tf.h0_mean, "Mean delta of non-decodable samples");
  theory->add_option("--out", tf.out, "Also write the JSON table here");

  std::string report_a, report_b;
  std::optional<std::string> compare_out;
  auto* compare = app.add_subcommand("compare", "Compare two report.json files (first is the reference)");
  compare->add_option("a", report_a, "Reference report")->required();
  compare->add_option("b", report_b, "Candidate report")->required();
  compare->add_option("--out", compare_out, "Also write the comparison JSON here");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kConfigError;
  }

  try {
    if (*run) return cmd_run(rf);
    if (*gen) return cmd_gen_workload(gf);
    if (*theory) return cmd_theory(tf);
    if (*compare) return cmd_compare(report_a, report_b, compare_out);
  } catch (const focus::Error& e) {
    spdlog::error("{}", e.what());
    return exit_code_for(e.code());
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return kInvariantError;
  }
  return kConfigError;
}
