// Copyright 2026 The focus-sim Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "focus/backend.hpp"
#include "focus/error.hpp"
#include "focus/metrics.hpp"
#include "focus/model.hpp"
#include "focus/oracle_trace.hpp"
#include "focus/scheduler.hpp"
#include "focus/workload.hpp"

namespace focus {

inline const std::vector<std::string>& strategy_names() {
  static const std::vector<std::string> names = {"none",      "dc",        "dc_plus",     "focus_top",
                                                 "fixed_top", "fixed_random", "fixed_bottom"};
  return names;
}

inline std::string to_string(CacheMode m) {
  switch (m) {
    case CacheMode::kNone:
      return "none";
    case CacheMode::kDc:
      return "dc";
    case CacheMode::kDcPlus:
      return "dc_plus";
  }
  return "none";
}

inline CacheMode parse_cache_mode(const std::string& s) {
  if (s == "none") return CacheMode::kNone;
  if (s == "dc") return CacheMode::kDc;
  if (s == "dc_plus") return CacheMode::kDcPlus;
  throw Error(ErrorCode::kConfig, "unknown cache mode '" + s + "'");
}

inline std::string to_string(PlaceholderMode m) {
  return m == PlaceholderMode::kAllMasked ? "all_masked" : "unprocessed_only";
}

inline PlaceholderMode parse_placeholder_mode(const std::string& s) {
  if (s == "all_masked") return PlaceholderMode::kAllMasked;
  if (s == "unprocessed_only") return PlaceholderMode::kUnprocessedOnly;
  throw Error(ErrorCode::kConfig, "unknown placeholder mode '" + s + "'");
}

inline StrategyKind parse_strategy_kind(const std::string& s) {
  if (s == "none" || s == "dc" || s == "dc_plus") return StrategyKind::kNone;
  if (s == "focus_top") return StrategyKind::kFocusTop;
  if (s == "fixed_top") return StrategyKind::kFixedTopK;
  if (s == "fixed_random") return StrategyKind::kFixedRandomK;
  if (s == "fixed_bottom") return StrategyKind::kFixedBottomK;
  throw Error(ErrorCode::kConfig, "unknown strategy '" + s + "'");
}

struct RunConfig {
  EngineConfig engine;
  ModelConfig model;
  std::string strategy_name = "none";
  std::optional<std::string> workload;
  std::optional<std::string> out;
  bool seed_given = false;

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json j;
    j["strategy"] = strategy_name;
    j["cache_mode"] = to_string(engine.cache_mode);
    j["alpha"] = engine.alpha;
    j["conf_threshold"] = engine.conf_threshold;
    j["block_size"] = engine.block_size;
    j["fixed_k"] = engine.strategy.fixed_k ? nlohmann::ordered_json(*engine.strategy.fixed_k)
                                           : nlohmann::ordered_json(nullptr);
    j["placeholder_mode"] = to_string(engine.placeholder_mode);
    j["max_batch"] = engine.max_batch;
    j["max_gen_len"] = engine.max_gen_len;
    j["seed"] = engine.seed;
    j["workload"] = workload ? nlohmann::ordered_json(*workload) : nlohmann::ordered_json(nullptr);
    nlohmann::ordered_json m;
    m["n_layers"] = model.n_layers;
    m["hidden"] = model.hidden;
    m["heads"] = model.heads;
    m["d_ff"] = model.d_ff;
    m["vocab"] = model.vocab;
    j["model"] = m;
    return j;
  }
};

namespace detail {

inline void merge_into(nlohmann::json& base, const nlohmann::json& over) {
  for (auto it = over.begin(); it != over.end(); ++it) {
    if (it.value().is_object() && base.contains(it.key()) && base[it.key()].is_object()) {
      merge_into(base[it.key()], it.value());
    } else {
      base[it.key()] = it.value();
    }
  }
}

template <typename T>
T field(const nlohmann::json& j, const char* key, T fallback) {
  if (!j.contains(key) || j[key].is_null()) return fallback;
  try {
    return j[key].get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kConfig, std::string("config field '") + key + "': " + e.what());
  }
}

template <typename T>
std::optional<T> optional_field(const nlohmann::json& j, const char* key) {
  if (!j.contains(key) || j[key].is_null()) return std::nullopt;
  return field<T>(j, key, T{});
}

}  // namespace detail

inline const std::vector<std::string>& config_keys() {
  static const std::vector<std::string> keys = {
      "alpha",   "conf_threshold", "block_size", "max_batch", "max_gen_len", "strategy", "fixed_k",
      "cache_mode", "placeholder_mode", "seed",  "workload",  "out",         "model"};
  return keys;
}

// Layers: built-in defaults, then `file`, then `cli`; later layers win per
// field. Both layers are flat JSON objects using the config_keys() names
// (plus a nested "model" object).
inline RunConfig resolve_config(const nlohmann::json& file, const nlohmann::json& cli) {
  for (const auto* layer : {&file, &cli}) {
    require(layer->is_null() || layer->is_object(), ErrorCode::kConfig, "config must be a JSON object");
    if (layer->is_null()) continue;
    for (auto it = layer->begin(); it != layer->end(); ++it) {
      require(std::find(config_keys().begin(), config_keys().end(), it.key()) != config_keys().end(),
              ErrorCode::kConfig, "unknown config field '" + it.key() + "'");
    }
  }
  nlohmann::json merged = nlohmann::json::object();
  if (file.is_object()) detail::merge_into(merged, file);
  if (cli.is_object()) detail::merge_into(merged, cli);

  RunConfig rc;
  EngineConfig& e = rc.engine;
  e.alpha = detail::field(merged, "alpha", e.alpha);
  e.conf_threshold = detail::field(merged, "conf_threshold", e.conf_threshold);
  e.block_size = detail::field(merged, "block_size", e.block_size);
  e.max_batch = detail::field(merged, "max_batch", e.max_batch);
  e.max_gen_len = detail::field(merged, "max_gen_len", e.max_gen_len);
  rc.seed_given = merged.contains("seed") && !merged["seed"].is_null();
  e.seed = detail::field<std::uint64_t>(merged, "seed", 0);
  rc.strategy_name = detail::field<std::string>(merged, "strategy", "none");
  e.strategy.kind = parse_strategy_kind(rc.strategy_name);
  if (auto k = detail::optional_field<std::size_t>(merged, "fixed_k"); k && e.strategy.is_fixed()) {
    e.strategy.fixed_k = k;
  } else if (k) {
    throw Error(ErrorCode::kConfig, "fixed_k given for non-fixed strategy " + rc.strategy_name);
  }
  e.placeholder_mode =
      parse_placeholder_mode(detail::field<std::string>(merged, "placeholder_mode", "unprocessed_only"));

  const auto explicit_cache = detail::optional_field<std::string>(merged, "cache_mode");
  if (rc.strategy_name == "dc" || rc.strategy_name == "dc_plus") {
    e.cache_mode = parse_cache_mode(rc.strategy_name);
    require(!explicit_cache || parse_cache_mode(*explicit_cache) == e.cache_mode, ErrorCode::kConfig,
            "strategy " + rc.strategy_name + " conflicts with cache_mode " + explicit_cache.value_or(""));
  } else {
    e.cache_mode = parse_cache_mode(explicit_cache.value_or("none"));
  }
  rc.workload = detail::optional_field<std::string>(merged, "workload");
  rc.out = detail::optional_field<std::string>(merged, "out");

  const nlohmann::json model = merged.contains("model") ? merged["model"] : nlohmann::json::object();
  require(model.is_object(), ErrorCode::kConfig, "model must be an object");
  rc.model.n_layers = detail::field(model, "n_layers", rc.model.n_layers);
  rc.model.hidden = detail::field(model, "hidden", rc.model.hidden);
  rc.model.heads = detail::field(model, "heads", rc.model.heads);
  rc.model.d_ff = detail::field(model, "d_ff", rc.model.d_ff);
  rc.model.vocab = detail::field(model, "vocab", rc.model.vocab);
  rc.model.mask_token_id = static_cast<TokenId>(rc.model.vocab) - 1;
  rc.model.block_size = e.block_size;

  e.validate();
  rc.model.validate();
  return rc;
}

inline nlohmann::json load_config_file(const std::filesystem::path& path) {
  std::ifstream is(path);
  require(static_cast<bool>(is), ErrorCode::kIo, "cannot open config " + path.string());
  try {
    return nlohmann::json::parse(is);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kConfig, "config " + path.string() + ": " + e.what());
  }
}

struct RunResult {
  nlohmann::ordered_json report;
  FlopsLedger ledger;
  std::vector<SequenceSummary> sequences;
  std::size_t engine_steps = 0;
};

// Builds one backend per oracle-backed request and a shared toy model for
// the rest, then drains the engine.
inline RunResult run_workload(const RunConfig& rc, const std::vector<WorkloadEntry>& entries,
                              const std::filesystem::path& base_dir, Engine::Observer observer = {}) {
  Engine engine(rc.engine, LedgerDims{rc.model.hidden, rc.model.d_ff, rc.model.n_layers});
  if (observer) engine.set_observer(std::move(observer));
  std::shared_ptr<Backend> toy;
  for (const auto& e : entries) {
    Request r;
    r.id = e.id;
    r.target_len = e.target_len;
    if (e.oracle) {
      OracleTrace trace = load_trace((base_dir / *e.oracle).string());
      const auto vocab = trace.steps.front().logits.cols();
      r.backend = std::make_shared<OracleBackend>(std::move(trace), static_cast<TokenId>(vocab) - 1);
    } else {
      if (!toy) toy = std::make_shared<ToyModelBackend>(init_weights(rc.model, rc.engine.seed));
      r.backend = toy;
    }
    r.prompt = prompt_tokens(e.id, e.prompt_len, r.backend->vocab(), r.backend->mask_token(), rc.engine.seed);
    engine.submit(std::move(r));
  }
  engine.run_to_drain();
  RunResult out{nlohmann::ordered_json{}, engine.ledger(), engine.finished(), engine.engine_steps()};
  out.report = build_report(rc.to_json(), out.ledger, out.sequences, out.engine_steps, rc.engine.block_size);
  return out;
}

}  // namespace focus
