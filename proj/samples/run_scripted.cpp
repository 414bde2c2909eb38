// Copyright 2026 The focus-sim Authors
// SPDX-License-Identifier: Apache-2.0

// Runs one scripted request under the full-block baseline and under
// importance-guided eviction with neighbor-aware delayed caching, then
// prints both redundancy ratios.

#include <iostream>
#include <memory>

#include "focus/focus.hpp"

namespace {

double redundancy(const focus::EngineConfig& cfg, const focus::OracleTrace& trace, std::size_t target) {
  focus::Engine engine(cfg, focus::LedgerDims{});
  focus::Request r;
  r.id = "sample";
  r.target_len = target;
  r.backend = std::make_shared<focus::OracleBackend>(trace, static_cast<focus::TokenId>(15));
  engine.submit(std::move(r));
  engine.run_to_drain();
  return engine.ledger().redundancy_ratio().value_or(0.0);
}

}  // namespace

int main() {
  focus::ScriptedProfile profile;
  profile.min_ready_per_step = 1;
  profile.max_ready_per_step = 2;
  const std::size_t target = 64;
  const auto trace = focus::generate_scripted_trace(profile, target, 7);

  focus::EngineConfig baseline;
  baseline.conf_threshold = 0.8;

  focus::EngineConfig evict = baseline;
  evict.strategy.kind = focus::StrategyKind::kFocusTop;
  evict.cache_mode = focus::CacheMode::kDcPlus;

  const double a = redundancy(baseline, trace, target);
  const double b = redundancy(evict, trace, target);
  std::cout << "baseline redundancy " << a << "\n"
            << "eviction redundancy " << b << "\n"
            << "reduction           " << focus::reduction_percent(a, b) << "%\n";
  return b < a ? 0 : 1;
}
