// Copyright 2026 The focus-sim Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "focus/error.hpp"
#include "focus/model.hpp"
#include "focus/rng.hpp"
#include "focus/tensor.hpp"

namespace focus {

inline constexpr std::size_t kImportancePoolKernel = 3;

// Column importance of intra-block attention: for every head and query row,
// max-pool the row along the key axis, softmax it over the block keys, and
// sum the resulting weights per key column.
inline std::vector<double> compute_importance(const AttentionScores& scores,
                                              std::size_t kernel = kImportancePoolKernel) {
  require(!scores.heads.empty(), ErrorCode::kInvalidArgument, "importance needs at least one head");
  const std::size_t n = scores.heads.front().cols();
  std::vector<double> importance(n, 0.0);
  for (const Matrix& head : scores.heads) {
    require(head.rows() == head.cols() && head.cols() == n, ErrorCode::kDimensionMismatch,
            "importance needs square intra-block score matrices of equal size");
    for (std::size_t i = 0; i < head.rows(); ++i) {
      std::vector<double> pooled = maxpool1d_same(head.row(i), kernel);
      softmax_inplace(pooled);
      for (std::size_t j = 0; j < n; ++j) importance[j] += pooled[j];
    }
  }
  return importance;
}

inline std::vector<double> compute_delta(std::span<const double> layer0, std::span<const double> layer1) {
  require(layer0.size() == layer1.size(), ErrorCode::kDimensionMismatch, "delta inputs differ in length");
  std::vector<double> delta(layer0.size());
  for (std::size_t j = 0; j < delta.size(); ++j) delta[j] = layer1[j] - layer0[j];
  return delta;
}

// Count of masked positions whose delta reaches mean + population std over
// the masked deltas.
inline std::size_t compute_n_sigma(std::span<const double> delta, std::span<const std::size_t> masked) {
  if (masked.empty()) return 0;
  double mean = 0.0;
  for (std::size_t j : masked) mean += delta[j];
  mean /= static_cast<double>(masked.size());
  double var = 0.0;
  for (std::size_t j : masked) var += (delta[j] - mean) * (delta[j] - mean);
  const double threshold = mean + std::sqrt(var / static_cast<double>(masked.size()));
  return static_cast<std::size_t>(
      std::count_if(masked.begin(), masked.end(), [&](std::size_t j) { return delta[j] >= threshold; }));
}

struct Budget {
  std::size_t k = 1;
  std::size_t n_sigma = 0;
  std::size_t k_hist = 1;
  double alpha = 1.5;
};

// ceil() that absorbs representation error in products such as 1.1 * 10.
inline std::size_t ceil_count(double x) {
  const double snapped = std::nearbyint(x);
  if (std::abs(x - snapped) <= 1e-9 * std::max(1.0, std::abs(x))) return static_cast<std::size_t>(snapped);
  return static_cast<std::size_t>(std::ceil(x));
}

// K = min(B, max(ceil(alpha * mean_decoded), n_sigma)); an absent mean
// (first step) counts as one decoded token per step.
inline Budget compute_budget(double alpha, std::optional<double> mean_decoded, std::size_t n_sigma,
                             std::size_t block_size) {
  require(alpha > 1.0, ErrorCode::kInvalidArgument, "alpha must be > 1, got " + std::to_string(alpha));
  require(block_size >= 1, ErrorCode::kInvalidArgument, "block size must be >= 1");
  const double mean = mean_decoded.value_or(1.0);
  require(mean >= 0.0 && std::isfinite(mean), ErrorCode::kInvalidArgument, "mean decoded must be finite, >= 0");
  const double scaled = alpha * mean;
  Budget b;
  b.alpha = alpha;
  b.n_sigma = n_sigma;
  b.k_hist = scaled >= static_cast<double>(block_size) ? block_size : ceil_count(scaled);
  b.k = std::max<std::size_t>(1, std::min(block_size, std::max(b.k_hist, n_sigma)));
  return b;
}

enum class StrategyKind { kFocusTop, kFixedTopK, kFixedRandomK, kFixedBottomK, kNone };

struct SelectionStrategy {
  StrategyKind kind = StrategyKind::kFocusTop;
  std::optional<std::size_t> fixed_k;
  std::uint64_t rng_seed = 0;

  bool is_fixed() const {
    return kind == StrategyKind::kFixedTopK || kind == StrategyKind::kFixedRandomK ||
           kind == StrategyKind::kFixedBottomK;
  }

  void validate() const {
    require(is_fixed() == fixed_k.has_value(), ErrorCode::kConfig,
            "fixed_k is required for fixed strategies and only for them");
    if (fixed_k) require(*fixed_k >= 1, ErrorCode::kConfig, "fixed_k must be >= 1");
  }
};

// Why a position was retained; a position can carry several reasons.
enum Provenance : std::uint8_t {
  kTopK = 1 << 0,
  kPredecessor = 1 << 1,
  kPlaceholder = 1 << 2,
  kUncachedDecoded = 1 << 3,
  kMinRetention = 1 << 4,
};

struct SelectionSet {
  std::vector<std::size_t> indices;      // increasing
  std::vector<std::uint8_t> provenance;  // parallel to indices

  bool contains(std::size_t i) const { return std::binary_search(indices.begin(), indices.end(), i); }

  std::uint8_t provenance_of(std::size_t i) const {
    auto it = std::lower_bound(indices.begin(), indices.end(), i);
    return (it != indices.end() && *it == i) ? provenance[static_cast<std::size_t>(it - indices.begin())] : 0;
  }

  std::size_t size() const noexcept { return indices.size(); }
};

namespace detail {

inline std::vector<std::size_t> candidates(std::span<const double> delta, std::span<const std::size_t> masked,
                                           std::size_t k, const SelectionStrategy& strategy) {
  std::vector<std::size_t> order(masked.begin(), masked.end());
  k = std::min(k, order.size());
  switch (strategy.kind) {
    case StrategyKind::kNone:
      return order;
    case StrategyKind::kFixedRandomK: {
      Rng rng(strategy.rng_seed);
      for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
      order.resize(k);
      return order;
    }
    case StrategyKind::kFixedBottomK:
      std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return delta[a] < delta[b] || (delta[a] == delta[b] && a < b);
      });
      order.resize(k);
      return order;
    case StrategyKind::kFocusTop:
    case StrategyKind::kFixedTopK:
      std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return delta[a] > delta[b] || (delta[a] == delta[b] && a < b);
      });
      order.resize(k);
      return order;
  }
  return order;
}

}  // namespace detail

// Builds the retained set S:
//   candidates  top-K masked by delta (or the fixed strategy's pick)
//   predecessor i-1 of each candidate unless i-1 is already committed
//   placeholder never-processed masked positions below max(S)
//   uncached    decoded positions whose KV is not committed yet
//   minimum     the best masked position if S would otherwise be empty
// `k` is ignored for the `none` strategy, which keeps every masked position.
inline SelectionSet select_tokens(std::span<const double> delta, std::span<const std::size_t> masked,
                                  std::span<const std::size_t> never_processed,
                                  std::span<const std::size_t> uncached_decoded, std::size_t k,
                                  const SelectionStrategy& strategy) {
  require(!masked.empty() || !uncached_decoded.empty(), ErrorCode::kBlockComplete,
          "no masked or uncached positions left in block");
  const std::size_t n = delta.size();
  std::vector<bool> is_masked(n, false);
  std::vector<bool> is_uncached(n, false);
  for (std::size_t j : masked) {
    require(j < n, ErrorCode::kOutOfRange, "masked index outside block");
    is_masked[j] = true;
  }
  for (std::size_t j : uncached_decoded) {
    require(j < n && !is_masked[j], ErrorCode::kInvalidArgument, "uncached decoded index invalid or masked");
    is_uncached[j] = true;
  }
  for (std::size_t j : never_processed) {
    require(j < n && is_masked[j], ErrorCode::kInvalidArgument, "never-processed index must be masked");
  }

  std::vector<std::uint8_t> prov(n, 0);
  for (std::size_t i : detail::candidates(delta, masked, k, strategy)) prov[i] |= kTopK;
  for (std::size_t i = 1; i < n; ++i) {
    if ((prov[i] & kTopK) && (is_masked[i - 1] || is_uncached[i - 1])) prov[i - 1] |= kPredecessor;
  }
  std::optional<std::size_t> top;
  for (std::size_t i = 0; i < n; ++i) {
    if (prov[i]) top = i;
  }
  if (top) {
    for (std::size_t j : never_processed) {
      if (j < *top) prov[j] |= kPlaceholder;
    }
  }
  for (std::size_t j : uncached_decoded) prov[j] |= kUncachedDecoded;

  SelectionSet s;
  for (std::size_t i = 0; i < n; ++i) {
    if (prov[i]) {
      s.indices.push_back(i);
      s.provenance.push_back(prov[i]);
    }
  }
  if (s.indices.empty()) {
    auto best = std::max_element(masked.begin(), masked.end(), [&](std::size_t a, std::size_t b) {
      return delta[a] < delta[b] || (delta[a] == delta[b] && a > b);
    });
    s.indices.push_back(*best);
    s.provenance.push_back(kMinRetention);
  }
  return s;
}

// Order-preserving map between block positions and dense slots.
struct CompactionPlan {
  std::vector<std::optional<std::size_t>> slot_of;  // per block position
  std::vector<std::size_t> position_of;             // per dense slot
};

inline CompactionPlan compaction_plan(const SelectionSet& selection, std::size_t block_len) {
  std::vector<std::size_t> keep(block_len, 0);
  for (std::size_t i : selection.indices) {
    require(i < block_len, ErrorCode::kOutOfRange, "selection index outside block");
    keep[i] = 1;
  }
  std::vector<std::size_t> dest(block_len, 0);
  std::exclusive_scan(keep.begin(), keep.end(), dest.begin(), std::size_t{0});
  CompactionPlan plan;
  plan.slot_of.assign(block_len, std::nullopt);
  plan.position_of.resize(selection.indices.size());
  for (std::size_t i = 0; i < block_len; ++i) {
    if (keep[i]) {
      plan.slot_of[i] = dest[i];
      plan.position_of[dest[i]] = i;
    }
  }
  return plan;
}

}  // namespace focus
