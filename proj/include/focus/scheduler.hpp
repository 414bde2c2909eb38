// Copyright 2026 The focus-sim Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "focus/backend.hpp"
#include "focus/error.hpp"
#include "focus/focus_core.hpp"
#include "focus/kv_cache.hpp"
#include "focus/metrics.hpp"
#include "focus/model.hpp"
#include "focus/rng.hpp"

namespace focus {

enum class CacheMode { kNone, kDc, kDcPlus };
enum class PlaceholderMode { kAllMasked, kUnprocessedOnly };

struct EngineConfig {
  double alpha = 1.5;
  double conf_threshold = 0.9;
  std::size_t block_size = 32;
  std::size_t max_batch = 8;
  std::size_t max_gen_len = 256;
  SelectionStrategy strategy{StrategyKind::kNone, std::nullopt, 0};
  CacheMode cache_mode = CacheMode::kNone;
  PlaceholderMode placeholder_mode = PlaceholderMode::kUnprocessedOnly;
  std::uint64_t seed = 0;
  std::size_t importance_kernel = kImportancePoolKernel;

  void validate() const {
    if (strategy.kind == StrategyKind::kFocusTop) {
      require(alpha > 1.0, ErrorCode::kConfig, "alpha must be > 1 for focus_top");
    }
    require(conf_threshold > 0.0 && conf_threshold <= 1.0, ErrorCode::kConfig, "conf_threshold must be in (0, 1]");
    require(block_size >= 1, ErrorCode::kConfig, "block_size must be >= 1");
    require(max_batch >= 1, ErrorCode::kConfig, "max_batch must be >= 1");
    require(max_gen_len >= 1, ErrorCode::kConfig, "max_gen_len must be >= 1");
    require(importance_kernel % 2 == 1, ErrorCode::kConfig, "importance kernel must be odd");
    strategy.validate();
  }
};

// Graph-size bucket for a retained-token count: powers of two up to 128,
// then multiples of 256.
inline std::size_t bucketize(std::size_t n_retained) {
  require(n_retained >= 1, ErrorCode::kInvalidArgument, "bucketize needs at least one token");
  if (n_retained <= 128) {
    std::size_t b = 1;
    while (b < n_retained) b <<= 1;
    return b;
  }
  return (n_retained + 255) / 256 * 256;
}

using DecodedMap = std::map<std::size_t, TokenId>;

// Decodes every masked retained position whose confidence reaches the
// threshold; if none does, the single most confident one (lowest index on
// ties). `logits` has one row per `retained` position.
inline DecodedMap decode_and_verify(const Matrix& logits, std::span<const std::size_t> retained,
                                    std::span<const std::size_t> masked_retained, double conf_threshold,
                                    TokenId mask_token) {
  require(logits.rows() == retained.size(), ErrorCode::kDimensionMismatch, "one logit row per retained position");
  DecodedMap out;
  if (masked_retained.empty()) return out;
  const auto choices = greedy_choices(logits, mask_token);
  std::optional<std::size_t> best_row;
  for (std::size_t p : masked_retained) {
    auto it = std::lower_bound(retained.begin(), retained.end(), p);
    require(it != retained.end() && *it == p, ErrorCode::kInvalidArgument, "masked position not retained");
    const auto row = static_cast<std::size_t>(it - retained.begin());
    if (choices[row].confidence >= conf_threshold) out.emplace(p, choices[row].token);
    if (!best_row || choices[row].confidence > choices[*best_row].confidence) best_row = row;
  }
  if (out.empty()) out.emplace(retained[*best_row], choices[*best_row].token);
  return out;
}

// Per-sequence budgeting history; the mean spans blocks.
struct FocusState {
  std::int64_t rightmost_processed = -1;
  std::size_t token_sum = 0;
  std::size_t total_steps = 0;

  std::optional<double> mean_decoded() const {
    if (total_steps == 0) return std::nullopt;
    return static_cast<double>(token_sum) / static_cast<double>(total_steps);
  }
};

inline void update_statistics(FocusState& state, std::size_t n_decoded) {
  state.token_sum += n_decoded;
  state.total_steps += 1;
}

struct BlockState {
  std::vector<TokenId> tokens;
  std::vector<bool> decoded;

  BlockState() = default;
  BlockState(std::size_t len, TokenId mask) : tokens(len, mask), decoded(len, false) {}
  std::size_t length() const { return tokens.size(); }
  bool complete() const { return std::all_of(decoded.begin(), decoded.end(), [](bool d) { return d; }); }
};

enum class SequenceStatus { kQueued, kRunning, kFinished };

struct Request {
  std::string id;
  std::vector<TokenId> prompt;
  std::size_t target_len = 0;
  std::shared_ptr<Backend> backend;
};

struct SequenceState {
  SeqHandle handle = 0;
  Request request;
  std::vector<TokenId> generated;
  BlockState block;
  FocusState focus;
  DelayedCacheState delayed_cache{1};
  std::vector<bool> processed_ever;  // reached Layers 2+ in this block
  SequenceStatus status = SequenceStatus::kQueued;
  std::size_t context_len = 0;
  std::size_t steps = 0;
  std::size_t decoded_total = 0;
  std::size_t processed_total = 0;
};

// Everything one sequence did in one step; handed to the optional observer.
struct StepTrace {
  std::string seq;
  std::size_t step = 0;
  std::size_t seq_step = 0;
  std::vector<std::size_t> active;
  std::vector<double> delta;
  Budget budget;
  SelectionSet selection;
  Matrix logits;
  DecodedMap decoded;
  std::vector<std::size_t> committed;
  bool block_complete = false;
};

// Checks the retained-set closure rules; returns a description per
// violation (empty when the set is valid).
inline std::vector<std::string> selection_violations(const SelectionSet& s, std::span<const std::size_t> masked,
                                                     std::span<const std::size_t> never_processed,
                                                     std::span<const std::size_t> uncached_decoded) {
  std::vector<std::string> v;
  if (s.indices.empty()) v.push_back("empty selection");
  auto in = [](std::span<const std::size_t> set, std::size_t x) {
    return std::find(set.begin(), set.end(), x) != set.end();
  };
  for (std::size_t i : s.indices) {
    if ((s.provenance_of(i) & kTopK) && i > 0 && (in(masked, i - 1) || in(uncached_decoded, i - 1)) &&
        !s.contains(i - 1)) {
      v.push_back("predecessor of " + std::to_string(i) + " missing");
    }
  }
  if (!s.indices.empty()) {
    std::size_t top = 0;
    for (std::size_t i : s.indices) {
      if (s.provenance_of(i) & (kTopK | kPredecessor)) top = std::max(top, i);
    }
    for (std::size_t j : never_processed) {
      if (j < top && !s.contains(j)) v.push_back("placeholder " + std::to_string(j) + " missing");
    }
  }
  for (std::size_t j : uncached_decoded) {
    if (!s.contains(j)) v.push_back("uncached decoded " + std::to_string(j) + " missing");
  }
  return v;
}

// Continuous-batching engine: FIFO admission up to max_batch, one model
// step per running sequence per iteration, slots released on completion.
class Engine {
 public:
  using Observer = std::function<void(const StepTrace&)>;

  Engine(EngineConfig config, LedgerDims dims) : config_(std::move(config)), ledger_(dims) { config_.validate(); }

  const EngineConfig& config() const { return config_; }
  const FlopsLedger& ledger() const { return ledger_; }
  std::size_t engine_steps() const { return engine_steps_; }
  std::size_t queued() const { return queue_.size(); }
  std::size_t admitted_total() const { return next_handle_; }
  const std::vector<SequenceState>& running() const { return running_; }
  void set_observer(Observer obs) { observer_ = std::move(obs); }

  void submit(Request r) {
    require(r.backend != nullptr, ErrorCode::kInvalidArgument, "request " + r.id + " has no backend");
    queue_.push_back(std::move(r));
  }

  bool idle() const { return queue_.empty() && running_.empty(); }

  // Fills free slots from the queue in FIFO order.
  const std::vector<SequenceState>& admit_and_batch() {
    while (running_.size() < config_.max_batch && !queue_.empty()) {
      SequenceState s;
      s.handle = next_handle_++;
      s.request = std::move(queue_.front());
      queue_.pop_front();
      s.status = SequenceStatus::kRunning;
      s.context_len = s.request.prompt.size();
      s.request.backend->begin_sequence(s.handle, s.request.prompt);
      open_block(s);
      running_.push_back(std::move(s));
    }
    return running_;
  }

  // One iteration over the running batch, in admission order.
  std::vector<StepMetrics> step() {
    admit_and_batch();
    require(!running_.empty(), ErrorCode::kInvalidArgument, "step with no running sequence");
    std::vector<StepMetrics> out;
    for (auto& s : running_) out.push_back(step_sequence(s));
    ++engine_steps_;
    for (auto it = running_.begin(); it != running_.end();) {
      if (it->status == SequenceStatus::kFinished) {
        it->request.backend->end_sequence(it->handle);
        finished_.push_back(summarize(*it));
        it = running_.erase(it);
      } else {
        ++it;
      }
    }
    return out;
  }

  void run_to_drain() {
    while (!idle()) step();
  }

  // Finished sequences in admission order.
  std::vector<SequenceSummary> finished() const {
    auto out = finished_;
    std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
    std::vector<SequenceSummary> seqs;
    for (auto& [_, s] : out) seqs.push_back(std::move(s));
    return seqs;
  }

 private:
  std::size_t target_of(const SequenceState& s) const { return s.request.target_len; }

  void open_block(SequenceState& s) {
    const std::size_t b = config_.block_size;
    s.block = BlockState(b, s.request.backend->mask_token());
    s.delayed_cache = DelayedCacheState(b);
    s.processed_ever.assign(b, false);
    s.focus.rightmost_processed = -1;
    s.request.backend->begin_block(s.handle, b);
  }

  std::pair<SeqHandle, SequenceSummary> summarize(const SequenceState& s) const {
    SequenceSummary sum;
    sum.id = s.request.id;
    sum.prompt_len = s.request.prompt.size();
    sum.target_len = s.request.target_len;
    sum.generated = s.generated;
    sum.steps = s.steps;
    sum.decoded = s.decoded_total;
    sum.processed = s.processed_total;
    return {s.handle, std::move(sum)};
  }

  StepMetrics step_sequence(SequenceState& s) {
    const std::size_t b = config_.block_size;
    Backend& backend = *s.request.backend;
    auto& dc = s.delayed_cache;

    std::vector<std::size_t> active;
    for (std::size_t i = 0; i < b; ++i) {
      if (!dc.is_committed(i)) active.push_back(i);
    }
    const PrefixScores scores = backend.prefix(s.handle, s.block.tokens, active);
    const auto l0 = compute_importance(scores.layer0, config_.importance_kernel);
    const auto l1 = compute_importance(scores.layer1, config_.importance_kernel);
    require(l0.size() == active.size() && l1.size() == active.size(), ErrorCode::kInvariantViolation,
            "prefix scores do not cover the active positions");
    const auto active_delta = compute_delta(l0, l1);
    std::vector<double> delta(b, 0.0);
    for (std::size_t i = 0; i < active.size(); ++i) delta[active[i]] = active_delta[i];

    std::vector<std::size_t> masked, never_processed, uncached_decoded;
    for (std::size_t i = 0; i < b; ++i) {
      if (!s.block.decoded[i]) {
        masked.push_back(i);
        const bool unprocessed = static_cast<std::int64_t>(i) > s.focus.rightmost_processed;
        if (config_.placeholder_mode == PlaceholderMode::kAllMasked || unprocessed) never_processed.push_back(i);
      } else if (!dc.is_committed(i)) {
        uncached_decoded.push_back(i);
      }
    }

    const std::size_t n_sigma = compute_n_sigma(delta, masked);
    Budget budget;
    budget.n_sigma = n_sigma;
    switch (config_.strategy.kind) {
      case StrategyKind::kFocusTop:
        budget = compute_budget(config_.alpha, s.focus.mean_decoded(), n_sigma, b);
        break;
      case StrategyKind::kNone:
        budget.k = b;
        break;
      default:
        budget.k = std::min(*config_.strategy.fixed_k, b);
        break;
    }
    SelectionStrategy strategy = config_.strategy;
    strategy.rng_seed = mix_seed(mix_seed(config_.seed, fnv1a(s.request.id)), s.steps);
    const SelectionSet selection =
        select_tokens(delta, masked, never_processed, uncached_decoded, budget.k, strategy);
    if (auto v = selection_violations(selection, masked, never_processed, uncached_decoded); !v.empty()) {
      throw Error(ErrorCode::kInvariantViolation, "selection for " + s.request.id + ": " + v.front());
    }

    const CompactionPlan plan = compaction_plan(selection, b);
    const std::vector<std::size_t>& retained = plan.position_of;
    Matrix logits = backend.suffix(s.handle, retained);
    require(logits.rows() == retained.size(), ErrorCode::kInvariantViolation, "logit rows != |S|");

    std::vector<std::size_t> masked_retained;
    for (std::size_t p : retained) {
      if (!s.block.decoded[p]) masked_retained.push_back(p);
    }
    const DecodedMap decoded = decode_and_verify(logits, retained, masked_retained, config_.conf_threshold,
                                                 backend.mask_token());
    require(!decoded.empty(), ErrorCode::kInvariantViolation, "step made no progress for " + s.request.id);
    for (const auto& [p, tok] : decoded) {
      require(tok != backend.mask_token(), ErrorCode::kInvariantViolation, "decoded the mask token");
      s.block.tokens[p] = tok;
      s.block.decoded[p] = true;
    }

    update_statistics(s.focus, decoded.size());
    s.focus.rightmost_processed = std::max(s.focus.rightmost_processed, static_cast<std::int64_t>(retained.back()));
    for (std::size_t p : retained) s.processed_ever[p] = true;
    dc.record_forward(retained);

    const bool complete = s.block.complete();
    std::vector<std::size_t> committed;
    switch (config_.cache_mode) {
      case CacheMode::kNone:
        if (complete) committed = dc.commit_stable(s.block.decoded, true);
        break;
      case CacheMode::kDc:
        committed = dc.plain_delayed_commit(s.block.decoded, complete);
        break;
      case CacheMode::kDcPlus:
        committed = dc.commit_stable(s.block.decoded, complete);
        break;
    }

    StepMetrics m;
    m.step = engine_steps_;
    m.seq = s.request.id;
    m.retained = retained.size();
    m.decoded = decoded.size();
    m.budget_k = budget.k;
    m.n_sigma = n_sigma;
    m.committed = committed.size();
    m.bucketized = bucketize(retained.size());
    m.prefix_tokens = active.size();
    m.flush_tokens = complete ? committed.size() : 0;
    m.context_len =
        s.context_len + static_cast<std::size_t>(std::count(s.processed_ever.begin(), s.processed_ever.end(), true));

    if (complete) {
      backend.complete_block(s.handle, s.block.tokens, committed);
    } else if (!committed.empty()) {
      backend.commit(s.handle, committed);
    }

    s.steps += 1;
    s.decoded_total += decoded.size();
    s.processed_total += m.processed();
    ledger_.record_step(m);

    if (observer_) {
      StepTrace t;
      t.seq = s.request.id;
      t.step = engine_steps_;
      t.seq_step = s.steps - 1;
      t.active = active;
      t.delta = delta;
      t.budget = budget;
      t.selection = selection;
      t.logits = std::move(logits);
      t.decoded = decoded;
      t.committed = committed;
      t.block_complete = complete;
      observer_(t);
    }

    if (complete) {
      s.generated.insert(s.generated.end(), s.block.tokens.begin(), s.block.tokens.end());
      s.context_len += b;
    }
    if (complete && s.generated.size() >= target_of(s)) {
      s.generated.resize(target_of(s));
      s.status = SequenceStatus::kFinished;
    } else if (s.decoded_total >= config_.max_gen_len) {
      s.status = SequenceStatus::kFinished;  // any partial block is dropped
      s.generated.resize(std::min(s.generated.size(), target_of(s)));
    } else if (complete) {
      open_block(s);
    }
    require(s.steps <= (config_.max_gen_len + b) * b, ErrorCode::kInvariantViolation,
            "sequence " + s.request.id + " exceeded the step bound");
    return m;
  }

  EngineConfig config_;
  FlopsLedger ledger_;
  std::deque<Request> queue_;
  std::vector<SequenceState> running_;
  std::vector<std::pair<SeqHandle, SequenceSummary>> finished_;
  SeqHandle next_handle_ = 0;
  std::size_t engine_steps_ = 0;
  Observer observer_;
};

}  // namespace focus
