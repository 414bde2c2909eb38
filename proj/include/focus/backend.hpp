// Copyright 2026 The focus-sim Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <map>
#include <memory>
#include <span>
#include <vector>

#include "focus/error.hpp"
#include "focus/kv_cache.hpp"
#include "focus/model.hpp"
#include "focus/oracle_trace.hpp"

namespace focus {

struct PrefixScores {
  AttentionScores layer0;
  AttentionScores layer1;
};

// What the engine needs from a model. Calls for one sequence arrive in the
// order: begin_sequence, then per block begin_block, {prefix, suffix,
// commit}*, complete_block, and finally end_sequence.
class Backend {
 public:
  virtual ~Backend() = default;

  virtual std::size_t vocab() const = 0;
  virtual TokenId mask_token() const = 0;

  virtual void begin_sequence(SeqHandle seq, std::span<const TokenId> prompt) = 0;
  virtual void end_sequence(SeqHandle seq) = 0;
  virtual void begin_block(SeqHandle seq, std::size_t block_len) = 0;

  // Scores over `active` x `active` (block positions, increasing).
  virtual PrefixScores prefix(SeqHandle seq, std::span<const TokenId> block_tokens,
                              std::span<const std::size_t> active) = 0;
  // Logits for `retained` (a subset of the last prefix's active set).
  virtual Matrix suffix(SeqHandle seq, std::span<const std::size_t> retained) = 0;
  virtual void commit(SeqHandle seq, std::span<const std::size_t> positions) = 0;
  // Forwards `uncommitted` once more with the final tokens, then commits the
  // whole block as context.
  virtual void complete_block(SeqHandle seq, std::span<const TokenId> final_tokens,
                              std::span<const std::size_t> uncommitted) = 0;
};

// The toy transformer on top of a paged KV cache.
class ToyModelBackend final : public Backend {
 public:
  explicit ToyModelBackend(ModelWeights weights, std::size_t page_size = kDefaultPageSize)
      : weights_(std::move(weights)),
        cache_(weights_.config.n_layers, weights_.config.hidden, page_size) {}

  const ModelWeights& weights() const { return weights_; }
  const PagedKvCache& cache() const { return cache_; }

  std::size_t vocab() const override { return weights_.config.vocab; }
  TokenId mask_token() const override { return weights_.config.mask_token_id; }

  void begin_sequence(SeqHandle seq, std::span<const TokenId> prompt) override {
    cache_.add_sequence(seq);
    if (prompt.empty()) return;
    cache_.open_block(seq, prompt.size());
    SequenceKv kv(cache_, seq);
    forward_causal_fill(weights_, kv, prompt);
    std::vector<std::size_t> all(prompt.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    cache_.commit_block_positions(seq, all);
    cache_.close_block(seq);
  }

  void end_sequence(SeqHandle seq) override {
    cache_.release_sequence(seq);
    pending_.erase(seq);
  }

  void begin_block(SeqHandle seq, std::size_t block_len) override { cache_.open_block(seq, block_len); }

  PrefixScores prefix(SeqHandle seq, std::span<const TokenId> block_tokens,
                      std::span<const std::size_t> active) override {
    SequenceKv kv(cache_, seq);
    auto out = forward_prefix(weights_, kv, block_tokens, active);
    PrefixScores scores{out.layer0_scores, out.layer1_scores};
    pending_[seq] = std::move(out);
    return scores;
  }

  Matrix suffix(SeqHandle seq, std::span<const std::size_t> retained) override {
    auto it = pending_.find(seq);
    require(it != pending_.end(), ErrorCode::kInvariantViolation, "suffix without prefix");
    SequenceKv kv(cache_, seq);
    Matrix logits = forward_suffix(weights_, kv, gather_retained(it->second, retained));
    pending_.erase(it);
    return logits;
  }

  void commit(SeqHandle seq, std::span<const std::size_t> positions) override {
    cache_.commit_block_positions(seq, positions);
  }

  void complete_block(SeqHandle seq, std::span<const TokenId> final_tokens,
                      std::span<const std::size_t> uncommitted) override {
    if (!uncommitted.empty()) {
      SequenceKv kv(cache_, seq);
      auto pre = forward_prefix(weights_, kv, final_tokens, uncommitted);
      forward_suffix(weights_, kv, gather_retained(pre, uncommitted));
      cache_.commit_block_positions(seq, uncommitted);
    }
    cache_.close_block(seq);
  }

 private:
  ModelWeights weights_;
  PagedKvCache cache_;
  std::map<SeqHandle, ForwardPrefixOutput> pending_;
};

// Replays an OracleTrace for one sequence. Block-indexed traces are looked
// up by (block, step within block), repeating a block's last scripted step
// if the engine needs more steps than were scripted; flat traces are
// consumed strictly in order.
class OracleBackend final : public Backend {
 public:
  OracleBackend(OracleTrace trace, TokenId mask_token) : trace_(std::move(trace)), mask_token_(mask_token) {
    validate_trace(trace_);
    if (trace_.block_indexed()) {
      for (std::size_t i = 0; i < trace_.size(); ++i) {
        const std::size_t b = *trace_.steps[i].block;
        if (by_block_.size() <= b) by_block_.resize(b + 1);
        by_block_[b].push_back(i);
      }
    }
  }

  std::size_t vocab() const override { return trace_.steps.front().logits.cols(); }
  TokenId mask_token() const override { return mask_token_; }
  std::size_t block_size() const { return trace_.steps.front().logits.rows(); }

  void begin_sequence(SeqHandle, std::span<const TokenId>) override {}
  void end_sequence(SeqHandle) override {}
  void begin_block(SeqHandle, std::size_t block_len) override {
    require(block_len == block_size(), ErrorCode::kTrace, "trace block size differs from engine block size");
    local_step_ = 0;
  }

  PrefixScores prefix(SeqHandle, std::span<const TokenId>, std::span<const std::size_t> active) override {
    const OracleStep& s = current();
    return {restrict(s.scores_l0, active), restrict(s.scores_l1, active)};
  }

  Matrix suffix(SeqHandle, std::span<const std::size_t> retained) override {
    Matrix logits = gather_rows(current().logits, retained);
    ++local_step_;
    ++global_step_;
    return logits;
  }

  void commit(SeqHandle, std::span<const std::size_t>) override {}

  void complete_block(SeqHandle, std::span<const TokenId>, std::span<const std::size_t>) override { ++block_; }

 private:
  const OracleStep& current() const {
    if (by_block_.empty()) return oracle_step(trace_, global_step_);
    require(block_ < by_block_.size() && !by_block_[block_].empty(), ErrorCode::kTrace,
            "trace has no steps for block " + std::to_string(block_));
    const auto& idx = by_block_[block_];
    return trace_.steps[idx[std::min(local_step_, idx.size() - 1)]];
  }

  static AttentionScores restrict(const AttentionScores& full, std::span<const std::size_t> active) {
    AttentionScores out;
    for (const Matrix& m : full.heads) {
      Matrix r(active.size(), active.size());
      for (std::size_t i = 0; i < active.size(); ++i) {
        for (std::size_t j = 0; j < active.size(); ++j) r(i, j) = m(active[i], active[j]);
      }
      out.heads.push_back(std::move(r));
    }
    return out;
  }

  OracleTrace trace_;
  TokenId mask_token_;
  std::vector<std::vector<std::size_t>> by_block_;
  std::size_t block_ = 0;
  std::size_t local_step_ = 0;
  std::size_t global_step_ = 0;
};

}  // namespace focus
