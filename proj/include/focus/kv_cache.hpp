// Copyright 2026 The focus-sim Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cstddef>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "focus/error.hpp"
#include "focus/tensor.hpp"

namespace focus {

using SeqHandle = std::size_t;

inline constexpr std::size_t kDefaultPageSize = 16;

// Attendable keys/values for one layer of one sequence, with the logical
// position of every row. Rows are ordered by logical position.
struct KvView {
  std::vector<std::size_t> positions;
  Matrix keys;
  Matrix values;
  std::vector<bool> committed;

  std::size_t size() const noexcept { return positions.size(); }
};

// Paged key/value storage. Each sequence owns a logical position space:
// [0, committed_len) is immutable context, followed by the slots of the
// block currently being denoised. Slots map to (page, offset) through a
// per-sequence page table; pages come from a shared free list.
class PagedKvCache {
 public:
  PagedKvCache(std::size_t n_layers, std::size_t width, std::size_t page_size = kDefaultPageSize)
      : n_layers_(n_layers), width_(width), page_size_(page_size), keys_(n_layers), values_(n_layers) {
    require(n_layers >= 1 && width >= 1 && page_size >= 1, ErrorCode::kInvalidArgument,
            "paged cache dimensions must be positive");
  }

  std::size_t n_layers() const noexcept { return n_layers_; }
  std::size_t width() const noexcept { return width_; }
  std::size_t page_size() const noexcept { return page_size_; }

  void add_sequence(SeqHandle seq) {
    require(!seqs_.contains(seq), ErrorCode::kInvalidArgument, "sequence already registered");
    seqs_.emplace(seq, SeqState{});
  }

  void release_sequence(SeqHandle seq) {
    auto& s = state(seq);
    for (std::size_t page : s.page_table) free_pages_.push_back(page);
    seqs_.erase(seq);
  }

  bool has_sequence(SeqHandle seq) const { return seqs_.contains(seq); }

  std::size_t committed_len(SeqHandle seq) const { return state(seq).committed_len; }
  std::size_t block_origin(SeqHandle seq) const { return state(seq).committed_len; }
  std::size_t block_len(SeqHandle seq) const { return state(seq).block_len; }

  std::size_t pages_in_use() const {
    std::size_t n = 0;
    for (const auto& [_, s] : seqs_) n += s.page_table.size();
    return n;
  }

  // Reserves `n` slots directly after the committed context.
  void open_block(SeqHandle seq, std::size_t n) {
    auto& s = state(seq);
    require(s.block_len == 0, ErrorCode::kInvalidArgument, "previous block still open");
    const std::size_t end = s.committed_len + n;
    while (s.page_table.size() * page_size_ < end) s.page_table.push_back(allocate_page());
    s.committed.resize(end, false);
    for (auto& f : s.filled) f.resize(end, false);
    if (s.filled.empty()) s.filled.assign(n_layers_, std::vector<bool>(end, false));
    s.block_len = n;
  }

  // Scatters rows of `k`/`v` to the block-relative `positions`.
  void fill_block_kv(SeqHandle seq, std::size_t layer, std::span<const std::size_t> positions,
                     const Matrix& k, const Matrix& v) {
    auto& s = state(seq);
    require(layer < n_layers_, ErrorCode::kOutOfRange, "layer out of range");
    require(k.rows() == positions.size() && v.rows() == positions.size() && k.cols() == width_ &&
                v.cols() == width_,
            ErrorCode::kDimensionMismatch, "fill_block_kv rows must equal |positions|");
    for (std::size_t r = 0; r < positions.size(); ++r) {
      require(positions[r] < s.block_len, ErrorCode::kOutOfRange,
              "block position " + std::to_string(positions[r]) + " outside block");
      const std::size_t logical = s.committed_len + positions[r];
      require(!s.committed[logical], ErrorCode::kCommittedWrite,
              "write to committed position " + std::to_string(logical));
      write_row(s, layer, logical, k.row(r), v.row(r));
      s.filled[layer][logical] = true;
    }
  }

  // Freezes block-relative positions. Every layer must already hold KV.
  void commit_block_positions(SeqHandle seq, std::span<const std::size_t> positions) {
    auto& s = state(seq);
    for (std::size_t p : positions) {
      require(p < s.block_len, ErrorCode::kOutOfRange, "commit outside block");
      const std::size_t logical = s.committed_len + p;
      for (std::size_t l = 0; l < n_layers_; ++l) {
        require(s.filled[l][logical], ErrorCode::kInvariantViolation,
                "commit of position " + std::to_string(p) + " without KV at layer " + std::to_string(l));
      }
      s.committed[logical] = true;
    }
  }

  // Turns a fully committed block into context.
  void close_block(SeqHandle seq) {
    auto& s = state(seq);
    for (std::size_t p = 0; p < s.block_len; ++p) {
      require(s.committed[s.committed_len + p], ErrorCode::kInvariantViolation,
              "close_block with uncommitted position " + std::to_string(p));
    }
    s.committed_len += s.block_len;
    s.block_len = 0;
  }

  bool is_committed(SeqHandle seq, std::size_t block_pos) const {
    const auto& s = state(seq);
    return s.committed.at(s.committed_len + block_pos);
  }

  bool is_filled(SeqHandle seq, std::size_t layer, std::size_t block_pos) const {
    const auto& s = state(seq);
    return s.filled.at(layer).at(s.committed_len + block_pos);
  }

  // (page id, offset in page) for a logical position.
  std::pair<std::size_t, std::size_t> physical_slot(SeqHandle seq, std::size_t logical) const {
    const auto& s = state(seq);
    require(logical / page_size_ < s.page_table.size(), ErrorCode::kOutOfRange, "logical position unmapped");
    return {s.page_table[logical / page_size_], logical % page_size_};
  }

  // Committed context, committed block slots, and filled (possibly stale)
  // block slots of `layer`.
  KvView context_view(SeqHandle seq, std::size_t layer) const {
    const auto& s = state(seq);
    require(layer < n_layers_, ErrorCode::kOutOfRange, "layer out of range");
    const std::size_t end = s.committed_len + s.block_len;
    KvView view;
    for (std::size_t p = 0; p < end; ++p) {
      if (p < s.committed_len || (!s.filled.empty() && s.filled[layer][p])) view.positions.push_back(p);
    }
    view.keys = Matrix(view.positions.size(), width_);
    view.values = Matrix(view.positions.size(), width_);
    for (std::size_t r = 0; r < view.positions.size(); ++r) {
      const std::size_t p = view.positions[r];
      auto [page, off] = physical_slot(seq, p);
      const std::size_t base = (page * page_size_ + off) * width_;
      std::copy_n(keys_[layer].begin() + static_cast<std::ptrdiff_t>(base), width_, view.keys.row(r).begin());
      std::copy_n(values_[layer].begin() + static_cast<std::ptrdiff_t>(base), width_, view.values.row(r).begin());
      view.committed.push_back(s.committed[p]);
    }
    return view;
  }

 private:
  struct SeqState {
    std::vector<std::size_t> page_table;
    std::size_t committed_len = 0;
    std::size_t block_len = 0;
    std::vector<bool> committed;
    std::vector<std::vector<bool>> filled;  // [layer][logical]
  };

  SeqState& state(SeqHandle seq) {
    auto it = seqs_.find(seq);
    require(it != seqs_.end(), ErrorCode::kOutOfRange, "unknown sequence " + std::to_string(seq));
    return it->second;
  }
  const SeqState& state(SeqHandle seq) const {
    auto it = seqs_.find(seq);
    require(it != seqs_.end(), ErrorCode::kOutOfRange, "unknown sequence " + std::to_string(seq));
    return it->second;
  }

  std::size_t allocate_page() {
    if (!free_pages_.empty()) {
      const std::size_t p = free_pages_.back();
      free_pages_.pop_back();
      return p;
    }
    const std::size_t p = n_pages_++;
    for (std::size_t l = 0; l < n_layers_; ++l) {
      keys_[l].resize(n_pages_ * page_size_ * width_, 0.0);
      values_[l].resize(n_pages_ * page_size_ * width_, 0.0);
    }
    return p;
  }

  void write_row(SeqState& s, std::size_t layer, std::size_t logical, std::span<const double> k,
                 std::span<const double> v) {
    const std::size_t page = s.page_table[logical / page_size_];
    const std::size_t base = (page * page_size_ + logical % page_size_) * width_;
    std::copy(k.begin(), k.end(), keys_[layer].begin() + static_cast<std::ptrdiff_t>(base));
    std::copy(v.begin(), v.end(), values_[layer].begin() + static_cast<std::ptrdiff_t>(base));
  }

  std::size_t n_layers_;
  std::size_t width_;
  std::size_t page_size_;
  std::size_t n_pages_ = 0;
  std::vector<std::size_t> free_pages_;
  std::vector<std::vector<double>> keys_;    // [layer][page * page_size * width]
  std::vector<std::vector<double>> values_;
  std::map<SeqHandle, SeqState> seqs_;
};

// One sequence's slice of a PagedKvCache, in the shape the model expects.
class SequenceKv {
 public:
  SequenceKv(PagedKvCache& cache, SeqHandle seq) : cache_(&cache), seq_(seq) {}

  KvView view(std::size_t layer) const { return cache_->context_view(seq_, layer); }
  void fill(std::size_t layer, std::span<const std::size_t> block_positions, const Matrix& k, const Matrix& v) {
    cache_->fill_block_kv(seq_, layer, block_positions, k, v);
  }
  std::size_t block_origin() const { return cache_->block_origin(seq_); }

 private:
  PagedKvCache* cache_;
  SeqHandle seq_;
};

enum class CommitRule { kNeighborAware, kPlain };

// Intra-block delayed-commit bookkeeping. A position is eligible once it is
// decoded and has been forwarded at least once with its decoded token.
// The neighbor-aware rule additionally waits for position i+1 to decode.
// Completing the block flushes: the engine forwards every uncommitted
// position once more, so all of them commit and the state resets.
class DelayedCacheState {
 public:
  explicit DelayedCacheState(std::size_t block_len)
      : decoded_(block_len, false), forwarded_after_decode_(block_len, false), uncached_(block_len, true) {}

  std::size_t block_len() const noexcept { return uncached_.size(); }
  const std::vector<bool>& uncached_positions() const noexcept { return uncached_; }
  bool warmup() const noexcept { return warmup_; }
  bool is_committed(std::size_t i) const { return !uncached_.at(i); }

  std::size_t committed_count() const {
    return static_cast<std::size_t>(std::count(uncached_.begin(), uncached_.end(), false));
  }

  // Positions whose full forward ran this step, before this step's decode.
  void record_forward(std::span<const std::size_t> positions) {
    for (std::size_t p : positions) {
      require(p < block_len(), ErrorCode::kOutOfRange, "forward position outside block");
      if (decoded_[p]) forwarded_after_decode_[p] = true;
    }
  }

  std::vector<std::size_t> commit_stable(const std::vector<bool>& decoded, bool block_complete) {
    return advance(decoded, block_complete, CommitRule::kNeighborAware);
  }

  std::vector<std::size_t> plain_delayed_commit(const std::vector<bool>& decoded, bool block_complete) {
    return advance(decoded, block_complete, CommitRule::kPlain);
  }

  std::vector<std::size_t> advance(const std::vector<bool>& decoded, bool block_complete, CommitRule rule) {
    require(decoded.size() == block_len(), ErrorCode::kDimensionMismatch, "decoded length != block size");
    for (std::size_t i = 0; i < block_len(); ++i) {
      require(decoded[i] || !decoded_[i], ErrorCode::kInvariantViolation, "decoded flag cleared");
      decoded_[i] = decoded[i];
    }
    std::vector<std::size_t> newly;
    if (block_complete) {
      for (std::size_t i = 0; i < block_len(); ++i) {
        require(decoded_[i], ErrorCode::kInvariantViolation, "block complete with undecoded position");
        if (uncached_[i]) newly.push_back(i);
      }
      reset();
      return newly;
    }
    for (std::size_t i = 0; i < block_len(); ++i) {
      if (!uncached_[i] || !decoded_[i] || !forwarded_after_decode_[i]) continue;
      if (rule == CommitRule::kNeighborAware && (i + 1 >= block_len() || !decoded_[i + 1])) continue;
      uncached_[i] = false;
      newly.push_back(i);
    }
    if (!newly.empty()) warmup_ = false;
    return newly;
  }

  void reset() {
    std::fill(decoded_.begin(), decoded_.end(), false);
    std::fill(forwarded_after_decode_.begin(), forwarded_after_decode_.end(), false);
    std::fill(uncached_.begin(), uncached_.end(), true);
    warmup_ = true;
  }

 private:
  std::vector<bool> decoded_;
  std::vector<bool> forwarded_after_decode_;
  std::vector<bool> uncached_;
  bool warmup_ = true;
};

}  // namespace focus
