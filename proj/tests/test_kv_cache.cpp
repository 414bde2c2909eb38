// Copyright 2026 The focus-sim Authors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <vector>

#include <gtest/gtest.h>

#include "cache_oracle.hpp"
#include "focus/kv_cache.hpp"

namespace focus {
namespace {

Matrix rows_of(std::size_t n, std::size_t width, double base) {
  Matrix m(n, width);
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t c = 0; c < width; ++c) m(r, c) = base + 10.0 * static_cast<double>(r) + static_cast<double>(c);
  }
  return m;
}

TEST(PagedKvCache, WriteThenReadBack) {
  PagedKvCache cache(2, 4, 4);
  cache.add_sequence(1);
  cache.open_block(1, 6);
  const std::vector<std::size_t> pos{0, 1, 2, 3, 4, 5};
  const Matrix k = rows_of(6, 4, 100.0), v = rows_of(6, 4, -100.0);
  cache.fill_block_kv(1, 1, pos, k, v);
  const KvView view = cache.context_view(1, 1);
  EXPECT_EQ(view.positions, pos);
  EXPECT_EQ(view.keys, k);
  EXPECT_EQ(view.values, v);
  EXPECT_EQ(cache.context_view(1, 0).size(), 0u);
}

TEST(PagedKvCache, ScatterLandsAtLogicalOffsets) {
  PagedKvCache cache(1, 2, 2);
  cache.add_sequence(7);
  cache.open_block(7, 4);
  const std::vector<std::size_t> first{0, 1, 2, 3};
  cache.fill_block_kv(7, 0, first, rows_of(4, 2, 0.0), rows_of(4, 2, 0.0));
  cache.commit_block_positions(7, first);
  cache.close_block(7);

  cache.open_block(7, 8);
  const std::vector<std::size_t> pos{0, 2, 5};
  const Matrix k = rows_of(3, 2, 500.0);
  cache.fill_block_kv(7, 0, pos, k, k);
  const KvView view = cache.context_view(7, 0);
  EXPECT_EQ(view.positions, (std::vector<std::size_t>{0, 1, 2, 3, 4, 6, 9}));
  for (std::size_t r = 0; r < 3; ++r) {
    const auto it = std::find(view.positions.begin(), view.positions.end(), 4 + pos[r]);
    ASSERT_NE(it, view.positions.end());
    const auto row = static_cast<std::size_t>(it - view.positions.begin());
    for (std::size_t c = 0; c < 2; ++c) EXPECT_EQ(view.keys(row, c), k(r, c));
  }
  for (std::size_t p : {4u, 6u, 9u}) {
    const auto [page, off] = cache.physical_slot(7, p);
    EXPECT_EQ(off, p % 2);
    (void)page;
  }
}

TEST(PagedKvCache, LastWriteWins) {
  PagedKvCache cache(1, 2);
  cache.add_sequence(0);
  cache.open_block(0, 3);
  const std::vector<std::size_t> pos{1};
  cache.fill_block_kv(0, 0, pos, rows_of(1, 2, 1.0), rows_of(1, 2, 1.0));
  cache.fill_block_kv(0, 0, pos, rows_of(1, 2, 9.0), rows_of(1, 2, 9.0));
  EXPECT_EQ(cache.context_view(0, 0).keys(0, 0), 9.0);
}

TEST(PagedKvCache, CommittedWriteRejected) {
  PagedKvCache cache(2, 2);
  cache.add_sequence(0);
  cache.open_block(0, 2);
  const std::vector<std::size_t> pos{0};
  const Matrix m = rows_of(1, 2, 3.0);
  cache.fill_block_kv(0, 0, pos, m, m);
  EXPECT_THROW(cache.commit_block_positions(0, pos), Error);
  cache.fill_block_kv(0, 1, pos, m, m);
  cache.commit_block_positions(0, pos);
  try {
    cache.fill_block_kv(0, 1, pos, m, m);
    FAIL() << "expected a committed-write error";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kCommittedWrite);
  }
  EXPECT_TRUE(cache.context_view(0, 0).committed[0]);
  EXPECT_THROW(cache.close_block(0), Error);
}

TEST(PagedKvCache, RowCountMismatch) {
  PagedKvCache cache(1, 2);
  cache.add_sequence(0);
  cache.open_block(0, 2);
  const std::vector<std::size_t> pos{0, 1};
  EXPECT_THROW(cache.fill_block_kv(0, 0, pos, rows_of(1, 2, 0), rows_of(1, 2, 0)), Error);
}

TEST(PagedKvCache, ViewLengthMatchesManualCount) {
  Rng rng(3);
  for (int t = 0; t < 50; ++t) {
    const std::size_t layers = 1 + rng.below(3);
    PagedKvCache cache(layers, 2, 1 + rng.below(8));
    cache.add_sequence(0);
    std::size_t committed = 0;
    for (int b = 0; b < 3; ++b) {
      const std::size_t len = 1 + rng.below(12);
      cache.open_block(0, len);
      std::vector<std::vector<bool>> filled(layers, std::vector<bool>(len, false));
      for (std::size_t l = 0; l < layers; ++l) {
        std::vector<std::size_t> pos;
        for (std::size_t i = 0; i < len; ++i) {
          if (rng.uniform() < 0.5) {
            pos.push_back(i);
            filled[l][i] = true;
          }
        }
        cache.fill_block_kv(0, l, pos, rows_of(pos.size(), 2, 0), rows_of(pos.size(), 2, 0));
      }
      for (std::size_t l = 0; l < layers; ++l) {
        const auto n = static_cast<std::size_t>(std::count(filled[l].begin(), filled[l].end(), true));
        EXPECT_EQ(cache.context_view(0, l).size(), committed + n);
      }
      std::vector<std::size_t> all(len);
      for (std::size_t i = 0; i < len; ++i) all[i] = i;
      for (std::size_t l = 0; l < layers; ++l) {
        cache.fill_block_kv(0, l, all, rows_of(len, 2, 0), rows_of(len, 2, 0));
      }
      cache.commit_block_positions(0, all);
      cache.close_block(0);
      committed += len;
      EXPECT_EQ(cache.committed_len(0), committed);
    }
  }
}

TEST(PagedKvCache, ReleasedPagesAreReused) {
  PagedKvCache cache(1, 2, 4);
  cache.add_sequence(0);
  cache.open_block(0, 8);
  EXPECT_EQ(cache.pages_in_use(), 2u);
  cache.release_sequence(0);
  EXPECT_EQ(cache.pages_in_use(), 0u);
  cache.add_sequence(1);
  cache.open_block(1, 4);
  EXPECT_EQ(cache.pages_in_use(), 1u);
  EXPECT_THROW(cache.context_view(0, 0), Error);
}

std::vector<bool> flags(std::size_t b, std::initializer_list<std::size_t> on) {
  std::vector<bool> v(b, false);
  for (std::size_t i : on) v[i] = true;
  return v;
}

TEST(DelayedCache, NeighborAwareHandTrace) {
  DelayedCacheState st(4);
  const std::vector<std::size_t> all{0, 1, 2, 3};
  EXPECT_TRUE(st.warmup());

  st.record_forward(all);
  EXPECT_TRUE(st.commit_stable(flags(4, {0}), false).empty());

  st.record_forward(all);
  EXPECT_EQ(st.commit_stable(flags(4, {0, 1}), false), std::vector<std::size_t>{0});
  EXPECT_FALSE(st.warmup());

  st.record_forward(all);
  EXPECT_EQ(st.commit_stable(flags(4, {0, 1, 2, 3}), true), (std::vector<std::size_t>{1, 2, 3}));
  EXPECT_TRUE(st.warmup());
  EXPECT_EQ(st.committed_count(), 0u);
}

TEST(DelayedCache, NothingDecoded) {
  DelayedCacheState st(4);
  const std::vector<std::size_t> all{0, 1, 2, 3};
  st.record_forward(all);
  EXPECT_TRUE(st.commit_stable(flags(4, {}), false).empty());
  EXPECT_TRUE(st.plain_delayed_commit(flags(4, {}), false).empty());
}

TEST(DelayedCache, AllDecodedThenOneForward) {
  DelayedCacheState st(4);
  const std::vector<std::size_t> all{0, 1, 2, 3};
  st.record_forward(all);
  EXPECT_EQ(st.commit_stable(flags(4, {0, 1, 2, 3}), true), all);
  EXPECT_EQ(st.uncached_positions(), std::vector<bool>(4, true));
}

TEST(DelayedCache, LastPositionWaitsForCompletion) {
  DelayedCacheState st(3);
  const std::vector<std::size_t> all{0, 1, 2};
  st.record_forward(all);
  EXPECT_TRUE(st.commit_stable(flags(3, {1, 2}), false).empty());
  st.record_forward(all);
  EXPECT_EQ(st.commit_stable(flags(3, {1, 2}), false), std::vector<std::size_t>{1});
}

TEST(DelayedCache, PlainCommitIgnoresNeighbor) {
  DelayedCacheState st(4);
  const std::vector<std::size_t> all{0, 1, 2, 3};
  st.record_forward(all);
  EXPECT_TRUE(st.plain_delayed_commit(flags(4, {0}), false).empty());
  st.record_forward(all);
  EXPECT_EQ(st.plain_delayed_commit(flags(4, {0}), false), std::vector<std::size_t>{0});
}

TEST(DelayedCache, ForwardBeforeDecodeDoesNotCount) {
  DelayedCacheState st(2);
  const std::vector<std::size_t> zero{0};
  st.record_forward(zero);
  EXPECT_TRUE(st.plain_delayed_commit(flags(2, {0}), false).empty());
  st.record_forward({});
  EXPECT_TRUE(st.plain_delayed_commit(flags(2, {0}), false).empty());
}

TEST(DelayedCache, ClearedDecodedFlagRejected) {
  DelayedCacheState st(2);
  st.plain_delayed_commit(flags(2, {0}), false);
  EXPECT_THROW(st.plain_delayed_commit(flags(2, {}), false), Error);
  EXPECT_THROW(st.plain_delayed_commit(flags(3, {}), false), Error);
}

TEST(DelayedCache, MatchesBruteForceAndIsStricterThanPlain) {
  Rng rng(2024);
  for (int t = 0; t < 10000; ++t) {
    const std::size_t b = 1 + rng.below(8);
    const auto events = testing::random_history(b, rng);
    for (CommitRule rule : {CommitRule::kNeighborAware, CommitRule::kPlain}) {
      ASSERT_EQ(testing::incremental_timeline(b, events, rule), testing::brute_force_timeline(b, events, rule));
    }
    const auto plus = testing::incremental_timeline(b, events, CommitRule::kNeighborAware);
    const auto plain = testing::incremental_timeline(b, events, CommitRule::kPlain);
    for (std::size_t s = 0; s < plus.size(); ++s) {
      for (std::size_t i = 0; i < b; ++i) {
        if (plus[s][i]) {
          ASSERT_TRUE(plain[s][i]);
        }
        if (s > 0 && plus[s - 1][i]) {
          ASSERT_TRUE(plus[s][i]);
        }
      }
    }
  }
}

}  // namespace
}  // namespace focus
