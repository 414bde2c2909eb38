// Copyright 2026 The focus-sim Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <cstring>
#include <sstream>
#include <vector>

#include <gtest/gtest.h>

#include "focus/backend.hpp"
#include "focus/kv_cache.hpp"
#include "focus/model.hpp"
#include "focus/oracle_trace.hpp"
#include "reference_model.hpp"

namespace focus {
namespace {

ModelConfig small_config(std::size_t layers, std::size_t hidden, std::size_t block) {
  ModelConfig c;
  c.n_layers = layers;
  c.hidden = hidden;
  c.heads = hidden >= 32 ? 4 : 2;
  c.d_ff = 2 * hidden;
  c.vocab = 12;
  c.mask_token_id = 11;
  c.block_size = block;
  return c;
}

std::vector<TokenId> random_tokens(Rng& rng, std::size_t n, std::size_t vocab) {
  std::vector<TokenId> t(n);
  for (auto& x : t) x = static_cast<TokenId>(rng.below(vocab));
  return t;
}

std::vector<std::size_t> iota(std::size_t n) {
  std::vector<std::size_t> v(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = i;
  return v;
}

TEST(InitWeights, Deterministic) {
  const ModelConfig c = small_config(2, 16, 4);
  const ModelWeights a = init_weights(c, 11);
  const ModelWeights b = init_weights(c, 11);
  const ModelWeights d = init_weights(c, 12);
  EXPECT_EQ(a.embedding, b.embedding);
  EXPECT_EQ(a.lm_head, b.lm_head);
  for (std::size_t l = 0; l < 2; ++l) EXPECT_EQ(a.layers[l].wq, b.layers[l].wq);
  EXPECT_FALSE(a.embedding == d.embedding);
}

TEST(InitWeights, ScaledNormal) {
  const ModelConfig c = small_config(4, 64, 4);
  const ModelWeights w = init_weights(c, 3);
  std::vector<double> all;
  for (const auto& l : w.layers) {
    all.insert(all.end(), l.wq.data().begin(), l.wq.data().end());
    all.insert(all.end(), l.w_up.data().begin(), l.w_up.data().end());
  }
  ASSERT_GE(all.size(), 10000u);
  double mean = 0.0, sq = 0.0;
  for (double v : all) mean += v;
  mean /= static_cast<double>(all.size());
  for (double v : all) sq += (v - mean) * (v - mean);
  const double sd = std::sqrt(sq / static_cast<double>(all.size()));
  const double target = 1.0 / std::sqrt(64.0);
  EXPECT_GE(sd, 0.5 * target);
  EXPECT_LE(sd, 2.0 * target);
}

TEST(ModelConfig, Validation) {
  ModelConfig c = small_config(1, 16, 4);
  EXPECT_THROW(c.validate(), Error);
  c = small_config(2, 16, 4);
  c.heads = 3;
  EXPECT_THROW(c.validate(), Error);
}

TEST(ForwardPrefix, SingleTokenBlockGivesOneByOneScores) {
  const ModelConfig c = small_config(2, 16, 4);
  ToyModelBackend backend(init_weights(c, 1));
  backend.begin_sequence(0, {});
  backend.begin_block(0, 1);
  const std::vector<TokenId> block{3};
  const std::vector<std::size_t> active{0};
  const PrefixScores s = backend.prefix(0, block, active);
  ASSERT_EQ(s.layer0.heads.size(), c.heads);
  for (const Matrix& m : s.layer0.heads) {
    EXPECT_EQ(m.rows(), 1u);
    EXPECT_EQ(m.cols(), 1u);
  }
}

TEST(ForwardPrefix, ScoreShapeAndBlockTooLong) {
  const ModelConfig c = small_config(3, 16, 8);
  const ModelWeights w = init_weights(c, 2);
  PagedKvCache cache(c.n_layers, c.hidden);
  cache.add_sequence(0);
  cache.open_block(0, 8);
  SequenceKv kv(cache, 0);
  const std::vector<TokenId> block(8, 11);
  const std::vector<std::size_t> active{0, 2, 3, 7};
  const auto out = forward_prefix(w, kv, block, active);
  for (const auto* s : {&out.layer0_scores, &out.layer1_scores}) {
    for (const Matrix& m : s->heads) {
      EXPECT_EQ(m.rows(), 4u);
      EXPECT_EQ(m.cols(), 4u);
    }
  }
  // Layer 1 KV is in place before any eviction
  for (std::size_t p : active) {
    EXPECT_TRUE(cache.is_filled(0, 0, p));
    EXPECT_TRUE(cache.is_filled(0, 1, p));
  }
  const std::vector<TokenId> long_block(9, 11);
  EXPECT_THROW(forward_prefix(w, kv, long_block, iota(9)), Error);
}

// Prompt prefill, then one full block through prefix + suffix, against the
// monolithic naive forward.
double full_block_diff(const ModelConfig& c, std::uint64_t seed) {
  Rng rng(seed);
  const ModelWeights w = init_weights(c, seed);
  const auto prompt = random_tokens(rng, rng.below(6), c.vocab);
  const auto block = random_tokens(rng, c.block_size, c.vocab);
  ToyModelBackend backend(w);
  backend.begin_sequence(0, prompt);
  backend.begin_block(0, c.block_size);
  const auto all = iota(c.block_size);
  backend.prefix(0, block, all);
  const Matrix logits = backend.suffix(0, all);
  std::vector<testing::Segment> history;
  if (!prompt.empty()) history.push_back({prompt, true});
  const auto ref = testing::reference_block_logits(w, history, block);
  double diff = 0.0;
  for (std::size_t i = 0; i < c.block_size; ++i) {
    for (std::size_t t = 0; t < c.vocab; ++t) diff = std::max(diff, std::abs(logits(i, t) - ref[i][t]));
  }
  return diff;
}

TEST(SplitForward, FullBlockMatchesDenseReference) {
  Rng rng(99);
  const std::size_t hs[] = {16, 32, 64};
  const std::size_t bs[] = {1, 4, 8, 16};
  for (int t = 0; t < 24; ++t) {
    const ModelConfig c = small_config(2 + rng.below(4), hs[rng.below(3)], bs[rng.below(4)]);
    EXPECT_LT(full_block_diff(c, 1000 + t), 1e-10) << "trial " << t;
  }
}

TEST(SplitForward, RetainedSubsetMatchesMaskingOracle) {
  const ModelConfig c = small_config(4, 16, 8);
  Rng rng(5);
  for (int t = 0; t < 10; ++t) {
    const ModelWeights w = init_weights(c, 500 + t);
    const auto prompt = random_tokens(rng, 3, c.vocab);
    const auto block = random_tokens(rng, 8, c.vocab);
    std::vector<std::size_t> retained;
    for (std::size_t i = 0; i < 8; ++i) {
      if (rng.uniform() < 0.5) retained.push_back(i);
    }
    if (retained.empty()) retained.push_back(rng.below(8));
    ToyModelBackend backend(w);
    backend.begin_sequence(0, prompt);
    backend.begin_block(0, 8);
    backend.prefix(0, block, iota(8));
    const Matrix logits = backend.suffix(0, retained);
    const auto ref = testing::reference_evicted_logits(w, {{prompt, true}}, block, retained);
    ASSERT_EQ(ref.size(), retained.size());
    for (std::size_t i = 0; i < retained.size(); ++i) {
      for (std::size_t v = 0; v < c.vocab; ++v) EXPECT_NEAR(logits(i, v), ref[i][v], 1e-10);
    }
  }
}

TEST(SplitForward, SingleRetainedInFreshBlock) {
  const ModelConfig c = small_config(3, 16, 1);
  const ModelWeights w = init_weights(c, 8);
  ToyModelBackend backend(w);
  backend.begin_sequence(0, {});
  backend.begin_block(0, 1);
  const std::vector<TokenId> block{4};
  const std::vector<std::size_t> s{0};
  backend.prefix(0, block, s);
  const Matrix logits = backend.suffix(0, s);
  const auto ref = testing::reference_block_logits(w, {}, block);
  for (std::size_t v = 0; v < c.vocab; ++v) EXPECT_NEAR(logits(0, v), ref[0][v], 1e-12);
}

TEST(SplitForward, EmptyRetainedRejected) {
  const ModelConfig c = small_config(2, 16, 4);
  const ModelWeights w = init_weights(c, 1);
  PagedKvCache cache(2, 16);
  cache.add_sequence(0);
  cache.open_block(0, 4);
  SequenceKv kv(cache, 0);
  RetainedState empty;
  EXPECT_THROW(forward_suffix(w, kv, empty), Error);
}

TEST(Confidences, Examples) {
  const auto u = confidences(Matrix::from_rows({{1, 1, 1, 1}}));
  EXPECT_NEAR(u[0], 0.25, 1e-15);
  const auto d = confidences(Matrix::from_rows({{50, 0, 0, 0}}));
  EXPECT_NEAR(d[0], 1.0, 1e-15);
  Rng rng(4);
  Matrix m(5, 9);
  for (double& x : m.data()) x = rng.normal(0.0, 3.0);
  const auto c = confidences(m);
  for (std::size_t r = 0; r < 5; ++r) {
    double z = 0.0, best = 0.0;
    for (double v : m.row(r)) z += std::exp(v);
    for (double v : m.row(r)) best = std::max(best, std::exp(v) / z);
    EXPECT_NEAR(c[r], best, 1e-12);
  }
}

TEST(GreedyChoices, ExcludesMaskAndBreaksTiesLow) {
  const auto c = greedy_choices(Matrix::from_rows({{9, 1, 1, 0}, {0, 5, 5, 9}}), 0);
  EXPECT_EQ(c[0].token, 1);
  EXPECT_EQ(c[1].token, 3);
  const auto tie = greedy_choices(Matrix::from_rows({{0, 2, 2, 1}}), 3);
  EXPECT_EQ(tie[0].token, 1);
}

OracleTrace small_trace() {
  ScriptedProfile p;
  p.block_size = 4;
  p.vocab = 6;
  return generate_scripted_trace(p, 8, 3);
}

TEST(OracleTrace, StepOutOfRange) {
  const OracleTrace t = small_trace();
  EXPECT_NO_THROW(oracle_step(t, t.size() - 1));
  try {
    oracle_step(t, t.size());
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kTrace);
  }
}

TEST(OracleTrace, ReplayIsVerbatim) {
  const OracleTrace t = small_trace();
  const OracleStep& a = oracle_step(t, 2);
  const OracleStep& b = oracle_step(t, 2);
  EXPECT_EQ(a.logits, b.logits);
  EXPECT_EQ(a.scores_l0.heads[0], b.scores_l0.heads[0]);
}

TEST(OracleTrace, ScriptedConfidenceClearsThreshold) {
  OracleStep s;
  s.logits = Matrix(2, 4);
  s.logits(1, 2) = 60.0;  // confidence 1.0 in double precision
  EXPECT_GE(confidences(s.logits)[1], 0.9);
  EXPECT_LT(confidences(s.logits)[0], 0.9);
}

TEST(OracleTrace, RoundTripExact) {
  const OracleTrace t = small_trace();
  std::stringstream ss;
  write_trace(ss, t);
  const OracleTrace back = read_trace(ss);
  ASSERT_EQ(back.size(), t.size());
  for (std::size_t i = 0; i < t.size(); ++i) {
    EXPECT_EQ(back.steps[i].step, t.steps[i].step);
    EXPECT_EQ(back.steps[i].block, t.steps[i].block);
    EXPECT_EQ(back.steps[i].logits, t.steps[i].logits);
    for (std::size_t h = 0; h < t.steps[i].scores_l0.heads.size(); ++h) {
      EXPECT_EQ(back.steps[i].scores_l0.heads[h], t.steps[i].scores_l0.heads[h]);
      EXPECT_EQ(back.steps[i].scores_l1.heads[h], t.steps[i].scores_l1.heads[h]);
    }
  }
}

TEST(OracleTrace, MalformedLinesAreTraceErrors) {
  for (const char* text : {"{not json", "{\"step\":0}", "{\"step\":0,\"logits\":[[1,2],[3]],\"scores_l0\":[[[0]]],"
                                                        "\"scores_l1\":[[[0]]]}"}) {
    std::stringstream ss(text);
    try {
      read_trace(ss);
      FAIL() << text;
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), ErrorCode::kTrace) << text;
    }
  }
}

TEST(OracleTrace, ScriptedProfileShape) {
  ScriptedProfile p;
  p.min_ready_per_step = 1;
  p.max_ready_per_step = 1;
  const OracleTrace t = generate_scripted_trace(p, 64, 9);
  EXPECT_EQ(t.size(), 64u);  // one ready position per step, two blocks
  EXPECT_TRUE(t.block_indexed());
  // step k of a block has exactly k+1 positions above 0.9 confidence
  for (std::size_t k = 0; k < 32; ++k) {
    const auto c = confidences(t.steps[k].logits);
    EXPECT_EQ(std::count_if(c.begin(), c.end(), [](double v) { return v >= 0.9; }), static_cast<long>(k + 1));
  }
}

}  // namespace
}  // namespace focus
