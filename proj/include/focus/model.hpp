// Copyright 2026 The focus-sim Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "focus/error.hpp"
#include "focus/kv_cache.hpp"
#include "focus/rng.hpp"
#include "focus/tensor.hpp"

namespace focus {

using TokenId = std::int64_t;

struct ModelConfig {
  std::size_t n_layers = 4;
  std::size_t hidden = 32;
  std::size_t heads = 4;
  std::size_t d_ff = 64;
  std::size_t vocab = 64;
  std::size_t block_size = 32;
  TokenId mask_token_id = 63;
  double rope_base = 10000.0;

  std::size_t head_dim() const { return hidden / heads; }

  void validate() const {
    require(n_layers >= 2, ErrorCode::kConfig, "model needs at least 2 layers");
    require(block_size >= 1, ErrorCode::kConfig, "block_size must be >= 1");
    require(heads >= 1 && hidden % heads == 0, ErrorCode::kConfig, "hidden must be divisible by heads");
    require(head_dim() % 2 == 0, ErrorCode::kConfig, "head dimension must be even for rotary embedding");
    require(d_ff >= 1 && vocab >= 2, ErrorCode::kConfig, "d_ff and vocab must be positive");
    require(mask_token_id >= 0 && static_cast<std::size_t>(mask_token_id) < vocab, ErrorCode::kConfig,
            "mask_token_id outside vocabulary");
  }
};

struct LayerWeights {
  Matrix wq, wk, wv, wo;  // hidden x hidden
  Matrix w_up;            // hidden x d_ff
  Matrix w_down;          // d_ff x hidden
  std::vector<double> attn_gain;
  std::vector<double> mlp_gain;
};

struct ModelWeights {
  ModelConfig config;
  std::vector<LayerWeights> layers;
  Matrix embedding;  // vocab x hidden
  std::vector<double> final_gain;
  Matrix lm_head;    // hidden x vocab
};

inline ModelWeights init_weights(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  Rng rng(seed);
  const double std = 1.0 / std::sqrt(static_cast<double>(config.hidden));
  auto random = [&](std::size_t r, std::size_t c) {
    Matrix m(r, c);
    for (double& x : m.data()) x = rng.normal(0.0, std);
    return m;
  };
  ModelWeights w;
  w.config = config;
  const std::size_t h = config.hidden;
  for (std::size_t l = 0; l < config.n_layers; ++l) {
    LayerWeights lw;
    lw.wq = random(h, h);
    lw.wk = random(h, h);
    lw.wv = random(h, h);
    lw.wo = random(h, h);
    lw.w_up = random(h, config.d_ff);
    lw.w_down = random(config.d_ff, h);
    lw.attn_gain.assign(h, 1.0);
    lw.mlp_gain.assign(h, 1.0);
    w.layers.push_back(std::move(lw));
  }
  w.embedding = random(config.vocab, h);
  w.final_gain.assign(h, 1.0);
  w.lm_head = random(h, config.vocab);
  return w;
}

// Pre-softmax intra-block scores, one square matrix per head.
struct AttentionScores {
  std::vector<Matrix> heads;
};

// Storage the forward pass reads from and writes to: per-layer attendable
// KV, plus scatter of fresh block KV. Block positions are relative to
// `block_origin()`, the logical position of block slot 0.
template <class T>
concept KvStore = requires(T& store, const T& cstore, std::size_t layer, std::span<const std::size_t> pos,
                           const Matrix& m) {
  { cstore.view(layer) } -> std::same_as<KvView>;
  { store.fill(layer, pos, m, m) };
  { cstore.block_origin() } -> std::convertible_to<std::size_t>;
};

namespace detail {

struct Qkv {
  Matrix q, k, v;
};

inline Qkv project_qkv(const ModelConfig& cfg, const LayerWeights& lw, const Matrix& x,
                       std::span<const std::size_t> positions) {
  const Matrix xn = rms_norm(x, lw.attn_gain);
  return {apply_rope(matmul(xn, lw.wq), positions, cfg.rope_base),
          apply_rope(matmul(xn, lw.wk), positions, cfg.rope_base), matmul(xn, lw.wv)};
}

// Multi-head attention of `q` over every row of `kv`. With `causal`, a
// query only sees keys at logical positions <= its own.
inline Matrix attend(const ModelConfig& cfg, const Matrix& q, std::span<const std::size_t> q_positions,
                     const KvView& kv, bool causal) {
  const std::size_t dh = cfg.head_dim();
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  Matrix out(q.rows(), cfg.hidden);
  std::vector<double> w(kv.size());
  for (std::size_t i = 0; i < q.rows(); ++i) {
    for (std::size_t hd = 0; hd < cfg.heads; ++hd) {
      const std::size_t off = hd * dh;
      std::size_t n = 0;
      for (std::size_t j = 0; j < kv.size(); ++j) {
        if (causal && kv.positions[j] > q_positions[i]) break;
        double acc = 0.0;
        for (std::size_t c = 0; c < dh; ++c) acc += q(i, off + c) * kv.keys(j, off + c);
        w[j] = acc * scale;
        n = j + 1;
      }
      require(n > 0, ErrorCode::kInvariantViolation, "query with no attendable key");
      softmax_inplace(std::span<double>(w.data(), n));
      for (std::size_t j = 0; j < n; ++j) {
        for (std::size_t c = 0; c < dh; ++c) out(i, off + c) += w[j] * kv.values(j, off + c);
      }
    }
  }
  return out;
}

inline Matrix finish_layer(const LayerWeights& lw, const Matrix& x, const Matrix& attn_out) {
  Matrix hcur = x;
  add_inplace(hcur, matmul(attn_out, lw.wo));
  Matrix up = matmul(rms_norm(hcur, lw.mlp_gain), lw.w_up);
  for (double& v : up.data()) v = silu(v);
  add_inplace(hcur, matmul(up, lw.w_down));
  return hcur;
}

inline AttentionScores intra_scores(const ModelConfig& cfg, const Matrix& q, const Matrix& k) {
  const std::size_t dh = cfg.head_dim();
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  AttentionScores s;
  for (std::size_t hd = 0; hd < cfg.heads; ++hd) {
    Matrix m = matmul_transposed(column_slice(q, hd * dh, dh), column_slice(k, hd * dh, dh));
    for (double& v : m.data()) v *= scale;
    s.heads.push_back(std::move(m));
  }
  return s;
}

inline void check_increasing(std::span<const std::size_t> idx, const char* what) {
  for (std::size_t i = 1; i < idx.size(); ++i) {
    require(idx[i - 1] < idx[i], ErrorCode::kInvalidArgument, std::string(what) + " must be strictly increasing");
  }
}

inline Matrix embed(const ModelWeights& w, std::span<const TokenId> tokens, std::span<const std::size_t> rows) {
  Matrix x(rows.size(), w.config.hidden);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const TokenId t = tokens[rows[r]];
    require(t >= 0 && static_cast<std::size_t>(t) < w.config.vocab, ErrorCode::kOutOfRange,
            "token id outside vocabulary");
    std::copy(w.embedding.row(static_cast<std::size_t>(t)).begin(),
              w.embedding.row(static_cast<std::size_t>(t)).end(), x.row(r).begin());
  }
  return x;
}

inline std::vector<std::size_t> logical_positions(std::size_t origin, std::span<const std::size_t> block_idx) {
  std::vector<std::size_t> p(block_idx.size());
  for (std::size_t i = 0; i < p.size(); ++i) p[i] = origin + block_idx[i];
  return p;
}

}  // namespace detail

// Layer 0 output and Layer 1 projections for the active block positions.
struct ForwardPrefixOutput {
  std::vector<std::size_t> active;  // block positions, increasing
  AttentionScores layer0_scores;    // |active| x |active| per head
  AttentionScores layer1_scores;
  Matrix layer0_hidden;             // input to Layer 1, one row per active position
  Matrix layer1_q;
  Matrix layer1_k;
  Matrix layer1_v;
};

// Runs Layer 0 fully and the Layer 1 Q/K/V projections for `active`.
// Layer 0 and Layer 1 KV of every active position are written to `store`
// before returning, so positions evicted afterwards stay referable.
template <KvStore Store>
ForwardPrefixOutput forward_prefix(const ModelWeights& w, Store& store, std::span<const TokenId> block_tokens,
                                   std::span<const std::size_t> active) {
  const ModelConfig& cfg = w.config;
  require(block_tokens.size() <= cfg.block_size, ErrorCode::kInvalidArgument,
          "block of " + std::to_string(block_tokens.size()) + " tokens exceeds block size " +
              std::to_string(cfg.block_size));
  require(!active.empty(), ErrorCode::kInvalidArgument, "forward_prefix needs at least one active position");
  detail::check_increasing(active, "active positions");
  require(active.back() < block_tokens.size(), ErrorCode::kOutOfRange, "active position outside block");

  const auto positions = detail::logical_positions(store.block_origin(), active);
  const Matrix x = detail::embed(w, block_tokens, active);

  ForwardPrefixOutput out;
  out.active.assign(active.begin(), active.end());

  auto qkv0 = detail::project_qkv(cfg, w.layers[0], x, positions);
  store.fill(0, active, qkv0.k, qkv0.v);
  out.layer0_scores = detail::intra_scores(cfg, qkv0.q, qkv0.k);
  const Matrix attn0 = detail::attend(cfg, qkv0.q, positions, store.view(0), false);
  out.layer0_hidden = detail::finish_layer(w.layers[0], x, attn0);

  auto qkv1 = detail::project_qkv(cfg, w.layers[1], out.layer0_hidden, positions);
  store.fill(1, active, qkv1.k, qkv1.v);
  out.layer1_scores = detail::intra_scores(cfg, qkv1.q, qkv1.k);
  out.layer1_q = std::move(qkv1.q);
  out.layer1_k = std::move(qkv1.k);
  out.layer1_v = std::move(qkv1.v);
  return out;
}

// Reduced (gathered) inputs for the suffix pass.
struct RetainedState {
  std::vector<std::size_t> positions;  // block positions, increasing
  Matrix hidden;                       // Layer 1 input rows
  Matrix layer1_q;
};

// Gathers prefix rows for `retained` (block positions, a subset of
// prefix.active) into dense slots 0..|retained|-1, preserving order.
inline RetainedState gather_retained(const ForwardPrefixOutput& prefix, std::span<const std::size_t> retained) {
  detail::check_increasing(retained, "retained positions");
  std::vector<std::size_t> rows;
  rows.reserve(retained.size());
  for (std::size_t p : retained) {
    auto it = std::lower_bound(prefix.active.begin(), prefix.active.end(), p);
    require(it != prefix.active.end() && *it == p, ErrorCode::kInvalidArgument,
            "retained position " + std::to_string(p) + " was not in the prefix pass");
    rows.push_back(static_cast<std::size_t>(it - prefix.active.begin()));
  }
  return {std::vector<std::size_t>(retained.begin(), retained.end()), gather_rows(prefix.layer0_hidden, rows),
          gather_rows(prefix.layer1_q, rows)};
}

// Finishes Layer 1 for the retained queries (attending to every referable
// Layer 1 KV, including evicted positions) and runs Layers 2.. on the
// retained set only. Returns logits, one row per retained position.
template <KvStore Store>
Matrix forward_suffix(const ModelWeights& w, Store& store, const RetainedState& retained) {
  const ModelConfig& cfg = w.config;
  require(!retained.positions.empty(), ErrorCode::kInvalidArgument, "forward_suffix needs a nonempty retained set");
  detail::check_increasing(retained.positions, "retained positions");
  const auto positions = detail::logical_positions(store.block_origin(), retained.positions);

  Matrix x = detail::finish_layer(w.layers[1], retained.hidden,
                                  detail::attend(cfg, retained.layer1_q, positions, store.view(1), false));
  for (std::size_t l = 2; l < cfg.n_layers; ++l) {
    auto qkv = detail::project_qkv(cfg, w.layers[l], x, positions);
    store.fill(l, retained.positions, qkv.k, qkv.v);
    x = detail::finish_layer(w.layers[l], x, detail::attend(cfg, qkv.q, positions, store.view(l), false));
  }
  return matmul(rms_norm(x, w.final_gain), w.lm_head);
}

// Prompt prefill: causal forward over every block slot, filling all layers.
template <KvStore Store>
void forward_causal_fill(const ModelWeights& w, Store& store, std::span<const TokenId> tokens) {
  const ModelConfig& cfg = w.config;
  std::vector<std::size_t> idx(tokens.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  const auto positions = detail::logical_positions(store.block_origin(), idx);
  Matrix x = detail::embed(w, tokens, idx);
  for (std::size_t l = 0; l < cfg.n_layers; ++l) {
    auto qkv = detail::project_qkv(cfg, w.layers[l], x, positions);
    store.fill(l, idx, qkv.k, qkv.v);
    x = detail::finish_layer(w.layers[l], x, detail::attend(cfg, qkv.q, positions, store.view(l), true));
  }
}

// Max softmax probability per row.
inline std::vector<double> confidences(const Matrix& logits) {
  std::vector<double> out(logits.rows());
  std::vector<double> row;
  for (std::size_t r = 0; r < logits.rows(); ++r) {
    row.assign(logits.row(r).begin(), logits.row(r).end());
    softmax_inplace(row);
    out[r] = *std::max_element(row.begin(), row.end());
  }
  return out;
}

struct TokenChoice {
  TokenId token = -1;
  double confidence = 0.0;
};

// Greedy choice per row, never emitting `excluded` (the mask token).
// Ties resolve to the lowest token id.
inline std::vector<TokenChoice> greedy_choices(const Matrix& logits, TokenId excluded) {
  std::vector<TokenChoice> out(logits.rows());
  std::vector<double> row;
  for (std::size_t r = 0; r < logits.rows(); ++r) {
    row.assign(logits.row(r).begin(), logits.row(r).end());
    softmax_inplace(row);
    TokenChoice best;
    for (std::size_t t = 0; t < row.size(); ++t) {
      if (static_cast<TokenId>(t) == excluded) continue;
      if (best.token < 0 || row[t] > best.confidence) best = {static_cast<TokenId>(t), row[t]};
    }
    out[r] = best;
  }
  return out;
}

}  // namespace focus
