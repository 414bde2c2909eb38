// Copyright 2026 The focus-sim Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <future>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include "focus/error.hpp"
#include "focus/rng.hpp"

namespace focus {

// Two-Gaussian decodability model. Decodable deltas follow N(mu, sigma^2),
// non-decodable ones N(h0_mean, sigma^2); a delta below tau is evicted.
struct GaussianEvictionModel {
  double mu = 3.0;
  double sigma = 1.0;
  std::optional<double> tau;  // defaults to sigma
  double h0_mean = 0.0;

  double gamma() const { return mu / sigma; }
  double threshold() const { return tau.value_or(sigma); }

  void validate() const {
    require(std::isfinite(mu) && mu >= 0.0, ErrorCode::kInvalidArgument, "mu must be finite and >= 0");
    require(std::isfinite(sigma) && sigma > 0.0, ErrorCode::kInvalidArgument, "sigma must be > 0");
    require(std::isfinite(threshold()), ErrorCode::kInvalidArgument, "tau must be finite");
    require(std::isfinite(h0_mean), ErrorCode::kInvalidArgument, "h0 mean must be finite");
  }

  static GaussianEvictionModel from_gamma(double gamma, double sigma = 1.0) {
    GaussianEvictionModel m;
    m.mu = gamma * sigma;
    m.sigma = sigma;
    return m;
  }
};

// Upper tail of the standard normal. erfc keeps full relative precision in
// the tail, unlike 1 - Phi(x).
inline double q_function(double x) { return 0.5 * std::erfc(x / std::numbers::sqrt2); }

inline double chernoff_bound(double gamma) {
  require(gamma > 1.0, ErrorCode::kInvalidArgument,
          "chernoff bound needs gamma > 1, got " + std::to_string(gamma));
  return std::exp(-(gamma - 1.0) * (gamma - 1.0) / 2.0);
}

struct Interval {
  double lo = 0.0;
  double hi = 0.0;
};

inline Interval wilson_interval(std::size_t successes, std::size_t n, double z = 1.959963984540054) {
  require(n >= 1, ErrorCode::kInvalidArgument, "wilson interval needs n >= 1");
  const double nn = static_cast<double>(n);
  const double p = static_cast<double>(successes) / nn;
  const double z2 = z * z;
  const double denom = 1.0 + z2 / nn;
  const double centre = (p + z2 / (2.0 * nn)) / denom;
  const double half = z * std::sqrt(p * (1.0 - p) / nn + z2 / (4.0 * nn * nn)) / denom;
  // The endpoints are exact at the extremes; the formula leaves rounding dust.
  return {successes == 0 ? 0.0 : std::max(0.0, centre - half), successes == n ? 1.0 : std::min(1.0, centre + half)};
}

inline constexpr std::size_t kMonteCarloChunk = 1 << 16;

struct MonteCarloResult {
  std::size_t n = 0;
  std::size_t errors = 0;
  double p_err = 0.0;
  Interval ci95;
};

namespace detail {

// Chunk c draws from Rng(mix_seed(seed, c)); counts are reduced in chunk
// order, so the result does not depend on how chunks are scheduled.
template <typename ChunkFn>
std::vector<std::size_t> run_chunks(std::size_t n, ChunkFn fn) {
  const std::size_t chunks = (n + kMonteCarloChunk - 1) / kMonteCarloChunk;
  std::vector<std::future<std::size_t>> futures;
  futures.reserve(chunks);
  for (std::size_t c = 0; c < chunks; ++c) {
    const std::size_t len = std::min(kMonteCarloChunk, n - c * kMonteCarloChunk);
    futures.push_back(std::async(std::launch::async, fn, c, len));
  }
  std::vector<std::size_t> out;
  out.reserve(chunks);
  for (auto& f : futures) out.push_back(f.get());
  return out;
}

}  // namespace detail

// Fraction of decodable deltas N(mu, sigma^2) that fall below tau.
inline MonteCarloResult monte_carlo_p_err(const GaussianEvictionModel& model, std::size_t n, std::uint64_t seed) {
  model.validate();
  require(n >= 1, ErrorCode::kInvalidArgument, "monte carlo needs n >= 1");
  const double tau = model.threshold();
  const auto counts = detail::run_chunks(n, [&](std::size_t chunk, std::size_t len) {
    Rng rng(mix_seed(seed, chunk));
    std::size_t below = 0;
    for (std::size_t i = 0; i < len; ++i) {
      if (rng.normal(model.mu, model.sigma) < tau) ++below;
    }
    return below;
  });
  MonteCarloResult r;
  r.n = n;
  for (std::size_t c : counts) r.errors += c;
  r.p_err = static_cast<double>(r.errors) / static_cast<double>(n);
  r.ci95 = wilson_interval(r.errors, n);
  return r;
}

enum class ThresholdPolicy { kSigma, kMuPlusSigma, kTopK };

inline std::string to_string(ThresholdPolicy p) {
  switch (p) {
    case ThresholdPolicy::kSigma:
      return "sigma";
    case ThresholdPolicy::kMuPlusSigma:
      return "mu_plus_sigma";
    case ThresholdPolicy::kTopK:
      return "top_k";
  }
  return "unknown";
}

struct LabeledDelta {
  double delta = 0.0;
  bool decodable = false;
};

// Draws n labeled deltas; each is decodable with probability `p_decodable`.
inline std::vector<LabeledDelta> sample_labeled_deltas(const GaussianEvictionModel& model, std::size_t n,
                                                       double p_decodable, std::uint64_t seed) {
  model.validate();
  require(p_decodable >= 0.0 && p_decodable <= 1.0, ErrorCode::kInvalidArgument, "p_decodable must be in [0, 1]");
  Rng rng(seed);
  std::vector<LabeledDelta> out(n);
  for (auto& s : out) {
    s.decodable = rng.uniform() < p_decodable;
    s.delta = rng.normal(s.decodable ? model.mu : model.h0_mean, model.sigma);
  }
  return out;
}

struct PolicyOutcome {
  ThresholdPolicy policy = ThresholdPolicy::kSigma;
  double miss_rate = 0.0;       // decodable samples evicted / decodable samples
  double retention_rate = 0.0;  // retained samples / all samples
};

// Per policy, which samples survive:
//   sigma          delta >= tau
//   mu_plus_sigma  delta >= sample mean + population std
//   top_k          the k largest deltas (k defaults to the decodable count)
inline std::vector<PolicyOutcome> threshold_policy_compare(const std::vector<LabeledDelta>& samples, double tau,
                                                           std::optional<std::size_t> top_k = std::nullopt) {
  require(!samples.empty(), ErrorCode::kInvalidArgument, "policy comparison needs samples");
  const std::size_t n = samples.size();
  std::size_t positives = 0;
  double mean = 0.0;
  for (const auto& s : samples) {
    positives += s.decodable ? 1 : 0;
    mean += s.delta;
  }
  mean /= static_cast<double>(n);
  double var = 0.0;
  for (const auto& s : samples) var += (s.delta - mean) * (s.delta - mean);
  const double mu_sigma = mean + std::sqrt(var / static_cast<double>(n));

  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return samples[a].delta > samples[b].delta; });
  const std::size_t k = std::min(n, top_k.value_or(positives));
  std::vector<bool> in_top(n, false);
  for (std::size_t i = 0; i < k; ++i) in_top[order[i]] = true;

  std::vector<PolicyOutcome> out;
  for (ThresholdPolicy p : {ThresholdPolicy::kSigma, ThresholdPolicy::kMuPlusSigma, ThresholdPolicy::kTopK}) {
    std::size_t retained = 0;
    std::size_t missed = 0;
    for (std::size_t i = 0; i < n; ++i) {
      bool keep = false;
      switch (p) {
        case ThresholdPolicy::kSigma:
          keep = samples[i].delta >= tau;
          break;
        case ThresholdPolicy::kMuPlusSigma:
          keep = samples[i].delta >= mu_sigma;
          break;
        case ThresholdPolicy::kTopK:
          keep = in_top[i];
          break;
      }
      retained += keep ? 1 : 0;
      if (samples[i].decodable && !keep) ++missed;
    }
    PolicyOutcome o;
    o.policy = p;
    o.miss_rate = positives ? static_cast<double>(missed) / static_cast<double>(positives) : 0.0;
    o.retention_rate = static_cast<double>(retained) / static_cast<double>(n);
    out.push_back(o);
  }
  return out;
}

struct GammaRow {
  double gamma = 0.0;
  MonteCarloResult mc;
  double q = 0.0;                // Q(gamma - 1)
  std::optional<double> bound;   // absent for gamma <= 1
};

inline std::vector<GammaRow> gamma_sweep(const std::vector<double>& gammas, std::size_t n, std::uint64_t seed) {
  std::vector<GammaRow> rows;
  for (std::size_t i = 0; i < gammas.size(); ++i) {
    GammaRow r;
    r.gamma = gammas[i];
    r.mc = monte_carlo_p_err(GaussianEvictionModel::from_gamma(gammas[i]), n, mix_seed(seed, i));
    r.q = q_function(gammas[i] - 1.0);
    if (gammas[i] > 1.0) r.bound = chernoff_bound(gammas[i]);
    rows.push_back(r);
  }
  return rows;
}

}  // namespace focus
