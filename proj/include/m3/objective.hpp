#pragma once

// Per-sample losses over the list of scored choices.

#include <algorithm>
#include <cmath>
#include <limits>
#include <string_view>
#include <vector>

#include "m3/errors.hpp"

namespace m3 {

enum class LossKind { kCce, kBce };

inline std::string_view loss_name(LossKind k) { return k == LossKind::kCce ? "cce" : "bce"; }

/// Logits and binary labels for one sample's choices; mask[j] == false
/// means entry j is unobserved and ignored. An empty mask means all observed.
struct ChoiceBatch {
  std::vector<double> logits;
  std::vector<int> labels;
  std::vector<bool> mask;

  bool active(std::size_t j) const { return mask.empty() || mask[j]; }
};

struct LossResult {
  double loss = 0.0;
  std::vector<double> d_logits;
};

namespace detail {

inline void check_batch(const ChoiceBatch& b) {
  if (b.labels.size() != b.logits.size() || (!b.mask.empty() && b.mask.size() != b.logits.size())) {
    throw ShapeError("choice batch vectors differ in length");
  }
}

inline double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

}  // namespace detail

/// log(1 + sum_{neg} e^{s}) + log(1 + sum_{pos} e^{-s}); each term is a
/// log-sum-exp over {0} and the signed logits of one label class.
inline LossResult cce_loss(const ChoiceBatch& batch) {
  detail::check_batch(batch);
  const std::size_t n = batch.logits.size();
  LossResult out{0.0, std::vector<double>(n, 0.0)};
  for (int positive = 0; positive <= 1; ++positive) {
    const double sign = positive ? -1.0 : 1.0;
    double mx = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      if (batch.active(j) && batch.labels[j] == positive) mx = std::max(mx, sign * batch.logits[j]);
    }
    double sum = std::exp(-mx);
    for (std::size_t j = 0; j < n; ++j) {
      if (batch.active(j) && batch.labels[j] == positive) sum += std::exp(sign * batch.logits[j] - mx);
    }
    const double lse = mx + std::log(sum);
    out.loss += lse;
    for (std::size_t j = 0; j < n; ++j) {
      if (batch.active(j) && batch.labels[j] == positive) {
        out.d_logits[j] = sign * std::exp(sign * batch.logits[j] - lse);
      }
    }
  }
  return out;
}

/// Mean binary cross-entropy over observed entries.
inline LossResult bce_loss(const ChoiceBatch& batch) {
  detail::check_batch(batch);
  const std::size_t n = batch.logits.size();
  LossResult out{0.0, std::vector<double>(n, 0.0)};
  std::size_t count = 0;
  for (std::size_t j = 0; j < n; ++j) count += batch.active(j);
  if (count == 0) return out;
  const double inv = 1.0 / static_cast<double>(count);
  for (std::size_t j = 0; j < n; ++j) {
    if (!batch.active(j)) continue;
    const double s = batch.logits[j];
    const int p = batch.labels[j];
    out.loss += (p ? detail::softplus(-s) : detail::softplus(s)) * inv;
    const double sig = s >= 0.0 ? 1.0 / (1.0 + std::exp(-s)) : std::exp(s) / (1.0 + std::exp(s));
    out.d_logits[j] = (sig - p) * inv;
  }
  return out;
}

inline LossResult compute_loss(LossKind kind, const ChoiceBatch& batch) {
  return kind == LossKind::kCce ? cce_loss(batch) : bce_loss(batch);
}

}  // namespace m3
