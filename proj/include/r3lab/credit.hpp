#pragma once

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <vector>

#include "r3lab/env.hpp"

namespace r3lab::credit {

using env::ConfigError;
using env::UsageError;

constexpr double kStdGuard = 1e-8;   // floor on the population std
constexpr double kTieTolerance = 1e-9;  // reward ties at the group maximum

// Group-relative advantages: A_i = (R_i - mean) / population std, with the
// std floored at the guard so zero-variance groups map to all-zero
// advantages and non-degenerate groups normalize exactly to unit std.
inline std::vector<double> group_advantages(const std::vector<double>& rewards) {
  const std::size_t n = rewards.size();
  if (n < 2) throw UsageError("group_advantages: need at least 2 rewards");
  double mean = 0.0;
  for (double r : rewards) mean += r;
  mean /= static_cast<double>(n);
  double var = 0.0;
  for (double r : rewards) var += (r - mean) * (r - mean);
  var /= static_cast<double>(n);
  const double denom = std::max(std::sqrt(var), kStdGuard);
  std::vector<double> adv(n);
  for (std::size_t i = 0; i < n; ++i) adv[i] = (rewards[i] - mean) / denom;
  return adv;
}

enum class AmplifyMaxMode : int {
  alpha,  // members at the group maximum receive exactly alpha
  one,    // members at the group maximum receive exactly 1.0
};

// Positive amplification:
//   A_hat = alpha (or 1.0, by mode)   if R = R_max (within tie tolerance)
//   A_hat = alpha * A                 if A > 0
//   A_hat = A                         otherwise
inline std::vector<double> amplify(const std::vector<double>& raw,
                                   const std::vector<double>& rewards,
                                   double alpha,
                                   AmplifyMaxMode max_mode = AmplifyMaxMode::alpha) {
  if (raw.size() != rewards.size())
    throw UsageError("amplify: advantage/reward size mismatch");
  double rmax = rewards[0];
  for (double r : rewards) rmax = std::max(rmax, r);
  std::vector<double> out(raw.size());
  for (std::size_t i = 0; i < raw.size(); ++i) {
    if (rewards[i] >= rmax - kTieTolerance)
      out[i] = max_mode == AmplifyMaxMode::alpha ? alpha : 1.0;
    else if (raw[i] > 0.0)
      out[i] = alpha * raw[i];
    else
      out[i] = raw[i];
  }
  return out;
}

struct PivotMask {
  std::vector<int> per_turn;  // 0 for turns before the pivot, 1 otherwise
  int k_pivot = 0;

  int value(int turn) const { return per_turn[static_cast<std::size_t>(turn)]; }
};

// mask[k] = 0 iff k < k_pivot. k_pivot == K marks a fully correct,
// self-paired trajectory and yields an all-ones mask: there is no
// contrastive prefix to exclude.
inline PivotMask pivot_mask(int k_pivot, int num_turns) {
  if (k_pivot < 0 || k_pivot > num_turns)
    throw UsageError("pivot_mask: k_pivot out of range");
  PivotMask m;
  m.k_pivot = k_pivot;
  m.per_turn.resize(static_cast<std::size_t>(num_turns));
  if (k_pivot == num_turns) {
    for (auto& v : m.per_turn) v = 1;
    return m;
  }
  for (int k = 0; k < num_turns; ++k) m.per_turn[k] = k < k_pivot ? 0 : 1;
  return m;
}

}  // namespace r3lab::credit
