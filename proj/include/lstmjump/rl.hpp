// Copyright 2026 The LSTM-Jump Authors
// SPDX-License-Identifier: Apache-2.0
//
// Final-reward REINFORCE for the jump policy with a learned linear baseline.
//
// Per episode, with reward R and baselines b_i = w_b . h_i + c_b:
//
//   surrogate   = -sum_i log pi(kappa_i | h_i) * (R - b_i)
//   baseline_sq =  sum_i (R - b_i)^2
//
// The advantages (R - b_i) are constants inside the surrogate, and h_i is a
// constant inside both terms, so the surrogate only moves the jump head and
// the squared error only moves the baseline. Batch totals are arithmetic
// means over episodes.

#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "lstmjump/errors.hpp"
#include "lstmjump/jump.hpp"
#include "lstmjump/numeric.hpp"

namespace lstmjump {

struct RewardSpec {
  static constexpr double kCorrect = 1.0;
  static constexpr double kIncorrect = -1.0;
};

inline double reward(std::size_t prediction, std::size_t label) noexcept {
  return prediction == label ? RewardSpec::kCorrect : RewardSpec::kIncorrect;
}

template <typename T>
struct BaselineParams {
  Matrix<T> w;  // 1 x h
  Matrix<T> c;  // 1 x 1
};

template <typename T>
T baseline_value(const BaselineParams<T>& p, std::span<const T> h) {
  if (p.w.cols() != h.size()) throw ShapeError("baseline: hidden size mismatch");
  return dot(p.w.data(), h.data(), h.size()) + p.c[0];
}

template <typename T>
std::vector<T> baseline_values(const BaselineParams<T>& p, const ReadingTrace<T>& trace) {
  std::vector<T> out;
  out.reserve(trace.jumps.size());
  for (const auto& d : trace.jumps) out.push_back(baseline_value(p, std::span<const T>(d.hidden)));
  return out;
}

template <typename T>
T reinforce_surrogate(const ReadingTrace<T>& trace, double reward_value, std::span<const T> baselines) {
  if (baselines.size() != trace.jumps.size()) {
    throw ContractError("reinforce_surrogate: " + std::to_string(baselines.size()) + " baselines for " +
                        std::to_string(trace.jumps.size()) + " decisions");
  }
  T total{0};
  for (std::size_t i = 0; i < baselines.size(); ++i) {
    total -= trace.jumps[i].log_prob * (static_cast<T>(reward_value) - baselines[i]);
  }
  return total;
}

/// Gradient of the surrogate w.r.t. the jump logits of decision i:
/// -(onehot(kappa_i) - pi_i) * (R - b_i).
template <typename T>
std::vector<T> surrogate_logit_grad(const JumpDecision<T>& d, double reward_value, T baseline) {
  const T adv = static_cast<T>(reward_value) - baseline;
  std::vector<T> g(d.probs.size());
  for (std::size_t k = 0; k < g.size(); ++k) {
    const T onehot = k == d.kappa ? T{1} : T{0};
    g[k] = -(onehot - d.probs[k]) * adv;
  }
  return g;
}

template <typename T>
T baseline_squared_error(double reward_value, std::span<const T> baselines) {
  T total{0};
  for (T b : baselines) {
    const T e = static_cast<T>(reward_value) - b;
    total += e * e;
  }
  return total;
}

/// Per-episode loss parts; `total_loss` averages them over a batch.
template <typename T>
struct EpisodeLoss {
  T j1{0};
  T surrogate{0};
  T baseline_sq{0};
};

template <typename T>
struct LossBreakdown {
  T j1{0};
  T j2_surrogate{0};
  T baseline_mse{0};
  T total{0};
};

template <typename T>
LossBreakdown<T> total_loss(std::span<const EpisodeLoss<T>> batch) {
  LossBreakdown<T> out;
  if (batch.empty()) return out;
  for (const auto& e : batch) {
    out.j1 += e.j1;
    out.j2_surrogate += e.surrogate;
    out.baseline_mse += e.baseline_sq;
  }
  const T n = static_cast<T>(batch.size());
  out.j1 /= n;
  out.j2_surrogate /= n;
  out.baseline_mse /= n;
  out.total = out.j1 + out.j2_surrogate + out.baseline_mse;
  return out;
}

template <typename T>
LossBreakdown<T> total_loss(const std::vector<EpisodeLoss<T>>& batch) {
  return total_loss(std::span<const EpisodeLoss<T>>(batch));
}

}  // namespace lstmjump
