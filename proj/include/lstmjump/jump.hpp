// Copyright 2026 The LSTM-Jump Authors
// SPDX-License-Identifier: Apache-2.0
//
// The skimming rollout. The reader consumes R units, asks the jump policy for
// a distribution over {0, ..., K}, and either stops (0) or relocates κ units
// past the last one read. An episode ends on a stop action, after the segment
// that follows the N-th jump, or when it runs past the last unit.

#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "lstmjump/errors.hpp"
#include "lstmjump/model.hpp"
#include "lstmjump/numeric.hpp"

namespace lstmjump {

struct JumpConfig {
  std::size_t n_jumps = 1;   // N: non-zero jumps allowed per episode
  std::size_t max_jump = 1;  // K: largest jump; the policy has K+1 outputs
  std::size_t read_len = 1;  // R: units read between decisions

  void validate() const {
    if (max_jump < 1) throw InputError("jump config: K must be >= 1");
    if (read_len < 1) throw InputError("jump config: R must be >= 1");
  }

  /// Upper bound on units read in one episode.
  std::size_t max_units_read() const noexcept { return read_len * (n_jumps + 1); }

  friend bool operator==(const JumpConfig&, const JumpConfig&) = default;
};

template <typename T>
struct JumpHead {
  Matrix<T> w;     // (K+1) x h
  Matrix<T> bias;  // (K+1) x 1

  std::size_t num_actions() const noexcept { return w.rows(); }

  void logits(std::span<const T> h, std::vector<T>& out) const {
    if (w.cols() != h.size()) throw ShapeError("jump head: hidden size mismatch");
    out.assign(bias.values().begin(), bias.values().end());
    matvec_add(w, h, std::span<T>(out));
  }

  /// Policy interface used by rollout().
  void operator()(std::span<const T> h, std::vector<T>& probs) const {
    logits(h, probs);
    softmax_into(std::span<const T>(probs), std::span<T>(probs));
  }
};

enum class TerminationReason { ZeroJump, MaxJumps, EndOfSequence };

inline std::string_view to_string(TerminationReason r) noexcept {
  switch (r) {
    case TerminationReason::ZeroJump:
      return "ZeroJump";
    case TerminationReason::MaxJumps:
      return "MaxJumps";
    case TerminationReason::EndOfSequence:
      return "EndOfSequence";
  }
  return "?";
}

template <typename T>
struct JumpDecision {
  std::size_t step = 0;   // tape step whose top hidden state produced the decision
  std::vector<T> hidden;  // h_i, the top-layer state right before the jump
  std::size_t kappa = 0;
  T log_prob{0};
  std::vector<T> probs;
};

template <typename T>
struct ReadingTrace {
  std::vector<std::size_t> read_positions;  // 0-based unit indices of the body
  std::vector<JumpDecision<T>> jumps;
  TerminationReason termination = TerminationReason::EndOfSequence;
  std::size_t tokens_read = 0;
};

/// Where reading resumes after a jump of `kappa` from the last unit read.
/// kappa = 1 continues contiguously. With 1-based positions this is the
/// familiar "segment ending at R, jump κ, restart at R+κ".
inline std::size_t next_start(std::size_t segment_end, std::size_t kappa) {
  if (kappa == 0) throw ContractError("next_start: a zero jump terminates the episode");
  return segment_end + kappa;
}

/// Most probable action; ties resolve to the smaller index.
template <typename T>
std::size_t greedy_action(std::span<const T> distribution) {
  return argmax(distribution);
}

template <typename T>
std::size_t greedy_action(const std::vector<T>& distribution) {
  return argmax(std::span<const T>(distribution));
}

/// Input as seen by the reader: an optional prefix that is always read in
/// full (a QA query), then a body of fixed-width units the reader may skip.
/// Word or character tasks use unit_len = 1; sentence-level reading groups
/// each sentence into one unit of unit_len tokens.
struct TokenSequence {
  std::span<const Token> body;
  std::span<const Token> prefix{};
  std::size_t unit_len = 1;

  std::size_t units() const noexcept { return unit_len == 0 ? 0 : body.size() / unit_len; }
};

enum class RolloutMode { Sample, Greedy };

template <typename T>
struct RolloutOptions {
  EpisodeTape<T>* tape = nullptr;  // records forward caches when set
  DropoutRates dropout{};          // training-time dropout; zero rates = eval
  bool jumping = true;             // false reads every unit (plain LSTM)
};

template <typename T>
struct RolloutResult {
  LstmState<T> state;
  ReadingTrace<T> trace;
};

/// Runs one reading episode. `policy(h, probs)` fills the jump distribution
/// over {0..K} from the top-layer hidden state. Dropout masks come from a
/// substream of `rng`, so they never perturb the action draws.
template <typename T, typename Policy>
RolloutResult<T> rollout(const Encoder<T>& enc, const TokenSequence& seq, const JumpConfig& cfg, RolloutMode mode,
                         Rng& rng, Policy&& policy, const RolloutOptions<T>& opts = {}) {
  cfg.validate();
  if (seq.unit_len == 0 || seq.body.size() % seq.unit_len != 0) {
    throw InputError("rollout: body length is not a multiple of the unit length");
  }
  const std::size_t total = seq.units();
  if (total == 0) throw InputError("rollout: empty sequence");

  RolloutResult<T> out;
  out.state = LstmState<T>::zeros(enc.num_layers(), enc.hidden());
  ReadingTrace<T>& trace = out.trace;
  if (opts.tape != nullptr) opts.tape->clear();

  Rng dropout_rng = rng.substream(0xd209u);
  Rng* drop = opts.dropout.active() ? &dropout_rng : nullptr;
  StackWorkspace<T> ws;

  for (Token tok : seq.prefix) read_token(enc, tok, out.state, opts.dropout, drop, ws, opts.tape);

  auto read_unit = [&](std::size_t unit) {
    for (std::size_t k = 0; k < seq.unit_len; ++k) {
      read_token(enc, seq.body[unit * seq.unit_len + k], out.state, opts.dropout, drop, ws, opts.tape);
    }
    trace.read_positions.push_back(unit);
  };

  if (!opts.jumping) {
    for (std::size_t u = 0; u < total; ++u) read_unit(u);
    trace.termination = TerminationReason::EndOfSequence;
    trace.tokens_read = trace.read_positions.size();
    return out;
  }

  std::vector<T> probs;
  std::size_t pos = 0;
  std::size_t jumps_taken = 0;
  while (true) {
    const std::size_t end = std::min(pos + cfg.read_len, total);
    for (std::size_t u = pos; u < end; ++u) read_unit(u);
    if (end == total) {
      trace.termination = TerminationReason::EndOfSequence;
      break;
    }
    if (jumps_taken == cfg.n_jumps) {
      trace.termination = TerminationReason::MaxJumps;
      break;
    }
    policy(out.state.top(), probs);
    if (probs.size() != cfg.max_jump + 1) {
      throw ShapeError("rollout: policy produced " + std::to_string(probs.size()) + " actions, expected K+1 = " +
                       std::to_string(cfg.max_jump + 1));
    }
    const std::size_t kappa = mode == RolloutMode::Sample ? sample_categorical(std::span<const T>(probs), rng)
                                                          : greedy_action(std::span<const T>(probs));
    JumpDecision<T> d;
    d.step = opts.tape != nullptr ? opts.tape->size() - 1 : 0;
    d.hidden.assign(out.state.top().begin(), out.state.top().end());
    d.kappa = kappa;
    d.log_prob = std::log(probs[kappa]);
    d.probs = probs;
    trace.jumps.push_back(std::move(d));
    if (kappa == 0) {
      trace.termination = TerminationReason::ZeroJump;
      break;
    }
    ++jumps_taken;
    // `end` is one past the last unit read, i.e. the 1-based index of that unit.
    const std::size_t next = next_start(end, kappa) - 1;
    if (next >= total) {
      trace.termination = TerminationReason::EndOfSequence;
      break;
    }
    pos = next;
  }
  trace.tokens_read = trace.read_positions.size();
  return out;
}

/// Writes one trace line: id, termination, tokens read, positions, kappas.
template <typename T>
std::string format_trace_line(std::size_t example_id, const ReadingTrace<T>& trace) {
  std::string line = std::to_string(example_id);
  line += '\t';
  line += to_string(trace.termination);
  line += '\t';
  line += std::to_string(trace.tokens_read);
  line += '\t';
  for (std::size_t i = 0; i < trace.read_positions.size(); ++i) {
    if (i > 0) line += ',';
    line += std::to_string(trace.read_positions[i]);
  }
  line += '\t';
  for (std::size_t i = 0; i < trace.jumps.size(); ++i) {
    if (i > 0) line += ',';
    line += std::to_string(trace.jumps[i].kappa);
  }
  return line;
}

}  // namespace lstmjump
