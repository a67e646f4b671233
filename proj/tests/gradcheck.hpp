// Copyright 2026 The LSTM-Jump Authors
// SPDX-License-Identifier: Apache-2.0
//
// End-to-end episode gradient check: analytic gradients from run_episode
// against central differences of the reference objective in oracles.hpp.

#pragma once

#include <string>
#include <vector>

#include "lstmjump/train.hpp"
#include "oracles.hpp"

namespace gradcheck {

using namespace lstmjump;

struct Case {
  std::uint64_t seed = 1;
  std::size_t layers = 2;
  std::size_t hidden = 5;
  std::size_t embed = 3;
  std::size_t vocab = 7;
  std::size_t classes = 4;
  std::size_t seq_len = 5;  // units
  std::size_t unit_len = 1;
  bool qa = false;
  bool jumping = true;
  JumpConfig jump{2, 3, 1};
  bool policy_into_encoder = true;
  bool trainable_embedding = true;
  double entropy_weight = 0.0;
  std::optional<std::size_t> force_kappa;  // bias the policy toward this jump
};

struct Result {
  double max_rel_error = 0.0;
  std::string worst_tensor;
  std::vector<std::size_t> positions;
  std::vector<std::size_t> kappas;
  bool crossed_jump = false;        // read positions are not contiguous
  double first_token_grad_abs = 0;  // |d loss / d embedding row of the first token|
};

inline Result run(const Case& c) {
  ModelShape s;
  s.vocab_size = c.vocab;
  s.embed_dim = c.embed;
  s.hidden = c.hidden;
  s.layers = c.layers;
  s.num_classes = c.classes;
  s.max_jump = c.jump.max_jump;
  s.qa = c.qa;
  s.trainable_embedding = c.trainable_embedding;
  Rng rng(c.seed);
  Rng init = rng.substream(1);
  auto p = ModelParams<double>::initialized(s, init);
  // Larger weights than the training init so every term carries signal.
  Rng scale = rng.substream(2);
  p.for_each_tensor([&](const std::string&, Matrix<double>& m, std::size_t) {
    for (auto& v : m.values()) v = scale.uniform(-0.6, 0.6);
  });
  if (c.force_kappa) p.jump.bias[*c.force_kappa] += 4.0;

  Rng data = rng.substream(3);
  Example ex;
  ex.unit_len = c.unit_len;
  ex.tokens.resize(c.seq_len * c.unit_len);
  for (auto& t : ex.tokens) t = static_cast<Token>(data.uniform_index(c.vocab));
  if (c.qa) {
    ex.query = {static_cast<Token>(data.uniform_index(c.vocab)), static_cast<Token>(data.uniform_index(c.vocab))};
    ex.candidates = {1, 3, 4};
    ex.label = data.uniform_index(3);
  } else {
    ex.label = data.uniform_index(c.classes);
  }

  EpisodeSettings es;
  es.jump = c.jump;
  es.jumping = c.jumping;
  es.mode = RolloutMode::Greedy;
  es.policy_grad_into_encoder = c.policy_into_encoder;
  es.entropy_weight = c.entropy_weight;
  EpisodeWorkspace<double> ws;
  ModelParams<double> grads = ModelParams<double>::zeros(s);
  Rng episode = rng.substream(4);
  const EpisodeOutcome<double> out = run_episode(p, ex, es, episode, ws, &grads, 1.0);
  const ReadingTrace<double>& trace = ws.last_trace;

  Result r;
  r.positions = trace.read_positions;
  for (const auto& d : trace.jumps) r.kappas.push_back(d.kappa);
  for (std::size_t i = 1; i < r.positions.size(); ++i) r.crossed_jump |= r.positions[i] != r.positions[i - 1] + 1;

  std::vector<double> baselines;
  std::vector<std::vector<double>> hidden;
  for (const auto& d : trace.jumps) {
    hidden.push_back(d.hidden);
    baselines.push_back(oracle::baseline(p, d.hidden));
  }
  const JumpConfig cfg = c.jumping ? c.jump : JumpConfig{0, c.jump.max_jump, c.seq_len};
  const auto kappas = r.kappas;
  const double reward_value = out.reward;
  const double entropy = c.entropy_weight;
  auto f = [&](const ModelParams<double>& q) {
    return oracle::objective(q, ex, cfg, kappas, reward_value, baselines, entropy, hidden, !c.policy_into_encoder);
  };
  const auto numeric = oracle::numeric_gradient(p, f);

  std::size_t i = 0;
  grads.for_each_tensor([&](const std::string& name, const Matrix<double>& g, std::size_t) {
    Matrix<double> want = numeric[i++];
    if (name == "embedding" && !c.trainable_embedding) {
      // Frozen embeddings receive no gradient; only QA candidate rows would
      // otherwise. Compare against zero.
      want.set_zero();
    }
    const double e = oracle::max_relative_error(g, want);
    if (e > r.max_rel_error) {
      r.max_rel_error = e;
      r.worst_tensor = name;
    }
  });
  if (!ex.tokens.empty()) {
    const auto row = grads.encoder.embedding.table.row(static_cast<std::size_t>(ex.tokens[0]));
    for (double v : row) r.first_token_grad_abs += std::abs(v);
  }
  return r;
}

}  // namespace gradcheck
