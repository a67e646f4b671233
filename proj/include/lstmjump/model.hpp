// Copyright 2026 The LSTM-Jump Authors
// SPDX-License-Identifier: Apache-2.0
//
// Embedding lookup, stacked LSTM forward/backward and the task heads.
//
// Gates are packed along the 4h dimension in the order
//   [input i | forget f | cell g | output o]
// and checkpoints store them in this order.

#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "lstmjump/errors.hpp"
#include "lstmjump/numeric.hpp"

namespace lstmjump {

using Token = std::int32_t;

enum class Gate : std::size_t { Input = 0, Forget = 1, Cell = 2, Output = 3 };

template <typename T>
void init_uniform(Matrix<T>& m, Rng& rng, double bound) {
  for (T& v : m.values()) v = static_cast<T>(rng.uniform(-bound, bound));
}

template <typename T>
struct LstmLayerParams {
  Matrix<T> w_x;   // 4h x input_dim
  Matrix<T> w_h;   // 4h x h
  Matrix<T> bias;  // 4h x 1

  LstmLayerParams() = default;
  LstmLayerParams(std::size_t input_dim, std::size_t hidden)
      : w_x(4 * hidden, input_dim), w_h(4 * hidden, hidden), bias(4 * hidden, 1) {}

  std::size_t hidden() const noexcept { return w_h.cols(); }
  std::size_t input_dim() const noexcept { return w_x.cols(); }

  void init(Rng& rng, double bound = 0.08, double forget_bias = 1.0) {
    init_uniform(w_x, rng, bound);
    init_uniform(w_h, rng, bound);
    bias.set_zero();
    const std::size_t h = hidden();
    for (std::size_t j = 0; j < h; ++j) bias[h + j] = static_cast<T>(forget_bias);
  }

  void validate() const {
    const std::size_t h = w_h.cols();
    if (w_h.rows() != 4 * h || w_x.rows() != 4 * h || bias.rows() != 4 * h || bias.cols() != 1) {
      throw ShapeError("lstm layer: inconsistent gate dimensions for hidden size " + std::to_string(h));
    }
  }
};

template <typename T>
struct Embedding {
  Matrix<T> table;  // vocab x embed_dim
  bool trainable = true;

  std::size_t vocab_size() const noexcept { return table.rows(); }
  std::size_t dim() const noexcept { return table.cols(); }

  std::span<const T> lookup(Token token) const {
    if (token < 0 || static_cast<std::size_t>(token) >= table.rows()) {
      throw InputError("embedding lookup: token " + std::to_string(token) + " outside vocabulary of " +
                       std::to_string(table.rows()));
    }
    return table.row(static_cast<std::size_t>(token));
  }
};

/// Embedding plus the LSTM stack; everything that reads tokens.
template <typename T>
struct Encoder {
  Embedding<T> embedding;
  std::vector<LstmLayerParams<T>> layers;

  std::size_t hidden() const noexcept { return layers.empty() ? 0 : layers.front().hidden(); }
  std::size_t num_layers() const noexcept { return layers.size(); }
};

template <typename T>
struct LstmState {
  std::vector<std::vector<T>> h;
  std::vector<std::vector<T>> c;

  static LstmState zeros(std::size_t layers, std::size_t hidden) {
    LstmState s;
    s.h.assign(layers, std::vector<T>(hidden, T{0}));
    s.c.assign(layers, std::vector<T>(hidden, T{0}));
    return s;
  }

  std::span<const T> top() const { return h.back(); }

  friend bool operator==(const LstmState&, const LstmState&) = default;
};

/// Everything the backward pass needs from one cell evaluation.
template <typename T>
struct CellCache {
  std::vector<T> x, h_prev, c_prev;
  std::vector<T> i, f, g, o;
  std::vector<T> c, tanh_c, h;

  void resize(std::size_t input_dim, std::size_t hidden) {
    x.resize(input_dim);
    for (auto* v : {&h_prev, &c_prev, &i, &f, &g, &o, &c, &tanh_c, &h}) v->resize(hidden);
  }
};

template <typename T>
void lstm_cell_forward(const LstmLayerParams<T>& p, std::span<const T> x, std::span<const T> h_prev,
                       std::span<const T> c_prev, CellCache<T>& cache, std::vector<T>& scratch) {
  const std::size_t h = p.hidden();
  if (x.size() != p.input_dim() || h_prev.size() != h || c_prev.size() != h) {
    throw ShapeError("lstm cell: input " + std::to_string(x.size()) + "/" + std::to_string(p.input_dim()) +
                     ", state " + std::to_string(h_prev.size()) + "/" + std::to_string(h));
  }
  cache.resize(x.size(), h);
  std::copy(x.begin(), x.end(), cache.x.begin());
  std::copy(h_prev.begin(), h_prev.end(), cache.h_prev.begin());
  std::copy(c_prev.begin(), c_prev.end(), cache.c_prev.begin());

  scratch.assign(p.bias.values().begin(), p.bias.values().end());
  matvec_add(p.w_x, x, std::span<T>(scratch));
  matvec_add(p.w_h, h_prev, std::span<T>(scratch));

  for (std::size_t j = 0; j < h; ++j) {
    const T gi = sigmoid(scratch[j]);
    const T gf = sigmoid(scratch[h + j]);
    const T gg = std::tanh(scratch[2 * h + j]);
    const T go = sigmoid(scratch[3 * h + j]);
    const T c = gf * c_prev[j] + gi * gg;
    const T tc = std::tanh(c);
    cache.i[j] = gi;
    cache.f[j] = gf;
    cache.g[j] = gg;
    cache.o[j] = go;
    cache.c[j] = c;
    cache.tanh_c[j] = tc;
    cache.h[j] = go * tc;
  }
}

/// One cell evaluation; the returned cache holds (h', c') in `h` and `c`.
template <typename T>
CellCache<T> lstm_cell_step(const LstmLayerParams<T>& p, std::span<const T> x, std::span<const T> h_prev,
                            std::span<const T> c_prev) {
  CellCache<T> cache;
  std::vector<T> scratch;
  lstm_cell_forward(p, x, h_prev, c_prev, cache, scratch);
  return cache;
}

/// Backward through one cell without the weight-matrix gradients: fills
/// `dz` (pre-activation gradients, gate order i|f|g|o), accumulates the bias
/// gradient and writes `dx`, `dh_prev`, `dc_prev`.
template <typename T>
void lstm_cell_backward_inputs(const LstmLayerParams<T>& p, const CellCache<T>& cache, std::span<const T> dh,
                               std::span<const T> dc, LstmLayerParams<T>& grads, std::span<T> dx,
                               std::span<T> dh_prev, std::span<T> dc_prev, std::vector<T>& dz) {
  const std::size_t h = p.hidden();
  dz.resize(4 * h);
  for (std::size_t j = 0; j < h; ++j) {
    const T tc = cache.tanh_c[j];
    const T dct = dc[j] + dh[j] * cache.o[j] * (T{1} - tc * tc);
    const T d_o = dh[j] * tc;
    const T di = dct * cache.g[j];
    const T dg = dct * cache.i[j];
    const T df = dct * cache.c_prev[j];
    dc_prev[j] = dct * cache.f[j];
    dz[j] = di * cache.i[j] * (T{1} - cache.i[j]);
    dz[h + j] = df * cache.f[j] * (T{1} - cache.f[j]);
    dz[2 * h + j] = dg * (T{1} - cache.g[j] * cache.g[j]);
    dz[3 * h + j] = d_o * cache.o[j] * (T{1} - cache.o[j]);
  }
  const std::span<const T> dzs(dz);
  for (std::size_t r = 0; r < 4 * h; ++r) grads.bias[r] += dz[r];
  std::fill(dx.begin(), dx.end(), T{0});
  std::fill(dh_prev.begin(), dh_prev.end(), T{0});
  matvec_transposed_add(p.w_x, dzs, dx);
  matvec_transposed_add(p.w_h, dzs, dh_prev);
}

/// Backward through one cell. `dh`/`dc` are the gradients arriving at the
/// cell outputs; parameter gradients accumulate into `grads`, input
/// gradients are written to `dx`, `dh_prev`, `dc_prev`.
template <typename T>
void lstm_cell_backward(const LstmLayerParams<T>& p, const CellCache<T>& cache, std::span<const T> dh,
                        std::span<const T> dc, LstmLayerParams<T>& grads, std::span<T> dx,
                        std::span<T> dh_prev, std::span<T> dc_prev, std::vector<T>& dz) {
  lstm_cell_backward_inputs(p, cache, dh, dc, grads, dx, dh_prev, dc_prev, dz);
  const std::span<const T> dzs(dz);
  outer_add(grads.w_x, dzs, std::span<const T>(cache.x));
  outer_add(grads.w_h, dzs, std::span<const T>(cache.h_prev));
}

/// a += sum_k u_k v_k^T, where u_k is row k of `u` (count x a.rows()). Each
/// row of `a` is visited once; per element the terms are added in k order.
template <typename T>
void outer_add_rows(Matrix<T>& a, const std::vector<T>& u, const std::vector<const std::vector<T>*>& v) {
  const std::size_t rows = a.rows(), n = a.cols();
  for (const auto* x : v) {
    if (x->size() != n) throw ShapeError("outer: dimension mismatch");
  }
  if (u.size() != v.size() * rows) throw ShapeError("outer: dimension mismatch");
  for (std::size_t r = 0; r < rows; ++r) {
    T* __restrict row = a.data() + r * n;
    for (std::size_t k = 0; k < v.size(); ++k) {
      const T s = u[k * rows + r];
      if (s == T{0}) continue;
      const T* __restrict src = v[k]->data();
      for (std::size_t c = 0; c < n; ++c) row[c] += s * src[c];
    }
  }
}

// ---------------------------------------------------------------------------
// Dropout

struct DropoutRates {
  double embedding = 0.0;
  double between_layers = 0.0;

  bool active() const noexcept { return embedding > 0.0 || between_layers > 0.0; }
};

/// Inverted-dropout masks for a single time step: kept units carry 1/keep so
/// evaluation needs no rescaling. An empty vector means "no dropout here".
template <typename T>
struct StepMasks {
  std::vector<T> embedding;
  std::vector<std::vector<T>> between;  // between[l] masks the input of layer l+1

  bool empty() const noexcept { return embedding.empty() && between.empty(); }
};

template <typename T>
void fill_dropout_mask(std::vector<T>& mask, std::size_t n, double rate, Rng& rng) {
  mask.resize(n);
  if (rate >= 1.0) {
    std::fill(mask.begin(), mask.end(), T{0});
    return;
  }
  const T keep_scale = static_cast<T>(1.0 / (1.0 - rate));
  for (auto& m : mask) m = rng.bernoulli(rate) ? T{0} : keep_scale;
}

template <typename T>
void sample_step_masks(StepMasks<T>& masks, const DropoutRates& rates, std::size_t embed_dim,
                       std::size_t hidden, std::size_t layers, Rng& rng) {
  masks.embedding.clear();
  masks.between.clear();
  if (rates.embedding > 0.0) fill_dropout_mask(masks.embedding, embed_dim, rates.embedding, rng);
  if (rates.between_layers > 0.0 && layers > 1) {
    masks.between.resize(layers - 1);
    for (auto& m : masks.between) fill_dropout_mask(m, hidden, rates.between_layers, rng);
  }
}

// ---------------------------------------------------------------------------
// Stack forward with a reusable tape

template <typename T>
struct StackStepCache {
  Token token = 0;
  std::vector<CellCache<T>> cells;
  StepMasks<T> masks;
};

/// Forward caches for exactly the tokens that were read, in reading order.
/// Storage is reused across episodes.
template <typename T>
class EpisodeTape {
 public:
  void clear() noexcept { used_ = 0; }
  std::size_t size() const noexcept { return used_; }
  bool empty() const noexcept { return used_ == 0; }

  StackStepCache<T>& push() {
    if (used_ == steps_.size()) steps_.emplace_back();
    return steps_[used_++];
  }

  const StackStepCache<T>& operator[](std::size_t i) const { return steps_[i]; }
  StackStepCache<T>& operator[](std::size_t i) { return steps_[i]; }

 private:
  std::vector<StackStepCache<T>> steps_;
  std::size_t used_ = 0;
};

template <typename T>
struct StackWorkspace {
  std::vector<T> scratch;
  std::vector<T> input;
  CellCache<T> cell;
  StepMasks<T> masks;
};

/// Advances every layer by one step. Layer l > 0 consumes the (masked) output
/// of layer l-1; `masks.embedding` applies to `x` before layer 0. When `cache`
/// is given it receives the per-layer cell caches and the masks used.
template <typename T>
void lstm_stack_step(const std::vector<LstmLayerParams<T>>& layers, std::span<const T> x, LstmState<T>& state,
                     const StepMasks<T>& masks, StackWorkspace<T>& ws, StackStepCache<T>* cache = nullptr) {
  if (layers.empty()) throw ShapeError("lstm stack: no layers");
  if (state.h.size() != layers.size()) throw ShapeError("lstm stack: state/layer count mismatch");
  if (cache != nullptr) {
    cache->cells.resize(layers.size());
    cache->masks = masks;
  }
  ws.input.assign(x.begin(), x.end());
  if (!masks.embedding.empty()) {
    if (masks.embedding.size() != ws.input.size()) throw ShapeError("embedding dropout mask size");
    for (std::size_t j = 0; j < ws.input.size(); ++j) ws.input[j] *= masks.embedding[j];
  }
  for (std::size_t l = 0; l < layers.size(); ++l) {
    CellCache<T>& cell = cache != nullptr ? cache->cells[l] : ws.cell;
    lstm_cell_forward(layers[l], std::span<const T>(ws.input), std::span<const T>(state.h[l]),
                      std::span<const T>(state.c[l]), cell, ws.scratch);
    std::copy(cell.h.begin(), cell.h.end(), state.h[l].begin());
    std::copy(cell.c.begin(), cell.c.end(), state.c[l].begin());
    if (l + 1 < layers.size()) {
      ws.input.assign(cell.h.begin(), cell.h.end());
      if (!masks.between.empty()) {
        const auto& m = masks.between[l];
        for (std::size_t j = 0; j < ws.input.size(); ++j) ws.input[j] *= m[j];
      }
    }
  }
}

/// Embeds `token` and advances the stack, recording onto `tape` when given.
/// Dropout masks are drawn from `dropout_rng` only when `rates` is active.
template <typename T>
void read_token(const Encoder<T>& enc, Token token, LstmState<T>& state, const DropoutRates& rates,
                Rng* dropout_rng, StackWorkspace<T>& ws, EpisodeTape<T>* tape) {
  const auto x = enc.embedding.lookup(token);
  if (rates.active() && dropout_rng != nullptr) {
    sample_step_masks(ws.masks, rates, enc.embedding.dim(), enc.hidden(), enc.num_layers(), *dropout_rng);
  } else {
    ws.masks.embedding.clear();
    ws.masks.between.clear();
  }
  StackStepCache<T>* cache = nullptr;
  if (tape != nullptr) {
    cache = &tape->push();
    cache->token = token;
  }
  lstm_stack_step(enc.layers, x, state, ws.masks, ws, cache);
}

/// Gradient arriving at the top-layer hidden output of a given tape step.
template <typename T>
struct TopGradient {
  std::size_t step;
  std::vector<T> dh;
};

template <typename T>
struct BackwardWorkspace {
  std::vector<std::vector<T>> dh, dc;
  std::vector<T> dx, dh_prev, dc_prev, dz, dinput;
  std::vector<std::vector<T>> dz_steps;  // per layer, one row per step
  std::vector<const std::vector<T>*> inputs, h_prevs;
};

/// Backpropagation through time over the recorded tape. Upstream gradients
/// are injected at the top layer of the listed steps (each step at most
/// once, any order). The hidden state carried across a jump is an ordinary
/// recurrent link here. Parameter gradients accumulate into `grads`; the
/// embedding gradient is accumulated only when the embedding is trainable.
template <typename T>
void lstm_backward(const Encoder<T>& enc, const EpisodeTape<T>& tape, std::span<const TopGradient<T>> upstream,
                   Encoder<T>& grads, BackwardWorkspace<T>& ws) {
  if (tape.empty()) {
    if (!upstream.empty()) throw ContractError("lstm_backward: no forward cache recorded");
    return;
  }
  const std::size_t layers = enc.num_layers();
  const std::size_t hidden = enc.hidden();
  for (const auto& g : upstream) {
    if (g.step >= tape.size()) throw ContractError("lstm_backward: upstream gradient for a step that was not read");
    if (g.dh.size() != hidden) throw ShapeError("lstm_backward: upstream gradient size");
  }
  ws.dh.assign(layers, std::vector<T>(hidden, T{0}));
  ws.dc.assign(layers, std::vector<T>(hidden, T{0}));
  ws.dh_prev.resize(hidden);
  ws.dc_prev.resize(hidden);
  ws.dz_steps.resize(layers);
  for (auto& d : ws.dz_steps) d.clear();

  for (std::size_t t = tape.size(); t-- > 0;) {
    const StackStepCache<T>& step = tape[t];
    if (step.cells.size() != layers) throw ContractError("lstm_backward: incomplete cache at step " + std::to_string(t));
    for (const auto& g : upstream) {
      if (g.step != t) continue;
      for (std::size_t j = 0; j < hidden; ++j) ws.dh.back()[j] += g.dh[j];
    }
    for (std::size_t l = layers; l-- > 0;) {
      const CellCache<T>& cell = step.cells[l];
      ws.dx.resize(cell.x.size());
      lstm_cell_backward_inputs(enc.layers[l], cell, std::span<const T>(ws.dh[l]), std::span<const T>(ws.dc[l]),
                                grads.layers[l], std::span<T>(ws.dx), std::span<T>(ws.dh_prev),
                                std::span<T>(ws.dc_prev), ws.dz);
      ws.dz_steps[l].insert(ws.dz_steps[l].end(), ws.dz.begin(), ws.dz.end());
      ws.dh[l].swap(ws.dh_prev);
      ws.dc[l].swap(ws.dc_prev);
      if (l > 0) {
        // dx is the gradient w.r.t. the masked output of layer l-1 at this step.
        if (!step.masks.between.empty()) {
          const auto& m = step.masks.between[l - 1];
          for (std::size_t j = 0; j < hidden; ++j) ws.dh[l - 1][j] += ws.dx[j] * m[j];
        } else {
          for (std::size_t j = 0; j < hidden; ++j) ws.dh[l - 1][j] += ws.dx[j];
        }
      } else if (enc.embedding.trainable) {
        auto row = grads.embedding.table.row(static_cast<std::size_t>(step.token));
        if (!step.masks.embedding.empty()) {
          for (std::size_t j = 0; j < row.size(); ++j) row[j] += ws.dx[j] * step.masks.embedding[j];
        } else {
          for (std::size_t j = 0; j < row.size(); ++j) row[j] += ws.dx[j];
        }
      }
    }
  }
  // Weight gradients, with steps in the same (reverse) order as above.
  for (std::size_t l = 0; l < layers; ++l) {
    ws.inputs.clear();
    ws.h_prevs.clear();
    for (std::size_t t = tape.size(); t-- > 0;) {
      ws.inputs.push_back(&tape[t].cells[l].x);
      ws.h_prevs.push_back(&tape[t].cells[l].h_prev);
    }
    outer_add_rows(grads.layers[l].w_x, ws.dz_steps[l], ws.inputs);
    outer_add_rows(grads.layers[l].w_h, ws.dz_steps[l], ws.h_prevs);
  }
}

// ---------------------------------------------------------------------------
// Heads

template <typename T>
struct ClassifierHead {
  Matrix<T> w;     // classes x h
  Matrix<T> bias;  // classes x 1

  std::size_t num_classes() const noexcept { return w.rows(); }
};

template <typename T>
std::vector<T> classify(const ClassifierHead<T>& head, std::span<const T> h) {
  if (head.w.cols() != h.size()) throw ShapeError("classify: hidden size mismatch");
  std::vector<T> logits(head.bias.values().begin(), head.bias.values().end());
  matvec_add(head.w, h, std::span<T>(logits));
  softmax_into(std::span<const T>(logits), std::span<T>(logits));
  return logits;
}

/// Cross-entropy backward for a softmax head: accumulates head gradients
/// scaled by `scale` and adds the hidden-state gradient into `dh`.
template <typename T>
void classify_backward(const ClassifierHead<T>& head, std::span<const T> h, std::span<const T> probs,
                       std::size_t label, T scale, ClassifierHead<T>& grads, std::span<T> dh) {
  std::vector<T> dlogits(probs.begin(), probs.end());
  dlogits[label] -= T{1};
  for (auto& v : dlogits) v *= scale;
  outer_add(grads.w, std::span<const T>(dlogits), h);
  for (std::size_t k = 0; k < dlogits.size(); ++k) grads.bias[k] += dlogits[k];
  matvec_transposed_add(head.w, std::span<const T>(dlogits), dh);
}

template <typename T>
struct BilinearQaHead {
  Matrix<T> w;  // embed_dim x h
};

/// softmax(C W h) over the candidate rows of C.
template <typename T>
std::vector<T> qa_score(const BilinearQaHead<T>& head, const Matrix<T>& candidates, std::span<const T> h) {
  if (head.w.cols() != h.size() || candidates.cols() != head.w.rows()) {
    throw ShapeError("qa_score: candidates " + std::to_string(candidates.cols()) + " / W " +
                     std::to_string(head.w.rows()) + "x" + std::to_string(head.w.cols()) + " / h " +
                     std::to_string(h.size()));
  }
  if (candidates.rows() == 0) throw ShapeError("qa_score: no candidates");
  std::vector<T> wh(head.w.rows(), T{0});
  matvec_add(head.w, h, std::span<T>(wh));
  std::vector<T> scores(candidates.rows(), T{0});
  matvec_add(candidates, std::span<const T>(wh), std::span<T>(scores));
  softmax_into(std::span<const T>(scores), std::span<T>(scores));
  return scores;
}

/// Cross-entropy backward through the bilinear scorer. The candidate-matrix
/// gradient is written to `dcandidates` (same shape as `candidates`).
template <typename T>
void qa_backward(const BilinearQaHead<T>& head, const Matrix<T>& candidates, std::span<const T> h,
                 std::span<const T> probs, std::size_t label, T scale, BilinearQaHead<T>& grads, std::span<T> dh,
                 Matrix<T>& dcandidates) {
  std::vector<T> ds(probs.begin(), probs.end());
  ds[label] -= T{1};
  for (auto& v : ds) v *= scale;
  std::vector<T> wh(head.w.rows(), T{0});
  matvec_add(head.w, h, std::span<T>(wh));
  // d(Wh) = C^T ds
  std::vector<T> dwh(head.w.rows(), T{0});
  matvec_transposed_add(candidates, std::span<const T>(ds), std::span<T>(dwh));
  outer_add(grads.w, std::span<const T>(dwh), h);
  matvec_transposed_add(head.w, std::span<const T>(dwh), dh);
  dcandidates = Matrix<T>(candidates.rows(), candidates.cols());
  outer_add(dcandidates, std::span<const T>(ds), std::span<const T>(wh));
}

}  // namespace lstmjump
