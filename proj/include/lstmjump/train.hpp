// Copyright 2026 The LSTM-Jump Authors
// SPDX-License-Identifier: Apache-2.0
//
// Optimization and evaluation: per-episode forward/backward, Adam, global
// norm clipping, the length curriculum and the training loop.

#pragma once

#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <deque>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "lstmjump/data.hpp"
#include "lstmjump/errors.hpp"
#include "lstmjump/jump.hpp"
#include "lstmjump/model.hpp"
#include "lstmjump/numeric.hpp"
#include "lstmjump/params.hpp"
#include "lstmjump/rl.hpp"

namespace lstmjump {

// ---------------------------------------------------------------------------
// Adam

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

template <typename T>
struct AdamState {
  AdamConfig config;
  std::vector<Matrix<T>> m;
  std::vector<Matrix<T>> v;
  std::uint64_t t = 0;

  static AdamState like(std::span<Matrix<T>* const> params, AdamConfig cfg = {}) {
    AdamState s;
    s.config = cfg;
    for (const Matrix<T>* p : params) {
      s.m.emplace_back(p->rows(), p->cols());
      s.v.emplace_back(p->rows(), p->cols());
    }
    return s;
  }
};

/// One bias-corrected Adam update over matching parameter/gradient lists.
/// Entries with `frozen[i]` set are left untouched (moments included).
template <typename T>
void adam_step(AdamState<T>& state, std::span<Matrix<T>* const> params, std::span<const Matrix<T>* const> grads,
               const std::vector<bool>& frozen = {}) {
  if (params.size() != grads.size() || params.size() != state.m.size()) {
    throw ShapeError("adam: parameter/gradient/state count mismatch");
  }
  ++state.t;
  const AdamConfig& c = state.config;
  const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(state.t));
  const T b1 = static_cast<T>(c.beta1);
  const T b2 = static_cast<T>(c.beta2);
  const T one_b1 = static_cast<T>(1.0 - c.beta1);
  const T one_b2 = static_cast<T>(1.0 - c.beta2);
  const T inv_bc1 = static_cast<T>(1.0 / bc1);
  const T inv_bc2 = static_cast<T>(1.0 / bc2);
  const T lr = static_cast<T>(c.learning_rate);
  const T eps = static_cast<T>(c.epsilon);
  for (std::size_t k = 0; k < params.size(); ++k) {
    if (!frozen.empty() && frozen[k]) continue;
    Matrix<T>& p = *params[k];
    const Matrix<T>& g = *grads[k];
    Matrix<T>& m = state.m[k];
    Matrix<T>& v = state.v[k];
    if (!p.same_shape(g) || !p.same_shape(m)) throw ShapeError("adam: tensor shape mismatch");
    for (std::size_t i = 0; i < p.size(); ++i) {
      const T gi = g[i];
      m[i] = b1 * m[i] + one_b1 * gi;
      v[i] = b2 * v[i] + one_b2 * gi * gi;
      const T m_hat = m[i] * inv_bc1;
      const T v_hat = v[i] * inv_bc2;
      p[i] -= lr * m_hat / (std::sqrt(v_hat) + eps);
    }
  }
}

template <typename T>
AdamState<T> make_adam(ModelParams<T>& params, AdamConfig cfg = {}) {
  auto t = params.tensors();
  return AdamState<T>::like(std::span<Matrix<T>* const>(t), cfg);
}

template <typename T>
void adam_step(AdamState<T>& state, ModelParams<T>& params, ModelParams<T>& grads) {
  auto p = params.tensors();
  auto g = grads.tensors();
  std::vector<const Matrix<T>*> gc(g.begin(), g.end());
  std::vector<bool> frozen(p.size(), false);
  frozen[0] = !params.encoder.embedding.trainable;  // "embedding" is always first
  adam_step(state, std::span<Matrix<T>* const>(p), std::span<const Matrix<T>* const>(gc), frozen);
}

// ---------------------------------------------------------------------------
// Curriculum

struct CurriculumSchedule {
  std::vector<std::size_t> lengths{10, 20, 30, 40, 50, 60, 70, 80, 90, 100};
  double advance_threshold = 0.90;
  std::size_t window = 50;
  std::size_t stage = 0;
  std::deque<double> recent;

  void validate() const {
    if (lengths.empty()) throw InputError("curriculum: no stages");
    for (std::size_t i = 1; i < lengths.size(); ++i) {
      if (lengths[i] <= lengths[i - 1]) throw InputError("curriculum: stage lengths must be strictly increasing");
    }
    if (window == 0) throw InputError("curriculum: window must be positive");
  }

  std::size_t current_length() const { return lengths.at(stage); }
  bool at_final_stage() const noexcept { return stage + 1 >= lengths.size(); }
  bool window_full() const noexcept { return recent.size() >= window; }

  double windowed_accuracy() const {
    if (recent.empty()) return 0.0;
    double s = 0.0;
    for (double a : recent) s += a;
    return s / static_cast<double>(recent.size());
  }
};

/// Moves to the next stage when `recent_train_acc` reaches the threshold and
/// a longer stage exists. Returns true when the stage changed.
inline bool curriculum_advance(CurriculumSchedule& schedule, double recent_train_acc) {
  if (recent_train_acc >= schedule.advance_threshold && !schedule.at_final_stage()) {
    ++schedule.stage;
    schedule.recent.clear();
    return true;
  }
  return false;
}

/// Records one batch accuracy and advances once the window is full.
inline bool curriculum_observe(CurriculumSchedule& schedule, double batch_acc) {
  schedule.recent.push_back(batch_acc);
  while (schedule.recent.size() > schedule.window) schedule.recent.pop_front();
  if (!schedule.window_full()) return false;
  return curriculum_advance(schedule, schedule.windowed_accuracy());
}

// ---------------------------------------------------------------------------
// Episodes

struct EpisodeSettings {
  JumpConfig jump;
  bool jumping = true;
  RolloutMode mode = RolloutMode::Sample;
  DropoutRates dropout{};
  bool policy_grad_into_encoder = false;
  double entropy_weight = 0.0;
};

template <typename T>
struct EpisodeOutcome {
  std::size_t prediction = 0;
  bool correct = false;
  double reward = 0.0;
  std::size_t tokens_read = 0;
  TerminationReason termination = TerminationReason::EndOfSequence;
  EpisodeLoss<T> loss;
};

template <typename T>
struct EpisodeWorkspace {
  EpisodeTape<T> tape;
  BackwardWorkspace<T> backward;
  std::vector<TopGradient<T>> upstream;
  Matrix<T> candidates;
  Matrix<T> dcandidates;
  ReadingTrace<T> last_trace;
};

template <typename T>
void gather_candidates(const Embedding<T>& emb, std::span<const Token> ids, Matrix<T>& out) {
  out = Matrix<T>(ids.size(), emb.dim());
  for (std::size_t r = 0; r < ids.size(); ++r) {
    const auto row = emb.lookup(ids[r]);
    std::copy(row.begin(), row.end(), out.row(r).begin());
  }
}

/// Final-state prediction distribution for one example.
template <typename T>
std::vector<T> predict_distribution(const ModelParams<T>& params, const Example& ex, std::span<const T> h,
                                    Matrix<T>& candidates) {
  if (params.shape.qa) {
    gather_candidates(params.encoder.embedding, std::span<const Token>(ex.candidates), candidates);
    return qa_score(params.qa, candidates, h);
  }
  return classify(params.cls, h);
}

/// Runs one episode: rollout, prediction, reward and loss parts. When
/// `grads` is non-null, gradients of grad_scale * (j1 + surrogate +
/// baseline_sq) accumulate into it.
template <typename T>
EpisodeOutcome<T> run_episode(const ModelParams<T>& params, const Example& ex, const EpisodeSettings& s, Rng& rng,
                              EpisodeWorkspace<T>& ws, ModelParams<T>* grads = nullptr, T grad_scale = T{1}) {
  RolloutOptions<T> opts;
  opts.tape = grads != nullptr ? &ws.tape : nullptr;
  opts.dropout = s.dropout;
  opts.jumping = s.jumping;
  RolloutResult<T> run = rollout(params.encoder, ex.sequence(), s.jump, s.mode, rng, params.jump, opts);
  const std::span<const T> h = run.state.top();

  std::vector<T> probs = predict_distribution(params, ex, h, ws.candidates);
  if (ex.label >= probs.size()) {
    throw InputError("label " + std::to_string(ex.label) + " outside " + std::to_string(probs.size()) + " outputs");
  }
  EpisodeOutcome<T> out;
  out.prediction = argmax(std::span<const T>(probs));
  out.correct = out.prediction == ex.label;
  out.reward = reward(out.prediction, ex.label);
  out.tokens_read = run.trace.tokens_read;
  out.termination = run.trace.termination;
  out.loss.j1 = -std::log(std::max(probs[ex.label], std::numeric_limits<T>::min()));

  std::vector<T> baselines;
  if (s.jumping) {
    baselines = baseline_values(params.baseline, run.trace);
    out.loss.surrogate = reinforce_surrogate(run.trace, out.reward, std::span<const T>(baselines));
    out.loss.baseline_sq = baseline_squared_error(out.reward, std::span<const T>(baselines));
  }

  if (grads != nullptr) {
    const std::size_t hidden = params.shape.hidden;
    ws.upstream.clear();
    ws.upstream.push_back(TopGradient<T>{ws.tape.size() - 1, std::vector<T>(hidden, T{0})});
    std::span<T> dh_final(ws.upstream.front().dh);
    if (params.shape.qa) {
      qa_backward(params.qa, ws.candidates, h, std::span<const T>(probs), ex.label, grad_scale, grads->qa, dh_final,
                  ws.dcandidates);
      if (params.encoder.embedding.trainable) {
        for (std::size_t r = 0; r < ex.candidates.size(); ++r) {
          auto row = grads->encoder.embedding.table.row(static_cast<std::size_t>(ex.candidates[r]));
          const auto d = ws.dcandidates.row(r);
          for (std::size_t k = 0; k < row.size(); ++k) row[k] += d[k];
        }
      }
    } else {
      classify_backward(params.cls, h, std::span<const T>(probs), ex.label, grad_scale, grads->cls, dh_final);
    }

    for (std::size_t i = 0; i < run.trace.jumps.size(); ++i) {
      const JumpDecision<T>& d = run.trace.jumps[i];
      const std::span<const T> hi(d.hidden);
      std::vector<T> dlogits = surrogate_logit_grad(d, out.reward, baselines[i]);
      if (s.entropy_weight > 0.0) {
        // d(-beta * H)/dz_k = beta * p_k * (log p_k + H)
        T entropy{0};
        for (T p : d.probs) entropy -= p > T{0} ? p * std::log(p) : T{0};
        for (std::size_t k = 0; k < dlogits.size(); ++k) {
          const T p = d.probs[k];
          const T logp = p > T{0} ? std::log(p) : T{0};
          dlogits[k] += static_cast<T>(s.entropy_weight) * p * (logp + entropy);
        }
      }
      for (auto& g : dlogits) g *= grad_scale;
      outer_add(grads->jump.w, std::span<const T>(dlogits), hi);
      for (std::size_t k = 0; k < dlogits.size(); ++k) grads->jump.bias[k] += dlogits[k];
      if (s.policy_grad_into_encoder) {
        TopGradient<T> extra{d.step, std::vector<T>(hidden, T{0})};
        matvec_transposed_add(params.jump.w, std::span<const T>(dlogits), std::span<T>(extra.dh));
        ws.upstream.push_back(std::move(extra));
      }
      const T db = T{-2} * (static_cast<T>(out.reward) - baselines[i]) * grad_scale;
      for (std::size_t k = 0; k < hidden; ++k) grads->baseline.w[k] += db * hi[k];
      grads->baseline.c[0] += db;
    }
    lstm_backward(params.encoder, ws.tape, std::span<const TopGradient<T>>(ws.upstream), grads->encoder,
                  ws.backward);
  }
  ws.last_trace = std::move(run.trace);
  return out;
}

// ---------------------------------------------------------------------------
// Configuration and reports

struct TrainConfig {
  std::size_t batch_size = 100;
  double clip_threshold = 1.0;
  DropoutRates dropout{0.1, 0.2};  // embedding, between LSTM layers
  double target_val_acc = 0.98;    // stop once validation accuracy exceeds this
  std::size_t max_epochs = 1000;
  std::size_t max_steps = 0;       // 0: unlimited
  double max_seconds = 0.0;        // 0: unlimited
  std::uint64_t seed = 1;
  JumpConfig jump;
  bool jump_enabled = true;        // false trains the plain LSTM baseline
  bool policy_grad_into_encoder = false;
  double entropy_weight = 0.0;
  AdamConfig adam;
  std::size_t eval_every = 0;      // steps between validations; 0 = once per epoch
  std::size_t threads = 1;
  RolloutMode eval_mode = RolloutMode::Sample;

  void validate() const {
    if (batch_size < 1) throw InputError("train config: batch size must be >= 1");
    auto rate_ok = [](double r) { return r >= 0.0 && r <= 1.0; };
    if (!rate_ok(dropout.embedding) || !rate_ok(dropout.between_layers)) {
      throw InputError("train config: dropout rates must lie in [0, 1]");
    }
    if (!(clip_threshold > 0.0)) throw InputError("train config: clip threshold must be positive");
    if (threads < 1) throw InputError("train config: threads must be >= 1");
    jump.validate();
  }

  EpisodeSettings training_episode() const {
    EpisodeSettings s;
    s.jump = jump;
    s.jumping = jump_enabled;
    s.mode = RolloutMode::Sample;
    s.dropout = dropout;
    s.policy_grad_into_encoder = policy_grad_into_encoder;
    s.entropy_weight = entropy_weight;
    return s;
  }
};

struct EvalReport {
  std::size_t examples = 0;
  double accuracy = 0.0;
  double avg_tokens_read = 0.0;
  double wall_time = 0.0;
  std::size_t zero_jump = 0;
  std::size_t max_jumps = 0;
  std::size_t end_of_sequence = 0;
};

template <typename T>
struct StepResult {
  LossBreakdown<T> loss;
  double accuracy = 0.0;
  double avg_tokens_read = 0.0;
  double grad_norm = 0.0;     // before clipping
  double clipped_norm = 0.0;  // after clipping
};

namespace detail {

/// Runs body(chunk) for chunk in [0, chunks) on up to `threads` workers.
/// Chunk boundaries never depend on the thread count.
template <typename F>
void parallel_chunks(std::size_t chunks, std::size_t threads, F&& body) {
  if (threads <= 1 || chunks <= 1) {
    for (std::size_t c = 0; c < chunks; ++c) body(c);
    return;
  }
  const std::size_t workers = std::min(threads, chunks);
  std::vector<std::jthread> pool;
  std::vector<std::exception_ptr> errors(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (std::size_t c = w; c < chunks; c += workers) body(c);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  pool.clear();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

inline constexpr std::size_t kChunks = 8;

}  // namespace detail

/// Optional per-example transform (padding / windowing) applied before an
/// episode. `training` selects random windows.
using ExamplePrep = std::function<Example(const Example&, Rng&, bool training)>;

struct EvalSettings {
  JumpConfig jump;
  bool jumping = true;
  RolloutMode mode = RolloutMode::Sample;
  std::uint64_t seed = 0;
  std::size_t threads = 1;
  std::size_t limit = 0;  // evaluate only the first `limit` examples; 0 = all
  ExamplePrep prep;
};

/// One pass over the dataset, instance by instance, dropout off. Example k
/// draws from substream k of the evaluation seed.
template <typename T>
EvalReport evaluate(const ModelParams<T>& params, const Dataset& data, const EvalSettings& s,
                    const std::function<void(std::size_t, const ReadingTrace<T>&, const EpisodeOutcome<T>&)>& on_episode =
                        {}) {
  EvalReport report;
  const std::size_t n = s.limit == 0 ? data.size() : std::min(s.limit, data.size());
  report.examples = n;
  if (n == 0) return report;
  EpisodeSettings es;
  es.jump = s.jump;
  es.jumping = s.jumping;
  es.mode = s.mode;
  const Rng root(s.seed);

  struct Partial {
    std::size_t correct = 0, tokens = 0, zero = 0, max = 0, eos = 0;
  };
  const std::size_t chunks = std::min(detail::kChunks, n);
  std::vector<Partial> partial(chunks);
  const auto start = std::chrono::steady_clock::now();
  detail::parallel_chunks(chunks, on_episode ? 1 : s.threads, [&](std::size_t c) {
    EpisodeWorkspace<T> ws;
    Partial& acc = partial[c];
    const std::size_t lo = n * c / chunks;
    const std::size_t hi = n * (c + 1) / chunks;
    for (std::size_t k = lo; k < hi; ++k) {
      Rng rng = root.substream(k);
      EpisodeOutcome<T> o;
      if (s.prep) {
        const Example ex = s.prep(data[k], rng, false);
        o = run_episode(params, ex, es, rng, ws);
      } else {
        o = run_episode(params, data[k], es, rng, ws);
      }
      acc.correct += o.correct ? 1 : 0;
      acc.tokens += o.tokens_read;
      switch (o.termination) {
        case TerminationReason::ZeroJump:
          ++acc.zero;
          break;
        case TerminationReason::MaxJumps:
          ++acc.max;
          break;
        case TerminationReason::EndOfSequence:
          ++acc.eos;
          break;
      }
      if (on_episode) on_episode(k, ws.last_trace, o);
    }
  });
  report.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  Partial total;
  for (const auto& p : partial) {
    total.correct += p.correct;
    total.tokens += p.tokens;
    total.zero += p.zero;
    total.max += p.max;
    total.eos += p.eos;
  }
  report.accuracy = static_cast<double>(total.correct) / static_cast<double>(n);
  report.avg_tokens_read = static_cast<double>(total.tokens) / static_cast<double>(n);
  report.zero_jump = total.zero;
  report.max_jumps = total.max;
  report.end_of_sequence = total.eos;
  return report;
}

// ---------------------------------------------------------------------------
// Trainer

template <typename T>
class Trainer {
 public:
  Trainer(ModelParams<T> params, TrainConfig cfg)
      : params_(std::move(params)), cfg_(std::move(cfg)), run_rng_(cfg_.seed) {
    cfg_.validate();
    if (cfg_.jump.max_jump != params_.shape.max_jump) {
      throw InputError("train: jump config K differs from the model's K");
    }
    grads_ = ModelParams<T>::zeros(params_.shape);
    adam_ = make_adam(params_, cfg_.adam);
    const std::size_t chunks = std::min(detail::kChunks, cfg_.batch_size);
    chunk_grads_.assign(chunks, grads_);
    workspaces_.resize(chunks);
  }

  /// Forward/backward over the batch, global-norm clip, one Adam update.
  StepResult<T> train_step(std::span<const Example* const> batch) {
    if (batch.empty()) throw InputError("train_step: empty batch");
    const std::size_t n = batch.size();
    const std::size_t chunks = std::min(chunk_grads_.size(), n);
    const T scale = T{1} / static_cast<T>(n);
    const EpisodeSettings es = cfg_.training_episode();
    const Rng step_rng = run_rng_.substream(0x57e9'0000ULL + step_);

    std::vector<EpisodeOutcome<T>> outcomes(n);
    detail::parallel_chunks(chunks, cfg_.threads, [&](std::size_t c) {
      ModelParams<T>& g = chunk_grads_[c];
      g.set_zero();
      const std::size_t lo = n * c / chunks;
      const std::size_t hi = n * (c + 1) / chunks;
      for (std::size_t k = lo; k < hi; ++k) {
        Rng rng = step_rng.substream(k);
        if (prep_) {
          const Example ex = prep_(*batch[k], rng, true);
          outcomes[k] = run_episode(params_, ex, es, rng, workspaces_[c], &g, scale);
        } else {
          outcomes[k] = run_episode(params_, *batch[k], es, rng, workspaces_[c], &g, scale);
        }
      }
    });

    grads_.set_zero();
    for (std::size_t c = 0; c < chunks; ++c) grads_.add(chunk_grads_[c]);

    StepResult<T> result;
    std::vector<EpisodeLoss<T>> losses;
    losses.reserve(n);
    std::size_t correct = 0, tokens = 0;
    for (const auto& o : outcomes) {
      losses.push_back(o.loss);
      correct += o.correct ? 1 : 0;
      tokens += o.tokens_read;
    }
    result.loss = total_loss(losses);
    result.accuracy = static_cast<double>(correct) / static_cast<double>(n);
    result.avg_tokens_read = static_cast<double>(tokens) / static_cast<double>(n);

    auto g = grads_.tensors();
    result.grad_norm = clip_global_norm(std::span<Matrix<T>* const>(g), cfg_.clip_threshold);
    if (!std::isfinite(result.grad_norm) || !std::isfinite(static_cast<double>(result.loss.total))) {
      throw DivergenceError("non-finite loss/gradient at step " + std::to_string(step_) +
                            " (loss=" + std::to_string(static_cast<double>(result.loss.total)) +
                            ", grad norm=" + std::to_string(result.grad_norm) + ")");
    }
    result.clipped_norm = global_norm(std::span<Matrix<T>* const>(g));
    adam_step(adam_, params_, grads_);
    ++step_;
    return result;
  }

  StepResult<T> train_step(const std::vector<const Example*>& batch) {
    return train_step(std::span<const Example* const>(batch));
  }

  void set_example_prep(ExamplePrep prep) { prep_ = std::move(prep); }
  const ExamplePrep& example_prep() const noexcept { return prep_; }

  const ModelParams<T>& params() const noexcept { return params_; }
  ModelParams<T>& params() noexcept { return params_; }
  const ModelParams<T>& last_gradients() const noexcept { return grads_; }
  AdamState<T>& adam() noexcept { return adam_; }
  const AdamState<T>& adam() const noexcept { return adam_; }
  const TrainConfig& config() const noexcept { return cfg_; }
  std::uint64_t step() const noexcept { return step_; }
  void set_step(std::uint64_t s) noexcept { step_ = s; }

 private:
  ModelParams<T> params_;
  ModelParams<T> grads_;
  TrainConfig cfg_;
  AdamState<T> adam_;
  Rng run_rng_;
  std::uint64_t step_ = 0;
  std::vector<ModelParams<T>> chunk_grads_;
  std::vector<EpisodeWorkspace<T>> workspaces_;
  ExamplePrep prep_;
};

// ---------------------------------------------------------------------------
// Training loop

struct MetricRecord {
  std::uint64_t step = 0;
  std::size_t epoch = 0;
  std::size_t stage_len = 0;
  double train_acc = 0.0;
  std::optional<double> val_acc;
  double avg_tokens_read = 0.0;
  double j1 = 0.0;
  double j2_surrogate = 0.0;
  double baseline_mse = 0.0;
  double total = 0.0;
  double wall_time = 0.0;
  std::string event;  // "epoch", "eval", "stage"
};

enum class StopReason { TargetReached, MaxEpochs, MaxSteps, TimeBudget };

inline std::string_view to_string(StopReason r) noexcept {
  switch (r) {
    case StopReason::TargetReached:
      return "target_reached";
    case StopReason::MaxEpochs:
      return "max_epochs";
    case StopReason::MaxSteps:
      return "max_steps";
    case StopReason::TimeBudget:
      return "time_budget";
  }
  return "?";
}

template <typename T>
struct FitResult {
  StopReason stop = StopReason::MaxEpochs;
  ModelParams<T> best;  // best-validation parameters (final ones if never validated)
  AdamState<T> best_adam;
  std::uint64_t best_step = 0;
  std::size_t best_stage = 0;
  std::optional<double> best_val_acc;
  std::size_t final_stage = 0;
  std::vector<std::size_t> stage_history;  // stage index after every step
  double wall_time = 0.0;
  std::size_t epochs = 0;
};

/// Supplies the training set for a curriculum stage length.
using StageData = std::function<const Dataset&(std::size_t stage_length)>;

/// Curriculum training until the validation target, the epoch/step limit or
/// the time budget. Validation runs only at the final curriculum stage, every
/// `eval_every` steps (or at each epoch end).
template <typename T>
FitResult<T> fit(Trainer<T>& trainer, CurriculumSchedule& schedule, const StageData& stage_data,
                 const Dataset& valid, const EvalSettings& eval,
                 const std::function<void(const MetricRecord&)>& on_record = {}) {
  schedule.validate();
  const TrainConfig& cfg = trainer.config();
  FitResult<T> result;
  auto snapshot = [&] {
    result.best = trainer.params();
    result.best_adam = trainer.adam();
    result.best_step = trainer.step();
    result.best_stage = schedule.stage;
  };
  snapshot();
  const auto start = std::chrono::steady_clock::now();
  auto elapsed = [&] { return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count(); };
  const Rng shuffle_root = Rng(cfg.seed).substream(0x5ff1e);

  StepResult<T> last{};
  std::size_t epoch = 0;
  bool stop = false;

  auto emit = [&](const std::string& event, std::optional<double> val) {
    if (!on_record) return;
    MetricRecord r;
    r.step = trainer.step();
    r.epoch = epoch;
    r.stage_len = schedule.current_length();
    r.train_acc = schedule.recent.empty() ? last.accuracy : schedule.windowed_accuracy();
    r.val_acc = val;
    r.avg_tokens_read = last.avg_tokens_read;
    r.j1 = static_cast<double>(last.loss.j1);
    r.j2_surrogate = static_cast<double>(last.loss.j2_surrogate);
    r.baseline_mse = static_cast<double>(last.loss.baseline_mse);
    r.total = static_cast<double>(last.loss.total);
    r.wall_time = elapsed();
    r.event = event;
    on_record(r);
  };

  auto validate = [&]() -> bool {
    const EvalReport rep = evaluate(trainer.params(), valid, eval);
    emit("eval", rep.accuracy);
    if (!result.best_val_acc || rep.accuracy > *result.best_val_acc) {
      result.best_val_acc = rep.accuracy;
      snapshot();
    }
    return rep.accuracy > cfg.target_val_acc;
  };

  while (!stop) {
    if (cfg.max_epochs != 0 && epoch >= cfg.max_epochs) {
      result.stop = StopReason::MaxEpochs;
      break;
    }
    const Dataset& train = stage_data(schedule.current_length());
    if (train.empty()) throw InputError("fit: empty training set");
    Rng shuffle = shuffle_root.substream(epoch);
    const auto order = shuffled_indices(train.size(), shuffle);
    bool stage_changed = false;
    std::vector<const Example*> batch;
    for (std::size_t b = 0; b < order.size() && !stop && !stage_changed; b += cfg.batch_size) {
      batch.clear();
      for (std::size_t k = b; k < std::min(order.size(), b + cfg.batch_size); ++k) batch.push_back(&train[order[k]]);
      last = trainer.train_step(batch);
      stage_changed = curriculum_observe(schedule, last.accuracy);
      result.stage_history.push_back(schedule.stage);
      if (stage_changed) emit("stage", std::nullopt);
      const bool eval_due = cfg.eval_every != 0 && trainer.step() % cfg.eval_every == 0;
      if (eval_due && schedule.at_final_stage() && !valid.empty() && validate()) {
        result.stop = StopReason::TargetReached;
        stop = true;
      }
      if (!stop && cfg.max_steps != 0 && trainer.step() >= cfg.max_steps) {
        result.stop = StopReason::MaxSteps;
        stop = true;
      }
      if (!stop && cfg.max_seconds > 0.0 && elapsed() >= cfg.max_seconds) {
        result.stop = StopReason::TimeBudget;
        stop = true;
      }
    }
    ++epoch;
    if (!stop && !stage_changed && cfg.eval_every == 0 && schedule.at_final_stage() && !valid.empty()) {
      if (validate()) {
        result.stop = StopReason::TargetReached;
        stop = true;
      }
    }
    emit("epoch", std::nullopt);
  }
  if (!result.best_val_acc) snapshot();
  result.final_stage = schedule.stage;
  result.wall_time = elapsed();
  result.epochs = epoch;
  return result;
}

}  // namespace lstmjump
