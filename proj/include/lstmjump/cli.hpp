// Copyright 2026 The LSTM-Jump Authors
// SPDX-License-Identifier: Apache-2.0
//
// Command implementations behind tools/lstm_jump. Each command writes
// line-delimited JSON records to `out` and a human-readable summary to
// `log`, so tests can drive them without a process boundary.

#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "lstmjump/checkpoint.hpp"
#include "lstmjump/config.hpp"
#include "lstmjump/data.hpp"
#include "lstmjump/params.hpp"
#include "lstmjump/train.hpp"

namespace lstmjump::cli {

// Substream ids under Rng(config.seed).
inline constexpr std::uint64_t kInitStream = 1;
inline constexpr std::uint64_t kTrainStream = 2;  // .substream(stage length)
inline constexpr std::uint64_t kValidStream = 3;
inline constexpr std::uint64_t kTestStream = 4;
inline constexpr std::uint64_t kEvalStream = 5;

struct GlobalOptions {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> threads;
  std::vector<std::string> overrides;
};

/// Config file (or defaults), then --override assignments, then --seed and
/// --threads.
inline RunConfig resolve_config(const GlobalOptions& g) {
  RunConfig c = g.config_path.empty() ? RunConfig{} : load_config(g.config_path);
  for (const auto& o : g.overrides) apply_override(c, o);
  if (g.seed) c.seed = *g.seed;
  if (g.threads) c.threads = *g.threads;
  return c;
}

inline std::uint64_t eval_seed(const RunConfig& c) { return Rng(c.seed).substream(kEvalStream).next_u64(); }

inline Dataset synthetic_split(const RunConfig& c, std::uint64_t stream, std::size_t seq_len, std::size_t n) {
  Rng rng = Rng(c.seed).substream(stream).substream(seq_len);
  return gen_synthetic(SyntheticSpec{seq_len, c.vocab_size}, n, rng);
}

inline std::size_t final_length(const RunConfig& c) { return c.curriculum.empty() ? 100 : c.curriculum.back(); }

inline nlohmann::json to_json(const MetricRecord& r) {
  nlohmann::json j;
  j["event"] = r.event;
  j["step"] = r.step;
  j["epoch"] = r.epoch;
  j["stage_len"] = r.stage_len;
  j["train_acc"] = r.train_acc;
  j["val_acc"] = r.val_acc ? nlohmann::json(*r.val_acc) : nlohmann::json(nullptr);
  j["avg_tokens_read"] = r.avg_tokens_read;
  j["j1"] = r.j1;
  j["j2_surrogate"] = r.j2_surrogate;
  j["baseline_mse"] = r.baseline_mse;
  j["total"] = r.total;
  j["wall_time"] = r.wall_time;
  return j;
}

inline nlohmann::json to_json(const EvalReport& r, const RunConfig& c, bool jumping) {
  nlohmann::json j;
  j["event"] = "eval_report";
  j["examples"] = r.examples;
  j["accuracy"] = r.accuracy;
  j["avg_tokens_read"] = r.avg_tokens_read;
  j["wall_time"] = r.wall_time;
  j["jumping"] = jumping;
  j["read_len"] = c.jump.read_len;
  j["max_jump"] = c.jump.max_jump;
  j["n_jumps"] = c.jump.n_jumps;
  j["mode"] = std::string(to_string(c.eval_mode));
  j["zero_jump"] = r.zero_jump;
  j["max_jumps"] = r.max_jumps;
  j["end_of_sequence"] = r.end_of_sequence;
  return j;
}

// ---------------------------------------------------------------------------
// gen

struct GenOptions {
  std::string out_dir = ".";
  std::size_t seq_len = 100;
  std::size_t n_train = 100000;
  std::size_t n_valid = 10000;
  std::size_t n_test = 10000;
};

/// Writes train.txt, valid.txt and test.txt in the synthetic format.
inline int cmd_gen(const RunConfig& c, const GenOptions& o, std::ostream& out, std::ostream& log) {
  SyntheticSpec{o.seq_len, c.vocab_size}.validate();
  std::filesystem::create_directories(o.out_dir);
  const std::pair<const char*, std::pair<std::uint64_t, std::size_t>> splits[] = {
      {"train", {kTrainStream, o.n_train}}, {"valid", {kValidStream, o.n_valid}}, {"test", {kTestStream, o.n_test}}};
  for (const auto& [name, spec] : splits) {
    const Dataset ds = synthetic_split(c, spec.first, o.seq_len, spec.second);
    const std::string path = (std::filesystem::path(o.out_dir) / (std::string(name) + ".txt")).string();
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("cannot write " + path);
    write_synthetic(f, ds,
                    "lstm_jump gen split=" + std::string(name) + " seed=" + std::to_string(c.seed) +
                        " seq_len=" + std::to_string(o.seq_len) + " n=" + std::to_string(ds.size()));
    if (!f) throw std::runtime_error("write failed: " + path);
    out << nlohmann::json{{"event", "gen"}, {"split", name}, {"path", path}, {"examples", ds.size()}}.dump() << '\n';
    log << "wrote " << ds.size() << " examples to " << path << '\n';
  }
  return 0;
}

// ---------------------------------------------------------------------------
// data plumbing shared by train / eval / inspect-trace

struct LoadedData {
  Dataset data;
  ExamplePrep prep;  // empty for synthetic data
};

inline ExamplePrep corpus_prep(const RunConfig& c) {
  const CorpusSpec spec = c.corpus_spec();
  if (spec.target_len == 0 && !spec.window_len) return {};
  return [spec](const Example& ex, Rng& rng, bool training) {
    Example out = ex;
    out.tokens = pad_or_window(std::span<const Token>(ex.tokens), spec, rng, training);
    return out;
  };
}

inline Vocabulary fresh_vocabulary(const RunConfig& c) {
  return c.level == CorpusLevel::Character ? Vocabulary::characters() : Vocabulary{};
}

/// Evaluation data: an explicit file, else the config's test path, else (for
/// synthetic runs) freshly generated examples at the final curriculum length.
inline LoadedData load_eval_data(const RunConfig& c, const std::optional<Vocabulary>& vocab, const std::string& path,
                                 std::size_t synthetic_n) {
  LoadedData out;
  const std::string file = path.empty() ? c.test_path : path;
  if (c.task == Task::Synthetic) {
    out.data = file.empty() ? synthetic_split(c, kTestStream, final_length(c), synthetic_n)
                            : read_synthetic_file(file, c.vocab_size);
    return out;
  }
  if (file.empty()) throw InputError("no evaluation data: pass --data or set test_path");
  if (!vocab) throw FormatError("checkpoint has no vocabulary for a corpus task");
  Vocabulary v = *vocab;
  v.freeze();
  out.data = load_corpus(file, c.corpus_spec(), v);
  out.prep = corpus_prep(c);
  return out;
}

// ---------------------------------------------------------------------------
// train

struct TrainOptions {
  std::string resume_path;
};

inline int cmd_train(RunConfig c, const TrainOptions& o, std::ostream& out, std::ostream& log) {
  c.validate();
  if (c.checkpoint_path.empty()) throw InputError("train: checkpoint_path is not set");

  std::optional<Checkpoint> resume;
  if (!o.resume_path.empty()) {
    resume = load_checkpoint(o.resume_path);
    const RunConfig& saved = resume->config;
    if (saved.task != c.task || saved.hidden != c.hidden || saved.layers != c.layers ||
        saved.embed_dim != c.embed_dim || saved.jump.max_jump != c.jump.max_jump) {
      throw InputError("train: --resume checkpoint was trained with a different model configuration");
    }
  }

  std::optional<Vocabulary> vocab;
  Dataset corpus_train, valid;
  std::map<std::size_t, Dataset> stage_cache;
  StageData stage_data;
  ModelShape shape;

  if (c.task == Task::Synthetic) {
    shape = c.model_shape();
    stage_data = [&](std::size_t len) -> const Dataset& {
      if (!stage_cache.count(len)) {
        stage_cache.clear();
        stage_cache[len] = synthetic_split(c, kTrainStream, len, c.synthetic_train_size);
      }
      return stage_cache[len];
    };
    valid = c.valid_path.empty() ? synthetic_split(c, kValidStream, final_length(c), c.synthetic_valid_size)
                                 : read_synthetic_file(c.valid_path, c.vocab_size);
  } else {
    if (c.train_path.empty()) throw InputError("train: train_path is not set");
    vocab = resume && resume->vocab ? *resume->vocab : fresh_vocabulary(c);
    corpus_train = load_corpus(c.train_path, c.corpus_spec(), *vocab);
    vocab->freeze();
    if (!c.valid_path.empty()) valid = load_corpus(c.valid_path, c.corpus_spec(), *vocab);
    std::size_t classes = std::max(corpus_train.num_classes, valid.num_classes);
    if (c.task == Task::Qa) classes = std::max<std::size_t>(classes, 2);
    shape = c.model_shape(vocab->size(), std::max<std::size_t>(classes, 2));
    stage_data = [&](std::size_t) -> const Dataset& { return corpus_train; };
    log << "vocabulary " << vocab->size() << ", " << corpus_train.size() << " training / " << valid.size()
        << " validation examples\n";
  }

  ModelParams<float> params;
  if (resume) {
    params = resume->params;
    if (!(params.shape.vocab_size == shape.vocab_size && params.shape.num_classes == shape.num_classes)) {
      throw InputError("train: --resume checkpoint does not match the data's vocabulary or classes");
    }
  } else {
    Rng init = Rng(c.seed).substream(kInitStream);
    params = ModelParams<float>::initialized(shape, init);
    if (!c.embeddings_path.empty()) {
      std::ifstream f(c.embeddings_path);
      if (!f) throw std::runtime_error("cannot open embeddings file: " + c.embeddings_path);
      const std::size_t covered = load_embeddings(f, *vocab, params.encoder.embedding);
      log << "embeddings cover " << covered << " of " << vocab->size() << " words\n";
    }
  }

  Trainer<float> trainer(std::move(params), c.train_config());
  CurriculumSchedule schedule = c.curriculum_schedule();
  if (resume) {
    if (resume->adam) trainer.adam() = *resume->adam;
    trainer.set_step(resume->step);
    schedule.stage = std::min<std::size_t>(resume->stage, schedule.lengths.size() - 1);
    log << "resuming at step " << resume->step << ", stage length " << schedule.current_length() << '\n';
  }
  ExamplePrep prep = c.task == Task::Synthetic ? ExamplePrep{} : corpus_prep(c);
  trainer.set_example_prep(prep);

  EvalSettings es;
  es.jump = c.jump;
  es.jumping = c.jump_enabled;
  es.mode = c.eval_mode;
  es.seed = eval_seed(c);
  es.threads = c.threads;
  es.limit = c.valid_limit;
  es.prep = prep;

  FitResult<float> fitted;
  try {
    fitted = fit(trainer, schedule, stage_data, valid, es,
                 [&](const MetricRecord& r) { out << to_json(r).dump() << '\n' << std::flush; });
  } catch (const DivergenceError& e) {
    log << "training diverged: " << e.what() << '\n';
    return 2;
  }

  Checkpoint ck;
  ck.config = c;
  ck.vocab = vocab;
  ck.params = std::move(fitted.best);
  ck.adam = std::move(fitted.best_adam);
  ck.step = fitted.best_step;
  ck.stage = fitted.best_stage;
  save_checkpoint(c.checkpoint_path, ck);

  nlohmann::json summary{{"event", "train_done"},
                         {"stop", std::string(to_string(fitted.stop))},
                         {"steps", trainer.step()},
                         {"epochs", fitted.epochs},
                         {"final_stage_len", schedule.lengths[fitted.final_stage]},
                         {"best_val_acc", fitted.best_val_acc ? nlohmann::json(*fitted.best_val_acc) : nlohmann::json()},
                         {"checkpoint_step", ck.step},
                         {"wall_time", fitted.wall_time}};
  out << summary.dump() << '\n';
  log << "stopped (" << to_string(fitted.stop) << ") after " << trainer.step() << " steps, " << fitted.epochs
      << " epochs, " << fitted.wall_time << " s";
  if (fitted.best_val_acc) log << "; best validation accuracy " << *fitted.best_val_acc;
  log << "\ncheckpoint written to " << c.checkpoint_path << " (step " << ck.step << ")\n";
  return 0;
}

// ---------------------------------------------------------------------------
// eval

struct EvalOptions {
  std::string checkpoint;
  std::string data_path;
  std::string baseline_report;  // file holding an earlier eval_report line
  std::optional<RolloutMode> mode;
  std::optional<bool> jumping;  // default: as trained
  std::size_t synthetic_n = 10000;
  std::size_t limit = 0;
};

/// Reads the last `eval_report` record from a file of JSON lines.
inline nlohmann::json read_report(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open baseline report: " + path);
  std::optional<nlohmann::json> found;
  std::string line;
  while (std::getline(f, line)) {
    if (line.empty() || line.front() != '{') continue;
    auto j = nlohmann::json::parse(line, nullptr, false);
    if (!j.is_discarded() && j.value("event", "") == "eval_report") found = std::move(j);
  }
  if (!found) throw FormatError("no eval_report record in " + path);
  return *found;
}

/// Applies eval-time overrides (R, N, mode, ...) on top of the checkpoint's
/// configuration. K is fixed by the policy head and cannot change.
inline RunConfig eval_config(const Checkpoint& ck, const GlobalOptions& g) {
  RunConfig c = ck.config;
  for (const auto& o : g.overrides) apply_override(c, o);
  if (g.seed) c.seed = *g.seed;
  if (g.threads) c.threads = *g.threads;
  if (c.jump.max_jump != ck.params.shape.max_jump) {
    throw InputError("eval: K is fixed by the trained policy (" + std::to_string(ck.params.shape.max_jump) + ")");
  }
  c.jump.validate();
  return c;
}

inline EvalReport run_eval(const Checkpoint& ck, const RunConfig& c, const EvalOptions& o, bool& jumping,
                           const std::function<void(std::size_t, const ReadingTrace<float>&,
                                                    const EpisodeOutcome<float>&)>& on_episode = {}) {
  const LoadedData d = load_eval_data(c, ck.vocab, o.data_path, o.synthetic_n);
  EvalSettings es;
  es.jump = c.jump;
  jumping = o.jumping.value_or(c.jump_enabled);
  es.jumping = jumping;
  es.mode = c.eval_mode;
  es.seed = eval_seed(c);
  es.threads = c.threads;
  es.limit = o.limit;
  es.prep = d.prep;
  return evaluate(ck.params, d.data, es, on_episode);
}

inline int cmd_eval(const GlobalOptions& g, const EvalOptions& o, std::ostream& out, std::ostream& log) {
  const Checkpoint ck = load_checkpoint(o.checkpoint);
  RunConfig c = eval_config(ck, g);
  if (o.mode) c.eval_mode = *o.mode;
  bool jumping = true;
  const EvalReport rep = run_eval(ck, c, o, jumping);
  nlohmann::json j = to_json(rep, c, jumping);
  log << "accuracy " << rep.accuracy << ", avg tokens read " << rep.avg_tokens_read << ", " << rep.wall_time
      << " s over " << rep.examples << " examples (R=" << c.jump.read_len << ", N=" << c.jump.n_jumps
      << ", " << to_string(c.eval_mode) << ")\n";
  if (!o.baseline_report.empty()) {
    const nlohmann::json base = read_report(o.baseline_report);
    const double base_time = base.at("wall_time").get<double>();
    const double base_tokens = base.at("avg_tokens_read").get<double>();
    j["baseline_wall_time"] = base_time;
    j["speedup"] = rep.wall_time > 0.0 ? base_time / rep.wall_time : 0.0;
    j["tokens_read_reduction"] = rep.avg_tokens_read > 0.0 ? base_tokens / rep.avg_tokens_read : 0.0;
    log << "speedup " << j["speedup"].get<double>() << "x wall time, " << j["tokens_read_reduction"].get<double>()
        << "x fewer tokens than the baseline\n";
  }
  out << j.dump() << '\n';
  return 0;
}

// ---------------------------------------------------------------------------
// inspect-trace

inline int cmd_inspect_trace(const GlobalOptions& g, EvalOptions o, std::size_t n, std::ostream& out,
                             std::ostream& log) {
  if (n == 0) return 0;
  const Checkpoint ck = load_checkpoint(o.checkpoint);
  RunConfig c = eval_config(ck, g);
  if (o.mode) c.eval_mode = *o.mode;
  o.limit = n;
  o.synthetic_n = std::max(o.synthetic_n, n);
  bool jumping = true;
  const EvalReport rep = run_eval(ck, c, o, jumping,
                                  [&](std::size_t k, const ReadingTrace<float>& trace, const EpisodeOutcome<float>& e) {
                                    out << format_trace_line(k, trace) << '\t' << e.prediction << '\n';
                                  });
  log << rep.examples << " traces, accuracy " << rep.accuracy << ", avg tokens read " << rep.avg_tokens_read << '\n';
  return 0;
}

}  // namespace lstmjump::cli
