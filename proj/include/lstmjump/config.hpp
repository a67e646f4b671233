// Copyright 2026 The LSTM-Jump Authors
// SPDX-License-Identifier: Apache-2.0
//
// Flat `key = value` run configuration. Blank lines and lines starting with
// '#' are ignored. Serialization is canonical: parse(to_text(c)) == c and
// to_text is byte-stable, which checkpoints rely on.

#pragma once

#include <charconv>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <istream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "lstmjump/data.hpp"
#include "lstmjump/errors.hpp"
#include "lstmjump/params.hpp"
#include "lstmjump/train.hpp"

namespace lstmjump {

enum class Task { Synthetic, Classify, Qa };

inline std::string_view to_string(Task t) noexcept {
  switch (t) {
    case Task::Synthetic:
      return "synthetic";
    case Task::Classify:
      return "classify";
    case Task::Qa:
      return "qa";
  }
  return "?";
}

inline std::string_view to_string(CorpusLevel l) noexcept {
  switch (l) {
    case CorpusLevel::Word:
      return "word";
    case CorpusLevel::Character:
      return "character";
    case CorpusLevel::Sentence:
      return "sentence";
  }
  return "?";
}

inline std::string_view to_string(RolloutMode m) noexcept { return m == RolloutMode::Sample ? "sample" : "greedy"; }

struct RunConfig {
  Task task = Task::Synthetic;
  std::uint64_t seed = 1;
  std::size_t threads = 1;

  // model
  std::size_t vocab_size = 100;  // synthetic only; corpora take it from the vocabulary
  std::size_t embed_dim = 32;
  std::size_t hidden = 128;
  std::size_t layers = 1;
  std::size_t num_classes = 100;  // synthetic only; corpora take it from the labels
  bool trainable_embedding = true;

  // reading
  bool jump_enabled = true;
  JumpConfig jump{1, 99, 1};

  // optimization
  std::size_t batch_size = 100;
  double learning_rate = 1e-3;
  double clip_threshold = 1.0;
  double lstm_dropout = 0.0;
  double embedding_dropout = 0.0;
  double target_val_acc = 0.98;
  std::size_t max_epochs = 1000;
  std::size_t max_steps = 0;
  double max_seconds = 0.0;
  std::size_t eval_every = 0;
  std::size_t valid_limit = 0;
  bool policy_grad_into_encoder = false;
  double entropy_weight = 0.0;
  RolloutMode eval_mode = RolloutMode::Sample;

  // curriculum
  std::vector<std::size_t> curriculum{10, 20, 30, 40, 50, 60, 70, 80, 90, 100};
  double curriculum_threshold = 0.90;
  std::size_t curriculum_window = 50;

  // synthetic data
  std::size_t synthetic_train_size = 100000;
  std::size_t synthetic_valid_size = 10000;

  // corpora
  CorpusLevel level = CorpusLevel::Word;
  std::size_t target_len = 0;
  std::size_t window_len = 0;  // 0: no training window
  std::size_t sentence_len = 20;
  std::size_t query_len = 30;

  // paths
  std::string train_path;
  std::string valid_path;
  std::string test_path;
  std::string embeddings_path;
  std::string checkpoint_path;

  friend bool operator==(const RunConfig&, const RunConfig&) = default;

  ModelShape model_shape(std::size_t corpus_vocab = 0, std::size_t corpus_classes = 0) const {
    ModelShape s;
    s.vocab_size = task == Task::Synthetic ? vocab_size : corpus_vocab;
    s.embed_dim = embed_dim;
    s.hidden = hidden;
    s.layers = layers;
    s.num_classes = task == Task::Synthetic ? num_classes : corpus_classes;
    s.max_jump = jump.max_jump;
    s.qa = task == Task::Qa;
    s.trainable_embedding = trainable_embedding;
    return s;
  }

  TrainConfig train_config() const {
    TrainConfig t;
    t.batch_size = batch_size;
    t.clip_threshold = clip_threshold;
    t.dropout = DropoutRates{embedding_dropout, lstm_dropout};
    t.target_val_acc = target_val_acc;
    t.max_epochs = max_epochs;
    t.max_steps = max_steps;
    t.max_seconds = max_seconds;
    t.seed = seed;
    t.jump = jump;
    t.jump_enabled = jump_enabled;
    t.policy_grad_into_encoder = policy_grad_into_encoder;
    t.entropy_weight = entropy_weight;
    t.adam.learning_rate = learning_rate;
    t.eval_every = eval_every;
    t.threads = threads;
    t.eval_mode = eval_mode;
    return t;
  }

  CurriculumSchedule curriculum_schedule() const {
    CurriculumSchedule c;
    c.lengths = task == Task::Synthetic ? curriculum : std::vector<std::size_t>{std::max<std::size_t>(target_len, 1)};
    c.advance_threshold = curriculum_threshold;
    c.window = curriculum_window;
    return c;
  }

  CorpusSpec corpus_spec() const {
    CorpusSpec c;
    c.level = level;
    c.target_len = target_len;
    if (window_len != 0) c.window_len = window_len;
    c.sentence_len = sentence_len;
    c.query_len = query_len;
    c.qa = task == Task::Qa;
    return c;
  }

  void validate() const {
    train_config().validate();
    if (task == Task::Synthetic) {
      curriculum_schedule().validate();
      if (curriculum.front() < 2) throw InputError("config: curriculum lengths must be >= 2");
    } else {
      corpus_spec().validate();
    }
  }
};

namespace detail {

inline std::string trim(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return std::string(s.substr(b, e - b));
}

inline std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  (void)ec;
  return std::string(buf, ptr);
}

inline std::string join_sizes(const std::vector<std::size_t>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i > 0) out += ',';
    out += std::to_string(v[i]);
  }
  return out;
}

/// Canonical key spelling; accepts the short R/K/N aliases.
inline std::string canonical_key(const std::string& key) {
  if (key == "R") return "read_len";
  if (key == "K") return "max_jump";
  if (key == "N") return "n_jumps";
  return key;
}

}  // namespace detail

/// Applies one `key = value` assignment. Unknown keys are an error.
inline void apply_setting(RunConfig& c, const std::string& raw_key, const std::string& value) {
  const std::string key = detail::canonical_key(raw_key);
  auto as_size = [&]() {
    std::size_t v = 0;
    if (!detail::parse_int(value, v)) throw InputError("config: `" + key + "` expects a non-negative integer, got `" + value + "`");
    return v;
  };
  auto as_u64 = [&]() {
    std::uint64_t v = 0;
    if (!detail::parse_int(value, v)) throw InputError("config: `" + key + "` expects an unsigned integer, got `" + value + "`");
    return v;
  };
  auto as_double = [&]() {
    double v = 0;
    if (!detail::parse_double(value, v)) throw InputError("config: `" + key + "` expects a number, got `" + value + "`");
    return v;
  };
  auto as_bool = [&]() {
    if (value == "true" || value == "1") return true;
    if (value == "false" || value == "0") return false;
    throw InputError("config: `" + key + "` expects true/false, got `" + value + "`");
  };

  if (key == "task") {
    if (value == "synthetic") c.task = Task::Synthetic;
    else if (value == "classify") c.task = Task::Classify;
    else if (value == "qa") c.task = Task::Qa;
    else throw InputError("config: unknown task `" + value + "`");
  } else if (key == "seed") c.seed = as_u64();
  else if (key == "threads") c.threads = as_size();
  else if (key == "vocab_size") c.vocab_size = as_size();
  else if (key == "embed_dim") c.embed_dim = as_size();
  else if (key == "hidden") c.hidden = as_size();
  else if (key == "layers") c.layers = as_size();
  else if (key == "num_classes") c.num_classes = as_size();
  else if (key == "trainable_embedding") c.trainable_embedding = as_bool();
  else if (key == "jump_enabled") c.jump_enabled = as_bool();
  else if (key == "read_len") c.jump.read_len = as_size();
  else if (key == "max_jump") c.jump.max_jump = as_size();
  else if (key == "n_jumps") c.jump.n_jumps = as_size();
  else if (key == "batch_size") c.batch_size = as_size();
  else if (key == "learning_rate") c.learning_rate = as_double();
  else if (key == "clip_threshold") c.clip_threshold = as_double();
  else if (key == "lstm_dropout") c.lstm_dropout = as_double();
  else if (key == "embedding_dropout") c.embedding_dropout = as_double();
  else if (key == "target_val_acc") c.target_val_acc = as_double();
  else if (key == "max_epochs") c.max_epochs = as_size();
  else if (key == "max_steps") c.max_steps = as_size();
  else if (key == "max_seconds") c.max_seconds = as_double();
  else if (key == "eval_every") c.eval_every = as_size();
  else if (key == "valid_limit") c.valid_limit = as_size();
  else if (key == "policy_grad_into_encoder") c.policy_grad_into_encoder = as_bool();
  else if (key == "entropy_weight") c.entropy_weight = as_double();
  else if (key == "eval_mode") {
    if (value == "sample") c.eval_mode = RolloutMode::Sample;
    else if (value == "greedy") c.eval_mode = RolloutMode::Greedy;
    else throw InputError("config: eval_mode must be sample or greedy");
  } else if (key == "curriculum") {
    c.curriculum.clear();
    for (auto part : detail::split(value, ',')) {
      std::size_t v = 0;
      if (!detail::parse_int(detail::trim(part), v)) throw InputError("config: bad curriculum entry `" + std::string(part) + "`");
      c.curriculum.push_back(v);
    }
  } else if (key == "curriculum_threshold") c.curriculum_threshold = as_double();
  else if (key == "curriculum_window") c.curriculum_window = as_size();
  else if (key == "synthetic_train_size") c.synthetic_train_size = as_size();
  else if (key == "synthetic_valid_size") c.synthetic_valid_size = as_size();
  else if (key == "level") {
    if (value == "word") c.level = CorpusLevel::Word;
    else if (value == "character") c.level = CorpusLevel::Character;
    else if (value == "sentence") c.level = CorpusLevel::Sentence;
    else throw InputError("config: unknown level `" + value + "`");
  } else if (key == "target_len") c.target_len = as_size();
  else if (key == "window_len") c.window_len = as_size();
  else if (key == "sentence_len") c.sentence_len = as_size();
  else if (key == "query_len") c.query_len = as_size();
  else if (key == "train_path") c.train_path = value;
  else if (key == "valid_path") c.valid_path = value;
  else if (key == "test_path") c.test_path = value;
  else if (key == "embeddings_path") c.embeddings_path = value;
  else if (key == "checkpoint_path") c.checkpoint_path = value;
  else throw InputError("config: unknown key `" + raw_key + "`");
}

/// Applies a `key=value` override string.
inline void apply_override(RunConfig& c, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) throw InputError("override `" + assignment + "` is not key=value");
  apply_setting(c, detail::trim(assignment.substr(0, eq)), detail::trim(assignment.substr(eq + 1)));
}

inline RunConfig parse_config(std::istream& is) {
  RunConfig c;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const std::string t = detail::trim(line);
    if (t.empty() || t.front() == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) throw FormatError("expected `key = value`", lineno);
    try {
      apply_setting(c, detail::trim(t.substr(0, eq)), detail::trim(t.substr(eq + 1)));
    } catch (const InputError& e) {
      throw FormatError(e.what(), lineno);
    }
  }
  return c;
}

inline RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config file: " + path);
  return parse_config(in);
}

inline std::string to_text(const RunConfig& c) {
  std::ostringstream os;
  auto b = [](bool v) { return v ? "true" : "false"; };
  os << "task = " << to_string(c.task) << '\n'
     << "seed = " << c.seed << '\n'
     << "threads = " << c.threads << '\n'
     << "vocab_size = " << c.vocab_size << '\n'
     << "embed_dim = " << c.embed_dim << '\n'
     << "hidden = " << c.hidden << '\n'
     << "layers = " << c.layers << '\n'
     << "num_classes = " << c.num_classes << '\n'
     << "trainable_embedding = " << b(c.trainable_embedding) << '\n'
     << "jump_enabled = " << b(c.jump_enabled) << '\n'
     << "read_len = " << c.jump.read_len << '\n'
     << "max_jump = " << c.jump.max_jump << '\n'
     << "n_jumps = " << c.jump.n_jumps << '\n'
     << "batch_size = " << c.batch_size << '\n'
     << "learning_rate = " << detail::format_double(c.learning_rate) << '\n'
     << "clip_threshold = " << detail::format_double(c.clip_threshold) << '\n'
     << "lstm_dropout = " << detail::format_double(c.lstm_dropout) << '\n'
     << "embedding_dropout = " << detail::format_double(c.embedding_dropout) << '\n'
     << "target_val_acc = " << detail::format_double(c.target_val_acc) << '\n'
     << "max_epochs = " << c.max_epochs << '\n'
     << "max_steps = " << c.max_steps << '\n'
     << "max_seconds = " << detail::format_double(c.max_seconds) << '\n'
     << "eval_every = " << c.eval_every << '\n'
     << "valid_limit = " << c.valid_limit << '\n'
     << "policy_grad_into_encoder = " << b(c.policy_grad_into_encoder) << '\n'
     << "entropy_weight = " << detail::format_double(c.entropy_weight) << '\n'
     << "eval_mode = " << to_string(c.eval_mode) << '\n'
     << "curriculum = " << detail::join_sizes(c.curriculum) << '\n'
     << "curriculum_threshold = " << detail::format_double(c.curriculum_threshold) << '\n'
     << "curriculum_window = " << c.curriculum_window << '\n'
     << "synthetic_train_size = " << c.synthetic_train_size << '\n'
     << "synthetic_valid_size = " << c.synthetic_valid_size << '\n'
     << "level = " << to_string(c.level) << '\n'
     << "target_len = " << c.target_len << '\n'
     << "window_len = " << c.window_len << '\n'
     << "sentence_len = " << c.sentence_len << '\n'
     << "query_len = " << c.query_len << '\n'
     << "train_path = " << c.train_path << '\n'
     << "valid_path = " << c.valid_path << '\n'
     << "test_path = " << c.test_path << '\n'
     << "embeddings_path = " << c.embeddings_path << '\n'
     << "checkpoint_path = " << c.checkpoint_path << '\n';
  return os.str();
}

}  // namespace lstmjump
