// Copyright 2026 The LSTM-Jump Authors
// SPDX-License-Identifier: Apache-2.0
//
// Datasets: the synthetic number-prediction task, tab-separated corpora at
// word / character / sentence granularity, padding and windowing, and
// plain-text embedding files.

#pragma once

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cstddef>
#include <fstream>
#include <istream>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "lstmjump/errors.hpp"
#include "lstmjump/jump.hpp"
#include "lstmjump/model.hpp"
#include "lstmjump/numeric.hpp"

namespace lstmjump {

struct Example {
  std::vector<Token> tokens;      // body the reader may skim
  std::size_t label = 0;          // class index, or candidate index in QA mode
  std::vector<Token> query;       // QA: read in full before the body
  std::vector<Token> candidates;  // QA: one token per candidate answer
  std::size_t unit_len = 1;       // tokens per skippable unit

  TokenSequence sequence() const { return TokenSequence{tokens, query, unit_len}; }
  std::size_t units() const noexcept { return unit_len == 0 ? 0 : tokens.size() / unit_len; }
};

struct Dataset {
  std::vector<Example> examples;
  std::size_t num_classes = 0;

  std::size_t size() const noexcept { return examples.size(); }
  bool empty() const noexcept { return examples.empty(); }
  const Example& operator[](std::size_t i) const { return examples[i]; }
};

// ---------------------------------------------------------------------------
// Synthetic number prediction: output x[x0].

struct SyntheticSpec {
  std::size_t seq_len = 100;
  std::size_t vocab_size = 100;

  void validate() const {
    if (seq_len < 2) throw InputError("synthetic spec: sequence length must be >= 2, got " + std::to_string(seq_len));
    if (vocab_size < 2) throw InputError("synthetic spec: vocabulary must have >= 2 symbols");
  }

  /// Largest admissible x0: the answer index must lie inside the sequence and
  /// be expressible as a token.
  std::size_t max_index() const noexcept { return std::min(seq_len, vocab_size) - 1; }
};

/// Wraps a raw token sequence as a synthetic example, label = tokens[tokens[0]].
inline Example synthetic_example(std::vector<Token> tokens) {
  if (tokens.size() < 2) throw InputError("synthetic example: need at least two tokens");
  const Token x0 = tokens.front();
  if (x0 < 1 || static_cast<std::size_t>(x0) >= tokens.size()) {
    throw InputError("synthetic example: x0 = " + std::to_string(x0) + " is not a valid index");
  }
  Example ex;
  ex.label = static_cast<std::size_t>(tokens[static_cast<std::size_t>(x0)]);
  ex.tokens = std::move(tokens);
  return ex;
}

inline Dataset gen_synthetic(const SyntheticSpec& spec, std::size_t n, Rng& rng) {
  spec.validate();
  Dataset ds;
  ds.num_classes = spec.vocab_size;
  ds.examples.reserve(n);
  const std::size_t max_x0 = spec.max_index();
  for (std::size_t k = 0; k < n; ++k) {
    std::vector<Token> tokens(spec.seq_len);
    for (auto& t : tokens) t = static_cast<Token>(rng.uniform_index(spec.vocab_size));
    tokens[0] = static_cast<Token>(1 + rng.uniform_index(max_x0));
    ds.examples.push_back(synthetic_example(std::move(tokens)));
  }
  return ds;
}

/// One example per line: space-separated tokens, TAB, label. Lines starting
/// with '#' are comments.
inline void write_synthetic(std::ostream& os, const Dataset& ds, const std::string& header = {}) {
  if (!header.empty()) os << "# " << header << '\n';
  for (const auto& ex : ds.examples) {
    for (std::size_t i = 0; i < ex.tokens.size(); ++i) {
      if (i > 0) os << ' ';
      os << ex.tokens[i];
    }
    os << '\t' << ex.label << '\n';
  }
}

namespace detail {

inline std::vector<std::string_view> split(std::string_view s, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t at = s.find(sep, start);
    if (at == std::string_view::npos) {
      out.push_back(s.substr(start));
      return out;
    }
    out.push_back(s.substr(start, at - start));
    start = at + 1;
  }
}

inline std::vector<std::string_view> split_whitespace(std::string_view s) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < s.size()) {
    while (i < s.size() && std::isspace(static_cast<unsigned char>(s[i]))) ++i;
    const std::size_t start = i;
    while (i < s.size() && !std::isspace(static_cast<unsigned char>(s[i]))) ++i;
    if (i > start) out.push_back(s.substr(start, i - start));
  }
  return out;
}

template <typename Int>
bool parse_int(std::string_view s, Int& out) {
  const auto* first = s.data();
  const auto* last = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(first, last, out);
  return ec == std::errc{} && ptr == last;
}

inline bool parse_double(std::string_view s, double& out) {
  // std::from_chars for floating point is available in libstdc++ 11.
  const auto* first = s.data();
  const auto* last = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(first, last, out);
  return ec == std::errc{} && ptr == last;
}

inline void strip_cr(std::string& line) {
  if (!line.empty() && line.back() == '\r') line.pop_back();
}

}  // namespace detail

inline Dataset read_synthetic(std::istream& is, std::size_t vocab_size = 100) {
  Dataset ds;
  ds.num_classes = vocab_size;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    detail::strip_cr(line);
    if (line.empty() || line.front() == '#') continue;
    const auto fields = detail::split(line, '\t');
    if (fields.size() != 2) throw FormatError("expected `tokens TAB label`", lineno);
    std::vector<Token> tokens;
    for (auto word : detail::split_whitespace(fields[0])) {
      Token t{};
      if (!detail::parse_int(word, t) || t < 0 || static_cast<std::size_t>(t) >= vocab_size) {
        throw FormatError("bad token `" + std::string(word) + "`", lineno);
      }
      tokens.push_back(t);
    }
    std::size_t label = 0;
    if (!detail::parse_int(fields[1], label)) throw FormatError("bad label", lineno);
    Example ex;
    try {
      ex = synthetic_example(std::move(tokens));
    } catch (const InputError& e) {
      throw FormatError(e.what(), lineno);
    }
    if (ex.label != label) throw FormatError("label does not match x[x0]", lineno);
    ds.examples.push_back(std::move(ex));
  }
  return ds;
}

inline Dataset read_synthetic_file(const std::string& path, std::size_t vocab_size = 100) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open dataset file: " + path);
  return read_synthetic(in, vocab_size);
}

// ---------------------------------------------------------------------------
// Vocabulary

class Vocabulary {
 public:
  static constexpr Token kPad = 0;
  static constexpr Token kUnk = 1;

  Vocabulary() : words_{"<pad>", "<unk>"} {
    index_.emplace(words_[0], kPad);
    index_.emplace(words_[1], kUnk);
  }

  /// Fixed character alphabet: pad, space, then lowercase letters, digits and
  /// punctuation. Characters outside the alphabet encode as pad.
  static Vocabulary characters() {
    Vocabulary v;
    v.words_ = {"<pad>", " "};
    v.index_.clear();
    v.index_.emplace("<pad>", kPad);
    v.index_.emplace(" ", 1);
    for (char ch : std::string_view(kAlphabet)) v.add(std::string(1, ch));
    v.characters_ = true;
    v.freeze();
    return v;
  }

  static constexpr std::string_view kAlphabet = "abcdefghijklmnopqrstuvwxyz0123456789-,;.!?:'\"/\\|_@#$";

  Token add(const std::string& word) {
    if (auto it = index_.find(word); it != index_.end()) return it->second;
    if (frozen_) return characters_ ? kPad : kUnk;
    const auto id = static_cast<Token>(words_.size());
    words_.push_back(word);
    index_.emplace(word, id);
    return id;
  }

  Token lookup(const std::string& word) const {
    if (auto it = index_.find(word); it != index_.end()) return it->second;
    return characters_ ? kPad : kUnk;
  }

  const std::string& word(Token id) const { return words_.at(static_cast<std::size_t>(id)); }

  std::string decode(std::span<const Token> tokens, std::string_view sep = " ") const {
    std::string out;
    for (std::size_t i = 0; i < tokens.size(); ++i) {
      if (i > 0) out += sep;
      out += word(tokens[i]);
    }
    return out;
  }

  void freeze() noexcept { frozen_ = true; }
  bool frozen() const noexcept { return frozen_; }
  bool is_characters() const noexcept { return characters_; }
  std::size_t size() const noexcept { return words_.size(); }
  const std::vector<std::string>& words() const noexcept { return words_; }

  /// One entry per line, in id order.
  void save(std::ostream& os) const {
    for (const auto& w : words_) os << w << '\n';
  }

  static Vocabulary load(std::istream& is) {
    Vocabulary v;
    v.words_.clear();
    v.index_.clear();
    std::string line;
    while (std::getline(is, line)) {
      detail::strip_cr(line);
      v.index_.emplace(line, static_cast<Token>(v.words_.size()));
      v.words_.push_back(line);
    }
    if (v.words_.size() < 2) throw FormatError("vocabulary file needs at least the pad and unk entries");
    v.characters_ = v.words_[1] == " ";
    v.frozen_ = true;
    return v;
  }

 private:
  std::vector<std::string> words_;
  std::unordered_map<std::string, Token> index_;
  bool frozen_ = false;
  bool characters_ = false;
};

// ---------------------------------------------------------------------------
// Corpora

enum class CorpusLevel { Word, Character, Sentence };

struct CorpusSpec {
  CorpusLevel level = CorpusLevel::Word;
  Token pad_token = Vocabulary::kPad;
  std::size_t target_len = 0;                // units; 0 keeps natural length
  std::optional<std::size_t> window_len;     // training crop, units
  std::size_t sentence_len = 20;             // tokens per sentence unit
  std::size_t query_len = 30;                // QA query tokens
  bool qa = false;                           // `label TAB candidates TAB query TAB sentences...`

  void validate() const {
    if (window_len && target_len != 0 && *window_len > target_len) {
      throw InputError("corpus spec: window_len exceeds target_len");
    }
    if (window_len && *window_len == 0) throw InputError("corpus spec: window_len must be positive");
    if (level == CorpusLevel::Sentence && sentence_len == 0) throw InputError("corpus spec: sentence_len must be positive");
  }

  std::size_t unit_len() const noexcept { return level == CorpusLevel::Sentence ? sentence_len : 1; }
};

namespace detail {

inline std::string lowercase(std::string_view s) {
  std::string out(s);
  for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

inline std::vector<Token> encode_words(std::string_view text, Vocabulary& vocab) {
  std::vector<Token> out;
  for (auto w : split_whitespace(text)) out.push_back(vocab.add(std::string(w)));
  return out;
}

inline std::vector<Token> encode_chars(std::string_view text, const Vocabulary& vocab) {
  std::vector<Token> out;
  out.reserve(text.size());
  for (char ch : lowercase(text)) {
    out.push_back(std::isspace(static_cast<unsigned char>(ch)) ? vocab.lookup(" ") : vocab.lookup(std::string(1, ch)));
  }
  return out;
}

inline void fit_length(std::vector<Token>& tokens, std::size_t len, Token pad) { tokens.resize(len, pad); }

}  // namespace detail

/// Parses `label TAB text` lines (sentence level: one sentence per further
/// TAB field; QA adds candidate and query fields). Unknown words map to UNK
/// once `vocab` is frozen; otherwise they are appended in first-seen order.
inline Dataset load_corpus(std::istream& is, const CorpusSpec& spec, Vocabulary& vocab) {
  spec.validate();
  Dataset ds;
  std::size_t max_label = 0;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    detail::strip_cr(line);
    if (line.empty()) continue;
    const auto fields = detail::split(line, '\t');
    if (fields.size() < 2) throw FormatError("expected `label TAB text`", lineno);
    Example ex;
    if (!detail::parse_int(fields[0], ex.label)) {
      throw FormatError("label `" + std::string(fields[0]) + "` is not a non-negative integer", lineno);
    }
    std::size_t first_text = 1;
    if (spec.qa) {
      if (fields.size() < 4) throw FormatError("QA line needs label, candidates, query and context fields", lineno);
      ex.candidates = detail::encode_words(fields[1], vocab);
      if (ex.label >= ex.candidates.size()) throw FormatError("answer index beyond candidate list", lineno);
      ex.query = detail::encode_words(fields[2], vocab);
      detail::fit_length(ex.query, spec.query_len, spec.pad_token);
      first_text = 3;
    }
    switch (spec.level) {
      case CorpusLevel::Word:
        for (std::size_t f = first_text; f < fields.size(); ++f) {
          auto words = detail::encode_words(fields[f], vocab);
          ex.tokens.insert(ex.tokens.end(), words.begin(), words.end());
        }
        break;
      case CorpusLevel::Character:
        for (std::size_t f = first_text; f < fields.size(); ++f) {
          if (f > first_text) ex.tokens.push_back(vocab.lookup(" "));
          auto chars = detail::encode_chars(fields[f], vocab);
          ex.tokens.insert(ex.tokens.end(), chars.begin(), chars.end());
        }
        break;
      case CorpusLevel::Sentence:
        ex.unit_len = spec.sentence_len;
        for (std::size_t f = first_text; f < fields.size(); ++f) {
          auto words = detail::encode_words(fields[f], vocab);
          detail::fit_length(words, spec.sentence_len, spec.pad_token);
          ex.tokens.insert(ex.tokens.end(), words.begin(), words.end());
        }
        break;
    }
    if (ex.tokens.empty()) throw FormatError("empty text", lineno);
    max_label = std::max(max_label, spec.qa ? ex.candidates.size() - 1 : ex.label);
    ds.examples.push_back(std::move(ex));
  }
  ds.num_classes = ds.examples.empty() ? 0 : max_label + 1;
  return ds;
}

inline Dataset load_corpus(const std::string& path, const CorpusSpec& spec, Vocabulary& vocab) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open corpus file: " + path);
  return load_corpus(in, spec, vocab);
}

/// Fixes the length of a token sequence (in units of spec.unit_len()).
/// Short inputs are right-padded to target_len; long ones are cropped to a
/// random target_len window in training and to their head otherwise. With
/// window_len set, training then takes a uniformly placed window_len slice
/// and evaluation the first window_len units.
inline std::vector<Token> pad_or_window(std::span<const Token> tokens, const CorpusSpec& spec, Rng& rng,
                                        bool training) {
  spec.validate();
  const std::size_t unit = spec.unit_len();
  std::vector<Token> out(tokens.begin(), tokens.end());
  out.resize(out.size() / unit * unit);
  auto crop = [&](std::size_t len_units, bool random) {
    const std::size_t have = out.size() / unit;
    if (have <= len_units) return;
    const std::size_t start = random ? rng.uniform_index(have - len_units + 1) : 0;
    out = std::vector<Token>(out.begin() + static_cast<std::ptrdiff_t>(start * unit),
                             out.begin() + static_cast<std::ptrdiff_t>((start + len_units) * unit));
  };
  if (spec.target_len > 0) {
    crop(spec.target_len, training);
    out.resize(spec.target_len * unit, spec.pad_token);
  }
  if (spec.window_len) crop(*spec.window_len, training);
  return out;
}

/// Fills embedding rows for vocabulary words found in a `word v1 v2 ...`
/// text file. A leading `count dim` header line is skipped. Returns the
/// number of vocabulary rows filled.
template <typename T>
std::size_t load_embeddings(std::istream& is, const Vocabulary& vocab, Embedding<T>& emb) {
  std::string line;
  std::size_t lineno = 0;
  std::size_t coverage = 0;
  std::vector<bool> seen(vocab.size(), false);
  std::optional<std::size_t> file_dim;
  while (std::getline(is, line)) {
    ++lineno;
    detail::strip_cr(line);
    const auto fields = detail::split_whitespace(line);
    if (fields.empty()) continue;
    if (lineno == 1 && fields.size() == 2) {
      std::size_t a = 0, b = 0;
      if (detail::parse_int(fields[0], a) && detail::parse_int(fields[1], b)) continue;
    }
    const std::size_t dim = fields.size() - 1;
    if (!file_dim) file_dim = dim;
    if (dim != *file_dim) {
      throw FormatError("embedding dimension " + std::to_string(dim) + " differs from " + std::to_string(*file_dim),
                        lineno);
    }
    if (dim != emb.dim()) {
      throw FormatError("embedding dimension " + std::to_string(dim) + " does not match model dimension " +
                            std::to_string(emb.dim()),
                        lineno);
    }
    std::vector<T> values(dim);
    for (std::size_t k = 0; k < dim; ++k) {
      double v = 0;
      if (!detail::parse_double(fields[k + 1], v)) throw FormatError("bad number in embedding row", lineno);
      values[k] = static_cast<T>(v);
    }
    const std::string word(fields[0]);
    const Token id = vocab.lookup(word);
    if (vocab.word(id) != word) continue;  // not in vocabulary
    const auto row = emb.table.row(static_cast<std::size_t>(id));
    std::copy(values.begin(), values.end(), row.begin());
    if (!seen[static_cast<std::size_t>(id)]) {
      seen[static_cast<std::size_t>(id)] = true;
      ++coverage;
    }
  }
  return coverage;
}

/// Fisher-Yates permutation of [0, n) driven by `rng`.
inline std::vector<std::size_t> shuffled_indices(std::size_t n, Rng& rng) {
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  for (std::size_t i = n; i > 1; --i) std::swap(idx[i - 1], idx[rng.uniform_index(i)]);
  return idx;
}

}  // namespace lstmjump
