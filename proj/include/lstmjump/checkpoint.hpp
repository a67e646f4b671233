// Copyright 2026 The LSTM-Jump Authors
// SPDX-License-Identifier: Apache-2.0
//
// Binary checkpoint layout, all integers little-endian:
//
//   "LJMP"  u32 version
//   u64 n, n bytes    run configuration (to_text)
//   u64 n, n bytes    vocabulary, one entry per line (empty for synthetic)
//   u64 step  u64 adam_t  u64 stage
//   u32 tensor count, then per tensor:
//     u32 name length, name bytes, u32 rank, rank x u64 dims, f32 payload
//
// Model tensors come first in ModelParams order; optimizer moments follow
// as adam.m.<name> and adam.v.<name>.

#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "lstmjump/config.hpp"
#include "lstmjump/errors.hpp"
#include "lstmjump/params.hpp"
#include "lstmjump/train.hpp"

namespace lstmjump {

inline constexpr char kCheckpointMagic[4] = {'L', 'J', 'M', 'P'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  RunConfig config;
  std::optional<Vocabulary> vocab;
  ModelParams<float> params;
  std::optional<AdamState<float>> adam;
  std::uint64_t step = 0;
  std::uint64_t stage = 0;
};

namespace detail {

template <typename U>
void put_le(std::ostream& os, U v) {
  unsigned char buf[sizeof(U)];
  for (std::size_t i = 0; i < sizeof(U); ++i) buf[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
  os.write(reinterpret_cast<const char*>(buf), sizeof(U));
}

template <typename U>
U get_le(std::istream& is) {
  unsigned char buf[sizeof(U)];
  if (!is.read(reinterpret_cast<char*>(buf), sizeof(U))) throw FormatError("checkpoint truncated");
  U v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(buf[i]) << (8 * i);
  return v;
}

inline void put_blob(std::ostream& os, const std::string& s) {
  put_le<std::uint64_t>(os, s.size());
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::string get_blob(std::istream& is, std::uint64_t limit = std::uint64_t{1} << 32) {
  const auto n = get_le<std::uint64_t>(is);
  if (n > limit) throw FormatError("checkpoint: implausible section length");
  std::string s(n, '\0');
  if (n > 0 && !is.read(s.data(), static_cast<std::streamsize>(n))) throw FormatError("checkpoint truncated");
  return s;
}

inline void put_tensor(std::ostream& os, const std::string& name, const Matrix<float>& m, std::size_t rank) {
  put_le<std::uint32_t>(os, static_cast<std::uint32_t>(name.size()));
  os.write(name.data(), static_cast<std::streamsize>(name.size()));
  put_le<std::uint32_t>(os, static_cast<std::uint32_t>(rank));
  if (rank == 2) {
    put_le<std::uint64_t>(os, m.rows());
    put_le<std::uint64_t>(os, m.cols());
  } else if (rank == 1) {
    put_le<std::uint64_t>(os, m.size());
  }
  for (std::size_t i = 0; i < m.size(); ++i) put_le<std::uint32_t>(os, std::bit_cast<std::uint32_t>(m[i]));
}

struct RawTensor {
  std::uint32_t rank = 0;
  std::vector<std::uint64_t> dims;
  std::vector<float> data;
};

inline std::pair<std::string, RawTensor> get_tensor(std::istream& is) {
  const auto name_len = get_le<std::uint32_t>(is);
  if (name_len > 4096) throw FormatError("checkpoint: implausible tensor name length");
  std::string name(name_len, '\0');
  if (name_len > 0 && !is.read(name.data(), name_len)) throw FormatError("checkpoint truncated");
  RawTensor t;
  t.rank = get_le<std::uint32_t>(is);
  if (t.rank > 2) throw FormatError("checkpoint: tensor `" + name + "` has unsupported rank " + std::to_string(t.rank));
  std::uint64_t count = 1;
  for (std::uint32_t r = 0; r < t.rank; ++r) {
    t.dims.push_back(get_le<std::uint64_t>(is));
    count *= t.dims.back();
  }
  if (count > (std::uint64_t{1} << 31)) throw FormatError("checkpoint: tensor `" + name + "` too large");
  t.data.resize(count);
  for (auto& v : t.data) v = std::bit_cast<float>(get_le<std::uint32_t>(is));
  return {std::move(name), std::move(t)};
}

inline void fill_tensor(const std::string& name, Matrix<float>& m, std::size_t rank, const RawTensor& t) {
  bool ok = t.rank == rank && t.data.size() == m.size();
  if (ok && rank == 2) ok = t.dims[0] == m.rows() && t.dims[1] == m.cols();
  if (!ok) throw FormatError("checkpoint: tensor `" + name + "` has the wrong shape");
  std::copy(t.data.begin(), t.data.end(), m.values().begin());
}

inline std::size_t dim(const std::map<std::string, RawTensor>& ts, const std::string& name, std::size_t i) {
  auto it = ts.find(name);
  if (it == ts.end()) throw FormatError("checkpoint: missing tensor `" + name + "`");
  if (it->second.dims.size() <= i) throw FormatError("checkpoint: tensor `" + name + "` has the wrong rank");
  return static_cast<std::size_t>(it->second.dims[i]);
}

}  // namespace detail

inline void save_checkpoint(std::ostream& os, const Checkpoint& ck) {
  os.write(kCheckpointMagic, 4);
  detail::put_le<std::uint32_t>(os, kCheckpointVersion);
  detail::put_blob(os, to_text(ck.config));
  std::string vocab;
  if (ck.vocab) {
    std::ostringstream vs;
    ck.vocab->save(vs);
    vocab = vs.str();
  }
  detail::put_blob(os, vocab);
  detail::put_le<std::uint64_t>(os, ck.step);
  detail::put_le<std::uint64_t>(os, ck.adam ? ck.adam->t : 0);
  detail::put_le<std::uint64_t>(os, ck.stage);

  std::uint32_t count = 0;
  ck.params.for_each_tensor([&](const std::string&, const Matrix<float>&, std::size_t) { ++count; });
  const std::uint32_t model_count = count;
  if (ck.adam) count *= 3;
  detail::put_le<std::uint32_t>(os, count);

  std::vector<std::pair<std::string, std::size_t>> names;
  ck.params.for_each_tensor([&](const std::string& name, const Matrix<float>& m, std::size_t rank) {
    detail::put_tensor(os, name, m, rank);
    names.emplace_back(name, rank);
  });
  if (ck.adam) {
    if (ck.adam->m.size() != model_count || ck.adam->v.size() != model_count) {
      throw ContractError("save_checkpoint: optimizer state does not match the model");
    }
    for (std::size_t i = 0; i < names.size(); ++i) detail::put_tensor(os, "adam.m." + names[i].first, ck.adam->m[i], names[i].second);
    for (std::size_t i = 0; i < names.size(); ++i) detail::put_tensor(os, "adam.v." + names[i].first, ck.adam->v[i], names[i].second);
  }
  if (!os) throw std::runtime_error("checkpoint write failed");
}

inline Checkpoint load_checkpoint(std::istream& is) {
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, kCheckpointMagic, 4) != 0) throw FormatError("not an LSTM-Jump checkpoint (bad magic)");
  const auto version = detail::get_le<std::uint32_t>(is);
  if (version != kCheckpointVersion) throw FormatError("unsupported checkpoint version " + std::to_string(version));

  Checkpoint ck;
  {
    std::istringstream cs(detail::get_blob(is));
    ck.config = parse_config(cs);
  }
  if (std::string vocab = detail::get_blob(is); !vocab.empty()) {
    std::istringstream vs(vocab);
    ck.vocab = Vocabulary::load(vs);
  }
  ck.step = detail::get_le<std::uint64_t>(is);
  const auto adam_t = detail::get_le<std::uint64_t>(is);
  ck.stage = detail::get_le<std::uint64_t>(is);

  const auto count = detail::get_le<std::uint32_t>(is);
  std::map<std::string, detail::RawTensor> raw;
  for (std::uint32_t i = 0; i < count; ++i) {
    auto [name, t] = detail::get_tensor(is);
    if (!raw.emplace(name, std::move(t)).second) throw FormatError("checkpoint: duplicate tensor `" + name + "`");
  }

  ModelShape s;
  s.vocab_size = detail::dim(raw, "embedding", 0);
  s.embed_dim = detail::dim(raw, "embedding", 1);
  s.hidden = detail::dim(raw, "lstm.0.w_h", 1);
  s.layers = 0;
  while (raw.count("lstm." + std::to_string(s.layers) + ".w_x")) ++s.layers;
  s.max_jump = detail::dim(raw, "jump.w", 0) - 1;
  s.qa = raw.count("qa.w") > 0;
  s.num_classes = s.qa ? ck.config.num_classes : detail::dim(raw, "cls.w", 0);
  s.trainable_embedding = ck.config.trainable_embedding;

  ck.params = ModelParams<float>::zeros(s);
  std::size_t used = 0;
  ck.params.for_each_tensor([&](const std::string& name, Matrix<float>& m, std::size_t rank) {
    auto it = raw.find(name);
    if (it == raw.end()) throw FormatError("checkpoint: missing tensor `" + name + "`");
    detail::fill_tensor(name, m, rank, it->second);
    ++used;
  });
  if (raw.count("adam.m.embedding")) {
    AdamConfig cfg;
    cfg.learning_rate = ck.config.learning_rate;
    const auto tensors = ck.params.tensors();
    AdamState<float> adam = AdamState<float>::like(tensors, cfg);
    adam.t = adam_t;
    std::size_t i = 0;
    ck.params.for_each_tensor([&](const std::string& name, const Matrix<float>&, std::size_t rank) {
      for (auto [prefix, dst] : {std::pair{"adam.m.", &adam.m}, std::pair{"adam.v.", &adam.v}}) {
        const std::string key = prefix + name;
        auto it = raw.find(key);
        if (it == raw.end()) throw FormatError("checkpoint: missing tensor `" + key + "`");
        detail::fill_tensor(key, (*dst)[i], rank, it->second);
        ++used;
      }
      ++i;
    });
    ck.adam = std::move(adam);
  }
  if (used != raw.size()) throw FormatError("checkpoint: unexpected extra tensors");
  return ck;
}

inline void save_checkpoint(const std::string& path, const Checkpoint& ck) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write checkpoint: " + path);
    save_checkpoint(out, ck);
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0) throw std::runtime_error("cannot write checkpoint: " + path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint file: " + path);
  return load_checkpoint(in);
}

}  // namespace lstmjump
