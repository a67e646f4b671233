// Copyright 2026 The LSTM-Jump Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "lstmjump/jump.hpp"
#include "lstmjump/model.hpp"
#include "lstmjump/numeric.hpp"
#include "lstmjump/rl.hpp"

namespace lstmjump {

struct ModelShape {
  std::size_t vocab_size = 100;
  std::size_t embed_dim = 32;
  std::size_t hidden = 128;
  std::size_t layers = 1;
  std::size_t num_classes = 100;  // classifier outputs; ignored when qa is set
  std::size_t max_jump = 1;       // K
  bool qa = false;                // bilinear candidate scorer instead of a class softmax
  bool trainable_embedding = true;

  void validate() const {
    if (vocab_size == 0 || embed_dim == 0 || hidden == 0 || layers == 0) {
      throw InputError("model shape: vocab, embed_dim, hidden and layers must be positive");
    }
    if (!qa && num_classes < 2) throw InputError("model shape: need at least two classes");
    if (max_jump < 1) throw InputError("model shape: K must be >= 1");
  }

  friend bool operator==(const ModelShape&, const ModelShape&) = default;
};

/// All trainable tensors: encoder and task head (the reading model), jump
/// head (the policy) and baseline. Tensor names are the checkpoint keys.
template <typename T>
struct ModelParams {
  ModelShape shape;
  Encoder<T> encoder;
  JumpHead<T> jump;
  ClassifierHead<T> cls;
  BilinearQaHead<T> qa;
  BaselineParams<T> baseline;

  static ModelParams zeros(const ModelShape& s) {
    s.validate();
    ModelParams p;
    p.shape = s;
    p.encoder.embedding.table = Matrix<T>(s.vocab_size, s.embed_dim);
    p.encoder.embedding.trainable = s.trainable_embedding;
    for (std::size_t l = 0; l < s.layers; ++l) {
      p.encoder.layers.emplace_back(l == 0 ? s.embed_dim : s.hidden, s.hidden);
    }
    p.jump.w = Matrix<T>(s.max_jump + 1, s.hidden);
    p.jump.bias = Matrix<T>(s.max_jump + 1, 1);
    if (s.qa) {
      p.qa.w = Matrix<T>(s.embed_dim, s.hidden);
    } else {
      p.cls.w = Matrix<T>(s.num_classes, s.hidden);
      p.cls.bias = Matrix<T>(s.num_classes, 1);
    }
    p.baseline.w = Matrix<T>(1, s.hidden);
    p.baseline.c = Matrix<T>(1, 1);
    return p;
  }

  /// LSTM and heads uniform in [-0.08, 0.08], forget-gate bias 1, embedding
  /// uniform in [-0.25, 0.25]; biases and the baseline start at zero.
  static ModelParams initialized(const ModelShape& s, Rng& rng) {
    ModelParams p = zeros(s);
    Rng emb = rng.substream(1);
    init_uniform(p.encoder.embedding.table, emb, 0.25);
    Rng lstm = rng.substream(2);
    for (auto& layer : p.encoder.layers) layer.init(lstm, 0.08, 1.0);
    Rng heads = rng.substream(3);
    init_uniform(p.jump.w, heads, 0.08);
    if (s.qa) {
      init_uniform(p.qa.w, heads, 0.08);
    } else {
      init_uniform(p.cls.w, heads, 0.08);
    }
    return p;
  }

  /// Visits every tensor as f(name, matrix, rank) in checkpoint order.
  template <typename F>
  void for_each_tensor(F&& f) {
    visit(*this, f);
  }

  template <typename F>
  void for_each_tensor(F&& f) const {
    visit(*this, f);
  }

  std::vector<Matrix<T>*> tensors() {
    std::vector<Matrix<T>*> out;
    for_each_tensor([&](const std::string&, Matrix<T>& m, std::size_t) { out.push_back(&m); });
    return out;
  }

  void set_zero() {
    for_each_tensor([](const std::string&, Matrix<T>& m, std::size_t) { m.set_zero(); });
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for_each_tensor([&](const std::string&, const Matrix<T>& m, std::size_t) { n += m.size(); });
    return n;
  }

  template <typename U>
  ModelParams<U> cast() const {
    ModelParams<U> out = ModelParams<U>::zeros(shape);
    std::vector<const Matrix<T>*> src;
    for_each_tensor([&](const std::string&, const Matrix<T>& m, std::size_t) { src.push_back(&m); });
    std::size_t i = 0;
    out.for_each_tensor([&](const std::string&, Matrix<U>& m, std::size_t) { m = src[i++]->template cast<U>(); });
    return out;
  }

  /// this += other, tensor by tensor.
  void add(const ModelParams& other) {
    std::vector<const Matrix<T>*> src;
    other.for_each_tensor([&](const std::string&, const Matrix<T>& m, std::size_t) { src.push_back(&m); });
    std::size_t i = 0;
    for_each_tensor([&](const std::string&, Matrix<T>& m, std::size_t) {
      const Matrix<T>& o = *src[i++];
      for (std::size_t k = 0; k < m.size(); ++k) m[k] += o[k];
    });
  }

  friend bool operator==(const ModelParams& a, const ModelParams& b) {
    if (!(a.shape == b.shape)) return false;
    std::vector<const Matrix<T>*> lhs, rhs;
    a.for_each_tensor([&](const std::string&, const Matrix<T>& m, std::size_t) { lhs.push_back(&m); });
    b.for_each_tensor([&](const std::string&, const Matrix<T>& m, std::size_t) { rhs.push_back(&m); });
    if (lhs.size() != rhs.size()) return false;
    for (std::size_t i = 0; i < lhs.size(); ++i) {
      if (!(*lhs[i] == *rhs[i])) return false;
    }
    return true;
  }

 private:
  template <typename Self, typename F>
  static void visit(Self& self, F& f) {
    f(std::string("embedding"), self.encoder.embedding.table, std::size_t{2});
    for (std::size_t l = 0; l < self.encoder.layers.size(); ++l) {
      auto& layer = self.encoder.layers[l];
      const std::string prefix = "lstm." + std::to_string(l) + ".";
      f(prefix + "w_x", layer.w_x, std::size_t{2});
      f(prefix + "w_h", layer.w_h, std::size_t{2});
      f(prefix + "bias", layer.bias, std::size_t{1});
    }
    f(std::string("jump.w"), self.jump.w, std::size_t{2});
    f(std::string("jump.bias"), self.jump.bias, std::size_t{1});
    if (self.shape.qa) {
      f(std::string("qa.w"), self.qa.w, std::size_t{2});
    } else {
      f(std::string("cls.w"), self.cls.w, std::size_t{2});
      f(std::string("cls.bias"), self.cls.bias, std::size_t{1});
    }
    f(std::string("baseline.w"), self.baseline.w, std::size_t{1});
    f(std::string("baseline.c"), self.baseline.c, std::size_t{0});
  }
};

}  // namespace lstmjump
