// Copyright 2026 The LSTM-Jump Authors
// SPDX-License-Identifier: Apache-2.0
//
// Dense row-major matrices, the handful of kernels the recurrent model needs,
// a counter-based random generator and the finite-difference gradient oracle.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "lstmjump/errors.hpp"

namespace lstmjump {

template <typename T>
class Matrix {
 public:
  using value_type = T;

  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, T fill = T{0})
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Matrix(std::size_t rows, std::size_t cols, std::vector<T> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_) {
      throw ShapeError("matrix data length " + std::to_string(data_.size()) + " != " +
                       std::to_string(rows_) + "x" + std::to_string(cols_));
    }
  }

  static Matrix from_rows(std::initializer_list<std::initializer_list<T>> rows) {
    const std::size_t r = rows.size();
    const std::size_t c = r == 0 ? 0 : rows.begin()->size();
    std::vector<T> data;
    data.reserve(r * c);
    for (const auto& row : rows) {
      if (row.size() != c) throw ShapeError("ragged matrix literal");
      data.insert(data.end(), row.begin(), row.end());
    }
    return Matrix(r, c, std::move(data));
  }

  static Matrix identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = T{1};
    return m;
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  T* data() noexcept { return data_.data(); }
  const T* data() const noexcept { return data_.data(); }
  std::span<T> values() noexcept { return data_; }
  std::span<const T> values() const noexcept { return data_; }

  T& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * cols_ + c]; }
  const T& operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * cols_ + c]; }
  T& operator[](std::size_t i) noexcept { return data_[i]; }
  const T& operator[](std::size_t i) const noexcept { return data_[i]; }

  std::span<T> row(std::size_t r) noexcept { return {data_.data() + r * cols_, cols_}; }
  std::span<const T> row(std::size_t r) const noexcept { return {data_.data() + r * cols_, cols_}; }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }
  void set_zero() { fill(T{0}); }

  template <typename U>
  Matrix<U> cast() const {
    std::vector<U> out(data_.size());
    std::transform(data_.begin(), data_.end(), out.begin(), [](T v) { return static_cast<U>(v); });
    return Matrix<U>(rows_, cols_, std::move(out));
  }

  bool same_shape(const Matrix& o) const noexcept { return rows_ == o.rows_ && cols_ == o.cols_; }

  bool all_finite() const noexcept {
    return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
  }

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<T> data_;
};

// ---------------------------------------------------------------------------
// Kernels
//
// Reductions keep 32 independent partial sums in a fixed order so the
// compiler can vectorize them without reassociating; results are identical
// with or without SIMD.

template <typename T>
T dot(const T* a, const T* b, std::size_t n) noexcept {
  T acc[32] = {};
  std::size_t i = 0;
  for (; i + 32 <= n; i += 32) {
    for (std::size_t k = 0; k < 32; ++k) acc[k] += a[i + k] * b[i + k];
  }
  for (; i + 8 <= n; i += 8) {
    for (std::size_t k = 0; k < 8; ++k) acc[k] += a[i + k] * b[i + k];
  }
  T tail{0};
  for (; i < n; ++i) tail += a[i] * b[i];
  for (std::size_t k = 0; k < 8; ++k) acc[k] = (acc[k] + acc[k + 8]) + (acc[k + 16] + acc[k + 24]);
  return ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7])) + tail;
}

template <typename T>
T dot(std::span<const T> a, std::span<const T> b) {
  if (a.size() != b.size()) throw ShapeError("dot: length mismatch");
  return dot(a.data(), b.data(), a.size());
}

/// y += A x
template <typename T>
void matvec_add(const Matrix<T>& a, std::span<const T> x, std::span<T> y) {
  if (a.cols() != x.size() || a.rows() != y.size()) throw ShapeError("matvec: dimension mismatch");
  const std::size_t n = a.cols();
  for (std::size_t r = 0; r < a.rows(); ++r) y[r] += dot(a.data() + r * n, x.data(), n);
}

/// y += A^T x
template <typename T>
void matvec_transposed_add(const Matrix<T>& a, std::span<const T> x, std::span<T> y) {
  if (a.rows() != x.size() || a.cols() != y.size()) throw ShapeError("matvec^T: dimension mismatch");
  const std::size_t n = a.cols();
  T* __restrict out = y.data();
  for (std::size_t r = 0; r < a.rows(); ++r) {
    const T s = x[r];
    if (s == T{0}) continue;
    const T* __restrict row = a.data() + r * n;
    for (std::size_t c = 0; c < n; ++c) out[c] += s * row[c];
  }
}

/// A += u v^T
template <typename T>
void outer_add(Matrix<T>& a, std::span<const T> u, std::span<const T> v) {
  if (a.rows() != u.size() || a.cols() != v.size()) throw ShapeError("outer: dimension mismatch");
  const std::size_t n = a.cols();
  for (std::size_t r = 0; r < a.rows(); ++r) {
    const T s = u[r];
    if (s == T{0}) continue;
    T* __restrict row = a.data() + r * n;
    const T* __restrict src = v.data();
    for (std::size_t c = 0; c < n; ++c) row[c] += s * src[c];
  }
}

template <typename T>
Matrix<T> matmul(const Matrix<T>& a, const Matrix<T>& b) {
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul: " + std::to_string(a.rows()) + "x" + std::to_string(a.cols()) + " * " +
                     std::to_string(b.rows()) + "x" + std::to_string(b.cols()));
  }
  Matrix<T> out(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const T s = a(i, k);
      const T* __restrict brow = b.data() + k * b.cols();
      T* __restrict orow = out.data() + i * out.cols();
      for (std::size_t j = 0; j < b.cols(); ++j) orow[j] += s * brow[j];
    }
  }
  return out;
}

template <typename T>
T sigmoid(T x) noexcept {
  if (x >= T{0}) return T{1} / (T{1} + std::exp(-x));
  const T e = std::exp(x);
  return e / (T{1} + e);
}

/// Max-subtracted softmax written into `out` (may alias `logits`).
template <typename T>
void softmax_into(std::span<const T> logits, std::span<T> out) {
  if (logits.empty()) throw ShapeError("softmax: empty input");
  if (out.size() != logits.size()) throw ShapeError("softmax: output length mismatch");
  const T mx = *std::max_element(logits.begin(), logits.end());
  // The normalizer is accumulated in double so 32-bit outputs still sum to 1
  // within a few ulps, as sample_categorical requires.
  double sum = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp(logits[i] - mx);
    sum += static_cast<double>(out[i]);
  }
  const double inv = 1.0 / sum;
  for (auto& v : out) v = static_cast<T>(static_cast<double>(v) * inv);
}

template <typename T>
std::vector<T> softmax(std::span<const T> logits) {
  std::vector<T> out(logits.size());
  softmax_into(logits, std::span<T>(out));
  return out;
}

template <typename T>
std::vector<T> softmax(const std::vector<T>& logits) {
  return softmax(std::span<const T>(logits));
}

/// ln softmax(logits)[index], computed without forming the probabilities.
template <typename T>
T log_softmax_at(std::span<const T> logits, std::size_t index) {
  if (index >= logits.size()) throw ShapeError("log_softmax_at: index out of range");
  const T mx = *std::max_element(logits.begin(), logits.end());
  T sum{0};
  for (T z : logits) sum += std::exp(z - mx);
  return logits[index] - mx - std::log(sum);
}

// ---------------------------------------------------------------------------
// Random numbers

/// Counter-based generator: the i-th draw of a stream is a pure function of
/// (key, i), using the SplitMix64 finalizer as the mixing function. Child
/// streams are derived by hashing an id into the key, so any number of
/// workers can draw reproducibly without sharing state.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) noexcept : key_(mix(seed ^ 0x6a09e667f3bcc909ULL)) {}

  std::uint64_t next_u64() noexcept { return mix(key_ + (++counter_) * kGamma); }

  /// Uniform in [0, 1) with 53 random bits.
  double uniform() noexcept { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }

  /// Unbiased integer in [0, n). Lemire's multiply-shift with rejection.
  std::uint64_t uniform_index(std::uint64_t n) {
    if (n == 0) throw ContractError("uniform_index: empty range");
    unsigned __int128 m = static_cast<unsigned __int128>(next_u64()) * n;
    auto low = static_cast<std::uint64_t>(m);
    if (low < n) {
      const std::uint64_t threshold = (0 - n) % n;
      while (low < threshold) {
        m = static_cast<unsigned __int128>(next_u64()) * n;
        low = static_cast<std::uint64_t>(m);
      }
    }
    return static_cast<std::uint64_t>(m >> 64);
  }

  bool bernoulli(double p) noexcept { return uniform() < p; }

  /// Independent stream identified by `id`. Does not advance this stream.
  Rng substream(std::uint64_t id) const noexcept {
    Rng child;
    child.key_ = mix(key_ ^ mix(id + 0x3c6ef372fe94f82bULL));
    return child;
  }

  std::uint64_t draws() const noexcept { return counter_; }

 private:
  static constexpr std::uint64_t kGamma = 0x9e3779b97f4a7c15ULL;

  static constexpr std::uint64_t mix(std::uint64_t z) noexcept {
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  std::uint64_t key_ = 0;
  std::uint64_t counter_ = 0;
};

/// Draws an index from a normalized distribution (sum within 1e-6 of 1).
template <typename T>
std::size_t sample_categorical(std::span<const T> probs, Rng& rng) {
  if (probs.empty()) throw ShapeError("sample_categorical: empty distribution");
  double total = 0.0;
  for (T p : probs) {
    if (!(p >= T{0})) throw ContractError("sample_categorical: negative or NaN probability");
    total += static_cast<double>(p);
  }
  if (std::abs(total - 1.0) > 1e-6) {
    throw ContractError("sample_categorical: probabilities sum to " + std::to_string(total));
  }
  const double u = rng.uniform() * total;
  double acc = 0.0;
  std::size_t last_nonzero = 0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    if (probs[i] <= T{0}) continue;
    acc += static_cast<double>(probs[i]);
    last_nonzero = i;
    if (u < acc) return i;
  }
  return last_nonzero;
}

template <typename T>
std::size_t sample_categorical(const std::vector<T>& probs, Rng& rng) {
  return sample_categorical(std::span<const T>(probs), rng);
}

/// Index of the largest entry; ties go to the smaller index.
template <typename T>
std::size_t argmax(std::span<const T> v) {
  if (v.empty()) throw ShapeError("argmax: empty input");
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i) {
    if (v[i] > v[best]) best = i;
  }
  return best;
}

template <typename T>
std::size_t argmax(const std::vector<T>& v) {
  return argmax(std::span<const T>(v));
}

// ---------------------------------------------------------------------------
// Gradient utilities

template <typename T>
double global_norm(std::span<Matrix<T>* const> tensors) {
  double sq = 0.0;
  for (const Matrix<T>* m : tensors) {
    for (T v : m->values()) sq += static_cast<double>(v) * static_cast<double>(v);
  }
  return std::sqrt(sq);
}

/// Rescales every tensor by threshold/g when the joint L2 norm g exceeds
/// `threshold`. Returns g, the norm before clipping.
template <typename T>
double clip_global_norm(std::span<Matrix<T>* const> grads, double threshold) {
  if (!(threshold > 0.0)) throw ContractError("clip_global_norm: threshold must be positive");
  const double norm = global_norm(grads);
  if (norm > threshold) {
    const double scale = threshold / norm;
    for (Matrix<T>* m : grads) {
      for (T& v : m->values()) v = static_cast<T>(static_cast<double>(v) * scale);
    }
  }
  return norm;
}

template <typename T>
double clip_global_norm(std::vector<Matrix<T>*>& grads, double threshold) {
  return clip_global_norm(std::span<Matrix<T>* const>(grads), threshold);
}

/// Central-difference gradient of a scalar function, one coordinate at a time.
inline Matrix<double> finite_diff_grad(const std::function<double(const Matrix<double>&)>& f,
                                       const Matrix<double>& x, double h) {
  Matrix<double> grad(x.rows(), x.cols());
  Matrix<double> probe = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = probe[i];
    probe[i] = orig + h;
    const double up = f(probe);
    probe[i] = orig - h;
    const double down = f(probe);
    probe[i] = orig;
    grad[i] = (up - down) / (2.0 * h);
  }
  return grad;
}

}  // namespace lstmjump
