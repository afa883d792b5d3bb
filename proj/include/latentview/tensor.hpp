// Copyright (c) 2026 latentview authors
// SPDX-License-Identifier: Apache-2.0
//
// Dense row-major tensor of real scalars plus the handful of elementwise and
// matrix helpers the rest of the library is built on. Scalar is float in
// production paths and double in the 64-bit verification mode.

#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <initializer_list>
#include <numeric>
#include <random>
#include <stdexcept>
#include <vector>

#include "latentview/common.hpp"

namespace latentview {

template <class S>
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(std::vector<int> shape) : shape_(std::move(shape)) {
    data_.assign(numel_of(shape_), S(0));
  }

  Tensor(std::initializer_list<int> shape) : Tensor(std::vector<int>(shape)) {}

  static Tensor full(std::vector<int> shape, S value) {
    Tensor t(std::move(shape));
    std::fill(t.data_.begin(), t.data_.end(), value);
    return t;
  }

  static Tensor randn(std::vector<int> shape, std::mt19937_64& eng, S stddev = S(1)) {
    Tensor t(std::move(shape));
    std::normal_distribution<double> dist(0.0, 1.0);
    for (S& v : t.data_) v = static_cast<S>(dist(eng)) * stddev;
    return t;
  }

  const std::vector<int>& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  int dim(int i) const { return shape_[static_cast<std::size_t>(i)]; }
  std::size_t numel() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  S* data() { return data_.data(); }
  const S* data() const { return data_.data(); }
  S& operator[](std::size_t i) { return data_[i]; }
  const S& operator[](std::size_t i) const { return data_[i]; }

  // CHW addressing for 3-d tensors.
  S& at(int c, int h, int w) {
    return data_[(static_cast<std::size_t>(c) * shape_[1] + h) * shape_[2] + w];
  }
  const S& at(int c, int h, int w) const {
    return data_[(static_cast<std::size_t>(c) * shape_[1] + h) * shape_[2] + w];
  }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  Tensor reshaped(std::vector<int> shape) const {
    if (numel_of(shape) != data_.size()) throw std::invalid_argument("reshape: element count mismatch");
    Tensor t;
    t.shape_ = std::move(shape);
    t.data_ = data_;
    return t;
  }

  void fill(S v) { std::fill(data_.begin(), data_.end(), v); }

  bool all_finite() const {
    for (S v : data_)
      if (!std::isfinite(static_cast<double>(v))) return false;
    return true;
  }

  static std::size_t numel_of(const std::vector<int>& shape) {
    std::size_t n = 1;
    for (int d : shape) {
      if (d < 0) throw std::invalid_argument("negative dimension");
      n *= static_cast<std::size_t>(d);
    }
    return n;
  }

 private:
  std::vector<int> shape_;
  std::vector<S> data_;
};

// ---------------------------------------------------------------------------
// Elementwise helpers. All of them check shapes; mismatches are caller bugs
// surfaced as invalid_argument.

template <class S>
void check_same_shape(const Tensor<S>& a, const Tensor<S>& b, const char* what) {
  if (!a.same_shape(b)) throw std::invalid_argument(std::string(what) + ": shape mismatch");
}

template <class S>
Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b) {
  check_same_shape(a, b, "add");
  Tensor<S> out = a;
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] += b[i];
  return out;
}

template <class S>
Tensor<S> sub(const Tensor<S>& a, const Tensor<S>& b) {
  check_same_shape(a, b, "sub");
  Tensor<S> out = a;
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] -= b[i];
  return out;
}

template <class S>
Tensor<S> scale(const Tensor<S>& a, S s) {
  Tensor<S> out = a;
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] *= s;
  return out;
}

// y += s * x
template <class S>
void axpy(S s, const Tensor<S>& x, Tensor<S>& y) {
  check_same_shape(x, y, "axpy");
  for (std::size_t i = 0; i < y.numel(); ++i) y[i] += s * x[i];
}

template <class S>
double squared_norm(const Tensor<S>& a) {
  double acc = 0;
  for (std::size_t i = 0; i < a.numel(); ++i) acc += static_cast<double>(a[i]) * static_cast<double>(a[i]);
  return acc;
}

template <class S>
double max_abs_diff(const Tensor<S>& a, const Tensor<S>& b) {
  check_same_shape(a, b, "max_abs_diff");
  double m = 0;
  for (std::size_t i = 0; i < a.numel(); ++i)
    m = std::max(m, std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i])));
  return m;
}

template <class S>
double mean_squared_error(const Tensor<S>& a, const Tensor<S>& b) {
  check_same_shape(a, b, "mse");
  if (a.numel() == 0) return 0;
  double acc = 0;
  for (std::size_t i = 0; i < a.numel(); ++i) {
    double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
    acc += d * d;
  }
  return acc / static_cast<double>(a.numel());
}

template <class S>
bool bit_equal(const Tensor<S>& a, const Tensor<S>& b) {
  if (!a.same_shape(b)) return false;
  return std::memcmp(a.data(), b.data(), a.numel() * sizeof(S)) == 0;
}

// ---------------------------------------------------------------------------
// Eigen bridges for the GEMM-shaped work.

template <class S>
using RowMat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <class S>
Eigen::Map<RowMat<S>> as_matrix(Tensor<S>& t, int rows, int cols) {
  if (static_cast<std::size_t>(rows) * cols != t.numel())
    throw std::invalid_argument("as_matrix: size mismatch");
  return Eigen::Map<RowMat<S>>(t.data(), rows, cols);
}

template <class S>
Eigen::Map<const RowMat<S>> as_matrix(const Tensor<S>& t, int rows, int cols) {
  if (static_cast<std::size_t>(rows) * cols != t.numel())
    throw std::invalid_argument("as_matrix: size mismatch");
  return Eigen::Map<const RowMat<S>>(t.data(), rows, cols);
}

}  // namespace latentview
