// Copyright 2026 AspeRa Contributors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <stdexcept>
#include <string>
#include <vector>

namespace aspera {

/// Dense row-major matrix of doubles. Vectors are tensors with cols == 1.
class Tensor {
 public:
  Tensor() = default;

  Tensor(int rows, int cols) : rows_(rows), cols_(cols) {
    if (rows < 0 || cols < 0) throw std::invalid_argument("Tensor: negative shape");
    v_.assign(static_cast<std::size_t>(rows) * cols, 0.0);
  }

  static Tensor zeros(int rows, int cols) { return Tensor(rows, cols); }

  static Tensor scalar(double x) {
    Tensor t(1, 1);
    t.v_[0] = x;
    return t;
  }

  static Tensor vector(std::initializer_list<double> xs) {
    Tensor t(static_cast<int>(xs.size()), 1);
    int i = 0;
    for (double x : xs) t.v_[i++] = x;
    return t;
  }

  static Tensor vector(const std::vector<double>& xs) {
    Tensor t(static_cast<int>(xs.size()), 1);
    t.v_ = xs;
    return t;
  }

  static Tensor identity(int n) {
    Tensor t(n, n);
    for (int i = 0; i < n; ++i) t.at(i, i) = 1.0;
    return t;
  }

  int rows() const { return rows_; }
  int cols() const { return cols_; }
  std::size_t size() const { return v_.size(); }
  bool is_vector() const { return cols_ == 1; }
  bool is_scalar() const { return rows_ == 1 && cols_ == 1; }

  double& at(int r, int c) { return v_[static_cast<std::size_t>(r) * cols_ + c]; }
  double at(int r, int c) const { return v_[static_cast<std::size_t>(r) * cols_ + c]; }
  double& operator[](std::size_t i) { return v_[i]; }
  double operator[](std::size_t i) const { return v_[i]; }

  std::vector<double>& data() { return v_; }
  const std::vector<double>& data() const { return v_; }

  bool same_shape(const Tensor& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }

  std::string shape_str() const {
    return "(" + std::to_string(rows_) + "x" + std::to_string(cols_) + ")";
  }

  bool all_finite() const {
    for (double x : v_)
      if (!std::isfinite(x)) return false;
    return true;
  }

  double norm() const {
    double s = 0.0;
    for (double x : v_) s += x * x;
    return std::sqrt(s);
  }

 private:
  int rows_ = 0;
  int cols_ = 0;
  std::vector<double> v_;
};

inline double dot(const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b) || !a.is_vector())
    throw std::invalid_argument("dot: shape mismatch " + a.shape_str() + " vs " + b.shape_str());
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline Tensor l2_normalized(const Tensor& x, double guard = 1e-12) {
  double n = x.norm();
  if (n <= guard) return x;
  Tensor y = x;
  for (std::size_t i = 0; i < y.size(); ++i) y[i] /= n;
  return y;
}

}  // namespace aspera
