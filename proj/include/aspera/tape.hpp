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

#include <cstdint>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "aspera/tensor.hpp"

namespace aspera {

/// Handle to a node on a Tape.
struct Var {
  int id = -1;
};

/// Gradients keyed by the leaf Var they belong to. Leaves that never reach
/// the loss get zero tensors of the leaf's shape.
class GradientMap {
 public:
  void set(Var v, Tensor g) { g_[v.id] = std::move(g); }

  const Tensor& at(Var v) const {
    auto it = g_.find(v.id);
    if (it == g_.end()) throw std::invalid_argument("GradientMap: not a tracked leaf");
    return it->second;
  }

  bool contains(Var v) const { return g_.count(v.id) != 0; }
  std::size_t size() const { return g_.size(); }

 private:
  std::unordered_map<int, Tensor> g_;
};

// Reverse-mode tape over the primitive set used by every loss in this
// project. Single-threaded builder; values are immutable once recorded.
class Tape {
  enum class Op {
    kLeaf,
    kConstant,
    kMatVec,
    kMatMul,
    kTranspose,
    kAdd,
    kSub,
    kScale,
    kDot,
    kSumRows,
    kMeanRows,
    kSoftmax,
    kL2Normalize,
    kHinge,
    kFrobeniusSq,
    kSquare,
    kGatherRows,
  };

  struct Node {
    Op op;
    int a = -1;
    int b = -1;
    Tensor value;
    double scalar = 0.0;             // kScale factor
    std::vector<int> indices;        // kGatherRows
    std::vector<std::uint8_t> mask;  // kSoftmax (empty = no mask)
    std::vector<double> saved;       // op-specific forward state (norms etc.)
    bool tracked = false;            // gradient flows through this node
  };

 public:
  /// Trainable leaf; its gradient appears in the GradientMap.
  Var leaf(Tensor value) { return push(Op::kLeaf, -1, -1, std::move(value), true); }

  /// Non-trainable input; backward skips it.
  Var constant(Tensor value) { return push(Op::kConstant, -1, -1, std::move(value), false); }

  Var constant_scalar(double x) { return constant(Tensor::scalar(x)); }

  Var matvec(Var m, Var x) {
    const Tensor& M = val(m);
    const Tensor& X = val(x);
    if (!X.is_vector() || M.cols() != X.rows())
      throw std::invalid_argument("matvec: shape mismatch " + M.shape_str() + " vs " + X.shape_str());
    Tensor out(M.rows(), 1);
    for (int i = 0; i < M.rows(); ++i) {
      double s = 0.0;
      for (int j = 0; j < M.cols(); ++j) s += M.at(i, j) * X[j];
      out[i] = s;
    }
    return push(Op::kMatVec, m.id, x.id, std::move(out), tracked(m) || tracked(x));
  }

  Var matmul(Var a, Var b) {
    const Tensor& A = val(a);
    const Tensor& B = val(b);
    if (A.cols() != B.rows())
      throw std::invalid_argument("matmul: shape mismatch " + A.shape_str() + " vs " + B.shape_str());
    Tensor out(A.rows(), B.cols());
    for (int i = 0; i < A.rows(); ++i)
      for (int k = 0; k < A.cols(); ++k) {
        double aik = A.at(i, k);
        if (aik == 0.0) continue;
        for (int j = 0; j < B.cols(); ++j) out.at(i, j) += aik * B.at(k, j);
      }
    return push(Op::kMatMul, a.id, b.id, std::move(out), tracked(a) || tracked(b));
  }

  Var transpose(Var a) {
    const Tensor& A = val(a);
    Tensor out(A.cols(), A.rows());
    for (int i = 0; i < A.rows(); ++i)
      for (int j = 0; j < A.cols(); ++j) out.at(j, i) = A.at(i, j);
    return push(Op::kTranspose, a.id, -1, std::move(out), tracked(a));
  }

  Var add(Var a, Var b) { return elementwise(Op::kAdd, a, b); }
  Var sub(Var a, Var b) { return elementwise(Op::kSub, a, b); }

  Var scale(Var a, double s) {
    Tensor out = val(a);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= s;
    Var v = push(Op::kScale, a.id, -1, std::move(out), tracked(a));
    nodes_[v.id].scalar = s;
    return v;
  }

  Var dot(Var a, Var b) {
    const Tensor& X = val(a);
    const Tensor& Y = val(b);
    if (!X.is_vector() || !X.same_shape(Y))
      throw std::invalid_argument("dot: shape mismatch " + X.shape_str() + " vs " + Y.shape_str());
    double s = 0.0;
    for (std::size_t i = 0; i < X.size(); ++i) s += X[i] * Y[i];
    return push(Op::kDot, a.id, b.id, Tensor::scalar(s), tracked(a) || tracked(b));
  }

  /// Sum of the matrix's rows viewed as vectors: (n x d) -> (d x 1).
  Var sum_rows(Var a) { return rows_reduce(Op::kSumRows, a); }

  /// Mean of the matrix's rows viewed as vectors: (n x d) -> (d x 1).
  Var mean_rows(Var a) { return rows_reduce(Op::kMeanRows, a); }

  /// Softmax over a vector. With a mask, masked positions get exactly 0 and
  /// the distribution renormalizes over the rest.
  Var softmax(Var x, const std::vector<std::uint8_t>& mask = {}) {
    const Tensor& X = val(x);
    if (!X.is_vector())
      throw std::invalid_argument("softmax: expected vector, got " + X.shape_str());
    if (!mask.empty() && mask.size() != X.size())
      throw std::invalid_argument("softmax: mask length " + std::to_string(mask.size()) +
                                  " vs vector " + X.shape_str());
    auto live = [&](std::size_t i) { return mask.empty() || mask[i] != 0; };
    double mx = 0.0;
    bool any = false;
    for (std::size_t i = 0; i < X.size(); ++i)
      if (live(i) && (!any || X[i] > mx)) mx = X[i], any = true;
    if (!any) throw std::invalid_argument("softmax: all positions masked");
    Tensor out(X.rows(), 1);
    double z = 0.0;
    for (std::size_t i = 0; i < X.size(); ++i)
      if (live(i)) z += out[i] = std::exp(X[i] - mx);
    for (std::size_t i = 0; i < X.size(); ++i) out[i] = live(i) ? out[i] / z : 0.0;
    Var v = push(Op::kSoftmax, x.id, -1, std::move(out), tracked(x));
    nodes_[v.id].mask = mask;
    return v;
  }

  /// L2-normalize a vector, or each row of a matrix independently. Rows with
  /// norm <= 1e-12 pass through unchanged with zero gradient and are flagged
  /// via degenerate_normalizations().
  Var l2_normalize(Var a) {
    const Tensor& A = val(a);
    Tensor out = A;
    std::vector<double> norms;
    if (A.is_vector()) {
      double n2 = A.norm();
      norms.push_back(n2);
      if (n2 <= kNormGuard) {
        ++degenerate_normalizations_;
      } else {
        for (std::size_t i = 0; i < out.size(); ++i) out[i] /= n2;
      }
    } else {
      norms.resize(A.rows());
      for (int i = 0; i < A.rows(); ++i) {
        double s = 0.0;
        for (int j = 0; j < A.cols(); ++j) s += A.at(i, j) * A.at(i, j);
        double n2 = std::sqrt(s);
        norms[i] = n2;
        if (n2 <= kNormGuard) {
          ++degenerate_normalizations_;
          continue;
        }
        for (int j = 0; j < A.cols(); ++j) out.at(i, j) /= n2;
      }
    }
    Var v = push(Op::kL2Normalize, a.id, -1, std::move(out), tracked(a));
    nodes_[v.id].saved = std::move(norms);
    return v;
  }

  /// Elementwise max(0, x). Subgradient at exactly 0 is 0.
  Var hinge(Var a) {
    const Tensor& A = val(a);
    for (std::size_t i = 0; i < A.size(); ++i) hinge_inputs_.push_back(A[i]);
    Tensor out = A;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = out[i] > 0.0 ? out[i] : 0.0;
    return push(Op::kHinge, a.id, -1, std::move(out), tracked(a));
  }

  /// Squared Frobenius norm -> scalar. For vectors this is the squared L2 norm.
  Var frobenius_sq(Var a) {
    const Tensor& A = val(a);
    double s = 0.0;
    for (std::size_t i = 0; i < A.size(); ++i) s += A[i] * A[i];
    return push(Op::kFrobeniusSq, a.id, -1, Tensor::scalar(s), tracked(a));
  }

  Var square(Var a) {
    Tensor out = val(a);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= out[i];
    return push(Op::kSquare, a.id, -1, std::move(out), tracked(a));
  }

  /// Row gather: out[t] = M[indices[t]]. Backward scatter-adds, so repeated
  /// indices accumulate. Equivalent to multiplying by a one-hot selection
  /// matrix; kept as a primitive so embedding lookups stay O(n*d).
  Var gather_rows(Var m, const std::vector<int>& indices) {
    const Tensor& M = val(m);
    Tensor out(static_cast<int>(indices.size()), M.cols());
    for (std::size_t t = 0; t < indices.size(); ++t) {
      int r = indices[t];
      if (r < 0 || r >= M.rows())
        throw std::invalid_argument("gather_rows: index " + std::to_string(r) +
                                    " out of range for " + M.shape_str());
      for (int j = 0; j < M.cols(); ++j) out.at(static_cast<int>(t), j) = M.at(r, j);
    }
    Var v = push(Op::kGatherRows, m.id, -1, std::move(out), tracked(m));
    nodes_[v.id].indices = indices;
    return v;
  }

  /// Reference is invalidated by the next recorded op; copy if it must
  /// outlive further tape building.
  const Tensor& value(Var v) const { return val(v); }

  double scalar_value(Var v) const {
    const Tensor& t = val(v);
    if (!t.is_scalar()) throw std::invalid_argument("scalar_value: not a scalar " + t.shape_str());
    return t[0];
  }

  /// Inputs of every hinge node in creation order. Drives kink detection in
  /// the gradient checker.
  const std::vector<double>& hinge_inputs() const { return hinge_inputs_; }

  int degenerate_normalizations() const { return degenerate_normalizations_; }

  std::size_t size() const { return nodes_.size(); }

  /// Reverse-mode gradients of a scalar loss for every tracked leaf.
  GradientMap backward(Var loss) const {
    const Tensor& L = val(loss);
    if (!L.is_scalar())
      throw std::invalid_argument("backward: loss must be scalar, got " + L.shape_str());
    std::vector<Tensor> adj(nodes_.size());
    std::vector<bool> needed(nodes_.size(), false);
    needed[loss.id] = true;
    // Mark nodes on a path from a tracked leaf to the loss.
    for (int i = loss.id; i >= 0; --i) {
      if (!needed[i] || !nodes_[i].tracked) continue;
      const Node& n = nodes_[i];
      if (n.a >= 0 && nodes_[n.a].tracked) needed[n.a] = true;
      if (n.b >= 0 && nodes_[n.b].tracked) needed[n.b] = true;
    }
    auto grad = [&](int id) -> Tensor& {
      if (adj[id].size() == 0 && nodes_[id].value.size() != 0)
        adj[id] = Tensor::zeros(nodes_[id].value.rows(), nodes_[id].value.cols());
      return adj[id];
    };
    grad(loss.id)[0] = 1.0;
    for (int i = loss.id; i >= 0; --i) {
      if (!needed[i] || !nodes_[i].tracked) continue;
      if (adj[i].size() == 0) continue;  // never reached by the loss
      backward_node(i, adj, grad);
    }
    GradientMap out;
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
      if (nodes_[i].op != Op::kLeaf) continue;
      if (adj[i].size() != 0)
        out.set(Var{static_cast<int>(i)}, std::move(adj[i]));
      else
        out.set(Var{static_cast<int>(i)},
                Tensor::zeros(nodes_[i].value.rows(), nodes_[i].value.cols()));
    }
    return out;
  }

 private:
  static constexpr double kNormGuard = 1e-12;

  const Tensor& val(Var v) const {
    if (v.id < 0 || v.id >= static_cast<int>(nodes_.size()))
      throw std::invalid_argument("Tape: invalid Var");
    return nodes_[v.id].value;
  }

  bool tracked(Var v) const { return nodes_[v.id].tracked; }

  Var push(Op op, int a, int b, Tensor value, bool track) {
    if (!value.all_finite())
      throw std::runtime_error("Tape: non-finite value produced by forward op");
    Node n;
    n.op = op;
    n.a = a;
    n.b = b;
    n.value = std::move(value);
    n.tracked = track;
    nodes_.push_back(std::move(n));
    return Var{static_cast<int>(nodes_.size() - 1)};
  }

  Var elementwise(Op op, Var a, Var b) {
    const Tensor& A = val(a);
    const Tensor& B = val(b);
    if (!A.same_shape(B))
      throw std::invalid_argument("add/sub: shape mismatch " + A.shape_str() + " vs " +
                                  B.shape_str());
    Tensor out = A;
    for (std::size_t i = 0; i < out.size(); ++i)
      out[i] = op == Op::kAdd ? out[i] + B[i] : out[i] - B[i];
    return push(op, a.id, b.id, std::move(out), tracked(a) || tracked(b));
  }

  Var rows_reduce(Op op, Var a) {
    const Tensor& A = val(a);
    Tensor out(A.cols(), 1);
    for (int i = 0; i < A.rows(); ++i)
      for (int j = 0; j < A.cols(); ++j) out[j] += A.at(i, j);
    if (op == Op::kMeanRows) {
      if (A.rows() == 0) throw std::invalid_argument("mean_rows: empty matrix");
      for (std::size_t j = 0; j < out.size(); ++j) out[j] /= A.rows();
    }
    return push(op, a.id, -1, std::move(out), tracked(a));
  }

  template <typename GradFn>
  void backward_node(int i, std::vector<Tensor>& adj, GradFn& grad) const {
    const Node& n = nodes_[i];
    const Tensor& g = adj[i];
    auto flows = [&](int id) { return id >= 0 && nodes_[id].tracked; };
    switch (n.op) {
      case Op::kLeaf:
      case Op::kConstant:
        break;
      case Op::kMatVec: {
        const Tensor& M = nodes_[n.a].value;
        const Tensor& X = nodes_[n.b].value;
        if (flows(n.a)) {
          Tensor& dM = grad(n.a);
          for (int r = 0; r < M.rows(); ++r)
            for (int c = 0; c < M.cols(); ++c) dM.at(r, c) += g[r] * X[c];
        }
        if (flows(n.b)) {
          Tensor& dX = grad(n.b);
          for (int r = 0; r < M.rows(); ++r)
            for (int c = 0; c < M.cols(); ++c) dX[c] += M.at(r, c) * g[r];
        }
        break;
      }
      case Op::kMatMul: {
        const Tensor& A = nodes_[n.a].value;
        const Tensor& B = nodes_[n.b].value;
        if (flows(n.a)) {
          Tensor& dA = grad(n.a);
          for (int r = 0; r < A.rows(); ++r)
            for (int c = 0; c < A.cols(); ++c) {
              double s = 0.0;
              for (int j = 0; j < B.cols(); ++j) s += g.at(r, j) * B.at(c, j);
              dA.at(r, c) += s;
            }
        }
        if (flows(n.b)) {
          Tensor& dB = grad(n.b);
          for (int r = 0; r < B.rows(); ++r)
            for (int c = 0; c < B.cols(); ++c) {
              double s = 0.0;
              for (int j = 0; j < A.rows(); ++j) s += A.at(j, r) * g.at(j, c);
              dB.at(r, c) += s;
            }
        }
        break;
      }
      case Op::kTranspose: {
        if (flows(n.a)) {
          Tensor& dA = grad(n.a);
          for (int r = 0; r < g.rows(); ++r)
            for (int c = 0; c < g.cols(); ++c) dA.at(c, r) += g.at(r, c);
        }
        break;
      }
      case Op::kAdd:
      case Op::kSub: {
        if (flows(n.a)) {
          Tensor& dA = grad(n.a);
          for (std::size_t k = 0; k < g.size(); ++k) dA[k] += g[k];
        }
        if (flows(n.b)) {
          Tensor& dB = grad(n.b);
          double sgn = n.op == Op::kAdd ? 1.0 : -1.0;
          for (std::size_t k = 0; k < g.size(); ++k) dB[k] += sgn * g[k];
        }
        break;
      }
      case Op::kScale: {
        if (flows(n.a)) {
          Tensor& dA = grad(n.a);
          for (std::size_t k = 0; k < g.size(); ++k) dA[k] += n.scalar * g[k];
        }
        break;
      }
      case Op::kDot: {
        const Tensor& X = nodes_[n.a].value;
        const Tensor& Y = nodes_[n.b].value;
        double gs = g[0];
        if (flows(n.a)) {
          Tensor& dX = grad(n.a);
          for (std::size_t k = 0; k < X.size(); ++k) dX[k] += gs * Y[k];
        }
        if (flows(n.b)) {
          Tensor& dY = grad(n.b);
          for (std::size_t k = 0; k < Y.size(); ++k) dY[k] += gs * X[k];
        }
        break;
      }
      case Op::kSumRows:
      case Op::kMeanRows: {
        if (flows(n.a)) {
          const Tensor& A = nodes_[n.a].value;
          double f = n.op == Op::kMeanRows ? 1.0 / A.rows() : 1.0;
          Tensor& dA = grad(n.a);
          for (int r = 0; r < A.rows(); ++r)
            for (int c = 0; c < A.cols(); ++c) dA.at(r, c) += f * g[c];
        }
        break;
      }
      case Op::kSoftmax: {
        if (flows(n.a)) {
          const Tensor& s = n.value;
          double gs = 0.0;
          for (std::size_t k = 0; k < s.size(); ++k) gs += g[k] * s[k];
          Tensor& dX = grad(n.a);
          for (std::size_t k = 0; k < s.size(); ++k) dX[k] += s[k] * (g[k] - gs);
        }
        break;
      }
      case Op::kL2Normalize: {
        if (flows(n.a)) {
          const Tensor& A = nodes_[n.a].value;
          const Tensor& Y = n.value;
          Tensor& dA = grad(n.a);
          if (A.is_vector()) {
            double norm = n.saved[0];
            if (norm > kNormGuard) {
              double yg = 0.0;
              for (std::size_t k = 0; k < Y.size(); ++k) yg += Y[k] * g[k];
              for (std::size_t k = 0; k < Y.size(); ++k) dA[k] += (g[k] - Y[k] * yg) / norm;
            }
          } else {
            for (int r = 0; r < A.rows(); ++r) {
              double norm = n.saved[r];
              if (norm <= kNormGuard) continue;
              double yg = 0.0;
              for (int c = 0; c < A.cols(); ++c) yg += Y.at(r, c) * g.at(r, c);
              for (int c = 0; c < A.cols(); ++c)
                dA.at(r, c) += (g.at(r, c) - Y.at(r, c) * yg) / norm;
            }
          }
        }
        break;
      }
      case Op::kHinge: {
        if (flows(n.a)) {
          const Tensor& A = nodes_[n.a].value;
          Tensor& dA = grad(n.a);
          for (std::size_t k = 0; k < A.size(); ++k)
            if (A[k] > 0.0) dA[k] += g[k];
        }
        break;
      }
      case Op::kFrobeniusSq: {
        if (flows(n.a)) {
          const Tensor& A = nodes_[n.a].value;
          Tensor& dA = grad(n.a);
          for (std::size_t k = 0; k < A.size(); ++k) dA[k] += 2.0 * g[0] * A[k];
        }
        break;
      }
      case Op::kSquare: {
        if (flows(n.a)) {
          const Tensor& A = nodes_[n.a].value;
          Tensor& dA = grad(n.a);
          for (std::size_t k = 0; k < A.size(); ++k) dA[k] += 2.0 * A[k] * g[k];
        }
        break;
      }
      case Op::kGatherRows: {
        if (flows(n.a)) {
          Tensor& dM = grad(n.a);
          for (std::size_t t = 0; t < n.indices.size(); ++t)
            for (int c = 0; c < g.cols(); ++c)
              dM.at(n.indices[t], c) += g.at(static_cast<int>(t), c);
        }
        break;
      }
    }
  }

  std::vector<Node> nodes_;
  std::vector<double> hinge_inputs_;
  int degenerate_normalizations_ = 0;
};

}  // namespace aspera
