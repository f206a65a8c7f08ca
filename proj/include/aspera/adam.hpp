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
#include <stdexcept>
#include <vector>

#include "aspera/tensor.hpp"

namespace aspera {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adam over a fixed group of parameter tensors. Moment buffers are laid out
/// by position in the group, which must stay stable across steps.
class Adam {
 public:
  explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}

  void step(const std::vector<Tensor*>& params, const std::vector<const Tensor*>& grads) {
    if (params.size() != grads.size())
      throw std::invalid_argument("Adam: params/grads size mismatch");
    if (m_.empty()) {
      for (Tensor* p : params) {
        m_.push_back(Tensor::zeros(p->rows(), p->cols()));
        v_.push_back(Tensor::zeros(p->rows(), p->cols()));
      }
    }
    if (m_.size() != params.size())
      throw std::invalid_argument("Adam: parameter group changed size");
    ++t_;
    double bc1 = 1.0 - std::pow(cfg_.beta1, t_);
    double bc2 = 1.0 - std::pow(cfg_.beta2, t_);
    for (std::size_t p = 0; p < params.size(); ++p) {
      Tensor& x = *params[p];
      const Tensor& g = *grads[p];
      if (!x.same_shape(g))
        throw std::invalid_argument("Adam: grad shape " + g.shape_str() + " vs param " +
                                    x.shape_str());
      for (std::size_t i = 0; i < x.size(); ++i) {
        m_[p][i] = cfg_.beta1 * m_[p][i] + (1.0 - cfg_.beta1) * g[i];
        v_[p][i] = cfg_.beta2 * v_[p][i] + (1.0 - cfg_.beta2) * g[i] * g[i];
        double mhat = m_[p][i] / bc1;
        double vhat = v_[p][i] / bc2;
        x[i] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
      }
    }
  }

  long steps() const { return t_; }

 private:
  AdamConfig cfg_;
  long t_ = 0;
  std::vector<Tensor> m_;
  std::vector<Tensor> v_;
};

}  // namespace aspera
