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
#include <functional>
#include <vector>

#include "aspera/tape.hpp"
#include "aspera/tensor.hpp"

namespace aspera {

/// Builds the loss graph for a parameter vector: given a fresh tape and one
/// leaf per parameter tensor, returns the scalar loss Var.
using LossBuilder = std::function<Var(Tape&, const std::vector<Var>&)>;

struct GradCheckEntry {
  int param = 0;
  int index = 0;  // flat index within the parameter
  double analytic = 0.0;
  double numeric = 0.0;
  double rel_err = 0.0;
};

struct GradCheckReport {
  double max_rel_err = 0.0;          // over checked coordinates
  long checked = 0;
  std::vector<double> per_param_max;         // max rel_err per parameter tensor
  std::vector<GradCheckEntry> failures;      // rel_err > tol
  std::vector<GradCheckEntry> excluded;      // hinge kink crossed, not comparable
  bool all_finite = true;

  bool ok() const { return failures.empty() && all_finite; }
};

namespace detail {

struct Probe {
  double value = 0.0;
  std::vector<double> hinge_inputs;
  bool finite = true;
};

inline Probe evaluate(const LossBuilder& build, const std::vector<Tensor>& params) {
  Probe p;
  try {
    Tape tape;
    std::vector<Var> vars;
    vars.reserve(params.size());
    for (const Tensor& t : params) vars.push_back(tape.leaf(t));
    Var loss = build(tape, vars);
    p.value = tape.scalar_value(loss);
    p.hinge_inputs = tape.hinge_inputs();
    p.finite = std::isfinite(p.value);
  } catch (const std::exception&) {
    p.finite = false;
  }
  return p;
}

inline int sign_of(double x) { return (x > 0.0) - (x < 0.0); }

// Central differences straddle a hinge kink when any hinge input changes
// sign between the evaluations; the two-sided slope is meaningless there.
inline bool crosses_kink(const Probe& base, const Probe& plus, const Probe& minus) {
  if (plus.hinge_inputs.size() != base.hinge_inputs.size() ||
      minus.hinge_inputs.size() != base.hinge_inputs.size())
    return true;  // graph structure changed, cannot compare
  for (std::size_t i = 0; i < base.hinge_inputs.size(); ++i) {
    int s0 = sign_of(base.hinge_inputs[i]);
    int sp = sign_of(plus.hinge_inputs[i]);
    int sm = sign_of(minus.hinge_inputs[i]);
    if (s0 != sp || s0 != sm) return true;
  }
  return false;
}

}  // namespace detail

/// Central-difference check of the tape's reverse-mode gradients.
/// rel_err = |ga - gn| / max(1e-8, |ga| + |gn|) per entry. Coordinates whose
/// perturbed evaluations cross a hinge kink are excluded and reported.
inline GradCheckReport gradient_check(const LossBuilder& build,
                                      const std::vector<Tensor>& params,
                                      double step = 1e-5, double tol = 1e-4) {
  if (step <= 0.0) throw std::invalid_argument("gradient_check: step must be > 0");
  GradCheckReport report;

  Tape tape;
  std::vector<Var> vars;
  vars.reserve(params.size());
  for (const Tensor& t : params) vars.push_back(tape.leaf(t));
  Var loss = build(tape, vars);
  GradientMap grads = tape.backward(loss);
  detail::Probe base;
  base.value = tape.scalar_value(loss);
  base.hinge_inputs = tape.hinge_inputs();

  std::vector<Tensor> work = params;
  report.per_param_max.assign(params.size(), 0.0);
  for (std::size_t p = 0; p < params.size(); ++p) {
    const Tensor& analytic = grads.at(vars[p]);
    for (std::size_t i = 0; i < params[p].size(); ++i) {
      double orig = work[p][i];
      work[p][i] = orig + step;
      detail::Probe plus = detail::evaluate(build, work);
      work[p][i] = orig - step;
      detail::Probe minus = detail::evaluate(build, work);
      work[p][i] = orig;

      GradCheckEntry entry;
      entry.param = static_cast<int>(p);
      entry.index = static_cast<int>(i);
      entry.analytic = analytic[i];

      if (!plus.finite || !minus.finite) {
        report.all_finite = false;
        report.failures.push_back(entry);
        continue;
      }
      if (detail::crosses_kink(base, plus, minus)) {
        report.excluded.push_back(entry);
        continue;
      }
      entry.numeric = (plus.value - minus.value) / (2.0 * step);
      double denom = std::max(1e-8, std::fabs(entry.analytic) + std::fabs(entry.numeric));
      entry.rel_err = std::fabs(entry.analytic - entry.numeric) / denom;
      ++report.checked;
      if (entry.rel_err > report.max_rel_err) report.max_rel_err = entry.rel_err;
      if (entry.rel_err > report.per_param_max[p]) report.per_param_max[p] = entry.rel_err;
      if (entry.rel_err > tol) report.failures.push_back(entry);
    }
  }
  return report;
}

}  // namespace aspera
