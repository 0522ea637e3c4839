// Copyright 2026 The Sensitune Authors
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

// Quadratic tracking loss
//   L = sum_{k=1..N} |S (x_k - xd_k)|^2 + lambda sum_{k=0..N-1} |u_k|^2
// and its per-step partials, which weight the sensitivities in the gradient.

#ifndef SENSITUNE_LOSS_HPP_
#define SENSITUNE_LOSS_HPP_

#include <utility>
#include <vector>

#include "sensitune/core.hpp"

namespace sensitune {

struct LossSpec {
  Eigen::VectorXd selector;  // 0/1 diagonal of S
  double lambda = 0.0;

  // Selects the given state components (positions, in practice).
  static LossSpec positions(int state_dim, const std::vector<int>& index,
                            double lambda = 0.0) {
    LossSpec spec{Eigen::VectorXd::Zero(state_dim), lambda};
    for (int i : index) spec.selector[i] = 1.0;
    return spec;
  }

  void validate() const {
    for (Eigen::Index i = 0; i < selector.size(); ++i) {
      if (selector[i] != 0.0 && selector[i] != 1.0) {
        throw Error("loss selector must be a 0/1 diagonal");
      }
    }
    if (!(lambda >= 0.0)) throw Error("loss lambda must be non-negative");
  }
};

struct LossPartials {
  RowVector dL_dx;
  RowVector dL_du;
};

inline LossPartials loss_partials(const StateVector& x, const StateVector& x_desired,
                                  const ControlVector& u, const LossSpec& spec) {
  return {2.0 * (spec.selector.cwiseProduct(x - x_desired)).transpose(),
          2.0 * spec.lambda * u.transpose()};
}

// Summand of the state term at one step.
inline double state_loss_term(const StateVector& x, const StateVector& x_desired,
                              const LossSpec& spec) {
  return spec.selector.cwiseProduct(x - x_desired).squaredNorm();
}

inline double control_loss_term(const ControlVector& u, const LossSpec& spec) {
  return spec.lambda * u.squaredNorm();
}

inline double loss_total(const RolloutRecord& record, const LossSpec& spec) {
  const long n = record.steps();
  if (n < 0 || record.desired.size() != record.state.size() ||
      record.control.size() < static_cast<std::size_t>(n)) {
    throw Error("loss_total: incomplete rollout record");
  }
  double total = 0.0;
  for (long k = 1; k <= n; ++k) {
    total += state_loss_term(record.state[k], record.desired[k].state, spec);
  }
  if (spec.lambda > 0.0) {
    for (long k = 0; k < n; ++k) total += control_loss_term(record.control[k], spec);
  }
  return total;
}

}  // namespace sensitune

#endif  // SENSITUNE_LOSS_HPP_
