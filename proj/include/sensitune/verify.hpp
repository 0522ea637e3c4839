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

// Independent gradient oracles: central differences of the rollout loss, and
// a reverse (adjoint) sweep over the per-step Jacobians stored in a record.

#ifndef SENSITUNE_VERIFY_HPP_
#define SENSITUNE_VERIFY_HPP_

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

#include "sensitune/core.hpp"
#include "sensitune/optim.hpp"
#include "sensitune/sim.hpp"

namespace sensitune {

struct FdGradient {
  RowVector gradient;
  Eigen::VectorXd epsilon;  // step actually used per component
};

// Component i is (L(theta + eps e_i) - L(theta - eps e_i)) / (2 eps) from
// fresh loss-only rollouts. If theta +- eps e_i would leave `box`, eps is
// shrunk for that component and the used value is reported. All rollouts
// draw measurement noise from the same `stream`.
template <SystemModel S>
FdGradient fd_gradient(const S& model, const Scenario& scenario,
                       const ParamVector& theta, const SimConfig& sim,
                       const LossSpec& loss, double eps,
                       const std::optional<FeasibleBox>& box = std::nullopt,
                       const std::optional<L1Config>& l1 = std::nullopt,
                       std::uint64_t stream = 0) {
  if (!(eps > 0.0)) throw Error("fd_gradient: epsilon must be positive");
  const Eigen::Index p = theta.size();
  FdGradient out{RowVector(p), Eigen::VectorXd::Constant(p, eps)};
  RolloutOptions opts;
  opts.sensitivities = false;
  opts.stream = stream;
  auto loss_at = [&](const ParamVector& th) {
    return rollout(model, scenario.trajectory, scenario.initial_state, th, sim, loss,
                   l1, opts)
        .loss;
  };
  for (Eigen::Index i = 0; i < p; ++i) {
    double h = eps;
    if (box) {
      const double room = std::min(theta[i] - box->lower[i], box->upper[i] - theta[i]);
      if (room <= 0.0) throw Error("fd_gradient: theta on the feasible-box boundary");
      h = std::min(h, 0.5 * room);
    }
    out.epsilon[i] = h;
    ParamVector plus = theta, minus = theta;
    plus[i] += h;
    minus[i] -= h;
    out.gradient[i] = (loss_at(plus) - loss_at(minus)) / (2.0 * h);
  }
  return out;
}

// Adjoint recursion over the stored graph. With a_{k+1} the adjoint of
// x_{k+1}:
//   g_k     = dL/du_k + a_{k+1} Ju_f_k
//   grad   += g_k Jtheta_h_k
//   a_k     = dL/dx_k + a_{k+1} Jx_f_k + g_k Jx_h_k
inline RowVector reverse_gradient(const RolloutRecord& record) {
  const long n = record.steps();
  if (n < 1 || record.jacobians.size() != record.state.size() ||
      record.dL_dx.size() != record.state.size() ||
      record.dL_du.size() != record.state.size()) {
    throw Error("reverse_gradient: record does not store the step Jacobians");
  }
  const auto& last = record.jacobians[n];
  RowVector adjoint = record.dL_dx[n] + record.dL_du[n] * last.state_control;
  RowVector grad = record.dL_du[n] * last.param_control;
  for (long k = n - 1; k >= 0; --k) {
    const StepJacobians& j = record.jacobians[k];
    const RowVector g = record.dL_du[k] + adjoint * j.control_dynamics;
    grad.noalias() += g * j.param_control;
    adjoint = record.dL_dx[k] + adjoint * j.state_dynamics + g * j.state_control;
  }
  return grad;
}

// Central-difference Jacobian of fn at x, step eps * max(1, |x_i|).
inline Matrix central_difference_jacobian(
    const std::function<Eigen::VectorXd(const Eigen::VectorXd&)>& fn,
    const Eigen::VectorXd& x, double eps = 1e-6) {
  const Eigen::VectorXd f0 = fn(x);
  Matrix j(f0.size(), x.size());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double h = eps * std::max(1.0, std::abs(x[i]));
    Eigen::VectorXd xp = x, xm = x;
    xp[i] += h;
    xm[i] -= h;
    j.col(i) = (fn(xp) - fn(xm)) / (2.0 * h);
  }
  return j;
}

// |a - b| / max(|a|, |b|, floor); the floor keeps components that vanish in
// exact arithmetic from dominating through round-off.
inline double relative_error(double a, double b, double floor) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

inline double max_relative_error(const RowVector& a, const RowVector& b,
                                 double floor) {
  double worst = 0.0;
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    worst = std::max(worst, relative_error(a[i], b[i], floor));
  }
  return worst;
}

}  // namespace sensitune

#endif  // SENSITUNE_VERIFY_HPP_
