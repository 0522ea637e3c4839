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

#ifndef SENSITUNE_SYSTEMS_SYSTEM_HPP_
#define SENSITUNE_SYSTEMS_SYSTEM_HPP_

#include <concepts>
#include <vector>

#include "sensitune/core.hpp"

namespace sensitune {

// Injected model mismatch. Dubins car: additive force 0.1*a1*sin(t) and
// moment 0.1*a2*cos(t). Quadrotor: the plant inertia is beta*J.
struct Uncertainty {
  double a1 = 0.0;
  double a2 = 0.0;
  double beta = 1.0;
};

struct ControlJacobians {
  Matrix state;  // m x n
  Matrix param;  // m x p
};

// State entries and control entries through which matched uncertainty
// enters, for L1 augmentation.
struct MatchedChannel {
  std::vector<int> state_index;
  std::vector<int> control_index;
};

// A plant model f_c(x, u), its feedback controller h(x, xd, theta) and the
// Jacobians sensitivity propagation consumes. `rate` is the nominal model;
// `plant_rate` is the "physical" one with uncertainty injected.
template <class S>
concept SystemModel = requires(const S& s, const StateVector& x,
                               const ControlVector& u, const DesiredState& d,
                               const ParamVector& theta, double t,
                               const Uncertainty& unc) {
  { s.state_dim() } -> std::convertible_to<int>;
  { s.control_dim() } -> std::convertible_to<int>;
  { s.param_dim() } -> std::convertible_to<int>;
  { s.rate(x, u) } -> std::convertible_to<StateVector>;
  { s.rate_jacobian_state(x, u) } -> std::convertible_to<Matrix>;
  { s.rate_jacobian_control(x, u) } -> std::convertible_to<Matrix>;
  { s.control(x, d, theta) } -> std::convertible_to<ControlVector>;
  { s.control_jacobians(x, d, theta) } -> std::convertible_to<ControlJacobians>;
  { s.plant_rate(x, u, t, unc) } -> std::convertible_to<StateVector>;
  { s.project_plant_state(x) } -> std::convertible_to<StateVector>;
  { s.position_index() } -> std::convertible_to<std::vector<int>>;
  { s.matched_channel() } -> std::convertible_to<MatchedChannel>;
  { s.matched_drift(x) } -> std::convertible_to<Eigen::VectorXd>;
  { s.matched_input(x) } -> std::convertible_to<Matrix>;
};

// Forward-Euler map x + dt * f_c(x, u); the discrete dynamics whose
// Jacobians feed sensitivity propagation.
template <SystemModel S>
StateVector discrete_step(const S& model, const StateVector& x,
                          const ControlVector& u, double dt) {
  if (dt < 0.0) throw Error("discrete_step: dt must be non-negative");
  if (dt == 0.0) return x;
  return x + dt * model.rate(x, u);
}

struct StepMapJacobians {
  Matrix state;    // I + dt * d f_c / dx
  Matrix control;  // dt * d f_c / du
};

template <SystemModel S>
StepMapJacobians discrete_step_jacobians(const S& model, const StateVector& x,
                                         const ControlVector& u, double dt) {
  StepMapJacobians j;
  j.state = dt * model.rate_jacobian_state(x, u);
  j.state.diagonal().array() += 1.0;
  j.control = dt * model.rate_jacobian_control(x, u);
  return j;
}

}  // namespace sensitune

#endif  // SENSITUNE_SYSTEMS_SYSTEM_HPP_
