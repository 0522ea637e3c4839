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

// Dubins car with force/moment inputs and its PD tracking controller.
//
//   state   (x, y, psi, v, omega)
//   control (F, M)
//   params  (k_p, k_v, k_psi, k_omega)
//
// Dynamics: x' = v cos(psi), y' = v sin(psi), psi' = omega, v' = F/m,
// omega' = M/J. The controller is
//   F = m (k_p e_p + k_v e_v + a_d) . q,   q = (cos psi, sin psi)
//   M = J (k_psi e_psi + k_omega e_omega + alpha_d)
// with e_p = p_d - p, e_v = v_d q_d - v q, e_psi = wrap(psi_d - psi),
// e_omega = omega_d - omega. All Jacobians are closed-form.

#ifndef SENSITUNE_SYSTEMS_DUBINS_HPP_
#define SENSITUNE_SYSTEMS_DUBINS_HPP_

#include <cmath>
#include <vector>

#include "sensitune/core.hpp"
#include "sensitune/systems/system.hpp"

namespace sensitune {

struct DubinsConstants {
  double mass = 1.0;     // kg
  double inertia = 1.0;  // kg m^2
};

class DubinsCar {
 public:
  using Layout = layout::Dubins;

  DubinsCar() = default;
  explicit DubinsCar(DubinsConstants c) : c_(c) {
    if (!(c_.mass > 0.0) || !(c_.inertia > 0.0)) {
      throw Error("dubins: mass and inertia must be positive");
    }
  }

  const DubinsConstants& constants() const { return c_; }

  int state_dim() const { return Layout::kStateDim; }
  int control_dim() const { return Layout::kControlDim; }
  int param_dim() const { return Layout::kParamDim; }

  StateVector rate(const StateVector& x, const ControlVector& u) const {
    StateVector dx(5);
    const double psi = x[Layout::kHeading];
    const double v = x[Layout::kSpeed];
    dx << v * std::cos(psi), v * std::sin(psi), x[Layout::kYawRate],
        u[Layout::kForce] / c_.mass, u[Layout::kMoment] / c_.inertia;
    return dx;
  }

  Matrix rate_jacobian_state(const StateVector& x, const ControlVector&) const {
    Matrix j = Matrix::Zero(5, 5);
    const double psi = x[Layout::kHeading];
    const double v = x[Layout::kSpeed];
    j(0, 2) = -v * std::sin(psi);
    j(0, 3) = std::cos(psi);
    j(1, 2) = v * std::cos(psi);
    j(1, 3) = std::sin(psi);
    j(2, 4) = 1.0;
    return j;
  }

  Matrix rate_jacobian_control(const StateVector&, const ControlVector&) const {
    Matrix j = Matrix::Zero(5, 2);
    j(3, 0) = 1.0 / c_.mass;
    j(4, 1) = 1.0 / c_.inertia;
    return j;
  }

  ControlVector control(const StateVector& x, const DesiredState& d,
                        const ParamVector& theta) const {
    const Errors e = errors(x, d);
    const Eigen::Vector2d a = theta[Layout::kKp] * e.pos +
                              theta[Layout::kKv] * e.vel + e.accel_ff;
    ControlVector u(2);
    u[Layout::kForce] = c_.mass * a.dot(e.heading);
    u[Layout::kMoment] =
        c_.inertia * (theta[Layout::kKpsi] * e.yaw +
                      theta[Layout::kKomega] * e.yaw_rate + e.yaw_accel_ff);
    return u;
  }

  ControlJacobians control_jacobians(const StateVector& x, const DesiredState& d,
                                     const ParamVector& theta) const {
    const Errors e = errors(x, d);
    const double kp = theta[Layout::kKp];
    const double kv = theta[Layout::kKv];
    const Eigen::Vector2d a = kp * e.pos + kv * e.vel + e.accel_ff;
    const Eigen::Vector2d q = e.heading;
    const Eigen::Vector2d q_perp(-q.y(), q.x());
    const double m = c_.mass;
    const double inertia = c_.inertia;

    ControlJacobians j{Matrix::Zero(2, 5), Matrix::Zero(2, 4)};
    j.state(0, Layout::kX) = -m * kp * q.x();
    j.state(0, Layout::kY) = -m * kp * q.y();
    // d(e_v)/dpsi = -v q_perp is orthogonal to q, so only dq/dpsi survives.
    j.state(0, Layout::kHeading) = m * a.dot(q_perp);
    j.state(0, Layout::kSpeed) = -m * kv;
    j.state(1, Layout::kHeading) = -inertia * theta[Layout::kKpsi];
    j.state(1, Layout::kYawRate) = -inertia * theta[Layout::kKomega];

    j.param(0, Layout::kKp) = m * e.pos.dot(q);
    j.param(0, Layout::kKv) = m * e.vel.dot(q);
    j.param(1, Layout::kKpsi) = inertia * e.yaw;
    j.param(1, Layout::kKomega) = inertia * e.yaw_rate;
    return j;
  }

  StateVector plant_rate(const StateVector& x, const ControlVector& u, double t,
                         const Uncertainty& unc) const {
    StateVector dx = rate(x, u);
    dx[Layout::kSpeed] += 0.1 * unc.a1 * std::sin(t) / c_.mass;
    dx[Layout::kYawRate] += 0.1 * unc.a2 * std::cos(t) / c_.inertia;
    return dx;
  }

  StateVector project_plant_state(const StateVector& x) const { return x; }

  std::vector<int> position_index() const { return {Layout::kX, Layout::kY}; }

  // Force and moment act on (v, omega) through diag(1/m, 1/J).
  MatchedChannel matched_channel() const {
    return {{Layout::kSpeed, Layout::kYawRate},
            {Layout::kForce, Layout::kMoment}};
  }

  Eigen::VectorXd matched_drift(const StateVector&) const {
    return Eigen::VectorXd::Zero(2);
  }

  Matrix matched_input(const StateVector&) const {
    Matrix b = Matrix::Zero(2, 2);
    b(0, 0) = 1.0 / c_.mass;
    b(1, 1) = 1.0 / c_.inertia;
    return b;
  }

 private:
  struct Errors {
    Eigen::Vector2d pos;
    Eigen::Vector2d vel;
    Eigen::Vector2d heading;
    Eigen::Vector2d accel_ff;
    double yaw;
    double yaw_rate;
    double yaw_accel_ff;
  };

  static Errors errors(const StateVector& x, const DesiredState& d) {
    const auto& xd = d.state;
    Errors e;
    const double psi = x[Layout::kHeading];
    e.heading = {std::cos(psi), std::sin(psi)};
    const double psi_d = xd[Layout::kHeading];
    const Eigen::Vector2d heading_d(std::cos(psi_d), std::sin(psi_d));
    e.pos = {xd[Layout::kX] - x[Layout::kX], xd[Layout::kY] - x[Layout::kY]};
    e.vel = xd[Layout::kSpeed] * heading_d - x[Layout::kSpeed] * e.heading;
    e.yaw = wrap_angle(psi_d - psi);
    e.yaw_rate = xd[Layout::kYawRate] - x[Layout::kYawRate];
    e.accel_ff = {d.feedforward[Layout::kFfAccel],
                  d.feedforward[Layout::kFfAccel + 1]};
    e.yaw_accel_ff = d.feedforward[Layout::kFfYawAccel];
    return e;
  }

  DubinsConstants c_;
};

static_assert(SystemModel<DubinsCar>);

}  // namespace sensitune

#endif  // SENSITUNE_SYSTEMS_DUBINS_HPP_
