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

// Quadrotor on SE(3) with a geometric tracking controller.
//
//   state   (p, v, R row-major, Omega)      n = 18
//   control (f, M1, M2, M3)                 m = 4
//   params  (k_p, k_v, k_R, k_Omega), each a 3-vector of per-axis gains
//
// Dynamics, with e3 pointing along gravity:
//   p' = v,  v' = g e3 - (f/m) R e3,  R' = R hat(Omega),
//   Omega' = J^-1 (M - Omega x J Omega)
//
// The controller tracks position with desired angular rate fixed at zero.
// Dynamics Jacobians are closed-form; controller Jacobians come from
// forward-mode dual numbers through the same templated control law.

#ifndef SENSITUNE_SYSTEMS_QUADROTOR_HPP_
#define SENSITUNE_SYSTEMS_QUADROTOR_HPP_

#include <cmath>
#include <vector>

#include <Eigen/Dense>
#include <unsupported/Eigen/AutoDiff>

#include "sensitune/core.hpp"
#include "sensitune/systems/system.hpp"

namespace sensitune {

struct QuadrotorConstants {
  double mass = 4.34;  // kg
  Mat3 inertia = Eigen::Vector3d(0.0820, 0.0845, 0.1377).asDiagonal();
  double gravity = 9.81;  // m/s^2
};

inline constexpr double kAttitudeTolerance = 1e-6;
inline constexpr double kControllerSingularity = 1e-9;

inline double orthonormality_error(const Mat3& r) {
  return (r.transpose() * r - Mat3::Identity()).norm();
}

// Nearest rotation in the Frobenius sense (polar factor).
inline Mat3 nearest_rotation(const Mat3& r) {
  Eigen::JacobiSVD<Mat3> svd(r, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Mat3 q = svd.matrixU() * svd.matrixV().transpose();
  if (q.determinant() < 0.0) {
    Mat3 u = svd.matrixU();
    u.col(2) *= -1.0;
    q = u * svd.matrixV().transpose();
  }
  return q;
}

class Quadrotor {
 public:
  using Layout = layout::Quadrotor;

  Quadrotor() : Quadrotor(QuadrotorConstants{}) {}
  explicit Quadrotor(QuadrotorConstants c) : c_(std::move(c)) {
    if (!(c_.mass > 0.0) || !(c_.gravity >= 0.0)) {
      throw Error("quadrotor: mass must be positive and gravity non-negative");
    }
    if (!c_.inertia.isApprox(c_.inertia.transpose(), 1e-12)) {
      throw Error("quadrotor: inertia must be symmetric");
    }
    Eigen::LLT<Mat3> llt(c_.inertia);
    if (llt.info() != Eigen::Success) {
      throw Error("quadrotor: inertia must be positive definite");
    }
    inertia_inv_ = c_.inertia.inverse();
  }

  const QuadrotorConstants& constants() const { return c_; }

  int state_dim() const { return Layout::kStateDim; }
  int control_dim() const { return Layout::kControlDim; }
  int param_dim() const { return Layout::kParamDim; }

  static Mat3 attitude(const StateVector& x) {
    return unflatten_rotation(x.segment<9>(Layout::kRot));
  }

  // Checked continuous dynamics: rejects attitude blocks that have left
  // SO(3).
  StateVector dynamics(const StateVector& x, const ControlVector& u) const {
    if (orthonormality_error(attitude(x)) > kAttitudeTolerance) {
      throw Error("quadrotor: attitude block is not orthonormal");
    }
    return rate_with_inertia(x, u, c_.inertia, inertia_inv_);
  }

  // Nominal dynamics without the SO(3) check. The Euler-discretized
  // sensitivity model lets R drift off the manifold, so this path must
  // accept it.
  StateVector rate(const StateVector& x, const ControlVector& u) const {
    return rate_with_inertia(x, u, c_.inertia, inertia_inv_);
  }

  Matrix rate_jacobian_state(const StateVector& x, const ControlVector& u) const {
    Matrix j = Matrix::Zero(18, 18);
    const Mat3 r = attitude(x);
    const Vec3 omega = x.segment<3>(Layout::kOmega);
    const double f = u[Layout::kThrust];
    j.block<3, 3>(Layout::kPos, Layout::kVel).setIdentity();
    for (int i = 0; i < 3; ++i) {
      j(Layout::kVel + i, Layout::kRot + 3 * i + 2) = -f / c_.mass;
    }
    const Mat3 w = hat<double>(omega);
    for (int i = 0; i < 3; ++i) {
      for (int col = 0; col < 3; ++col) {
        for (int k = 0; k < 3; ++k) {
          j(Layout::kRot + 3 * i + col, Layout::kRot + 3 * i + k) = w(k, col);
        }
      }
    }
    for (int l = 0; l < 3; ++l) {
      const Mat3 dr = r * hat<double>(Vec3::Unit(l));
      j.block<9, 1>(Layout::kRot, Layout::kOmega + l) = flatten_rotation(dr);
    }
    const Mat3& inertia = c_.inertia;
    j.block<3, 3>(Layout::kOmega, Layout::kOmega) =
        -inertia_inv_ * (w * inertia - hat<double>(inertia * omega));
    return j;
  }

  Matrix rate_jacobian_control(const StateVector& x, const ControlVector&) const {
    Matrix j = Matrix::Zero(18, 4);
    j.block<3, 1>(Layout::kVel, Layout::kThrust) =
        -attitude(x).col(2) / c_.mass;
    j.block<3, 3>(Layout::kOmega, Layout::kMoment) = inertia_inv_;
    return j;
  }

  ControlVector control(const StateVector& x, const DesiredState& d,
                        const ParamVector& theta) const {
    return control_law<double>(x, d, theta);
  }

  ControlJacobians control_jacobians(const StateVector& x, const DesiredState& d,
                                     const ParamVector& theta) const {
    using Dual = Eigen::AutoDiffScalar<Eigen::Matrix<double, 30, 1>>;
    Eigen::Matrix<Dual, 18, 1> xs;
    Eigen::Matrix<Dual, 12, 1> ths;
    for (int i = 0; i < 18; ++i) xs[i] = Dual(x[i], 30, i);
    for (int i = 0; i < 12; ++i) ths[i] = Dual(theta[i], 30, 18 + i);
    const Eigen::Matrix<Dual, 4, 1> u = control_law<Dual>(xs, d, ths);
    ControlJacobians j{Matrix(4, 18), Matrix(4, 12)};
    for (int r = 0; r < 4; ++r) {
      j.state.row(r) = u[r].derivatives().head<18>().transpose();
      j.param.row(r) = u[r].derivatives().tail<12>().transpose();
    }
    return j;
  }

  // Physical plant: the true inertia is beta * J.
  StateVector plant_rate(const StateVector& x, const ControlVector& u, double,
                         const Uncertainty& unc) const {
    if (unc.beta == 1.0) return rate(x, u);
    if (!(unc.beta > 0.0)) throw Error("quadrotor: beta must be positive");
    const Mat3 inertia = unc.beta * c_.inertia;
    return rate_with_inertia(x, u, inertia, inertia_inv_ / unc.beta);
  }

  // Polar re-orthonormalization of the plant attitude. An attitude that has
  // drifted beyond kAttitudeTolerance is treated as corrupted.
  StateVector project_plant_state(const StateVector& x) const {
    const Mat3 r = attitude(x);
    if (orthonormality_error(r) > kAttitudeTolerance) {
      throw Error("quadrotor: plant attitude left SO(3)");
    }
    StateVector out = x;
    out.segment<9>(Layout::kRot) = flatten_rotation(nearest_rotation(r));
    return out;
  }

  std::vector<int> position_index() const {
    return {Layout::kPos, Layout::kPos + 1, Layout::kPos + 2};
  }

  // Moments act on Omega through J^-1.
  MatchedChannel matched_channel() const {
    return {{Layout::kOmega, Layout::kOmega + 1, Layout::kOmega + 2},
            {Layout::kMoment, Layout::kMoment + 1, Layout::kMoment + 2}};
  }

  Eigen::VectorXd matched_drift(const StateVector& x) const {
    const Vec3 omega = x.segment<3>(Layout::kOmega);
    return -inertia_inv_ * omega.cross(c_.inertia * omega);
  }

  Matrix matched_input(const StateVector&) const { return inertia_inv_; }

  // Geometric tracking law, templated so dual numbers can flow through it.
  template <typename Scalar, typename StateT, typename ParamT>
  Eigen::Matrix<Scalar, 4, 1> control_law(const StateT& x, const DesiredState& d,
                                          const ParamT& theta) const {
    using V3 = Eigen::Matrix<Scalar, 3, 1>;
    using M3 = Eigen::Matrix<Scalar, 3, 3>;
    using std::cos;
    using std::sin;
    using std::sqrt;

    const V3 p = x.template segment<3>(Layout::kPos);
    const V3 v = x.template segment<3>(Layout::kVel);
    M3 r;
    for (int i = 0; i < 3; ++i) {
      for (int j = 0; j < 3; ++j) r(i, j) = x[Layout::kRot + 3 * i + j];
    }
    const V3 omega = x.template segment<3>(Layout::kOmega);
    const V3 kp = theta.template segment<3>(Layout::kKp);
    const V3 kv = theta.template segment<3>(Layout::kKv);
    const V3 kr = theta.template segment<3>(Layout::kKR);
    const V3 kw = theta.template segment<3>(Layout::kKOmega);

    const V3 p_d = d.state.template segment<3>(Layout::kPos).template cast<Scalar>();
    const V3 v_d = d.state.template segment<3>(Layout::kVel).template cast<Scalar>();
    const V3 a_d =
        d.feedforward.template segment<3>(Layout::kFfAccel).template cast<Scalar>();
    const double yaw_d = d.feedforward[Layout::kFfYaw];

    const V3 e_p = p - p_d;
    const V3 e_v = v - v_d;
    const V3 a_cmd = a_d - kp.cwiseProduct(e_p) - kv.cwiseProduct(e_v);
    const V3 e3 = V3::UnitZ();
    const V3 force = Scalar(c_.mass) * (Scalar(c_.gravity) * e3 - a_cmd);
    const Scalar thrust = force.dot(r.col(2));

    const Scalar force_norm = sqrt(force.dot(force));
    if (force_norm < kControllerSingularity) {
      throw Error("geometric controller: commanded force vanishes (free fall)");
    }
    const V3 b3 = force / force_norm;
    const V3 b1c(Scalar(cos(yaw_d)), Scalar(sin(yaw_d)), Scalar(0));
    const V3 c = b3.cross(b1c);
    const Scalar c_norm = sqrt(c.dot(c));
    if (c_norm < kControllerSingularity) {
      throw Error("geometric controller: heading parallel to thrust axis");
    }
    const V3 b2 = c / c_norm;
    const V3 b1 = b2.cross(b3);
    M3 r_d;
    r_d.col(0) = b1;
    r_d.col(1) = b2;
    r_d.col(2) = b3;

    const M3 err = r_d.transpose() * r - r.transpose() * r_d;
    const V3 e_r = vee_skew_part<Scalar>(err);
    const M3 inertia = c_.inertia.template cast<Scalar>();
    const V3 moment = -kr.cwiseProduct(e_r) - kw.cwiseProduct(omega) +
                      omega.cross(inertia * omega);

    Eigen::Matrix<Scalar, 4, 1> u;
    u << thrust, moment;
    return u;
  }

 private:
  StateVector rate_with_inertia(const StateVector& x, const ControlVector& u,
                                const Mat3& inertia, const Mat3& inertia_inv) const {
    const Mat3 r = attitude(x);
    const Vec3 omega = x.segment<3>(Layout::kOmega);
    const Vec3 moment = u.segment<3>(Layout::kMoment);
    StateVector dx(18);
    dx.segment<3>(Layout::kPos) = x.segment<3>(Layout::kVel);
    dx.segment<3>(Layout::kVel) = c_.gravity * Vec3::UnitZ() -
                                  (u[Layout::kThrust] / c_.mass) * r.col(2);
    dx.segment<9>(Layout::kRot) = flatten_rotation(r * hat<double>(omega));
    dx.segment<3>(Layout::kOmega) =
        inertia_inv * (moment - omega.cross(inertia * omega));
    return dx;
  }

  QuadrotorConstants c_;
  Mat3 inertia_inv_;
};

static_assert(SystemModel<Quadrotor>);

}  // namespace sensitune

#endif  // SENSITUNE_SYSTEMS_QUADROTOR_HPP_
