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

// Shared numeric and domain types.

#ifndef SENSITUNE_CORE_HPP_
#define SENSITUNE_CORE_HPP_

#include <cmath>
#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace sensitune {

using StateVector = Eigen::VectorXd;
using ControlVector = Eigen::VectorXd;
using ParamVector = Eigen::VectorXd;
using RowVector = Eigen::RowVectorXd;
using Matrix = Eigen::MatrixXd;
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

// Base of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Raised when a rollout produces a non-finite state or gradient.
class DivergenceError : public Error {
 public:
  DivergenceError(const std::string& what, long step)
      : Error(what + " (step " + std::to_string(step) + ")"), step_(step) {}
  long step() const { return step_; }

 private:
  long step_;
};

// Raised for bad experiment configuration; names the offending field.
class ConfigError : public Error {
 public:
  ConfigError(std::string field, const std::string& what)
      : Error(field + ": " + what), field_(std::move(field)) {}
  const std::string& field() const { return field_; }

 private:
  std::string field_;
};

inline bool all_finite(const Eigen::Ref<const Matrix>& m) {
  return m.allFinite();
}

// Target of the feedback controller at one time instant. `state` has the
// layout of the owning system's StateVector; `feedforward` carries the extra
// terms the controller consumes (see each system's layout).
struct DesiredState {
  StateVector state;
  Eigen::VectorXd feedforward;
};

// Box of admissible controller parameters.
struct FeasibleBox {
  ParamVector lower;
  ParamVector upper;

  static FeasibleBox uniform(Eigen::Index p, double lo, double hi) {
    return {ParamVector::Constant(p, lo), ParamVector::Constant(p, hi)};
  }

  Eigen::Index size() const { return lower.size(); }

  void validate() const {
    if (lower.size() != upper.size()) {
      throw Error("feasible box bounds have different lengths");
    }
    for (Eigen::Index i = 0; i < lower.size(); ++i) {
      if (!(lower[i] > 0.0)) {
        throw Error("feasible box lower bound must be positive at index " +
                    std::to_string(i));
      }
      if (!(lower[i] < upper[i])) {
        throw Error("feasible box requires lower < upper at index " +
                    std::to_string(i));
      }
    }
  }

  bool contains(const ParamVector& theta) const {
    return theta.size() == lower.size() &&
           (theta.array() >= lower.array()).all() &&
           (theta.array() <= upper.array()).all();
  }
};

// Jacobians of state and control with respect to the controller parameters.
struct SensitivityState {
  Matrix dx_dtheta;  // n x p
  Matrix du_dtheta;  // m x p, empty until the first controller evaluation
};

// Jacobians of one closed-loop step, stored when the reverse oracle needs
// them.
struct StepJacobians {
  Matrix state_dynamics;    // d f / d x   (n x n)
  Matrix control_dynamics;  // d f / d u   (n x m)
  Matrix state_control;     // d h / d x   (m x n)
  Matrix param_control;     // d h / d theta (m x p)
};

// Everything one closed-loop rollout produced, indexed by k = 0..N.
//
// `state` holds the measured state the controller and the loss saw;
// `true_state` holds the plant state. Controls are computed for every k,
// including k = N, but the loss only weights u_0..u_{N-1}, so dL_du[N] is
// zero, as is dL_dx[0].
struct RolloutRecord {
  double dt = 0.0;
  std::vector<double> time;
  std::vector<StateVector> state;
  std::vector<StateVector> true_state;
  std::vector<ControlVector> control;   // baseline controller output
  std::vector<ControlVector> adaptive;  // L1 augmentation (empty if off)
  std::vector<DesiredState> desired;
  std::vector<SensitivityState> sensitivity;
  std::vector<RowVector> dL_dx;
  std::vector<RowVector> dL_du;
  std::vector<StepJacobians> jacobians;  // empty unless requested
  std::vector<int> position_index;
  double loss = 0.0;

  // Number of steps N (the record spans N + 1 samples).
  long steps() const { return static_cast<long>(state.size()) - 1; }
};

// Row-major flattening of a 3x3 rotation.
inline Eigen::Matrix<double, 9, 1> flatten_rotation(const Mat3& r) {
  Eigen::Matrix<double, 9, 1> out;
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) out[3 * i + j] = r(i, j);
  }
  return out;
}

template <typename Derived>
Mat3 unflatten_rotation(const Eigen::MatrixBase<Derived>& flat) {
  Mat3 r;
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) r(i, j) = flat[3 * i + j];
  }
  return r;
}

template <typename Scalar>
Eigen::Matrix<Scalar, 3, 3> hat(const Eigen::Matrix<Scalar, 3, 1>& w) {
  Eigen::Matrix<Scalar, 3, 3> s;
  s << Scalar(0), -w.z(), w.y(),
       w.z(), Scalar(0), -w.x(),
       -w.y(), w.x(), Scalar(0);
  return s;
}

inline constexpr double kSkewTolerance = 1e-9;

// Inverse of hat(). The input is symmetrized before extraction; asymmetry
// beyond kSkewTolerance means the attitude state is corrupted.
inline Vec3 vee(const Mat3& s) {
  if ((s + s.transpose()).norm() > kSkewTolerance) {
    throw Error("vee: matrix is not skew-symmetric (corrupted attitude state)");
  }
  const Mat3 k = 0.5 * (s - s.transpose());
  return {k(2, 1), k(0, 2), k(1, 0)};
}

// Unchecked form used inside differentiated code paths, where the argument
// is skew by construction.
template <typename Scalar>
Eigen::Matrix<Scalar, 3, 1> vee_skew_part(const Eigen::Matrix<Scalar, 3, 3>& s) {
  return Eigen::Matrix<Scalar, 3, 1>(Scalar(0.5) * (s(2, 1) - s(1, 2)),
                                     Scalar(0.5) * (s(0, 2) - s(2, 0)),
                                     Scalar(0.5) * (s(1, 0) - s(0, 1)));
}

// Wraps an angle to (-pi, pi].
inline double wrap_angle(double a) {
  double w = std::remainder(a, 2.0 * M_PI);
  if (w <= -M_PI) w += 2.0 * M_PI;
  return w;
}

// Flat index maps of each system's StateVector. Systems, loss, sensitivity
// and noise code all read positions from here.
namespace layout {

struct Dubins {
  static constexpr int kStateDim = 5;
  static constexpr int kControlDim = 2;
  static constexpr int kParamDim = 4;
  static constexpr int kX = 0, kY = 1, kHeading = 2, kSpeed = 3, kYawRate = 4;
  static constexpr int kForce = 0, kMoment = 1;
  static constexpr int kKp = 0, kKv = 1, kKpsi = 2, kKomega = 3;
  // feedforward: desired acceleration (2) and desired yaw acceleration
  static constexpr int kFfAccel = 0, kFfYawAccel = 2, kFeedforwardDim = 3;
};

struct Quadrotor {
  static constexpr int kStateDim = 18;
  static constexpr int kControlDim = 4;
  static constexpr int kParamDim = 12;
  static constexpr int kPos = 0, kVel = 3, kRot = 6, kOmega = 15;
  static constexpr int kThrust = 0, kMoment = 1;
  static constexpr int kKp = 0, kKv = 3, kKR = 6, kKOmega = 9;
  // feedforward: desired acceleration (3) and desired yaw
  static constexpr int kFfAccel = 0, kFfYaw = 3, kFeedforwardDim = 4;
};

}  // namespace layout
}  // namespace sensitune

#endif  // SENSITUNE_CORE_HPP_
