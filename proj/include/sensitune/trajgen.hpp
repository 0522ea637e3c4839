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

// Desired-trajectory library. Every curve is given in closed form together
// with its first three time derivatives, from which heading, speed, yaw rate
// and the acceleration feedforward are derived analytically.

#ifndef SENSITUNE_TRAJGEN_HPP_
#define SENSITUNE_TRAJGEN_HPP_

#include <array>
#include <cmath>
#include <complex>
#include <functional>
#include <limits>
#include <string>
#include <string_view>
#include <vector>

#include "sensitune/core.hpp"

namespace sensitune {

struct Trajectory {
  std::string name;
  std::function<DesiredState(double)> at;
};

// ---------------------------------------------------------------------------
// Quadrotor

// p(t) = (2(1 - cos t), 2(cos t - 1), 0) with yaw held at zero.
inline DesiredState quadrotor_circle(double t) {
  using L = layout::Quadrotor;
  DesiredState d{StateVector::Zero(L::kStateDim),
                 Eigen::VectorXd::Zero(L::kFeedforwardDim)};
  const double c = std::cos(t);
  const double s = std::sin(t);
  d.state.segment<3>(L::kPos) = Vec3(2.0 * (1.0 - c), 2.0 * (c - 1.0), 0.0);
  d.state.segment<3>(L::kVel) = Vec3(2.0 * s, -2.0 * s, 0.0);
  d.state.segment<9>(L::kRot) = flatten_rotation(Mat3::Identity());
  d.feedforward.segment<3>(L::kFfAccel) = Vec3(2.0 * c, -2.0 * c, 0.0);
  d.feedforward[L::kFfYaw] = 0.0;
  return d;
}

inline Trajectory make_quadrotor_circle() {
  return {"circle", [](double t) { return quadrotor_circle(t); }};
}

// ---------------------------------------------------------------------------
// Dubins car

enum class CurveFamily { kCircle, kEllipse, kLemon, kPeanut, kSpiral, kTwist };

inline std::string_view to_string(CurveFamily f) {
  switch (f) {
    case CurveFamily::kCircle: return "circle";
    case CurveFamily::kEllipse: return "ellipse";
    case CurveFamily::kLemon: return "lemon";
    case CurveFamily::kPeanut: return "peanut";
    case CurveFamily::kSpiral: return "spiral";
    case CurveFamily::kTwist: return "twist";
  }
  return "unknown";
}

inline CurveFamily curve_family_from_string(std::string_view s) {
  for (auto f : {CurveFamily::kCircle, CurveFamily::kEllipse, CurveFamily::kLemon,
                 CurveFamily::kPeanut, CurveFamily::kSpiral, CurveFamily::kTwist}) {
    if (to_string(f) == s) return f;
  }
  throw Error("unknown curve family '" + std::string(s) + "'");
}

// Shape parameters, interpreted per family:
//   circle  (a = radius, w = angular rate)          (a sin wt, a(1 - cos wt))
//   ellipse (a, b semi-axes, w)                      (a sin wt, b(1 - cos wt))
//   lemon   (a, b, w)                                (a sin wt, b sin wt cos wt)
//   peanut  (a, b, w), polar r = a + b cos 2phi, phi = wt
//   spiral  (a, b, w), polar r = a + b t, phi = wt
//   twist   (a, b, w)                                (a sin 2wt, b sin 3wt)
struct CurveParams {
  double a = 1.0;
  double b = 1.0;
  double w = 1.0;
};

struct DubinsCurve {
  CurveFamily family = CurveFamily::kCircle;
  CurveParams params;
};

// Reference parameters for the four evaluation shapes, scaled so their peak
// linear / angular speeds are roughly (2, 1.3), (2, 1), (1, 5), (2, 3.4).
inline DubinsCurve default_curve(CurveFamily f) {
  switch (f) {
    case CurveFamily::kCircle: return {f, {1.0, 1.0, 1.0}};
    case CurveFamily::kEllipse: return {f, {1.2, 0.9, 0.75}};
    case CurveFamily::kLemon: return {f, {4.1, 3.0, 0.393}};
    case CurveFamily::kPeanut: return {f, {2.22, 0.56, 0.72}};
    case CurveFamily::kSpiral: return {f, {0.01, 0.026, 3.66}};
    case CurveFamily::kTwist: return {f, {1.7, 1.03, 0.436}};
  }
  return {};
}

// Nine circles and ellipses whose peak speeds stay within 1 m/s and 1 rad/s.
inline std::vector<DubinsCurve> dubins_training_set() {
  using F = CurveFamily;
  return {
      {F::kCircle, {1.0, 0.0, 1.0}},    {F::kCircle, {2.0, 0.0, 0.5}},
      {F::kCircle, {0.7, 0.0, 0.9}},    {F::kCircle, {1.5, 0.0, 0.6}},
      {F::kEllipse, {1.0, 0.7, 0.7}},   {F::kEllipse, {1.2, 0.9, 0.75}},
      {F::kEllipse, {0.9, 1.2, 0.75}},  {F::kEllipse, {1.5, 1.0, 0.6}},
      {F::kEllipse, {1.0, 1.4, 0.7}},
  };
}

namespace detail {

// Position and its first three derivatives.
using CurveJet = std::array<Eigen::Vector2d, 4>;

// Sum of terms c exp(i k w t) and their first three derivatives.
inline CurveJet exponential_jet(std::initializer_list<std::pair<std::complex<double>, double>> terms,
                                double w, double t) {
  CurveJet jet;
  for (auto& v : jet) v.setZero();
  for (const auto& [coeff, k] : terms) {
    const std::complex<double> rate(0.0, k * w);
    std::complex<double> z = coeff * std::exp(rate * t);
    for (int n = 0; n < 4; ++n) {
      jet[n] += Eigen::Vector2d(z.real(), z.imag());
      z *= rate;
    }
  }
  return jet;
}

inline CurveJet curve_jet(const DubinsCurve& curve, double t) {
  const double a = curve.params.a;
  const double b = curve.params.b;
  const double w = curve.params.w;
  CurveJet j;
  switch (curve.family) {
    case CurveFamily::kCircle:
    case CurveFamily::kEllipse: {
      const double bb = curve.family == CurveFamily::kCircle ? a : b;
      const double s = std::sin(w * t);
      const double c = std::cos(w * t);
      j[0] = {a * s, bb * (1.0 - c)};
      j[1] = {a * w * c, bb * w * s};
      j[2] = {-a * w * w * s, bb * w * w * c};
      j[3] = {-a * w * w * w * c, -bb * w * w * w * s};
      return j;
    }
    case CurveFamily::kLemon: {
      // (a sin wt, (b/2) sin 2wt)
      const double s1 = std::sin(w * t), c1 = std::cos(w * t);
      const double s2 = std::sin(2 * w * t), c2 = std::cos(2 * w * t);
      const double h = 0.5 * b;
      const double w2 = 2 * w;
      j[0] = {a * s1, h * s2};
      j[1] = {a * w * c1, h * w2 * c2};
      j[2] = {-a * w * w * s1, -h * w2 * w2 * s2};
      j[3] = {-a * w * w * w * c1, -h * w2 * w2 * w2 * c2};
      return j;
    }
    case CurveFamily::kPeanut:
      // (a + b cos 2wt) e^{iwt} = a e^{iwt} + b/2 e^{3iwt} + b/2 e^{-iwt}
      return exponential_jet({{a, 1.0}, {0.5 * b, 3.0}, {0.5 * b, -1.0}}, w, t);
    case CurveFamily::kSpiral: {
      // z = (a + b t) e^{iwt};  z^(n) = [n b (iw)^(n-1) + (a + b t)(iw)^n] e^{iwt}
      const std::complex<double> iw(0.0, w);
      const std::complex<double> e = std::exp(iw * t);
      const double r = a + b * t;
      std::complex<double> pw_prev(0.0, 0.0), pw(1.0, 0.0);
      for (int n = 0; n < 4; ++n) {
        const std::complex<double> z = (double(n) * b * pw_prev + r * pw) * e;
        j[n] = {z.real(), z.imag()};
        pw_prev = pw;
        pw *= iw;
      }
      return j;
    }
    case CurveFamily::kTwist: {
      const double w2 = 2 * w, w3 = 3 * w;
      const double s2 = std::sin(w2 * t), c2 = std::cos(w2 * t);
      const double s3 = std::sin(w3 * t), c3 = std::cos(w3 * t);
      j[0] = {a * s2, b * s3};
      j[1] = {a * w2 * c2, b * w3 * c3};
      j[2] = {-a * w2 * w2 * s2, -b * w3 * w3 * s3};
      j[3] = {-a * w2 * w2 * w2 * c2, -b * w3 * w3 * w3 * c3};
      return j;
    }
  }
  throw Error("unhandled curve family");
}

}  // namespace detail

inline constexpr double kMinimumCurveSpeed = 1e-9;

inline DesiredState dubins_curve(const DubinsCurve& curve, double t) {
  using L = layout::Dubins;
  const detail::CurveJet j = detail::curve_jet(curve, t);
  const Eigen::Vector2d& p = j[0];
  const Eigen::Vector2d& v = j[1];
  const Eigen::Vector2d& a = j[2];
  const Eigen::Vector2d& jerk = j[3];
  const double speed2 = v.squaredNorm();
  const double speed = std::sqrt(speed2);
  if (speed < kMinimumCurveSpeed) {
    throw Error("dubins curve '" + std::string(to_string(curve.family)) +
                "': speed vanishes, heading undefined");
  }
  const double cross_va = v.x() * a.y() - v.y() * a.x();
  const double yaw_rate = cross_va / speed2;
  const double yaw_accel = (v.x() * jerk.y() - v.y() * jerk.x()) / speed2 -
                           2.0 * cross_va * v.dot(a) / (speed2 * speed2);

  DesiredState d{StateVector(L::kStateDim), Eigen::VectorXd(L::kFeedforwardDim)};
  d.state << p.x(), p.y(), std::atan2(v.y(), v.x()), speed, yaw_rate;
  d.feedforward << a.x(), a.y(), yaw_accel;
  return d;
}

inline Trajectory make_dubins_trajectory(const DubinsCurve& curve) {
  return {std::string(to_string(curve.family)),
          [curve](double t) { return dubins_curve(curve, t); }};
}

struct SpeedEnvelope {
  double max_speed = 0.0;
  double max_yaw_rate = 0.0;
  double min_speed = 0.0;
};

// Peak desired linear and angular speed over [0, horizon].
inline SpeedEnvelope speed_envelope(const DubinsCurve& curve, double horizon,
                                    int samples = 10001) {
  using L = layout::Dubins;
  SpeedEnvelope env{0.0, 0.0, std::numeric_limits<double>::infinity()};
  for (int i = 0; i < samples; ++i) {
    const double t = horizon * i / (samples - 1);
    const DesiredState d = dubins_curve(curve, t);
    env.max_speed = std::max(env.max_speed, d.state[L::kSpeed]);
    env.min_speed = std::min(env.min_speed, d.state[L::kSpeed]);
    env.max_yaw_rate = std::max(env.max_yaw_rate, std::abs(d.state[L::kYawRate]));
  }
  return env;
}

}  // namespace sensitune

#endif  // SENSITUNE_TRAJGEN_HPP_
