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

// L1 adaptive augmentation for matched uncertainty
//
//   z' = f_z(x) + B(x) (u + u_ad + sigma)
//
// where z is the matched subsystem. A state predictor with Hurwitz error
// dynamics A_s runs alongside the plant; once per adaptation period T_s the
// estimate is reset by the piecewise-constant law
//
//   sigma_hat = -B^+ Phi^-1 e^{A_s T_s} (z_pred - z),
//   Phi = A_s^-1 (e^{A_s T_s} - I),
//
// and u_ad = -C(s) sigma_hat with C(s) a unit-DC-gain first-order low-pass
// filter, discretized exactly.

#ifndef SENSITUNE_L1AC_HPP_
#define SENSITUNE_L1AC_HPP_

#include <cmath>

#include "sensitune/core.hpp"
#include "sensitune/systems/system.hpp"

namespace sensitune {

struct L1Config {
  double bandwidth = 20.0;          // rad/s
  double predictor_pole = -10.0;    // diagonal entry of A_s
  double adaptation_period = 0.0;   // s; 0 means "once per control step"

  void validate() const {
    if (!(bandwidth > 0.0)) throw Error("l1: bandwidth must be positive");
    if (!(predictor_pole < 0.0)) throw Error("l1: predictor pole must be negative");
    if (!(adaptation_period >= 0.0)) {
      throw Error("l1: adaptation period must be non-negative");
    }
  }
};

struct L1State {
  Eigen::VectorXd predictor;
  Eigen::VectorXd sigma_hat;
  Eigen::VectorXd u_ad;
  Eigen::VectorXd lpf;
  double since_adaptation = 0.0;
  bool initialized = false;
};

// One step of the first-order filter y' = bandwidth (input - y), exact for
// piecewise-constant input.
inline Eigen::VectorXd low_pass_step(const Eigen::VectorXd& y,
                                     const Eigen::VectorXd& input,
                                     double bandwidth, double dt) {
  const double decay = std::exp(-bandwidth * dt);
  return decay * y + (1.0 - decay) * input;
}

// Scalar Phi^-1 e^{a T} for diagonal A_s = a I.
inline double adaptation_gain(double pole, double period) {
  const double e = std::exp(pole * period);
  const double phi = (e - 1.0) / pole;
  if (!(std::abs(phi) > 0.0) || !std::isfinite(phi)) {
    throw Error("l1: Phi is singular");
  }
  return e / phi;
}

template <SystemModel S>
Eigen::VectorXd l1_update(L1State& l1, const StateVector& x_measured,
                          const ControlVector& u_baseline, const S& model,
                          const L1Config& cfg, double dt) {
  const MatchedChannel channel = model.matched_channel();
  const auto q = static_cast<Eigen::Index>(channel.state_index.size());
  const double period = cfg.adaptation_period > 0.0 ? cfg.adaptation_period : dt;
  if (dt > period * (1.0 + 1e-12)) {
    throw Error("l1: control period exceeds the adaptation period");
  }

  Eigen::VectorXd z(q);
  Eigen::VectorXd u_matched(static_cast<Eigen::Index>(channel.control_index.size()));
  for (Eigen::Index i = 0; i < q; ++i) z[i] = x_measured[channel.state_index[i]];
  for (Eigen::Index i = 0; i < u_matched.size(); ++i) {
    u_matched[i] = u_baseline[channel.control_index[i]];
  }

  if (!l1.initialized) {
    l1.predictor = z;
    l1.sigma_hat = Eigen::VectorXd::Zero(u_matched.size());
    l1.lpf = Eigen::VectorXd::Zero(u_matched.size());
    l1.u_ad = Eigen::VectorXd::Zero(u_matched.size());
    l1.since_adaptation = period;
    l1.initialized = true;
  }

  const Matrix b = model.matched_input(x_measured);
  const Eigen::VectorXd z_tilde = l1.predictor - z;

  if (l1.since_adaptation >= period * (1.0 - 1e-9)) {
    const double gain = adaptation_gain(cfg.predictor_pole, period);
    l1.sigma_hat = -b.completeOrthogonalDecomposition().solve(gain * z_tilde);
    l1.since_adaptation = 0.0;
  }
  l1.since_adaptation += dt;

  l1.lpf = low_pass_step(l1.lpf, l1.sigma_hat, cfg.bandwidth, dt);
  l1.u_ad = -l1.lpf;

  l1.predictor += dt * (model.matched_drift(x_measured) +
                        b * (u_matched + l1.u_ad + l1.sigma_hat) +
                        cfg.predictor_pole * z_tilde);
  return l1.u_ad;
}

}  // namespace sensitune

#endif  // SENSITUNE_L1AC_HPP_
