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

// Closed-loop rollout engine.
//
// Each control period the true plant state is measured (with optional
// Gaussian noise), the controller and the optional L1 augmentation act on
// the measurement, sensitivities are propagated through the Euler-discretized
// nominal model at the measured state, and the physical plant (with injected
// uncertainty) is advanced by the configured integrator under a zero-order
// hold.
//
// With an Euler plant and no noise or uncertainty the plant and the
// sensitivity model are the same map, so the propagated gradient is exact up
// to round-off ("graph-consistent" mode).

#ifndef SENSITUNE_SIM_HPP_
#define SENSITUNE_SIM_HPP_

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <boost/numeric/odeint.hpp>

#include "sensitune/core.hpp"
#include "sensitune/l1ac.hpp"
#include "sensitune/loss.hpp"
#include "sensitune/rng.hpp"
#include "sensitune/sensprop.hpp"
#include "sensitune/systems/system.hpp"
#include "sensitune/trajgen.hpp"

namespace sensitune {

enum class PlantIntegrator { kEuler, kRk4, kAdaptive };

inline std::string_view to_string(PlantIntegrator m) {
  switch (m) {
    case PlantIntegrator::kEuler: return "euler";
    case PlantIntegrator::kRk4: return "rk4";
    case PlantIntegrator::kAdaptive: return "adaptive";
  }
  return "unknown";
}

inline PlantIntegrator plant_integrator_from_string(std::string_view s) {
  for (auto m : {PlantIntegrator::kEuler, PlantIntegrator::kRk4,
                 PlantIntegrator::kAdaptive}) {
    if (to_string(m) == s) return m;
  }
  throw Error("unknown plant integrator '" + std::string(s) + "'");
}

struct SimConfig {
  double dt = 0.01;
  double horizon = 10.0;
  PlantIntegrator plant = PlantIntegrator::kAdaptive;
  double adaptive_tolerance = 1e-8;
  Eigen::VectorXd noise_std;  // per state entry; empty means noise-free
  Uncertainty uncertainty;
  std::uint64_t seed = 0;

  long steps() const {
    const double n = horizon / dt;
    const long rounded = std::lround(n);
    if (!(dt > 0.0) || rounded < 1 || std::abs(n - rounded) > 1e-9 * n) {
      throw Error("sim: horizon / dt must be a positive integer");
    }
    return rounded;
  }

  void validate() const {
    steps();
    if ((noise_std.array() < 0.0).any()) {
      throw Error("sim: noise standard deviations must be non-negative");
    }
    if (!(uncertainty.beta > 0.0)) throw Error("sim: beta must be positive");
    if (!(adaptive_tolerance > 0.0)) {
      throw Error("sim: adaptive tolerance must be positive");
    }
  }

  bool graph_consistent() const {
    return plant == PlantIntegrator::kEuler && uncertainty.a1 == 0.0 &&
           uncertainty.a2 == 0.0 && uncertainty.beta == 1.0 &&
           (noise_std.size() == 0 || (noise_std.array() == 0.0).all());
  }
};

struct RolloutOptions {
  bool sensitivities = true;      // false: loss-only rollout
  bool store_jacobians = false;   // needed by the reverse oracle
  std::uint64_t stream = 0;       // noise stream within sim seed
};

// x_true plus zero-mean Gaussian noise on entries with a positive standard
// deviation.
inline StateVector add_measurement_noise(const StateVector& x_true,
                                         const Eigen::VectorXd& noise_std,
                                         CounterRng& rng) {
  if (noise_std.size() == 0) return x_true;
  if (noise_std.size() != x_true.size()) {
    throw Error("noise vector length does not match the state");
  }
  StateVector x = x_true;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    if (noise_std[i] > 0.0) x[i] += noise_std[i] * rng.normal();
  }
  return x;
}

// Advances the physical plant by dt under constant input u. Non-Euler plants
// are projected back onto the model's state manifold after the step.
template <SystemModel S>
StateVector integrate_plant(const S& model, const StateVector& x,
                            const ControlVector& u, double t, double dt,
                            PlantIntegrator method, const Uncertainty& unc,
                            double tolerance = 1e-8) {
  if (!(dt > 0.0)) throw Error("integrate_plant: dt must be positive");
  if (method == PlantIntegrator::kEuler) {
    return x + dt * model.plant_rate(x, u, t, unc);
  }

  namespace odeint = boost::numeric::odeint;
  using Buffer = std::vector<double>;
  const auto n = x.size();
  auto rhs = [&](const Buffer& y, Buffer& dy, double time) {
    const StateVector xs = Eigen::Map<const StateVector>(y.data(), n);
    const StateVector r = model.plant_rate(xs, u, time, unc);
    Eigen::Map<StateVector>(dy.data(), n) = r;
  };
  Buffer y(x.data(), x.data() + n);
  if (method == PlantIntegrator::kRk4) {
    odeint::runge_kutta4<Buffer> stepper;
    stepper.do_step(rhs, y, t, dt);
  } else {
    try {
      odeint::integrate_adaptive(
          odeint::make_controlled<odeint::runge_kutta_dopri5<Buffer>>(tolerance,
                                                                      tolerance),
          rhs, y, t, t + dt, dt);
    } catch (const odeint::odeint_error& e) {
      throw Error(std::string("integrate_plant: adaptive step underflow: ") +
                  e.what());
    }
  }
  return model.project_plant_state(Eigen::Map<const StateVector>(y.data(), n));
}

// Runs the closed loop for N = horizon / dt steps from `x0`.
template <SystemModel S>
RolloutRecord rollout(const S& model, const Trajectory& trajectory,
                      const StateVector& x0, const ParamVector& theta,
                      const SimConfig& cfg, const LossSpec& loss,
                      const std::optional<L1Config>& l1_cfg = std::nullopt,
                      const RolloutOptions& opts = {}) {
  const long steps = cfg.steps();
  const Eigen::Index n = model.state_dim();
  const Eigen::Index m = model.control_dim();
  const Eigen::Index p = model.param_dim();
  if (x0.size() != n) throw Error("rollout: initial state has wrong length");
  if (theta.size() != p) throw Error("rollout: parameter vector has wrong length");
  if (loss.selector.size() != n) throw Error("rollout: loss selector has wrong length");

  RolloutRecord rec;
  rec.dt = cfg.dt;
  rec.position_index = model.position_index();
  const auto samples = static_cast<std::size_t>(steps + 1);
  rec.time.reserve(samples);
  rec.state.reserve(samples);
  rec.true_state.reserve(samples);
  rec.control.reserve(samples);
  rec.desired.reserve(samples);
  if (opts.sensitivities) {
    rec.sensitivity.reserve(samples);
    rec.dL_dx.reserve(samples);
    rec.dL_du.reserve(samples);
  }
  if (opts.store_jacobians) rec.jacobians.reserve(samples);

  CounterRng rng(cfg.seed, opts.stream);
  L1State l1;
  const MatchedChannel channel = model.matched_channel();
  SensitivityState sens = init_sensitivity(n, p);
  StateVector x_true = x0;

  for (long k = 0; k <= steps; ++k) {
    const double t = k * cfg.dt;
    if (!x_true.allFinite()) throw DivergenceError("rollout: non-finite state", k);
    const DesiredState d = trajectory.at(t);
    const StateVector x = add_measurement_noise(x_true, cfg.noise_std, rng);

    ControlVector u;
    try {
      u = model.control(x, d, theta);
    } catch (const Error& e) {
      throw DivergenceError(std::string("rollout: ") + e.what(), k);
    }
    if (!u.allFinite()) throw DivergenceError("rollout: non-finite control", k);

    rec.time.push_back(t);
    rec.state.push_back(x);
    rec.true_state.push_back(x_true);
    rec.control.push_back(u);
    rec.desired.push_back(d);

    if (opts.sensitivities) {
      const ControlJacobians cj = model.control_jacobians(x, d, theta);
      const StepMapJacobians fj = discrete_step_jacobians(model, x, u, cfg.dt);
      SensitivityState next = propagate(sens, fj.state, fj.control, cj.state, cj.param);
      LossPartials lp = loss_partials(x, d.state, u, loss);
      if (k == 0) lp.dL_dx.setZero();
      if (k == steps) lp.dL_du.setZero();
      rec.sensitivity.push_back({sens.dx_dtheta, next.du_dtheta});
      rec.dL_dx.push_back(std::move(lp.dL_dx));
      rec.dL_du.push_back(std::move(lp.dL_du));
      if (opts.store_jacobians) {
        rec.jacobians.push_back({fj.state, fj.control, cj.state, cj.param});
      }
      sens.dx_dtheta = std::move(next.dx_dtheta);
    }

    if (k == steps) break;

    ControlVector u_total = u;
    if (l1_cfg) {
      const Eigen::VectorXd u_ad = l1_update(l1, x, u, model, *l1_cfg, cfg.dt);
      for (std::size_t i = 0; i < channel.control_index.size(); ++i) {
        u_total[channel.control_index[i]] += u_ad[static_cast<Eigen::Index>(i)];
      }
      rec.adaptive.push_back(u_ad);
    }
    try {
      x_true = integrate_plant(model, x_true, u_total, t, cfg.dt, cfg.plant,
                               cfg.uncertainty, cfg.adaptive_tolerance);
    } catch (const Error& e) {
      throw DivergenceError(std::string("rollout: ") + e.what(), k + 1);
    }
  }

  rec.loss = loss_total(rec, loss);
  if (!std::isfinite(rec.loss)) throw DivergenceError("rollout: non-finite loss", steps);
  return rec;
}

// Root-mean-square position tracking error over k = 1..N, on the recorded
// (measured) states.
inline double rmse_position(const RolloutRecord& record) {
  const long n = record.steps();
  if (n < 1 || record.desired.size() != record.state.size()) {
    throw Error("rmse_position: incomplete rollout record");
  }
  double sum = 0.0;
  for (long k = 1; k <= n; ++k) {
    for (int i : record.position_index) {
      const double e = record.state[k][i] - record.desired[k].state[i];
      sum += e * e;
    }
  }
  return std::sqrt(sum / static_cast<double>(n));
}

}  // namespace sensitune

#endif  // SENSITUNE_SIM_HPP_
