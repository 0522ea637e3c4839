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

// Dubins car, scalar plant and the model-independent pieces: sensitivity
// propagation, loss, optimizer, L1 augmentation, rollouts, trajectories and
// gradient oracles.

#include <cmath>
#include <vector>

#include <gtest/gtest.h>

#include "sensitune/core.hpp"
#include "sensitune/l1ac.hpp"
#include "sensitune/loss.hpp"
#include "sensitune/optim.hpp"
#include "sensitune/rng.hpp"
#include "sensitune/sensprop.hpp"
#include "sensitune/sim.hpp"
#include "sensitune/systems/dubins.hpp"
#include "sensitune/trajgen.hpp"
#include "sensitune/verify.hpp"
#include "support/scalar_system.hpp"

namespace sensitune {
namespace {

using L = layout::Dubins;
using testing::ScalarSystem;
using testing::constant_trajectory;

StateVector vec(std::initializer_list<double> v) {
  StateVector x(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double e : v) x[i++] = e;
  return x;
}

DesiredState dubins_desired(const StateVector& state) {
  return {state, Eigen::VectorXd::Zero(L::kFeedforwardDim)};
}

ParamVector random_param(CounterRng& rng, Eigen::Index p, double lo, double hi) {
  ParamVector th(p);
  for (Eigen::Index i = 0; i < p; ++i) th[i] = lo + (hi - lo) * rng.uniform();
  return th;
}

// Scalar example: x0 = 1, xd = 0, theta = 0.5, one unit step.
SimConfig scalar_sim() {
  SimConfig sim;
  sim.dt = 1.0;
  sim.horizon = 1.0;
  sim.plant = PlantIntegrator::kEuler;
  return sim;
}

LossSpec scalar_loss() { return LossSpec::positions(1, {0}); }

// ---------------------------------------------------------------------------
// Rotations and skew maps

TEST(Rotation, FlattenIdentity) {
  Eigen::Matrix<double, 9, 1> expect;
  expect << 1, 0, 0, 0, 1, 0, 0, 0, 1;
  EXPECT_EQ(flatten_rotation(Mat3::Identity()), expect);
}

TEST(Rotation, FlattenQuarterTurnAboutZ) {
  const Mat3 r = Eigen::AngleAxisd(M_PI / 2, Vec3::UnitZ()).toRotationMatrix();
  Eigen::Matrix<double, 9, 1> expect;
  expect << 0, -1, 0, 1, 0, 0, 0, 0, 1;
  EXPECT_LT((flatten_rotation(r) - expect).norm(), 1e-15);
}

TEST(Rotation, RoundTripIsExact) {
  const Mat3 r = Eigen::AngleAxisd(0.7, Vec3(1, 2, 3).normalized()).toRotationMatrix();
  EXPECT_EQ(unflatten_rotation(flatten_rotation(r)), r);
}

TEST(Skew, HatAndVee) {
  EXPECT_EQ(hat(Vec3(Vec3::Zero())), Mat3::Zero());
  EXPECT_EQ(hat(Vec3(0, 0, 1)) * Vec3(1, 0, 0), Vec3(0, 1, 0));
  EXPECT_EQ(vee(hat(Vec3(1, 2, 3))), Vec3(1, 2, 3));
  EXPECT_THROW(vee(Mat3::Identity()), Error);
}

TEST(Skew, HatIsCrossProduct) {
  CounterRng rng(3, 0);
  for (int i = 0; i < 100; ++i) {
    const Vec3 w(rng.normal(), rng.normal(), rng.normal());
    const Vec3 v(rng.normal(), rng.normal(), rng.normal());
    EXPECT_LT((hat(w) * v - w.cross(v)).norm(), 1e-12);
  }
}

TEST(Angles, WrapIntoHalfOpenInterval) {
  EXPECT_NEAR(wrap_angle(3 * M_PI), M_PI, 1e-12);
  EXPECT_NEAR(wrap_angle(-M_PI), M_PI, 1e-12);
  EXPECT_NEAR(wrap_angle(0.25), 0.25, 0.0);
}

// ---------------------------------------------------------------------------
// Dubins car

TEST(Dubins, DynamicsAlongX) {
  const DubinsCar car;
  EXPECT_EQ(car.rate(vec({0, 0, 0, 1, 0}), vec({0, 0})), vec({1, 0, 0, 0, 0}));
}

TEST(Dubins, DynamicsWithMassAndInertia) {
  const DubinsCar car({2.0, 4.0});
  const StateVector r = car.rate(vec({0, 0, M_PI / 2, 2, 0}), vec({1, 2}));
  EXPECT_LT((r - vec({0, 2, 0, 0.5, 0.5})).norm(), 1e-15);
}

TEST(Dubins, ControllerExamples) {
  const ParamVector th = vec({2, 1, 4, 1});
  const DesiredState at_origin = dubins_desired(vec({0, 0, 0, 0, 0}));
  EXPECT_EQ(DubinsCar().control(vec({0, 0, 0, 0, 0}), at_origin, th), vec({0, 0}));

  // e_p = (1, 0) with heading zero.
  const ControlVector u = DubinsCar().control(vec({0, 0, 0, 0, 0}),
                                              dubins_desired(vec({1, 0, 0, 0, 0})), th);
  EXPECT_DOUBLE_EQ(u[L::kForce], 2.0);

  // e_psi = 0.5, J = 2.
  const ControlVector m = DubinsCar({1.0, 2.0}).control(
      vec({0, 0, 0, 0, 0}), dubins_desired(vec({0, 0, 0.5, 0, 0})), th);
  EXPECT_DOUBLE_EQ(m[L::kMoment], 4.0);
  EXPECT_DOUBLE_EQ(m[L::kForce], 0.0);
}

TEST(Dubins, JacobiansMatchFiniteDifferences) {
  const DubinsCar car({1.3, 0.7});
  CounterRng rng(11, 0);
  const DubinsCurve curve = default_curve(CurveFamily::kPeanut);
  for (int trial = 0; trial < 100; ++trial) {
    const StateVector x = vec({rng.normal(), rng.normal(), 2 * rng.normal(),
                               0.2 + rng.uniform(), rng.normal()});
    const ControlVector u = vec({rng.normal(), rng.normal()});
    const ParamVector th = random_param(rng, 4, 0.5, 10);
    const DesiredState d = dubins_curve(curve, 10 * rng.uniform());

    auto check = [](const Matrix& exact, const Matrix& fd) {
      const double scale = std::max(1.0, fd.cwiseAbs().maxCoeff());
      EXPECT_LT((exact - fd).cwiseAbs().maxCoeff() / scale, 1e-5);
    };
    check(car.rate_jacobian_state(x, u),
          central_difference_jacobian([&](const Eigen::VectorXd& s) { return car.rate(s, u); }, x));
    check(car.rate_jacobian_control(x, u),
          central_difference_jacobian([&](const Eigen::VectorXd& c) { return car.rate(x, c); }, u));
    const ControlJacobians cj = car.control_jacobians(x, d, th);
    check(cj.state, central_difference_jacobian(
                        [&](const Eigen::VectorXd& s) { return car.control(s, d, th); }, x));
    check(cj.param, central_difference_jacobian(
                        [&](const Eigen::VectorXd& p) { return car.control(x, d, p); }, th));
  }
}

TEST(Dubins, UncertaintyAddsForceAndMoment) {
  const DubinsCar car({2.0, 1.0});
  const StateVector x = vec({0, 0, 0, 1, 0});
  const ControlVector u = vec({0, 0});
  const double t = 0.8;
  const StateVector dr = car.plant_rate(x, u, t, {1.0, 0.0, 1.0}) - car.rate(x, u);
  EXPECT_NEAR(dr[L::kSpeed], 0.1 * std::sin(t) / 2.0, 1e-15);
  EXPECT_EQ(dr[L::kYawRate], 0.0);
  const StateVector dm = car.plant_rate(x, u, t, {0.0, 3.0, 1.0}) - car.rate(x, u);
  EXPECT_NEAR(dm[L::kYawRate], 0.3 * std::cos(t), 1e-15);
}

// ---------------------------------------------------------------------------
// Discrete step map

TEST(DiscreteStep, ZeroStepIsIdentity) {
  const StateVector x = vec({1, 2, 3, 4, 5});
  EXPECT_EQ(discrete_step(DubinsCar(), x, vec({1, 1}), 0.0), x);
}

TEST(DiscreteStep, OneEulerStep) {
  const StateVector x1 = discrete_step(DubinsCar(), vec({0, 0, 0, 1, 0}), vec({0, 0}), 0.01);
  EXPECT_LT((x1 - vec({0.01, 0, 0, 1, 0})).norm(), 1e-16);
}

TEST(DiscreteStep, JacobianIsIdentityPlusScaledRate) {
  const DubinsCar car;
  const StateVector x = vec({0.3, -0.2, 0.9, 1.4, -0.3});
  const ControlVector u = vec({0.5, -1.0});
  const double dt = 0.01;
  const StepMapJacobians j = discrete_step_jacobians(car, x, u, dt);
  const Matrix fd = central_difference_jacobian(
      [&](const Eigen::VectorXd& s) { return discrete_step(car, s, u, dt); }, x);
  EXPECT_LT((j.state - fd).cwiseAbs().maxCoeff(), 1e-8);
  EXPECT_LT((j.state - Matrix::Identity(5, 5) - dt * car.rate_jacobian_state(x, u))
                .cwiseAbs()
                .maxCoeff(),
            1e-15);
}

// ---------------------------------------------------------------------------
// Sensitivity propagation

TEST(Sensprop, InitialSensitivityIsZero) {
  EXPECT_EQ(init_sensitivity(5, 4).dx_dtheta, Matrix::Zero(5, 4));
  EXPECT_EQ(init_sensitivity(18, 12).dx_dtheta, Matrix::Zero(18, 12));
}

TEST(Sensprop, ZeroJacobiansGiveZero) {
  const SensitivityState s = propagate(init_sensitivity(3, 2), Matrix::Zero(3, 3),
                                       Matrix::Zero(3, 1), Matrix::Zero(1, 3),
                                       Matrix::Zero(1, 2));
  EXPECT_EQ(s.dx_dtheta, Matrix::Zero(3, 2));
  EXPECT_EQ(s.du_dtheta, Matrix::Zero(1, 2));
}

TEST(Sensprop, FromZeroSensitivityOnlyParameterPathRemains) {
  CounterRng rng(5, 0);
  Matrix jx_f(3, 3), ju_f(3, 2), jx_h(2, 3), jt_h(2, 4);
  for (Matrix* m : {&jx_f, &ju_f, &jx_h, &jt_h}) {
    for (Eigen::Index i = 0; i < m->size(); ++i) m->data()[i] = rng.normal();
  }
  const SensitivityState s = propagate(init_sensitivity(3, 4), jx_f, ju_f, jx_h, jt_h);
  EXPECT_EQ(s.du_dtheta, jt_h);
  EXPECT_EQ(s.dx_dtheta, ju_f * jt_h);
}

TEST(Sensprop, ScalarExample) {
  const RolloutRecord rec = rollout(ScalarSystem(), constant_trajectory(0.0), vec({1.0}),
                                    vec({0.5}), scalar_sim(), scalar_loss());
  ASSERT_EQ(rec.steps(), 1);
  EXPECT_DOUBLE_EQ(rec.sensitivity[0].du_dtheta(0, 0), -1.0);
  EXPECT_DOUBLE_EQ(rec.sensitivity[1].dx_dtheta(0, 0), -1.0);
  EXPECT_DOUBLE_EQ(rec.state[1][0], 0.5);
  EXPECT_DOUBLE_EQ(rec.loss, 0.25);
  EXPECT_DOUBLE_EQ(assemble_gradient(rec)[0], -1.0);
}

TEST(Sensprop, SingleStepGradientIsOneTerm) {
  const RolloutRecord rec = rollout(ScalarSystem(-0.3), constant_trajectory(0.2),
                                    vec({1.0}), vec({0.7}), scalar_sim(), scalar_loss());
  const double expect = 2.0 * (rec.state[1][0] - 0.2) * rec.sensitivity[1].dx_dtheta(0, 0);
  EXPECT_DOUBLE_EQ(assemble_gradient(rec)[0], expect);
}

TEST(Sensprop, ZeroLossWeightsGiveZeroGradient) {
  RolloutRecord rec = rollout(DubinsCar(), make_dubins_trajectory({}), vec({0, 0, 0, 0, 0}),
                              vec({2, 2, 2, 2}), SimConfig{0.01, 1.0, PlantIntegrator::kEuler},
                              LossSpec::positions(5, {}));
  EXPECT_EQ(assemble_gradient(rec), RowVector::Zero(4));
}

// ---------------------------------------------------------------------------
// Loss

TEST(Loss, Examples) {
  RolloutRecord rec;
  const LossSpec spec = LossSpec::positions(5, {0, 1});
  for (int k = 0; k < 3; ++k) {
    rec.desired.push_back(dubins_desired(vec({0, 0, 0, 0, 0})));
    rec.control.push_back(vec({0, 0}));
  }
  rec.state = {vec({0, 0, 0, 0, 0}), vec({0, 0, 0, 0, 0}), vec({0, 0, 0, 0, 0})};
  EXPECT_EQ(loss_total(rec, spec), 0.0);

  rec.state = {vec({0, 0, 0, 0, 0}), vec({1, 0, 9, 9, 9}), vec({0, 1, 0, 0, 0})};
  EXPECT_EQ(loss_total(rec, spec), 2.0);

  LossSpec effort = LossSpec::positions(5, {0, 1}, 1.0);
  rec.state = {vec({0, 0, 0, 0, 0}), vec({0, 0, 0, 0, 0}), vec({0, 0, 0, 0, 0})};
  rec.control[0] = vec({3, 4});
  EXPECT_EQ(loss_total(rec, effort), 25.0);
}

TEST(Loss, PartialsExamples) {
  const LossSpec spec = LossSpec::positions(5, {0, 1});
  const StateVector xd = vec({1, 1, 0, 0, 0});
  EXPECT_EQ(loss_partials(xd, xd, vec({1, 1}), spec).dL_dx, RowVector::Zero(5));
  const LossPartials lp = loss_partials(vec({1.5, 0.5, 3, 3, 3}), xd, vec({1, 2}), spec);
  RowVector expect(5);
  expect << 1, -1, 0, 0, 0;
  EXPECT_EQ(lp.dL_dx, expect);
  EXPECT_EQ(lp.dL_du, RowVector::Zero(2));
}

TEST(Loss, PartialsAreExactGradientOfSummand) {
  const LossSpec spec = LossSpec::positions(5, {0, 1}, 0.3);
  CounterRng rng(8, 0);
  for (int trial = 0; trial < 20; ++trial) {
    const StateVector x = vec({rng.normal(), rng.normal(), rng.normal(), rng.normal(), 0});
    const StateVector xd = vec({rng.normal(), rng.normal(), 0, 0, 0});
    const ControlVector u = vec({rng.normal(), rng.normal()});
    const LossPartials lp = loss_partials(x, xd, u, spec);
    const Matrix fx = central_difference_jacobian(
        [&](const Eigen::VectorXd& s) {
          return Eigen::VectorXd::Constant(1, state_loss_term(s, xd, spec));
        },
        x);
    const Matrix fu = central_difference_jacobian(
        [&](const Eigen::VectorXd& c) {
          return Eigen::VectorXd::Constant(1, control_loss_term(c, spec));
        },
        u);
    EXPECT_LT((lp.dL_dx - fx.row(0)).cwiseAbs().maxCoeff(), 1e-8);
    EXPECT_LT((lp.dL_du - fu.row(0)).cwiseAbs().maxCoeff(), 1e-8);
  }
}

// ---------------------------------------------------------------------------
// Optimizer

TEST(Optim, ProjectClampsToBox) {
  const FeasibleBox box = FeasibleBox::uniform(2, 0.1, 10);
  EXPECT_EQ(project(vec({-1, 5}), box), vec({0.1, 5}));
  EXPECT_EQ(project(vec({3, 5}), box), vec({3, 5}));
  EXPECT_EQ(project(vec({100, 100}), box), vec({10, 10}));
}

TEST(Optim, GradientStep) {
  const FeasibleBox wide = FeasibleBox::uniform(1, 1e-3, 1e3);
  RowVector g(1);
  g << -1.0;
  EXPECT_DOUBLE_EQ(gd_step(vec({2}), g, 0.1, wide)[0], 2.1);
  EXPECT_EQ(gd_step(vec({2}), RowVector::Zero(1), 0.1, wide), vec({2}));
  g << 100.0;
  EXPECT_EQ(gd_step(vec({2}), g, 0.1, wide), vec({1e-3}));
  g << std::nan("");
  EXPECT_THROW(gd_step(vec({2}), g, 0.1, wide), Error);
}

TEST(Optim, ZeroIterationsReturnsInitialParameters) {
  TuneConfig cfg{0.1, FeasibleBox::uniform(1, 1e-3, 1e3), {}};
  cfg.termination.max_iters = 0;
  const std::vector<Scenario> sc{{constant_trajectory(0.0), vec({1.0})}};
  const TuneResult r = tune(ScalarSystem(), sc, vec({0.5}), cfg, scalar_sim(), scalar_loss());
  EXPECT_EQ(r.theta, vec({0.5}));
  EXPECT_TRUE(r.history.empty());
}

TEST(Optim, ScalarStep) {
  TuneConfig cfg{0.1, FeasibleBox::uniform(1, 1e-3, 1e3), {}};
  cfg.termination.max_iters = 2;
  cfg.termination.rel_tol = 0.0;
  const std::vector<Scenario> sc{{constant_trajectory(0.0), vec({1.0})}};
  const TuneResult r = tune(ScalarSystem(), sc, vec({0.5}), cfg, scalar_sim(), scalar_loss());
  ASSERT_EQ(r.history.size(), 2u);
  EXPECT_DOUBLE_EQ(r.history[0].gradient[0], -1.0);
  EXPECT_DOUBLE_EQ(r.history[1].theta[0], 0.6);
  EXPECT_DOUBLE_EQ(r.history[1].loss, 0.16);
}

TEST(Optim, DubinsCircleImproves) {
  SimConfig sim;
  TuneConfig cfg{0.1, FeasibleBox::uniform(4, 1e-3, 1e3), {}};
  cfg.termination.max_iters = 11;
  cfg.termination.rel_tol = 0.0;
  const Trajectory traj = make_dubins_trajectory({});
  StateVector x0 = traj.at(0.0).state;
  x0[L::kSpeed] = 0.0;
  x0[L::kYawRate] = 0.0;
  const TuneResult r = tune(DubinsCar(), {{traj, x0}}, vec({2, 2, 2, 2}), cfg, sim,
                            LossSpec::positions(5, {0, 1}));
  ASSERT_EQ(r.history.size(), 11u);
  EXPECT_LT(r.history[10].loss, r.history[0].loss);
  for (const auto& h : r.history) EXPECT_TRUE(cfg.box.contains(h.theta));
}

TEST(Optim, StopsWhenLossStalls) {
  // The box caps theta at 0.8, after which the loss stops improving.
  TuneConfig cfg{0.1, FeasibleBox::uniform(1, 1e-3, 0.8), {}};
  const std::vector<Scenario> sc{{constant_trajectory(0.0), vec({1.0})}};
  const TuneResult r = tune(ScalarSystem(), sc, vec({0.5}), cfg, scalar_sim(), scalar_loss());
  EXPECT_EQ(r.reason, StopReason::kConverged);
  EXPECT_DOUBLE_EQ(r.theta[0], 0.8);
  EXPECT_NEAR(r.loss, 0.04, 1e-15);
  for (const auto& h : r.history) EXPECT_TRUE(cfg.box.contains(h.theta));
}

TEST(Optim, LossIncreaseStops) {
  // A step of 2 overshoots the minimum at theta = 1 and the loss grows.
  TuneConfig cfg{2.0, FeasibleBox::uniform(1, 1e-3, 1e3), {}};
  cfg.termination.increase_tol = 0.1;
  const std::vector<Scenario> sc{{constant_trajectory(0.0), vec({1.0})}};
  const TuneResult r = tune(ScalarSystem(), sc, vec({0.5}), cfg, scalar_sim(), scalar_loss());
  EXPECT_EQ(r.reason, StopReason::kLossIncrease);
  EXPECT_EQ(r.theta, vec({0.5}));
}

// ---------------------------------------------------------------------------
// L1 adaptive augmentation

TEST(L1, LowPassStep) {
  const Eigen::VectorXd y = low_pass_step(Eigen::VectorXd::Zero(1),
                                          Eigen::VectorXd::Ones(1), 20.0, 0.001);
  EXPECT_NEAR(y[0], 1.0 - std::exp(-0.02), 1e-15);
  EXPECT_NEAR(y[0], 0.0198, 1e-4);

  Eigen::VectorXd z = Eigen::VectorXd::Zero(1);
  for (int k = 0; k < 2000; ++k) z = low_pass_step(z, Eigen::VectorXd::Constant(1, 3.0), 20.0, 0.001);
  EXPECT_NEAR(z[0], 3.0, 1e-12);
}

TEST(L1, NothingToCompensate) {
  SimConfig sim{0.001, 0.5, PlantIntegrator::kEuler};
  const RolloutRecord rec = rollout(ScalarSystem(), constant_trajectory(0.0), vec({0.0}),
                                    vec({1.0}), sim, scalar_loss(), L1Config{});
  for (const auto& u : rec.adaptive) EXPECT_EQ(u[0], 0.0);
}

TEST(L1, CancelsConstantDisturbance) {
  SimConfig sim{0.001, 1.0, PlantIntegrator::kEuler};
  sim.uncertainty.a1 = 1.0;
  L1Config l1{20.0, -10.0, 0.001};
  const RolloutRecord rec = rollout(ScalarSystem(), constant_trajectory(0.0), vec({0.0}),
                                    vec({1.0}), sim, scalar_loss(), l1);
  EXPECT_LE(std::abs(rec.adaptive.back()[0] + 1.0), 0.05);

  const RolloutRecord off = rollout(ScalarSystem(), constant_trajectory(0.0), vec({0.0}),
                                    vec({1.0}), sim, scalar_loss());
  EXPECT_LT(std::abs(rec.true_state.back()[0]), 0.1 * std::abs(off.true_state.back()[0]));
}

TEST(L1, RejectsAdaptationFasterThanControl) {
  SimConfig sim{0.01, 0.1, PlantIntegrator::kEuler};
  EXPECT_THROW(rollout(ScalarSystem(), constant_trajectory(0.0), vec({0.0}), vec({1.0}), sim,
                       scalar_loss(), L1Config{20.0, -10.0, 0.001}),
               Error);
}

// ---------------------------------------------------------------------------
// Rollouts

TEST(Sim, Rk4ExponentialDecay) {
  const StateVector x = integrate_plant(ScalarSystem(-1.0), vec({1.0}), vec({0.0}), 0.0, 0.1,
                                        PlantIntegrator::kRk4, {});
  EXPECT_NEAR(x[0], std::exp(-0.1), 1e-6);
  const StateVector y = integrate_plant(ScalarSystem(-1.0), vec({1.0}), vec({0.0}), 0.0, 0.1,
                                        PlantIntegrator::kAdaptive, {});
  EXPECT_NEAR(y[0], std::exp(-0.1), 1e-8);
}

TEST(Sim, NoiseFreeMeasurementIsExact) {
  CounterRng rng(1, 0);
  const StateVector x = vec({1, 2, 3});
  EXPECT_EQ(add_measurement_noise(x, Eigen::VectorXd::Zero(3), rng), x);
  EXPECT_EQ(add_measurement_noise(x, Eigen::VectorXd(), rng), x);
}

TEST(Sim, NoiseStatistics) {
  CounterRng rng(42, 7);
  const int n = 100000;
  double sum = 0.0, sum2 = 0.0;
  const Eigen::VectorXd std = Eigen::VectorXd::Constant(1, 0.1);
  for (int i = 0; i < n; ++i) {
    const double e = add_measurement_noise(vec({0.0}), std, rng)[0];
    sum += e;
    sum2 += e * e;
  }
  const double mean = sum / n;
  const double sd = std::sqrt(sum2 / n - mean * mean);
  EXPECT_NEAR(sd, 0.1, 0.002);
  EXPECT_NEAR(mean, 0.0, 0.002);
}

TEST(Sim, GraphConsistentRolloutIsTheEulerModel) {
  const DubinsCar car;
  const Trajectory traj = make_dubins_trajectory(default_curve(CurveFamily::kLemon));
  SimConfig sim{0.01, 2.0, PlantIntegrator::kEuler};
  ASSERT_TRUE(sim.graph_consistent());
  const ParamVector th = vec({3, 2, 4, 1});
  const RolloutRecord rec = rollout(car, traj, vec({0.1, 0, 0.2, 0.5, 0}), th, sim,
                                    LossSpec::positions(5, {0, 1}));
  for (long k = 0; k < rec.steps(); ++k) {
    EXPECT_EQ(rec.state[k + 1], discrete_step(car, rec.state[k], rec.control[k], sim.dt));
    EXPECT_EQ(rec.state[k], rec.true_state[k]);
  }
}

TEST(Sim, OnTrajectoryTrackingIsExact) {
  const DubinsCar car;
  for (PlantIntegrator plant : {PlantIntegrator::kRk4, PlantIntegrator::kAdaptive}) {
    SimConfig sim{0.01, 10.0, plant};
    for (const ParamVector& th : {vec({2, 2, 2, 2}), vec({10, 1, 0.5, 7})}) {
      const Trajectory traj = make_dubins_trajectory({CurveFamily::kCircle, {1.0, 0.0, 1.0}});
      const RolloutRecord rec = rollout(car, traj, traj.at(0.0).state, th, sim,
                                        LossSpec::positions(5, {0, 1}), std::nullopt,
                                        {false, false, 0});
      double worst = 0.0;
      for (std::size_t k = 0; k < rec.state.size(); ++k) {
        worst = std::max(worst, (rec.state[k] - rec.desired[k].state).head<2>().norm());
      }
      EXPECT_LE(worst, 1e-9) << to_string(plant);
    }
  }
}

TEST(Sim, SameSeedSameRecord) {
  SimConfig sim{0.01, 3.0, PlantIntegrator::kRk4};
  sim.noise_std = vec({0.1, 0.1, 0.01, 0.05, 0.01});
  sim.uncertainty = {2.0, 3.0, 1.0};
  sim.seed = 9;
  const Trajectory traj = make_dubins_trajectory(default_curve(CurveFamily::kTwist));
  auto run = [&](std::uint64_t stream) {
    return rollout(DubinsCar(), traj, traj.at(0.0).state, vec({3, 3, 3, 3}), sim,
                   LossSpec::positions(5, {0, 1}), L1Config{}, {true, false, stream});
  };
  const RolloutRecord a = run(4), b = run(4), c = run(5);
  EXPECT_EQ(a.state, b.state);
  EXPECT_EQ(a.control, b.control);
  EXPECT_EQ(a.adaptive, b.adaptive);
  EXPECT_EQ(a.loss, b.loss);
  EXPECT_EQ(assemble_gradient(a), assemble_gradient(b));
  EXPECT_NE(a.state, c.state);
}

TEST(Sim, RmseExamples) {
  RolloutRecord rec;
  rec.position_index = {0, 1, 2};
  const DesiredState zero{StateVector::Zero(3), {}};
  rec.desired = {zero, zero, zero};
  rec.state = {vec({5, 5, 5}), vec({0.1, 0, 0}), vec({0.1, 0, 0})};
  EXPECT_NEAR(rmse_position(rec), 0.1, 1e-15);
  rec.state = {vec({5, 5, 5}), vec({0, 0, 0}), vec({0, 0, 0})};
  EXPECT_EQ(rmse_position(rec), 0.0);
  rec.state = {vec({5, 5, 5}), vec({0, 0, 0}), vec({0.2, 0, 0})};
  EXPECT_NEAR(rmse_position(rec), std::sqrt(0.02), 1e-15);
}

TEST(Sim, HorizonMustBeWholeSteps) {
  EXPECT_THROW((SimConfig{0.03, 1.0}.steps()), Error);
  EXPECT_EQ((SimConfig{0.01, 10.0}.steps()), 1000);
}

// ---------------------------------------------------------------------------
// Dubins trajectories

TEST(Trajgen, CircleKinematics) {
  const DubinsCurve c{CurveFamily::kCircle, {1.5, 0.0, 0.6}};
  for (double t : {0.0, 1.0, 4.2}) {
    const DesiredState d = dubins_curve(c, t);
    EXPECT_NEAR(d.state[L::kSpeed], 0.9, 1e-12);
    EXPECT_NEAR(d.state[L::kYawRate], 0.6, 1e-12);
  }
}

TEST(Trajgen, FeedforwardMatchesNumericalDerivatives) {
  const double h = 1e-5;
  for (CurveFamily f : {CurveFamily::kCircle, CurveFamily::kEllipse, CurveFamily::kLemon,
                        CurveFamily::kPeanut, CurveFamily::kSpiral, CurveFamily::kTwist}) {
    const DubinsCurve c = default_curve(f);
    for (double t : {0.3, 1.7, 5.1, 8.8}) {
      const DesiredState d = dubins_curve(c, t);
      const DesiredState p = dubins_curve(c, t + h), m = dubins_curve(c, t - h);
      const Eigen::Vector2d vel = (p.state.head<2>() - m.state.head<2>()) / (2 * h);
      const Eigen::Vector2d q(std::cos(d.state[L::kHeading]), std::sin(d.state[L::kHeading]));
      EXPECT_LT((vel - d.state[L::kSpeed] * q).norm(), 1e-6) << to_string(f);
      const auto velocity = [](const DesiredState& s) {
        return Eigen::Vector2d(s.state[L::kSpeed] * std::cos(s.state[L::kHeading]),
                               s.state[L::kSpeed] * std::sin(s.state[L::kHeading]));
      };
      const Eigen::Vector2d acc = (velocity(p) - velocity(m)) / (2 * h);
      EXPECT_LT((acc - d.feedforward.head<2>()).norm(), 1e-6) << to_string(f);
      const double yaw_acc = (p.state[L::kYawRate] - m.state[L::kYawRate]) / (2 * h);
      EXPECT_NEAR(yaw_acc, d.feedforward[L::kFfYawAccel], 1e-6) << to_string(f);
    }
  }
}

TEST(Trajgen, SpiralStartIsWellPosed) {
  const DesiredState d = dubins_curve(default_curve(CurveFamily::kSpiral), 0.0);
  EXPECT_TRUE(d.state.allFinite());
  EXPECT_GT(d.state[L::kSpeed], 0.0);
}

TEST(Trajgen, TrainingSetWithinSpeedLimits) {
  for (const DubinsCurve& c : dubins_training_set()) {
    const SpeedEnvelope env = speed_envelope(c, 10.0);
    EXPECT_LE(env.max_speed, 1.0 + 1e-12);
    EXPECT_LE(env.max_yaw_rate, 1.0 + 1e-12);
  }
}

TEST(Trajgen, FamilyNames) {
  for (const char* name : {"circle", "ellipse", "lemon", "peanut", "spiral", "twist"}) {
    EXPECT_EQ(to_string(curve_family_from_string(name)), name);
  }
  EXPECT_THROW(curve_family_from_string("square"), Error);
}

// ---------------------------------------------------------------------------
// Gradient oracles

TEST(Verify, ScalarFiniteDifference) {
  const Scenario sc{constant_trajectory(0.0), vec({1.0})};
  const FdGradient fd = fd_gradient(ScalarSystem(), sc, vec({0.5}), scalar_sim(),
                                    scalar_loss(), 1e-6);
  EXPECT_NEAR(fd.gradient[0], -1.0, 1e-6);
}

TEST(Verify, FiniteDifferenceShrinksAtBox) {
  const Scenario sc{constant_trajectory(0.0), vec({1.0})};
  const FeasibleBox box = FeasibleBox::uniform(1, 0.49, 1.0);
  const FdGradient fd = fd_gradient(ScalarSystem(), sc, vec({0.5}), scalar_sim(),
                                    scalar_loss(), 1e-1, box);
  EXPECT_NEAR(fd.epsilon[0], 0.005, 1e-15);
  // The loss is quadratic in theta, so the central difference is exact.
  EXPECT_NEAR(fd.gradient[0], -1.0, 1e-12);
  EXPECT_THROW(fd_gradient(ScalarSystem(), sc, vec({0.49}), scalar_sim(), scalar_loss(),
                           1e-6, box),
               Error);
}

TEST(Verify, ReverseMatchesForwardOnDubins) {
  CounterRng rng(21, 0);
  SimConfig sim{0.01, 5.0, PlantIntegrator::kRk4};
  sim.noise_std = vec({0.05, 0.05, 0.01, 0.02, 0.01});
  sim.uncertainty = {3.0, 4.0, 1.0};
  const Trajectory traj = make_dubins_trajectory(default_curve(CurveFamily::kPeanut));
  for (int trial = 0; trial < 5; ++trial) {
    const ParamVector th = random_param(rng, 4, 1, 10);
    const RolloutRecord rec =
        rollout(DubinsCar(), traj, traj.at(0.0).state, th, sim,
                LossSpec::positions(5, {0, 1}, 0.01),
                trial % 2 ? std::optional<L1Config>(L1Config{}) : std::nullopt,
                {true, true, static_cast<std::uint64_t>(trial)});
    const RowVector fwd = assemble_gradient(rec);
    EXPECT_LE(max_relative_error(fwd, reverse_gradient(rec), 0.0), 1e-9);
  }
}

TEST(Verify, ReverseSingleStep) {
  const RolloutRecord rec = rollout(ScalarSystem(), constant_trajectory(0.0), vec({1.0}),
                                    vec({0.5}), scalar_sim(), scalar_loss(), std::nullopt,
                                    {true, true, 0});
  EXPECT_DOUBLE_EQ(reverse_gradient(rec)[0], -1.0);
}

TEST(Verify, DubinsGradientMatchesFiniteDifferences) {
  CounterRng rng(33, 0);
  SimConfig sim{0.01, 10.0, PlantIntegrator::kEuler};
  const Trajectory traj = make_dubins_trajectory({});
  StateVector x0 = traj.at(0.0).state;
  x0[L::kSpeed] = 0.0;
  const Scenario sc{traj, x0};
  const LossSpec loss = LossSpec::positions(5, {0, 1});
  for (int trial = 0; trial < 5; ++trial) {
    const ParamVector th = random_param(rng, 4, 1, 10);
    const RowVector fwd =
        assemble_gradient(rollout(DubinsCar(), traj, x0, th, sim, loss));
    const FdGradient fd = fd_gradient(DubinsCar(), sc, th, sim, loss, 1e-6);
    EXPECT_LE(max_relative_error(fwd, fd.gradient, 1e-3 * fd.gradient.cwiseAbs().maxCoeff()),
              1e-4);
  }
}

TEST(Verify, RelativeErrorFloor) {
  EXPECT_NEAR(relative_error(1.0, 1.1, 0.0), 1.0 / 11.0, 1e-15);
  EXPECT_DOUBLE_EQ(relative_error(1e-9, -1e-9, 1.0), 2e-9);
  EXPECT_EQ(relative_error(0.0, 0.0, 0.0 + 1e-300), 0.0);
}

// ---------------------------------------------------------------------------
// Random streams

TEST(Rng, StreamsAreReproducibleAndDistinct) {
  CounterRng a(1, 2), b(1, 2), c(1, 3), d(2, 2);
  const double x = a.uniform();
  EXPECT_EQ(x, b.uniform());
  EXPECT_NE(x, c.uniform());
  EXPECT_NE(x, d.uniform());
  EXPECT_NE(derive_stream(0, 0), derive_stream(0, 1));
  EXPECT_NE(tuning_stream(0, 1, 0), tuning_stream(0, 0, 1));
}

}  // namespace
}  // namespace sensitune
