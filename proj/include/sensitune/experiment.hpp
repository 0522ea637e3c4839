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

// Experiment configuration and the runners behind the command-line tool.
// Configs are JSON documents; every key is checked and unknown keys are
// rejected. A parsed config serializes back to a fully resolved document
// with all defaults materialized.

#ifndef SENSITUNE_EXPERIMENT_HPP_
#define SENSITUNE_EXPERIMENT_HPP_

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "sensitune/core.hpp"
#include "sensitune/l1ac.hpp"
#include "sensitune/optim.hpp"
#include "sensitune/sim.hpp"
#include "sensitune/systems/dubins.hpp"
#include "sensitune/systems/quadrotor.hpp"
#include "sensitune/trajgen.hpp"

namespace sensitune::experiment {

enum class SystemKind { kDubins, kQuadrotor };

struct SystemSpec {
  SystemKind kind = SystemKind::kDubins;
  DubinsConstants dubins;
  QuadrotorConstants quadrotor;
};

struct TrajectorySpec {
  std::string family = "circle";
  CurveParams params;  // Dubins only
  bool start_at_rest = false;
  Eigen::VectorXd initial_offset;  // empty: start on the trajectory
};

struct TuneSpec {
  ParamVector initial_theta;
  double step_size = 0.1;
  FeasibleBox box;
  Termination termination;
};

struct L1Spec {
  bool enabled = false;
  L1Config config;
};

// Cells are the Cartesian product of the uncertainty axes (a1 outer, a2
// inner for the car; beta for the quadrotor), each crossed with every
// (tune, l1) combination.
struct GridSpec {
  std::vector<double> a1;
  std::vector<double> a2;
  std::vector<double> beta;
  std::vector<bool> tune{false, true};
  std::vector<bool> l1{false, true};
  // Noise streams derive from the cell index by default. With common_noise
  // every cell replays the same measurement noise, so differences between
  // cells come from the uncertainty alone.
  bool common_noise = false;
};

struct VerifySpec {
  int samples = 20;
  double epsilon = 1e-6;
  bool finite_differences = true;
  ParamVector theta_lower;
  ParamVector theta_upper;
  // Comparisons use |a - b| / max(|a|, |b|, floor * max_i |reference_i|).
  double relative_floor = 1e-3;
};

struct ExperimentConfig {
  SystemSpec system;
  std::vector<TrajectorySpec> trajectories;
  std::optional<std::vector<TrajectorySpec>> eval_trajectories;
  SimConfig sim;
  std::map<std::string, double> noise;  // named channel groups
  double loss_lambda = 0.0;
  TuneSpec tune;
  L1Spec l1;
  GridSpec grid;
  VerifySpec verify;
};

// Parsing. Every error is a ConfigError naming the offending field.
ExperimentConfig parse_config(const nlohmann::json& doc);
ExperimentConfig load_config(const std::filesystem::path& path);
nlohmann::json to_json(const ExperimentConfig& cfg);

// Noise channel groups per system, e.g. "position", "angular_velocity".
std::vector<std::string> noise_groups(SystemKind kind);

// Reads {"theta": [...]} or a bare array; checks the length.
ParamVector load_theta(const std::filesystem::path& path, Eigen::Index expected);

// ---------------------------------------------------------------------------
// Runners. Each writes its outputs under `out` (created if needed) together
// with resolved_config.json, and returns the same data in memory.

struct RolloutSummary {
  int iteration = 0;
  std::size_t trajectory = 0;
  double loss = 0.0;
  double rmse = 0.0;
};

struct TuneReport {
  TuneResult result;
  std::vector<RolloutSummary> rollouts;
  std::optional<std::string> divergence;  // set if tuning aborted
};

struct GridRow {
  std::size_t cell = 0;
  double a1 = 0.0;
  double a2 = 0.0;
  double beta = 1.0;
  bool tune = false;
  bool l1 = false;
  bool diverged = false;
  int iterations = 0;
  std::string stop_reason;
  double loss = 0.0;  // mean over trajectories at the final theta
  double rmse = 0.0;
  double manifold_error = 0.0;  // worst plant-state constraint violation seen
  ParamVector theta;
};

struct GridReport {
  std::vector<GridRow> rows;
};

struct EvalRow {
  std::size_t trajectory = 0;
  std::string family;
  double loss = 0.0;
  double rmse = 0.0;
};

struct EvalReport {
  std::vector<EvalRow> rows;
};

struct VerifySample {
  int sample = 0;
  ParamVector theta;
  RowVector forward;
  RowVector reverse;
  std::optional<RowVector> finite_difference;
  double forward_reverse_error = 0.0;
  double forward_fd_error = 0.0;
};

struct VerifyReport {
  std::vector<VerifySample> samples;
  double worst_forward_reverse = 0.0;
  double worst_forward_fd = 0.0;
  double seconds = 0.0;
};

struct SimulateReport {
  double loss = 0.0;
  double rmse = 0.0;
  double manifold_error = 0.0;
  long steps = 0;
};

TuneReport run_tune(const ExperimentConfig& cfg, const std::filesystem::path& out);
GridReport run_grid(const ExperimentConfig& cfg, const std::filesystem::path& out,
                    int workers = 1);
EvalReport run_eval(const ExperimentConfig& cfg, const ParamVector& theta,
                    const std::filesystem::path& out);
VerifyReport run_verify(const ExperimentConfig& cfg, const std::filesystem::path& out);
SimulateReport run_simulate(const ExperimentConfig& cfg, const ParamVector& theta,
                            const std::filesystem::path& out,
                            bool dump_sensitivity = false);

}  // namespace sensitune::experiment

#endif  // SENSITUNE_EXPERIMENT_HPP_
