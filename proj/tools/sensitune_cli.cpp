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

// sensitune: controller auto-tuning experiments.
//
//   sensitune tune            --config C [--out D] [--seed S]
//   sensitune grid            --config C [--out D] [--workers N] [--seed S]
//   sensitune eval            --config C --theta T [--out D] [--seed S]
//   sensitune verify-gradient --config C [--out D] [--seed S]
//   sensitune simulate        --config C [--theta T] [--out D] [--sensitivity]
//
// Exit codes: 0 success, 1 other failure, 2 configuration error,
// 3 divergence.

#include <cstdint>
#include <cstdio>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "sensitune/experiment.hpp"

namespace {

namespace ex = sensitune::experiment;
using sensitune::ParamVector;

constexpr int kExitError = 1;
constexpr int kExitConfig = 2;
constexpr int kExitDivergence = 3;

struct Options {
  std::string config;
  std::string out = "results";
  std::string theta;
  int workers = 1;
  std::optional<std::uint64_t> seed;
  bool sensitivity = false;
};

ex::ExperimentConfig load(const Options& o) {
  ex::ExperimentConfig cfg = ex::load_config(o.config);
  if (o.seed) cfg.sim.seed = *o.seed;
  return cfg;
}

ParamVector theta_from(const Options& o, const ex::ExperimentConfig& cfg, bool required) {
  if (o.theta.empty()) {
    if (required) throw sensitune::ConfigError("--theta", "required");
    return cfg.tune.initial_theta;
  }
  return ex::load_theta(o.theta, cfg.tune.initial_theta.size());
}

int cmd_tune(const Options& o) {
  const ex::ExperimentConfig cfg = load(o);
  const ex::TuneReport r = ex::run_tune(cfg, o.out);
  const auto& h = r.result.history;
  std::printf("iterations %zu  stop %s\n", h.size(),
              std::string(sensitune::to_string(r.result.reason)).c_str());
  if (!h.empty()) std::printf("loss %.6g -> %.6g\n", h.front().loss, r.result.loss);
  std::cout << "theta " << r.result.theta.transpose() << '\n';
  return 0;
}

int cmd_grid(const Options& o) {
  const ex::ExperimentConfig cfg = load(o);
  const ex::GridReport r = ex::run_grid(cfg, o.out, o.workers);
  std::printf("%5s %6s %6s %6s %4s %3s %9s %12s %10s\n", "cell", "a1", "a2", "beta", "tune",
              "l1", "status", "loss", "rmse");
  int diverged = 0;
  for (const auto& row : r.rows) {
    diverged += row.diverged;
    std::printf("%5zu %6g %6g %6g %4d %3d %9s %12.6g %10.6g\n", row.cell, row.a1, row.a2,
                row.beta, int(row.tune), int(row.l1), row.diverged ? "diverged" : "ok",
                row.loss, row.rmse);
  }
  if (diverged) std::printf("%d diverged cell(s)\n", diverged);
  return 0;
}

int cmd_eval(const Options& o) {
  const ex::ExperimentConfig cfg = load(o);
  const ParamVector theta = theta_from(o, cfg, true);
  const ex::EvalReport r = ex::run_eval(cfg, theta, o.out);
  std::printf("%10s %10s %14s %10s\n", "trajectory", "family", "loss", "rmse");
  for (const auto& row : r.rows) {
    std::printf("%10zu %10s %14.6g %10.6g\n", row.trajectory, row.family.c_str(), row.loss,
                row.rmse);
  }
  return 0;
}

int cmd_verify(const Options& o) {
  const ex::ExperimentConfig cfg = load(o);
  if (!cfg.sim.graph_consistent() && cfg.verify.finite_differences) {
    std::cerr << "note: plant is not graph-consistent (euler, no noise or uncertainty); "
                 "finite differences measure a different map\n";
  }
  const ex::VerifyReport r = ex::run_verify(cfg, o.out);
  std::printf("%6s %16s %16s\n", "sample", "fwd-vs-reverse", "fwd-vs-fd");
  for (const auto& s : r.samples) {
    std::printf("%6d %16.3e %16s\n", s.sample, s.forward_reverse_error,
                s.finite_difference ? std::to_string(s.forward_fd_error).c_str() : "-");
  }
  std::printf("worst fwd-vs-reverse %.3e", r.worst_forward_reverse);
  if (cfg.verify.finite_differences) std::printf("  worst fwd-vs-fd %.3e", r.worst_forward_fd);
  std::printf("  (%.1f s)\n", r.seconds);
  return 0;
}

int cmd_simulate(const Options& o) {
  const ex::ExperimentConfig cfg = load(o);
  const ParamVector theta = theta_from(o, cfg, false);
  const ex::SimulateReport r = ex::run_simulate(cfg, theta, o.out, o.sensitivity);
  std::printf("steps %ld  loss %.6g  rmse %.6g\n", r.steps, r.loss, r.rmse);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Controller auto-tuning by sensitivity propagation"};
  app.require_subcommand(1);
  Options o;
  std::uint64_t seed = 0;

  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", o.config, "Experiment config (JSON)")->required();
    sub->add_option("--out", o.out, "Output directory")->capture_default_str();
    sub->add_option("--seed", seed, "Override the config's RNG seed");
  };
  CLI::App* tune = app.add_subcommand("tune", "Tune controller parameters");
  CLI::App* grid = app.add_subcommand("grid", "Uncertainty grid with tune/L1 ablation");
  CLI::App* eval = app.add_subcommand("eval", "Evaluate fixed parameters");
  CLI::App* verify = app.add_subcommand("verify-gradient", "Check gradients against oracles");
  CLI::App* simulate = app.add_subcommand("simulate", "Dump a single rollout");
  for (CLI::App* sub : {tune, grid, eval, verify, simulate}) common(sub);
  grid->add_option("--workers", o.workers, "Worker threads")->check(CLI::PositiveNumber);
  eval->add_option("--theta", o.theta, "Parameter file ({\"theta\": [...]})")->required();
  simulate->add_option("--theta", o.theta, "Parameter file (default: initial_theta)");
  simulate->add_flag("--sensitivity", o.sensitivity, "Also write per-step sensitivities");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }
  for (CLI::App* sub : {tune, grid, eval, verify, simulate}) {
    if (sub->count("--seed")) o.seed = seed;
  }

  try {
    if (*tune) return cmd_tune(o);
    if (*grid) return cmd_grid(o);
    if (*eval) return cmd_eval(o);
    if (*verify) return cmd_verify(o);
    if (*simulate) return cmd_simulate(o);
  } catch (const sensitune::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const sensitune::DivergenceError& e) {
    std::cerr << "diverged: " << e.what() << '\n';
    return kExitDivergence;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitError;
  }
  return kExitError;
}
