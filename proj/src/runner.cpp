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

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdio>
#include <exception>
#include <fstream>
#include <limits>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "sensitune/experiment.hpp"
#include "sensitune/verify.hpp"

namespace sensitune::experiment {
namespace {

using nlohmann::json;
namespace fs = std::filesystem;

// Fixed stream for drawing verification parameters.
constexpr std::uint64_t kVerifyStream = 0x7665726966790000ULL;

// Shortest text that reads back to the same double.
std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

class CsvWriter {
 public:
  explicit CsvWriter(const fs::path& path) : out_(path) {
    if (!out_) throw Error("cannot write " + path.string());
  }

  void row(const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (i) out_ << ',';
      out_ << cells[i];
    }
    out_ << '\n';
  }

 private:
  std::ofstream out_;
};

void append(std::vector<std::string>& cells, const Eigen::Ref<const Eigen::VectorXd>& v) {
  for (Eigen::Index i = 0; i < v.size(); ++i) cells.push_back(fmt(v[i]));
}

void append_names(std::vector<std::string>& cells, const std::string& prefix, Eigen::Index n) {
  for (Eigen::Index i = 0; i < n; ++i) cells.push_back(prefix + std::to_string(i));
}

std::vector<double> to_std(const Eigen::VectorXd& v) {
  return std::vector<double>(v.data(), v.data() + v.size());
}

void write_json(const fs::path& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

void prepare_output(const ExperimentConfig& cfg, const fs::path& out) {
  if (out.empty()) return;
  fs::create_directories(out);
  write_json(out / "resolved_config.json", to_json(cfg));
}

// Worst violation of the plant's state constraints; only the quadrotor has
// one (R in SO(3)).
double manifold_error(const DubinsCar&, const StateVector&) { return 0.0; }
double manifold_error(const Quadrotor&, const StateVector& x) {
  return orthonormality_error(Quadrotor::attitude(x));
}

template <class S>
double worst_manifold_error(const S& model, const RolloutRecord& rec) {
  double worst = 0.0;
  for (const auto& x : rec.true_state) worst = std::max(worst, manifold_error(model, x));
  return worst;
}

template <class F>
decltype(auto) with_model(const SystemSpec& s, F&& f) {
  if (s.kind == SystemKind::kDubins) return f(DubinsCar(s.dubins));
  return f(Quadrotor(s.quadrotor));
}

Trajectory build_trajectory(const TrajectorySpec& t, SystemKind kind) {
  if (kind == SystemKind::kQuadrotor) return make_quadrotor_circle();
  return make_dubins_trajectory({curve_family_from_string(t.family), t.params});
}

StateVector initial_state(const TrajectorySpec& t, SystemKind kind, const Trajectory& traj) {
  StateVector x = traj.at(0.0).state;
  if (t.start_at_rest) {
    if (kind == SystemKind::kDubins) {
      x[layout::Dubins::kSpeed] = 0.0;
      x[layout::Dubins::kYawRate] = 0.0;
    } else {
      x.segment<3>(layout::Quadrotor::kVel).setZero();
      x.segment<3>(layout::Quadrotor::kOmega).setZero();
    }
  }
  if (t.initial_offset.size() > 0) x += t.initial_offset;
  return x;
}

std::vector<Scenario> build_scenarios(const std::vector<TrajectorySpec>& specs, SystemKind kind) {
  std::vector<Scenario> out;
  for (const auto& t : specs) {
    Trajectory traj = build_trajectory(t, kind);
    StateVector x0 = initial_state(t, kind, traj);
    out.push_back({std::move(traj), std::move(x0)});
  }
  return out;
}

template <class S>
LossSpec loss_for(const S& model, double lambda) {
  return LossSpec::positions(model.state_dim(), model.position_index(), lambda);
}

std::optional<L1Config> l1_for(const L1Spec& spec, bool enabled) {
  if (!enabled) return std::nullopt;
  return spec.config;
}

TuneConfig tune_config(const TuneSpec& t) {
  return {t.step_size, t.box, t.termination};
}

void require_trajectories(const ExperimentConfig& cfg, const char* command) {
  if (cfg.trajectories.empty()) {
    throw ConfigError("trajectories", std::string(command) + " needs at least one trajectory");
  }
}

}  // namespace

// ---------------------------------------------------------------------------

TuneReport run_tune(const ExperimentConfig& cfg, const fs::path& out) {
  require_trajectories(cfg, "tune");
  prepare_output(cfg, out);
  const SystemKind kind = cfg.system.kind;
  const std::vector<Scenario> scenarios = build_scenarios(cfg.trajectories, kind);

  TuneReport report;
  std::optional<DivergenceError> failure;
  with_model(cfg.system, [&](const auto& model) {
    auto observer = [&](int it, std::size_t i, const RolloutRecord& rec) {
      report.rollouts.push_back({it, i, rec.loss, rmse_position(rec)});
    };
    try {
      report.result = tune(model, scenarios, cfg.tune.initial_theta, tune_config(cfg.tune),
                           cfg.sim, loss_for(model, cfg.loss_lambda),
                           l1_for(cfg.l1, cfg.l1.enabled), 0, observer);
    } catch (const TuneAborted& e) {
      report.result = e.partial();
      report.divergence = e.what();
      failure.emplace(e);
    }
  });

  if (!out.empty()) {
    const TuneResult& r = report.result;
    const Eigen::Index p = cfg.tune.initial_theta.size();
    CsvWriter history(out / "history.csv");
    std::vector<std::string> head{"iteration", "loss"};
    append_names(head, "theta_", p);
    append_names(head, "grad_", p);
    history.row(head);
    for (const auto& h : r.history) {
      std::vector<std::string> row{std::to_string(h.iteration), fmt(h.loss)};
      append(row, h.theta);
      append(row, h.gradient.transpose());
      history.row(row);
    }
    CsvWriter rollouts(out / "rollouts.csv");
    rollouts.row({"iteration", "trajectory", "family", "loss", "rmse"});
    for (const auto& s : report.rollouts) {
      rollouts.row({std::to_string(s.iteration), std::to_string(s.trajectory),
                    cfg.trajectories[s.trajectory].family, fmt(s.loss), fmt(s.rmse)});
    }
    json result{{"theta", to_std(r.theta)},
                {"last_theta", to_std(r.last_theta)},
                {"loss", r.history.empty() ? json(nullptr) : json(r.loss)},
                {"initial_loss", r.history.empty() ? json(nullptr) : json(r.history[0].loss)},
                {"iterations", r.history.size()},
                {"stop_reason", report.divergence ? std::string("diverged")
                                                  : std::string(to_string(r.reason))}};
    if (report.divergence) result["error"] = *report.divergence;
    write_json(out / "theta.json", result);
  }
  if (failure) throw *failure;
  return report;
}

// ---------------------------------------------------------------------------

namespace {

// Collects grid rows from concurrent workers under one lock.
class ResultSink {
 public:
  explicit ResultSink(std::size_t n) : rows_(n) {}

  void put(std::size_t index, GridRow row) {
    std::lock_guard<std::mutex> lock(mu_);
    rows_[index] = std::move(row);
  }

  void fail(std::exception_ptr e) {
    std::lock_guard<std::mutex> lock(mu_);
    if (!error_) error_ = e;
  }

  std::vector<GridRow> take() {
    if (error_) std::rethrow_exception(error_);
    return std::move(rows_);
  }

 private:
  std::mutex mu_;
  std::vector<GridRow> rows_;
  std::exception_ptr error_;
};

template <class S>
GridRow run_cell(const S& model, const ExperimentConfig& cfg,
                 const std::vector<Scenario>& scenarios, GridRow row) {
  SimConfig sim = cfg.sim;
  sim.uncertainty = {row.a1, row.a2, row.beta};
  const LossSpec loss = loss_for(model, cfg.loss_lambda);
  const std::optional<L1Config> l1 = l1_for(cfg.l1, row.l1);
  const std::uint64_t base = cfg.grid.common_noise ? 0 : row.cell;
  row.theta = cfg.tune.initial_theta;

  if (row.tune) {
    auto observer = [&](int, std::size_t, const RolloutRecord& rec) {
      row.manifold_error = std::max(row.manifold_error, worst_manifold_error(model, rec));
    };
    try {
      const TuneResult r = tune(model, scenarios, row.theta, tune_config(cfg.tune), sim, loss,
                                l1, base, observer);
      row.theta = r.theta;
      row.iterations = static_cast<int>(r.history.size());
      row.stop_reason = std::string(to_string(r.reason));
    } catch (const TuneAborted& e) {
      row.theta = e.partial().theta;
      row.iterations = static_cast<int>(e.partial().history.size());
      row.stop_reason = "diverged";
      row.diverged = true;
    }
  } else {
    row.stop_reason = "untuned";
  }

  // Final evaluation reuses the iteration-0 noise streams of the cell, so
  // every ablation of a cell sees the same measurement noise.
  row.loss = row.rmse = 0.0;
  try {
    RolloutOptions opts;
    opts.sensitivities = false;
    for (std::size_t i = 0; i < scenarios.size(); ++i) {
      opts.stream = tuning_stream(base, 0, i);
      const RolloutRecord rec = rollout(model, scenarios[i].trajectory,
                                        scenarios[i].initial_state, row.theta, sim, loss, l1,
                                        opts);
      row.loss += rec.loss;
      row.rmse += rmse_position(rec);
      row.manifold_error = std::max(row.manifold_error, worst_manifold_error(model, rec));
    }
    row.loss /= static_cast<double>(scenarios.size());
    row.rmse /= static_cast<double>(scenarios.size());
  } catch (const DivergenceError&) {
    row.diverged = true;
  }
  if (row.diverged) {
    row.loss = row.rmse = std::numeric_limits<double>::quiet_NaN();
    if (row.stop_reason != "diverged") row.stop_reason = "diverged";
  }
  return row;
}

}  // namespace

GridReport run_grid(const ExperimentConfig& cfg, const fs::path& out, int workers) {
  require_trajectories(cfg, "grid");
  if (workers < 1) throw ConfigError("--workers", "must be at least 1");
  prepare_output(cfg, out);
  const SystemKind kind = cfg.system.kind;
  const std::vector<Scenario> scenarios = build_scenarios(cfg.trajectories, kind);
  const GridSpec& g = cfg.grid;

  std::vector<GridRow> tasks;
  std::size_t cell = 0;
  for (double a1 : g.a1) {
    for (double a2 : g.a2) {
      for (double beta : g.beta) {
        for (bool tune_on : g.tune) {
          for (bool l1_on : g.l1) {
            GridRow row;
            row.cell = cell;
            row.a1 = a1;
            row.a2 = a2;
            row.beta = beta;
            row.tune = tune_on;
            row.l1 = l1_on;
            tasks.push_back(row);
          }
        }
        ++cell;
      }
    }
  }

  ResultSink sink(tasks.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    with_model(cfg.system, [&](const auto& model) {
      for (std::size_t i = next++; i < tasks.size(); i = next++) {
        try {
          sink.put(i, run_cell(model, cfg, scenarios, tasks[i]));
        } catch (...) {
          sink.fail(std::current_exception());
        }
      }
    });
  };
  const auto n = std::min<std::size_t>(static_cast<std::size_t>(workers), tasks.size());
  std::vector<std::thread> pool;
  for (std::size_t i = 1; i < n; ++i) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();

  GridReport report{sink.take()};
  if (!out.empty()) {
    const Eigen::Index p = cfg.tune.initial_theta.size();
    CsvWriter csv(out / "grid.csv");
    std::vector<std::string> head{"cell", "a1", "a2", "beta", "tune", "l1", "status",
                                  "stop_reason", "iterations", "loss", "rmse",
                                  "manifold_error"};
    append_names(head, "theta_", p);
    csv.row(head);
    for (const auto& r : report.rows) {
      std::vector<std::string> row{std::to_string(r.cell), fmt(r.a1), fmt(r.a2), fmt(r.beta),
                                   r.tune ? "1" : "0", r.l1 ? "1" : "0",
                                   r.diverged ? "diverged" : "ok", r.stop_reason,
                                   std::to_string(r.iterations), fmt(r.loss), fmt(r.rmse),
                                   fmt(r.manifold_error)};
      append(row, r.theta);
      csv.row(row);
    }
  }
  return report;
}

// ---------------------------------------------------------------------------

EvalReport run_eval(const ExperimentConfig& cfg, const ParamVector& theta, const fs::path& out) {
  const std::vector<TrajectorySpec>& specs =
      cfg.eval_trajectories ? *cfg.eval_trajectories : cfg.trajectories;
  if (theta.size() != cfg.tune.initial_theta.size()) {
    throw ConfigError("--theta", "dimension does not match the system");
  }
  prepare_output(cfg, out);
  const SystemKind kind = cfg.system.kind;
  const std::vector<Scenario> scenarios = build_scenarios(specs, kind);

  EvalReport report;
  with_model(cfg.system, [&](const auto& model) {
    RolloutOptions opts;
    opts.sensitivities = false;
    for (std::size_t i = 0; i < scenarios.size(); ++i) {
      opts.stream = tuning_stream(0, 0, i);
      const RolloutRecord rec =
          rollout(model, scenarios[i].trajectory, scenarios[i].initial_state, theta, cfg.sim,
                  loss_for(model, cfg.loss_lambda), l1_for(cfg.l1, cfg.l1.enabled), opts);
      report.rows.push_back({i, specs[i].family, rec.loss, rmse_position(rec)});
    }
  });

  if (!out.empty()) {
    CsvWriter csv(out / "eval.csv");
    csv.row({"trajectory", "family", "loss", "rmse"});
    for (const auto& r : report.rows) {
      csv.row({std::to_string(r.trajectory), r.family, fmt(r.loss), fmt(r.rmse)});
    }
  }
  return report;
}

// ---------------------------------------------------------------------------

VerifyReport run_verify(const ExperimentConfig& cfg, const fs::path& out) {
  require_trajectories(cfg, "verify-gradient");
  prepare_output(cfg, out);
  const auto start = std::chrono::steady_clock::now();
  const SystemKind kind = cfg.system.kind;
  const std::vector<Scenario> scenarios = build_scenarios(cfg.trajectories, kind);
  const VerifySpec& v = cfg.verify;

  VerifyReport report;
  with_model(cfg.system, [&](const auto& model) {
    const LossSpec loss = loss_for(model, cfg.loss_lambda);
    const std::optional<L1Config> l1 = l1_for(cfg.l1, cfg.l1.enabled);
    CounterRng rng(cfg.sim.seed, kVerifyStream);
    for (int s = 0; s < v.samples; ++s) {
      VerifySample sample;
      sample.sample = s;
      sample.theta = v.theta_lower;
      for (Eigen::Index i = 0; i < sample.theta.size(); ++i) {
        sample.theta[i] += rng.uniform() * (v.theta_upper[i] - v.theta_lower[i]);
      }
      const Scenario& sc = scenarios[static_cast<std::size_t>(s) % scenarios.size()];
      RolloutOptions opts;
      opts.store_jacobians = true;
      opts.stream = derive_stream(kVerifyStream, static_cast<std::uint64_t>(s));
      const RolloutRecord rec =
          rollout(model, sc.trajectory, sc.initial_state, sample.theta, cfg.sim, loss, l1, opts);
      sample.forward = assemble_gradient(rec);
      sample.reverse = reverse_gradient(rec);
      sample.forward_reverse_error =
          max_relative_error(sample.forward, sample.reverse,
                             v.relative_floor * sample.forward.cwiseAbs().maxCoeff());
      if (v.finite_differences) {
        const FdGradient fd = fd_gradient(model, sc, sample.theta, cfg.sim, loss, v.epsilon,
                                          cfg.tune.box, l1, opts.stream);
        sample.finite_difference = fd.gradient;
        sample.forward_fd_error = max_relative_error(
            sample.forward, fd.gradient, v.relative_floor * fd.gradient.cwiseAbs().maxCoeff());
      }
      report.worst_forward_reverse =
          std::max(report.worst_forward_reverse, sample.forward_reverse_error);
      report.worst_forward_fd = std::max(report.worst_forward_fd, sample.forward_fd_error);
      report.samples.push_back(std::move(sample));
    }
  });
  report.seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

  if (!out.empty()) {
    CsvWriter csv(out / "verify.csv");
    csv.row({"sample", "component", "theta", "forward", "reverse", "finite_difference"});
    json samples = json::array();
    for (const auto& s : report.samples) {
      for (Eigen::Index i = 0; i < s.theta.size(); ++i) {
        csv.row({std::to_string(s.sample), std::to_string(i), fmt(s.theta[i]),
                 fmt(s.forward[i]), fmt(s.reverse[i]),
                 s.finite_difference ? fmt((*s.finite_difference)[i]) : ""});
      }
      samples.push_back({{"sample", s.sample},
                         {"forward_reverse_error", s.forward_reverse_error},
                         {"forward_fd_error", s.finite_difference ? json(s.forward_fd_error)
                                                                  : json(nullptr)}});
    }
    write_json(out / "verify.json",
               {{"graph_consistent", cfg.sim.graph_consistent()},
                {"epsilon", v.epsilon},
                {"relative_floor", v.relative_floor},
                {"worst_forward_reverse", report.worst_forward_reverse},
                {"worst_forward_fd",
                 v.finite_differences ? json(report.worst_forward_fd) : json(nullptr)},
                {"samples", samples}});
  }
  return report;
}

// ---------------------------------------------------------------------------

SimulateReport run_simulate(const ExperimentConfig& cfg, const ParamVector& theta,
                            const fs::path& out, bool dump_sensitivity) {
  require_trajectories(cfg, "simulate");
  if (theta.size() != cfg.tune.initial_theta.size()) {
    throw ConfigError("--theta", "dimension does not match the system");
  }
  prepare_output(cfg, out);
  const SystemKind kind = cfg.system.kind;
  const std::vector<Scenario> scenarios = build_scenarios({cfg.trajectories.front()}, kind);

  SimulateReport report;
  with_model(cfg.system, [&](const auto& model) {
    RolloutOptions opts;
    opts.stream = tuning_stream(0, 0, 0);
    const RolloutRecord rec =
        rollout(model, scenarios[0].trajectory, scenarios[0].initial_state, theta, cfg.sim,
                loss_for(model, cfg.loss_lambda), l1_for(cfg.l1, cfg.l1.enabled), opts);
    report.loss = rec.loss;
    report.rmse = rmse_position(rec);
    report.manifold_error = worst_manifold_error(model, rec);
    report.steps = rec.steps();
    if (out.empty()) return;

    const Eigen::Index n = model.state_dim(), m = model.control_dim(), p = model.param_dim();
    CsvWriter csv(out / "rollout.csv");
    std::vector<std::string> head{"k", "t"};
    append_names(head, "x_", n);
    append_names(head, "x_true_", n);
    append_names(head, "x_desired_", n);
    append_names(head, "u_", m);
    const auto q = static_cast<Eigen::Index>(model.matched_channel().control_index.size());
    if (cfg.l1.enabled) append_names(head, "u_ad_", q);
    csv.row(head);
    for (long k = 0; k <= rec.steps(); ++k) {
      const auto i = static_cast<std::size_t>(k);
      std::vector<std::string> row{std::to_string(k), fmt(rec.time[i])};
      append(row, rec.state[i]);
      append(row, rec.true_state[i]);
      append(row, rec.desired[i].state);
      append(row, rec.control[i]);
      if (cfg.l1.enabled) {
        if (i < rec.adaptive.size()) {
          append(row, rec.adaptive[i]);
        } else {
          for (Eigen::Index j = 0; j < q; ++j) row.push_back("");
        }
      }
      csv.row(row);
    }
    if (dump_sensitivity) {
      CsvWriter sens(out / "sensitivity.csv");
      std::vector<std::string> shead{"k"};
      for (Eigen::Index r = 0; r < n; ++r)
        for (Eigen::Index c = 0; c < p; ++c)
          shead.push_back("dx" + std::to_string(r) + "_dtheta" + std::to_string(c));
      for (Eigen::Index r = 0; r < m; ++r)
        for (Eigen::Index c = 0; c < p; ++c)
          shead.push_back("du" + std::to_string(r) + "_dtheta" + std::to_string(c));
      sens.row(shead);
      for (std::size_t k = 0; k < rec.sensitivity.size(); ++k) {
        std::vector<std::string> row{std::to_string(k)};
        const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> dx =
            rec.sensitivity[k].dx_dtheta;
        const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> du =
            rec.sensitivity[k].du_dtheta;
        append(row, Eigen::Map<const Eigen::VectorXd>(dx.data(), dx.size()));
        append(row, Eigen::Map<const Eigen::VectorXd>(du.data(), du.size()));
        sens.row(row);
      }
    }
    write_json(out / "summary.json", {{"loss", rec.loss},
                                      {"rmse", report.rmse},
                                      {"steps", rec.steps()},
                                      {"manifold_error", report.manifold_error},
                                      {"theta", to_std(theta)},
                                      {"gradient", to_std(assemble_gradient(rec).transpose())}});
  });
  return report;
}

}  // namespace sensitune::experiment
