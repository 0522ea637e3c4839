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

// Projected gradient descent on controller parameters, theta <- P(theta -
// alpha grad), with the gradient of each rollout obtained by sensitivity
// propagation and averaged over a batch of scenarios.

#ifndef SENSITUNE_OPTIM_HPP_
#define SENSITUNE_OPTIM_HPP_

#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "sensitune/core.hpp"
#include "sensitune/rng.hpp"
#include "sensitune/sensprop.hpp"
#include "sensitune/sim.hpp"

namespace sensitune {

struct Termination {
  // Stop when the loss drops by less than rel_tol times the current loss.
  double rel_tol = 1e-4;
  // When set, loss increases up to this fraction of the previous loss are
  // tolerated (noisy data) and only a larger increase stops the loop.
  std::optional<double> increase_tol;
  int max_iters = 500;
};

struct TuneConfig {
  double step_size = 0.1;
  FeasibleBox box;
  Termination termination;

  void validate() const {
    if (!(step_size > 0.0)) throw Error("tune: step size must be positive");
    box.validate();
    if (!(termination.rel_tol > 0.0)) throw Error("tune: rel_tol must be positive");
    if (termination.increase_tol && !(*termination.increase_tol >= 0.0)) {
      throw Error("tune: increase_tol must be non-negative");
    }
    if (termination.max_iters < 1) throw Error("tune: max_iters must be at least 1");
  }
};

// An initial state paired with the trajectory it should track.
struct Scenario {
  Trajectory trajectory;
  StateVector initial_state;
};

inline ParamVector project(const ParamVector& theta, const FeasibleBox& box) {
  if (theta.size() != box.size()) throw Error("project: dimension mismatch");
  return theta.cwiseMax(box.lower).cwiseMin(box.upper);
}

inline ParamVector gd_step(const ParamVector& theta, const RowVector& grad,
                           double step_size, const FeasibleBox& box) {
  if (grad.size() != theta.size()) throw Error("gd_step: dimension mismatch");
  if (!grad.allFinite()) throw Error("gd_step: non-finite gradient (diverged rollout)");
  return project(theta - step_size * grad.transpose(), box);
}

struct TuneIteration {
  int iteration = 0;
  double loss = 0.0;  // batch mean
  ParamVector theta;
  RowVector gradient;
};

enum class StopReason { kConverged, kLossIncrease, kMaxIterations };

inline std::string_view to_string(StopReason r) {
  switch (r) {
    case StopReason::kConverged: return "converged";
    case StopReason::kLossIncrease: return "loss_increase";
    case StopReason::kMaxIterations: return "max_iterations";
  }
  return "unknown";
}

struct TuneResult {
  ParamVector theta;       // best-so-far
  ParamVector last_theta;  // last evaluated
  double loss = std::numeric_limits<double>::infinity();  // at `theta`
  std::vector<TuneIteration> history;
  StopReason reason = StopReason::kMaxIterations;
};

class TuneAborted : public DivergenceError {
 public:
  TuneAborted(const DivergenceError& cause, int iteration, TuneResult partial)
      : DivergenceError(std::string("tune iteration ") + std::to_string(iteration) +
                            ": " + cause.what(),
                        cause.step()),
        iteration_(iteration),
        partial_(std::move(partial)) {}
  int iteration() const { return iteration_; }
  const TuneResult& partial() const { return partial_; }

 private:
  int iteration_;
  TuneResult partial_;
};

// Noise stream of scenario `index` at optimizer iteration `iteration`.
inline std::uint64_t tuning_stream(std::uint64_t base, int iteration, std::size_t index) {
  return derive_stream(derive_stream(base, static_cast<std::uint64_t>(iteration)), index);
}

// Called with (iteration, scenario index, record) after every tuning rollout.
using RolloutObserver = std::function<void(int, std::size_t, const RolloutRecord&)>;

struct BatchEvaluation {
  double loss = 0.0;
  RowVector gradient;
};

template <SystemModel S>
BatchEvaluation evaluate_batch(const S& model, const std::vector<Scenario>& scenarios,
                               const ParamVector& theta, const SimConfig& sim,
                               const LossSpec& loss,
                               const std::optional<L1Config>& l1,
                               std::uint64_t base_stream, int iteration,
                               const RolloutObserver& observer = {}) {
  BatchEvaluation out{0.0, RowVector::Zero(theta.size())};
  for (std::size_t i = 0; i < scenarios.size(); ++i) {
    RolloutOptions opts;
    opts.stream = tuning_stream(base_stream, iteration, i);
    const RolloutRecord rec = rollout(model, scenarios[i].trajectory,
                                      scenarios[i].initial_state, theta, sim, loss,
                                      l1, opts);
    if (observer) observer(iteration, i, rec);
    out.loss += rec.loss;
    out.gradient += assemble_gradient(rec);
  }
  const double count = static_cast<double>(scenarios.size());
  out.loss /= count;
  out.gradient /= count;
  return out;
}

template <SystemModel S>
TuneResult tune(const S& model, const std::vector<Scenario>& scenarios,
                const ParamVector& theta0, const TuneConfig& cfg,
                const SimConfig& sim, const LossSpec& loss,
                const std::optional<L1Config>& l1 = std::nullopt,
                std::uint64_t base_stream = 0,
                const RolloutObserver& observer = {}) {
  if (scenarios.empty()) throw Error("tune: no scenarios");
  if (!cfg.box.contains(theta0)) throw Error("tune: initial parameters outside the box");

  TuneResult result;
  result.theta = theta0;
  result.last_theta = theta0;
  ParamVector theta = theta0;
  const Termination& term = cfg.termination;

  for (int it = 0; it < term.max_iters; ++it) {
    BatchEvaluation eval;
    try {
      eval = evaluate_batch(model, scenarios, theta, sim, loss, l1, base_stream, it,
                            observer);
    } catch (const DivergenceError& e) {
      throw TuneAborted(e, it, result);
    }
    result.history.push_back({it, eval.loss, theta, eval.gradient});
    result.last_theta = theta;
    if (eval.loss < result.loss) {
      result.loss = eval.loss;
      result.theta = theta;
    }

    if (eval.loss == 0.0) {
      result.reason = StopReason::kConverged;
      return result;
    }
    if (it > 0) {
      const double prev = result.history[it - 1].loss;
      const double reduction = prev - eval.loss;
      if (term.increase_tol) {
        if (-reduction > *term.increase_tol * prev) {
          result.reason = StopReason::kLossIncrease;
          return result;
        }
        if (reduction >= 0.0 && reduction < term.rel_tol * eval.loss) {
          result.reason = StopReason::kConverged;
          return result;
        }
      } else if (reduction < term.rel_tol * eval.loss) {
        result.reason = StopReason::kConverged;
        return result;
      }
    }
    if (it + 1 == term.max_iters) break;
    try {
      theta = gd_step(theta, eval.gradient, cfg.step_size, cfg.box);
    } catch (const Error& e) {
      throw TuneAborted(DivergenceError(e.what(), 0), it, result);
    }
  }
  result.reason = StopReason::kMaxIterations;
  return result;
}

}  // namespace sensitune

#endif  // SENSITUNE_OPTIM_HPP_
