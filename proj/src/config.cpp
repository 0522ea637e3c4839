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

#include <cmath>
#include <fstream>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "sensitune/experiment.hpp"

namespace sensitune::experiment {
namespace {

using nlohmann::json;

// Strict view of one JSON object: every key must be consumed.
class Reader {
 public:
  Reader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(path_.empty() ? "<root>" : path_, "expected an object");
  }

  std::string field(const std::string& key) const {
    return path_.empty() ? key : path_ + "." + key;
  }

  const json* find(const std::string& key) {
    seen_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  double number(const std::string& key, double fallback) {
    const json* v = find(key);
    if (!v) return fallback;
    if (!v->is_number()) throw ConfigError(field(key), "expected a number");
    const double d = v->get<double>();
    if (!std::isfinite(d)) throw ConfigError(field(key), "must be finite");
    return d;
  }

  long integer(const std::string& key, long fallback) {
    const json* v = find(key);
    if (!v) return fallback;
    if (!v->is_number_integer()) throw ConfigError(field(key), "expected an integer");
    return v->get<long>();
  }

  std::uint64_t unsigned_integer(const std::string& key, std::uint64_t fallback) {
    const json* v = find(key);
    if (!v) return fallback;
    if (!v->is_number_unsigned()) {
      throw ConfigError(field(key), "expected a non-negative integer");
    }
    return v->get<std::uint64_t>();
  }

  bool boolean(const std::string& key, bool fallback) {
    const json* v = find(key);
    if (!v) return fallback;
    if (!v->is_boolean()) throw ConfigError(field(key), "expected true or false");
    return v->get<bool>();
  }

  std::string string(const std::string& key, const std::string& fallback) {
    const json* v = find(key);
    if (!v) return fallback;
    if (!v->is_string()) throw ConfigError(field(key), "expected a string");
    return v->get<std::string>();
  }

  // A list of numbers. A scalar is broadcast to `broadcast` entries when
  // that is positive.
  std::optional<Eigen::VectorXd> vector(const std::string& key, Eigen::Index broadcast = 0) {
    const json* v = find(key);
    if (!v) return std::nullopt;
    if (v->is_number() && broadcast > 0) {
      return Eigen::VectorXd::Constant(broadcast, v->get<double>());
    }
    if (!v->is_array()) throw ConfigError(field(key), "expected a list of numbers");
    Eigen::VectorXd out(static_cast<Eigen::Index>(v->size()));
    for (std::size_t i = 0; i < v->size(); ++i) {
      if (!(*v)[i].is_number()) throw ConfigError(field(key), "expected a list of numbers");
      out[static_cast<Eigen::Index>(i)] = (*v)[i].get<double>();
    }
    if (!out.allFinite()) throw ConfigError(field(key), "entries must be finite");
    return out;
  }

  std::optional<std::vector<bool>> flags(const std::string& key) {
    const json* v = find(key);
    if (!v) return std::nullopt;
    if (!v->is_array()) throw ConfigError(field(key), "expected a list of booleans");
    std::vector<bool> out;
    for (const auto& e : *v) {
      if (!e.is_boolean()) throw ConfigError(field(key), "expected a list of booleans");
      out.push_back(e.get<bool>());
    }
    return out;
  }

  void finish() const {
    for (const auto& [key, value] : j_.items()) {
      if (!seen_.count(key)) throw ConfigError(field(key), "unknown key");
    }
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

void require(bool ok, const std::string& field, const std::string& what) {
  if (!ok) throw ConfigError(field, what);
}

std::vector<double> to_std(const Eigen::VectorXd& v) {
  return std::vector<double>(v.data(), v.data() + v.size());
}

ParamVector default_initial_theta(SystemKind kind) {
  if (kind == SystemKind::kDubins) return ParamVector::Constant(4, 2.0);
  ParamVector th(12);
  th << 16, 16, 16, 5.6, 5.6, 5.6, 8.81, 8.81, 8.81, 2.54, 2.54, 2.54;
  return th;
}

Eigen::Index state_dim(SystemKind kind) {
  return kind == SystemKind::kDubins ? layout::Dubins::kStateDim
                                     : layout::Quadrotor::kStateDim;
}

Eigen::Index param_dim(SystemKind kind) {
  return kind == SystemKind::kDubins ? layout::Dubins::kParamDim
                                     : layout::Quadrotor::kParamDim;
}

SystemSpec parse_system(const json* j) {
  require(j != nullptr, "system", "missing");
  Reader r(*j, "system");
  SystemSpec s;
  const std::string type = r.string("type", "");
  if (type == "dubins") {
    s.kind = SystemKind::kDubins;
    s.dubins.mass = r.number("mass", s.dubins.mass);
    s.dubins.inertia = r.number("inertia", s.dubins.inertia);
    require(s.dubins.mass > 0.0, r.field("mass"), "must be positive");
    require(s.dubins.inertia > 0.0, r.field("inertia"), "must be positive");
  } else if (type == "quadrotor") {
    s.kind = SystemKind::kQuadrotor;
    s.quadrotor.mass = r.number("mass", s.quadrotor.mass);
    s.quadrotor.gravity = r.number("gravity", s.quadrotor.gravity);
    if (auto v = r.vector("inertia")) {
      if (v->size() == 3) {
        s.quadrotor.inertia = v->asDiagonal();
      } else if (v->size() == 9) {
        s.quadrotor.inertia = Eigen::Map<const Eigen::Matrix<double, 3, 3, Eigen::RowMajor>>(v->data());
      } else {
        throw ConfigError(r.field("inertia"), "expected 3 diagonal entries or 9 row-major entries");
      }
    }
    require(s.quadrotor.mass > 0.0, r.field("mass"), "must be positive");
    require(s.quadrotor.gravity >= 0.0, r.field("gravity"), "must be non-negative");
    try {
      Quadrotor check(s.quadrotor);
    } catch (const Error& e) {
      throw ConfigError(r.field("inertia"), e.what());
    }
  } else {
    throw ConfigError(r.field("type"), "expected \"dubins\" or \"quadrotor\"");
  }
  r.finish();
  return s;
}

TrajectorySpec parse_trajectory(const json& j, const std::string& path, SystemKind kind) {
  Reader r(j, path);
  TrajectorySpec t;
  t.family = r.string("family", "");
  require(!t.family.empty(), r.field("family"), "missing");
  if (kind == SystemKind::kDubins) {
    CurveFamily f;
    try {
      f = curve_family_from_string(t.family);
    } catch (const Error& e) {
      throw ConfigError(r.field("family"), e.what());
    }
    t.params = default_curve(f).params;
    t.params.a = r.number("a", t.params.a);
    t.params.b = r.number("b", t.params.b);
    t.params.w = r.number("w", t.params.w);
    require(t.params.w > 0.0, r.field("w"), "must be positive");
  } else {
    require(t.family == "circle", r.field("family"), "the quadrotor supports \"circle\" only");
    t.params = CurveParams{};
  }
  t.start_at_rest = r.boolean("start_at_rest", false);
  if (auto v = r.vector("initial_offset")) {
    require(v->size() == state_dim(kind), r.field("initial_offset"),
            "length must equal the state dimension " + std::to_string(state_dim(kind)));
    if (kind == SystemKind::kQuadrotor) {
      require(v->segment<9>(layout::Quadrotor::kRot).isZero(0.0), r.field("initial_offset"),
              "attitude entries must be zero");
    }
    t.initial_offset = *v;
  }
  r.finish();
  // Heading must be well defined along the whole curve.
  if (kind == SystemKind::kDubins) {
    try {
      dubins_curve({curve_family_from_string(t.family), t.params}, 0.0);
    } catch (const Error& e) {
      throw ConfigError(path, e.what());
    }
  }
  return t;
}

std::vector<TrajectorySpec> parse_trajectories(const json* j, const std::string& key,
                                               SystemKind kind) {
  require(j != nullptr, key, "missing");
  require(j->is_array(), key, "expected a list");
  std::vector<TrajectorySpec> out;
  for (std::size_t i = 0; i < j->size(); ++i) {
    out.push_back(parse_trajectory((*j)[i], key + "[" + std::to_string(i) + "]", kind));
  }
  return out;
}

// Maps named noise groups onto per-state standard deviations.
Eigen::VectorXd noise_vector(SystemKind kind, const std::map<std::string, double>& groups) {
  Eigen::VectorXd out = Eigen::VectorXd::Zero(state_dim(kind));
  bool any = false;
  for (const auto& [name, sigma] : groups) {
    if (sigma != 0.0) any = true;
    if (kind == SystemKind::kDubins) {
      using L = layout::Dubins;
      if (name == "position") out.segment<2>(L::kX).setConstant(sigma);
      if (name == "heading") out[L::kHeading] = sigma;
      if (name == "speed") out[L::kSpeed] = sigma;
      if (name == "yaw_rate") out[L::kYawRate] = sigma;
    } else {
      using L = layout::Quadrotor;
      if (name == "position") out.segment<3>(L::kPos).setConstant(sigma);
      if (name == "velocity") out.segment<3>(L::kVel).setConstant(sigma);
      if (name == "angular_velocity") out.segment<3>(L::kOmega).setConstant(sigma);
    }
  }
  return any ? out : Eigen::VectorXd();
}

void parse_sim(const json* j, SystemKind kind, ExperimentConfig& cfg) {
  static const json kEmpty = json::object();
  Reader r(j ? *j : kEmpty, "sim");
  SimConfig& s = cfg.sim;
  s.dt = r.number("dt", s.dt);
  s.horizon = r.number("horizon", s.horizon);
  require(s.dt > 0.0, r.field("dt"), "must be positive");
  require(s.horizon > 0.0, r.field("horizon"), "must be positive");
  try {
    s.steps();
  } catch (const Error&) {
    throw ConfigError(r.field("horizon"), "horizon / dt must be a positive integer");
  }
  const std::string plant = r.string("plant_integrator", std::string(to_string(s.plant)));
  try {
    s.plant = plant_integrator_from_string(plant);
  } catch (const Error& e) {
    throw ConfigError(r.field("plant_integrator"), e.what());
  }
  s.adaptive_tolerance = r.number("adaptive_tolerance", s.adaptive_tolerance);
  require(s.adaptive_tolerance > 0.0, r.field("adaptive_tolerance"), "must be positive");
  s.seed = r.unsigned_integer("rng_seed", s.seed);

  if (const json* n = r.find("noise")) {
    Reader nr(*n, r.field("noise"));
    for (const auto& name : noise_groups(kind)) {
      const double sigma = nr.number(name, 0.0);
      require(sigma >= 0.0, nr.field(name), "must be non-negative");
      cfg.noise[name] = sigma;
    }
    nr.finish();
  } else {
    for (const auto& name : noise_groups(kind)) cfg.noise[name] = 0.0;
  }
  s.noise_std = noise_vector(kind, cfg.noise);

  if (const json* u = r.find("uncertainty")) {
    Reader ur(*u, r.field("uncertainty"));
    if (kind == SystemKind::kDubins) {
      s.uncertainty.a1 = ur.number("a1", 0.0);
      s.uncertainty.a2 = ur.number("a2", 0.0);
    } else {
      s.uncertainty.beta = ur.number("beta", 1.0);
      require(s.uncertainty.beta > 0.0, ur.field("beta"), "must be positive");
    }
    ur.finish();
  }
  r.finish();
}

void parse_tune(const json* j, SystemKind kind, TuneSpec& t) {
  static const json kEmpty = json::object();
  Reader r(j ? *j : kEmpty, "tune");
  const Eigen::Index p = param_dim(kind);
  t.initial_theta = r.vector("initial_theta", p).value_or(default_initial_theta(kind));
  require(t.initial_theta.size() == p, r.field("initial_theta"),
          "length must equal the parameter dimension " + std::to_string(p));
  const bool quad = kind == SystemKind::kQuadrotor;
  t.step_size = r.number("step_size", quad ? 1e-3 : 0.1);
  require(t.step_size > 0.0, r.field("step_size"), "must be positive");
  t.box.lower = r.vector("lower", p).value_or(ParamVector::Constant(p, 1e-3));
  t.box.upper = r.vector("upper", p).value_or(ParamVector::Constant(p, 1e3));
  require(t.box.lower.size() == p, r.field("lower"), "length must equal the parameter dimension");
  require(t.box.upper.size() == p, r.field("upper"), "length must equal the parameter dimension");
  require((t.box.lower.array() > 0.0).all(), r.field("lower"), "must be positive");
  require((t.box.lower.array() < t.box.upper.array()).all(), r.field("upper"),
          "must exceed lower elementwise");
  require(t.box.contains(t.initial_theta), r.field("initial_theta"),
          "must lie inside [lower, upper]");
  t.termination.rel_tol = r.number("rel_tol", quad ? 1e-3 : 1e-4);
  require(t.termination.rel_tol > 0.0, r.field("rel_tol"), "must be positive");
  if (const json* inc = r.find("increase_tol")) {
    if (!inc->is_null()) {
      require(inc->is_number(), r.field("increase_tol"), "expected a number or null");
      t.termination.increase_tol = inc->get<double>();
      require(*t.termination.increase_tol >= 0.0, r.field("increase_tol"), "must be non-negative");
    }
  } else if (quad) {
    t.termination.increase_tol = 0.1;
  }
  t.termination.max_iters = static_cast<int>(r.integer("max_iters", 500));
  require(t.termination.max_iters >= 1, r.field("max_iters"), "must be at least 1");
  r.finish();
}

void parse_l1(const json* j, L1Spec& l1) {
  static const json kEmpty = json::object();
  Reader r(j ? *j : kEmpty, "l1");
  l1.enabled = r.boolean("enabled", false);
  l1.config.bandwidth = r.number("bandwidth", l1.config.bandwidth);
  l1.config.predictor_pole = r.number("predictor_pole", l1.config.predictor_pole);
  l1.config.adaptation_period = r.number("adaptation_period", l1.config.adaptation_period);
  require(l1.config.bandwidth > 0.0, r.field("bandwidth"), "must be positive");
  require(l1.config.predictor_pole < 0.0, r.field("predictor_pole"), "must be negative");
  require(l1.config.adaptation_period >= 0.0, r.field("adaptation_period"),
          "must be non-negative (0 means every control step)");
  r.finish();
}

void parse_grid(const json* j, SystemKind kind, const SimConfig& sim, GridSpec& g) {
  static const json kEmpty = json::object();
  Reader r(j ? *j : kEmpty, "grid");
  auto axis = [&](const std::string& key, double fallback) {
    auto v = r.vector(key);
    if (!v) return std::vector<double>{fallback};
    require(v->size() > 0, r.field(key), "must not be empty");
    return to_std(*v);
  };
  if (kind == SystemKind::kDubins) {
    g.a1 = axis("a1", sim.uncertainty.a1);
    g.a2 = axis("a2", sim.uncertainty.a2);
    g.beta = {1.0};
  } else {
    g.a1 = {0.0};
    g.a2 = {0.0};
    g.beta = axis("beta", sim.uncertainty.beta);
    for (double b : g.beta) require(b > 0.0, r.field("beta"), "entries must be positive");
  }
  if (auto f = r.flags("tune")) g.tune = *f;
  if (auto f = r.flags("l1")) g.l1 = *f;
  require(!g.tune.empty(), r.field("tune"), "must not be empty");
  require(!g.l1.empty(), r.field("l1"), "must not be empty");
  g.common_noise = r.boolean("common_noise", false);
  r.finish();
}

void parse_verify(const json* j, SystemKind kind, const TuneSpec& tune, VerifySpec& v) {
  static const json kEmpty = json::object();
  Reader r(j ? *j : kEmpty, "verify");
  const Eigen::Index p = param_dim(kind);
  v.samples = static_cast<int>(r.integer("samples", v.samples));
  require(v.samples >= 1, r.field("samples"), "must be at least 1");
  v.epsilon = r.number("epsilon", v.epsilon);
  require(v.epsilon > 0.0, r.field("epsilon"), "must be positive");
  v.finite_differences = r.boolean("finite_differences", true);
  v.relative_floor = r.number("relative_floor", v.relative_floor);
  require(v.relative_floor >= 0.0, r.field("relative_floor"), "must be non-negative");
  // Default range: theta_0 scaled by [0.5, 1.5], clipped to the box.
  v.theta_lower = r.vector("theta_lower", p).value_or(
      (0.5 * tune.initial_theta).cwiseMax(tune.box.lower));
  v.theta_upper = r.vector("theta_upper", p).value_or(
      (1.5 * tune.initial_theta).cwiseMin(tune.box.upper));
  require(v.theta_lower.size() == p, r.field("theta_lower"), "length must equal the parameter dimension");
  require(v.theta_upper.size() == p, r.field("theta_upper"), "length must equal the parameter dimension");
  require((v.theta_lower.array() <= v.theta_upper.array()).all(), r.field("theta_upper"),
          "must not be below theta_lower");
  require(tune.box.contains(v.theta_lower) && tune.box.contains(v.theta_upper),
          r.field("theta_lower"), "sampling range must lie inside the tuning box");
  r.finish();
}

json trajectory_json(const TrajectorySpec& t, SystemKind kind) {
  json j{{"family", t.family}, {"start_at_rest", t.start_at_rest}};
  if (kind == SystemKind::kDubins) {
    j["a"] = t.params.a;
    j["b"] = t.params.b;
    j["w"] = t.params.w;
  }
  if (t.initial_offset.size() > 0) j["initial_offset"] = to_std(t.initial_offset);
  return j;
}

}  // namespace

std::vector<std::string> noise_groups(SystemKind kind) {
  if (kind == SystemKind::kDubins) return {"position", "heading", "speed", "yaw_rate"};
  return {"position", "velocity", "angular_velocity"};
}

ExperimentConfig parse_config(const json& doc) {
  Reader r(doc, "");
  ExperimentConfig cfg;
  cfg.system = parse_system(r.find("system"));
  const SystemKind kind = cfg.system.kind;
  cfg.trajectories = parse_trajectories(r.find("trajectories"), "trajectories", kind);
  if (const json* e = r.find("eval_trajectories")) {
    cfg.eval_trajectories = parse_trajectories(e, "eval_trajectories", kind);
  }
  parse_sim(r.find("sim"), kind, cfg);
  if (const json* l = r.find("loss")) {
    Reader lr(*l, "loss");
    cfg.loss_lambda = lr.number("lambda", 0.0);
    require(cfg.loss_lambda >= 0.0, lr.field("lambda"), "must be non-negative");
    lr.finish();
  }
  parse_tune(r.find("tune"), kind, cfg.tune);
  parse_l1(r.find("l1"), cfg.l1);
  parse_grid(r.find("grid"), kind, cfg.sim, cfg.grid);
  parse_verify(r.find("verify"), kind, cfg.tune, cfg.verify);
  r.finish();
  return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("--config", "cannot open " + path.string());
  json doc;
  try {
    doc = json::parse(in, nullptr, true, /*ignore_comments=*/true);
  } catch (const json::parse_error& e) {
    throw ConfigError("--config", std::string("malformed JSON: ") + e.what());
  }
  return parse_config(doc);
}

json to_json(const ExperimentConfig& cfg) {
  const SystemKind kind = cfg.system.kind;
  const bool dubins = kind == SystemKind::kDubins;
  json j;
  if (dubins) {
    j["system"] = {{"type", "dubins"},
                   {"mass", cfg.system.dubins.mass},
                   {"inertia", cfg.system.dubins.inertia}};
  } else {
    const Eigen::Matrix<double, 3, 3, Eigen::RowMajor> inertia = cfg.system.quadrotor.inertia;
    j["system"] = {{"type", "quadrotor"},
                   {"mass", cfg.system.quadrotor.mass},
                   {"gravity", cfg.system.quadrotor.gravity},
                   {"inertia", std::vector<double>(inertia.data(), inertia.data() + 9)}};
  }
  j["trajectories"] = json::array();
  for (const auto& t : cfg.trajectories) j["trajectories"].push_back(trajectory_json(t, kind));
  if (cfg.eval_trajectories) {
    j["eval_trajectories"] = json::array();
    for (const auto& t : *cfg.eval_trajectories) {
      j["eval_trajectories"].push_back(trajectory_json(t, kind));
    }
  }
  json noise = json::object();
  for (const auto& [name, sigma] : cfg.noise) noise[name] = sigma;
  json unc = dubins ? json{{"a1", cfg.sim.uncertainty.a1}, {"a2", cfg.sim.uncertainty.a2}}
                    : json{{"beta", cfg.sim.uncertainty.beta}};
  j["sim"] = {{"dt", cfg.sim.dt},
              {"horizon", cfg.sim.horizon},
              {"plant_integrator", std::string(to_string(cfg.sim.plant))},
              {"adaptive_tolerance", cfg.sim.adaptive_tolerance},
              {"rng_seed", cfg.sim.seed},
              {"noise", noise},
              {"uncertainty", unc}};
  j["loss"] = {{"lambda", cfg.loss_lambda}};
  const auto& t = cfg.tune;
  j["tune"] = {{"initial_theta", to_std(t.initial_theta)},
               {"step_size", t.step_size},
               {"lower", to_std(t.box.lower)},
               {"upper", to_std(t.box.upper)},
               {"rel_tol", t.termination.rel_tol},
               {"increase_tol", t.termination.increase_tol ? json(*t.termination.increase_tol)
                                                           : json(nullptr)},
               {"max_iters", t.termination.max_iters}};
  j["l1"] = {{"enabled", cfg.l1.enabled},
             {"bandwidth", cfg.l1.config.bandwidth},
             {"predictor_pole", cfg.l1.config.predictor_pole},
             {"adaptation_period", cfg.l1.config.adaptation_period}};
  json grid = {{"tune", cfg.grid.tune}, {"l1", cfg.grid.l1},
               {"common_noise", cfg.grid.common_noise}};
  if (dubins) {
    grid["a1"] = cfg.grid.a1;
    grid["a2"] = cfg.grid.a2;
  } else {
    grid["beta"] = cfg.grid.beta;
  }
  j["grid"] = grid;
  j["verify"] = {{"samples", cfg.verify.samples},
                 {"epsilon", cfg.verify.epsilon},
                 {"finite_differences", cfg.verify.finite_differences},
                 {"relative_floor", cfg.verify.relative_floor},
                 {"theta_lower", to_std(cfg.verify.theta_lower)},
                 {"theta_upper", to_std(cfg.verify.theta_upper)}};
  return j;
}

ParamVector load_theta(const std::filesystem::path& path, Eigen::Index expected) {
  std::ifstream in(path);
  if (!in) throw ConfigError("--theta", "cannot open " + path.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("--theta", std::string("malformed JSON: ") + e.what());
  }
  const json& arr = doc.is_object() && doc.contains("theta") ? doc["theta"] : doc;
  if (!arr.is_array()) throw ConfigError("--theta", "expected {\"theta\": [...]} or a list");
  ParamVector theta(static_cast<Eigen::Index>(arr.size()));
  for (std::size_t i = 0; i < arr.size(); ++i) {
    if (!arr[i].is_number()) throw ConfigError("--theta", "entries must be numbers");
    theta[static_cast<Eigen::Index>(i)] = arr[i].get<double>();
  }
  if (theta.size() != expected) {
    throw ConfigError("--theta", "has " + std::to_string(theta.size()) +
                                     " entries, the system expects " + std::to_string(expected));
  }
  return theta;
}

}  // namespace sensitune::experiment
