#include "densegen/env.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

#include "densegen/error.hpp"
#include "densegen/rng.hpp"

namespace densegen {

namespace {

constexpr int kWaypoints = 3;
constexpr int kPourDone = 3;
constexpr int kMaxDraws = 100000;

double dist2d(std::span<const double> a, std::span<const double> b) {
  return std::hypot(a[0] - b[0], a[1] - b[1]);
}

std::span<const double> waypoint(const EnvState& s, int k) {
  return std::span<const double>(s.targets).subspan(2 * static_cast<std::size_t>(k), 2);
}

double clamp_unit(double v) { return std::clamp(v, -1.0, 1.0); }

void update_progress(const EnvSpec& spec, EnvState& s) {
  const double thr = spec.success_threshold;
  switch (spec.kind) {
    case EnvKind::reach2d:
      break;
    case EnvKind::waypoints2d:
      if (s.progress < kWaypoints && dist2d(s.pose, waypoint(s, s.progress)) < thr) ++s.progress;
      break;
    case EnvKind::rotate_pour: {
      const bool at_cup = dist2d(s.pose, s.targets) < thr;
      if (s.progress == 0 && at_cup) {
        s.progress = 1;
      } else if (s.progress == 1 && at_cup && std::abs(s.pose[2] - s.targets[2]) < thr) {
        s.progress = 2;
      } else if (s.progress == 2 && at_cup && std::abs(s.pose[2]) < thr) {
        s.progress = kPourDone;
      }
      break;
    }
  }
}

void check_dims(const EnvSpec& spec, const EnvState& s) {
  const std::size_t targets = spec.kind == EnvKind::reach2d       ? 2
                              : spec.kind == EnvKind::waypoints2d ? 2 * kWaypoints
                                                                  : 3;
  if (s.pose.size() != spec.action_dim || s.targets.size() != targets) {
    throw DimensionError(fmt::format("{} state with pose {} and {} targets",
                                     to_string(spec.kind), s.pose.size(), s.targets.size()));
  }
}

}  // namespace

std::string to_string(EnvKind kind) {
  switch (kind) {
    case EnvKind::reach2d: return "reach2d";
    case EnvKind::waypoints2d: return "waypoints2d";
    case EnvKind::rotate_pour: return "rotate-pour";
  }
  return "?";
}

EnvKind parse_env(const std::string& name) {
  if (name == "reach2d") return EnvKind::reach2d;
  if (name == "waypoints2d") return EnvKind::waypoints2d;
  if (name == "rotate-pour") return EnvKind::rotate_pour;
  throw ConfigError(fmt::format("unknown env '{}' (reach2d, waypoints2d, rotate-pour)", name));
}

EnvSpec EnvSpec::make(EnvKind kind) {
  EnvSpec s;
  s.kind = kind;
  switch (kind) {
    case EnvKind::reach2d:
      s.state_dim = 4;
      s.action_dim = s.proprio_dim = 2;
      break;
    case EnvKind::waypoints2d:
      s.state_dim = 2 + 3 * kWaypoints;
      s.action_dim = s.proprio_dim = 2;
      break;
    case EnvKind::rotate_pour:
      s.state_dim = 7;
      s.action_dim = s.proprio_dim = 3;
      break;
  }
  return s;
}

Observation observe(const EnvSpec& spec, const EnvState& s) {
  check_dims(spec, s);
  Observation o;
  o.proprio = s.pose;
  o.state = s.pose;
  o.state.insert(o.state.end(), s.targets.begin(), s.targets.end());
  if (spec.kind == EnvKind::waypoints2d) {
    for (int k = 0; k < kWaypoints; ++k) o.state.push_back(k < s.progress ? 1.0 : 0.0);
  } else if (spec.kind == EnvKind::rotate_pour) {
    o.state.push_back(s.progress / static_cast<double>(kPourDone));
  }
  return o;
}

EnvState state_from_observation(const EnvSpec& spec, const Observation& o) {
  if (o.state.size() != spec.state_dim) {
    throw DataError(fmt::format("{} observation with {} state values, expected {}",
                                to_string(spec.kind), o.state.size(), spec.state_dim));
  }
  EnvState s;
  const auto pose_end = o.state.begin() + static_cast<std::ptrdiff_t>(spec.action_dim);
  s.pose.assign(o.state.begin(), pose_end);
  switch (spec.kind) {
    case EnvKind::reach2d:
      s.targets.assign(pose_end, o.state.end());
      break;
    case EnvKind::waypoints2d:
      s.targets.assign(pose_end, pose_end + 2 * kWaypoints);
      for (int k = 0; k < kWaypoints; ++k) s.progress += o.state[2 + 2 * kWaypoints + k] > 0.5;
      break;
    case EnvKind::rotate_pour:
      s.targets.assign(pose_end, pose_end + 3);
      s.progress = static_cast<int>(std::lround(o.state.back() * kPourDone));
      break;
  }
  return s;
}

std::vector<double> step_toward(std::span<const double> pose, std::span<const double> target,
                                double delta_max) {
  std::vector<double> out(pose.begin(), pose.end());
  const double dx = target[0] - pose[0], dy = target[1] - pose[1];
  const double d = std::hypot(dx, dy);
  if (d <= delta_max) {
    out[0] = target[0];
    out[1] = target[1];
  } else {
    out[0] = pose[0] + dx * (delta_max / d);
    out[1] = pose[1] + dy * (delta_max / d);
  }
  for (std::size_t i = 2; i < pose.size(); ++i) {
    out[i] = pose[i] + std::clamp(target[i] - pose[i], -delta_max, delta_max);
  }
  return out;
}

EnvState env_step(const EnvSpec& spec, const EnvState& state, std::span<const double> action) {
  check_dims(spec, state);
  if (action.size() != spec.action_dim) {
    throw DimensionError(fmt::format("action of dimension {}, env expects {}", action.size(),
                                     spec.action_dim));
  }
  EnvState next = state;
  if (state.failed) return next;
  if (!std::all_of(action.begin(), action.end(), [](double v) { return std::isfinite(v); })) {
    next.failed = true;
    return next;
  }
  next.pose = step_toward(state.pose, action, spec.delta_max);
  for (double& v : next.pose) v = clamp_unit(v);
  update_progress(spec, next);
  return next;
}

std::vector<double> scripted_expert(const EnvSpec& spec, const EnvState& s) {
  check_dims(spec, s);
  std::vector<double> target = s.pose;
  switch (spec.kind) {
    case EnvKind::reach2d:
      target = s.targets;
      break;
    case EnvKind::waypoints2d:
      if (s.progress < kWaypoints) {
        const auto w = waypoint(s, s.progress);
        target.assign(w.begin(), w.end());
      }
      break;
    case EnvKind::rotate_pour:
      if (s.progress < kPourDone) {
        target[0] = s.targets[0];
        target[1] = s.targets[1];
      }
      if (s.progress == 1) target[2] = s.targets[2];
      if (s.progress == 2) target[2] = 0.0;
      break;
  }
  return step_toward(s.pose, target, spec.delta_max);
}

bool check_success(const EnvSpec& spec, const EnvState& s) {
  if (s.failed) return false;
  switch (spec.kind) {
    case EnvKind::reach2d:
      return dist2d(s.pose, s.targets) < spec.success_threshold;
    case EnvKind::waypoints2d:
      return s.progress == kWaypoints;
    case EnvKind::rotate_pour:
      return s.progress == kPourDone && dist2d(s.pose, s.targets) < spec.success_threshold;
  }
  return false;
}

bool check_success(const Episode& episode, const EnvSpec& spec) {
  if (episode.observations.empty()) return false;
  return check_success(spec, state_from_observation(spec, episode.observations.back()));
}

EnvState sample_initial_state(const EnvSpec& spec, Rng& rng) {
  EnvState s;
  const auto point = [&rng](double bound) {
    return std::vector<double>{rng.uniform(-bound, bound), rng.uniform(-bound, bound)};
  };
  s.pose = point(1.0);
  switch (spec.kind) {
    case EnvKind::reach2d:
      do {
        s.targets = point(0.9);
      } while (dist2d(s.pose, s.targets) < 0.3);
      break;
    case EnvKind::waypoints2d: {
      std::vector<std::vector<double>> placed{s.pose};
      while (placed.size() < 1 + kWaypoints) {
        auto w = point(0.9);
        const bool spaced = std::all_of(placed.begin(), placed.end(),
                                        [&](const auto& p) { return dist2d(p, w) >= 0.3; });
        if (spaced) placed.push_back(std::move(w));
      }
      for (int k = 1; k <= kWaypoints; ++k)
        s.targets.insert(s.targets.end(), placed[k].begin(), placed[k].end());
      break;
    }
    case EnvKind::rotate_pour:
      s.pose.push_back(0.0);
      do {
        s.targets = point(0.9);
      } while (dist2d(s.pose, s.targets) < 0.3);
      s.targets.push_back(rng.uniform(0.5, 0.9));
      break;
  }
  return s;
}

Episode run_expert(const EnvSpec& spec, const EnvState& initial) {
  Episode ep;
  EnvState s = initial;
  for (int step = 0; step <= spec.max_episode_steps; ++step) {
    ep.observations.push_back(observe(spec, s));
    ep.actions.push_back(scripted_expert(spec, s));
    if (check_success(spec, s)) {
      ep.success = true;
      break;
    }
    if (step == spec.max_episode_steps) break;
    s = env_step(spec, s, ep.actions.back());
  }
  return ep;
}

EnvState sample_solvable_state(const EnvSpec& spec, Rng& rng) {
  for (int draw = 0; draw < kMaxDraws; ++draw) {
    EnvState s = sample_initial_state(spec, rng);
    if (run_expert(spec, s).success) return s;
  }
  throw DataError(fmt::format("no solvable {} start found in {} draws", to_string(spec.kind),
                              kMaxDraws));
}

}  // namespace densegen
