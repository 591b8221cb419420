#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "densegen/obs.hpp"

namespace densegen {

class Rng;

enum class EnvKind { reach2d, waypoints2d, rotate_pour };

std::string to_string(EnvKind kind);
/// "reach2d", "waypoints2d" or "rotate-pour"; ConfigError otherwise.
EnvKind parse_env(const std::string& name);

struct EnvSpec {
  EnvKind kind = EnvKind::reach2d;
  std::size_t state_dim = 0;
  std::size_t action_dim = 0;
  std::size_t proprio_dim = 0;
  int max_episode_steps = 64;
  double success_threshold = 0.02;
  double delta_max = 0.1;

  static EnvSpec make(EnvKind kind);
  bool operator==(const EnvSpec&) const = default;
};

/// Full kinematic state. Poses are absolute, [x, y] or [x, y, theta], every
/// coordinate in [-1, 1].
///   reach2d:     targets = goal (2)
///   waypoints2d: targets = three waypoints (6), progress = number visited
///   rotate-pour: targets = cup position (2) and pour angle (1),
///                progress = 0 approach, 1 rotate, 2 return, 3 done
struct EnvState {
  std::vector<double> pose;
  std::vector<double> targets;
  int progress = 0;
  bool failed = false;

  bool operator==(const EnvState&) const = default;
};

struct Episode {
  std::vector<Observation> observations;
  std::vector<std::vector<double>> actions;
  bool success = false;
};

/// State features seen by the policy. proprio is the effector pose.
///   reach2d:     [x, y, gx, gy]
///   waypoints2d: [x, y, w1, w2, w3, visited1, visited2, visited3]
///   rotate-pour: [x, y, theta, cx, cy, theta_pour, progress / 3]
Observation observe(const EnvSpec& spec, const EnvState& state);
EnvState state_from_observation(const EnvSpec& spec, const Observation& obs);

/// Moves the effector toward the commanded pose, at most delta_max in
/// position (Euclidean) and delta_max in angle, then updates task progress.
/// A non-finite action marks the state failed and leaves it frozen.
EnvState env_step(const EnvSpec& spec, const EnvState& state, std::span<const double> action);

/// Next commanded pose of the scripted expert: one clamped step along a
/// straight line toward the current sub-goal.
std::vector<double> scripted_expert(const EnvSpec& spec, const EnvState& state);

bool check_success(const EnvSpec& spec, const EnvState& state);
/// Success of the final recorded observation.
bool check_success(const Episode& episode, const EnvSpec& spec);

/// One unconditioned draw of an initial state.
EnvState sample_initial_state(const EnvSpec& spec, Rng& rng);
/// Redraws until the scripted expert solves the task within the step limit.
EnvState sample_solvable_state(const EnvSpec& spec, Rng& rng);

/// Rolls the expert out from `initial`. Stops one hold step after success.
Episode run_expert(const EnvSpec& spec, const EnvState& initial);

/// `pose` moved toward `target`: Euclidean clamp on the first two
/// coordinates, scalar clamp on the angle.
std::vector<double> step_toward(std::span<const double> pose, std::span<const double> target,
                                double delta_max);

}  // namespace densegen
