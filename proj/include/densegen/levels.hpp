#pragma once

#include <cstddef>
#include <utility>
#include <vector>

#include "densegen/tensor.hpp"

namespace densegen {

/// Prediction horizon T, a power of two. The level hierarchy has log2(T)
/// refinement levels above the constant level 0; the dense head needs at
/// least one (T >= 2), the autoregressive heads also accept T = 1.
class Horizon {
 public:
  explicit Horizon(int steps);

  int steps() const { return steps_; }
  int levels() const { return levels_; }
  static bool valid(int steps);

  bool operator==(const Horizon&) const = default;

 private:
  int steps_;
  int levels_;
};

/// Keyframe timesteps of level n: {i in [0,T) : i mod T/2^n == 0}, ascending.
/// Level 0 is the single slot of the constant zero token.
std::vector<int> level_indices(const Horizon& horizon, int level);

/// All index sets I_0..I_L of a horizon.
struct LevelSchedule {
  Horizon horizon;
  std::vector<std::vector<int>> indices;

  explicit LevelSchedule(const Horizon& h);
  const std::vector<int>& at(int level) const { return indices.at(level); }
};

enum class ActionSpace { normalized_action, latent_token };

/// Actions (or latent tokens) at one granularity level, [B, 2^n, dim],
/// aligned to level_indices(n).
struct ActionLevel {
  int level = 0;
  Tensor values;
  ActionSpace space = ActionSpace::normalized_action;
};

/// For every timestep of level n+1, the pair of level-n row positions whose
/// mean produces it (identical positions mean a copy). Keyframes are copied,
/// the final slot replicates the last keyframe, the rest average their two
/// neighbours.
std::vector<std::pair<std::size_t, std::size_t>> upsample_sources(
    const Horizon& horizon, int level);

/// Bidirectional expansion of level n to level n+1.
ActionLevel upsample(const ActionLevel& prev, const Horizon& horizon);

/// Ground truth restricted to level n. dense is [B,T,A] (or [T,A]). Level 0
/// is the zero vector.
ActionLevel downsample_gt(const Tensor& dense, const Horizon& horizon, int level);

/// The constant level-0 token, zeros of shape [batch, 1, action_dim].
ActionLevel zero_level(std::size_t batch, std::size_t action_dim);

}  // namespace densegen
