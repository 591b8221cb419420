#include "densegen/levels.hpp"

#include <bit>

#include <fmt/format.h>

#include "densegen/error.hpp"

namespace densegen {

bool Horizon::valid(int steps) {
  return steps >= 1 && std::has_single_bit(static_cast<unsigned>(steps));
}

Horizon::Horizon(int steps) : steps_(steps), levels_(0) {
  if (!valid(steps)) {
    throw ConfigError(fmt::format("horizon {} is not a power of two", steps));
  }
  levels_ = std::countr_zero(static_cast<unsigned>(steps));
}

std::vector<int> level_indices(const Horizon& horizon, int level) {
  if (level < 0 || level > horizon.levels()) {
    throw ContractError(fmt::format("level {} outside [0, {}] for horizon {}", level,
                                    horizon.levels(), horizon.steps()));
  }
  const int stride = horizon.steps() >> level;
  std::vector<int> out;
  out.reserve(std::size_t{1} << level);
  for (int i = 0; i < horizon.steps(); i += stride) out.push_back(i);
  return out;
}

LevelSchedule::LevelSchedule(const Horizon& h) : horizon(h) {
  for (int n = 0; n <= h.levels(); ++n) indices.push_back(level_indices(h, n));
}

std::vector<std::pair<std::size_t, std::size_t>> upsample_sources(
    const Horizon& horizon, int level) {
  if (level < 0 || level >= horizon.levels()) {
    throw ContractError(fmt::format("cannot upsample level {} of horizon {}", level,
                                    horizon.steps()));
  }
  const int T = horizon.steps();
  const int stride = T >> level;   // spacing of level n
  const int half = stride / 2;     // spacing of level n+1
  const auto pos = [stride](int j) { return static_cast<std::size_t>(j / stride); };
  std::vector<std::pair<std::size_t, std::size_t>> sources;
  for (int j = 0; j < T; j += half) {
    if (j % stride == 0) {
      sources.emplace_back(pos(j), pos(j));
    } else if (j == T - half) {
      sources.emplace_back(pos(T - stride), pos(T - stride));
    } else {
      sources.emplace_back(pos(j - half), pos(j + half));
    }
  }
  return sources;
}

ActionLevel upsample(const ActionLevel& prev, const Horizon& horizon) {
  const auto sources = upsample_sources(horizon, prev.level);
  const std::size_t expected = std::size_t{1} << prev.level;
  if (prev.values.rank() != 3 || prev.values.dim(1) != expected) {
    throw DimensionError(fmt::format("level {} expects [B, {}, D], got {}", prev.level,
                                     expected, to_string(prev.values.shape())));
  }
  return ActionLevel{prev.level + 1, average_rows(prev.values, sources), prev.space};
}

ActionLevel downsample_gt(const Tensor& dense, const Horizon& horizon, int level) {
  const bool batched = dense.rank() == 3;
  if (!(batched || dense.rank() == 2) ||
      dense.dim(batched ? 1 : 0) != static_cast<std::size_t>(horizon.steps())) {
    throw DimensionError(fmt::format("ground truth {} does not span horizon {}",
                                     to_string(dense.shape()), horizon.steps()));
  }
  const Tensor seq = batched ? dense : reshape(dense, {1, dense.dim(0), dense.dim(1)});
  const std::size_t batch = seq.dim(0), adim = seq.dim(2);
  const auto indices = level_indices(horizon, level);
  if (level == 0) return zero_level(batch, adim);
  std::vector<std::pair<std::size_t, std::size_t>> rows;
  for (int i : indices) rows.emplace_back(i, i);
  return ActionLevel{level, average_rows(seq, rows), ActionSpace::normalized_action};
}

ActionLevel zero_level(std::size_t batch, std::size_t action_dim) {
  return ActionLevel{0, Tensor(Shape{batch, 1, action_dim}, 0.0),
                     ActionSpace::normalized_action};
}

}  // namespace densegen
