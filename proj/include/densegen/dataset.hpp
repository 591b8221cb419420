#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "densegen/env.hpp"
#include "densegen/obs.hpp"

namespace densegen {

struct DatasetMeta {
  static constexpr int kFormatVersion = 1;

  EnvSpec env;
  int horizon = 16;
  std::uint64_t seed = 0;
  NormStats stats;
  int format_version = kFormatVersion;
};

struct DemonstrationSet {
  DatasetMeta meta;
  std::vector<Episode> episodes;
};

/// Expert demonstrations from independent per-episode streams of `seed`.
/// Each episode is padded with horizon - 1 copies of its final step so a
/// full window starts at every recorded step. Stats cover all actions.
DemonstrationSet generate_dataset(const EnvSpec& spec, std::size_t n_episodes,
                                  std::uint64_t seed, int horizon = 16);

/// Appends `count` repeats of the last observation/action pair.
void pad_episode(Episode& episode, std::size_t count);

/// `meta.json` and `episodes.jsonl` under `dir`; floats at 17 significant
/// digits.
void write_dataset(const DemonstrationSet& data, const std::filesystem::path& dir);
DemonstrationSet read_dataset(const std::filesystem::path& dir);

/// %.17g, the shortest fixed-width form that round-trips every double.
std::string format_double(double v);

}  // namespace densegen
