#include "densegen/head.hpp"

#include <fmt/format.h>

#include "densegen/ar_head.hpp"
#include "densegen/dense_head.hpp"
#include "densegen/error.hpp"

namespace densegen {

std::string to_string(Paradigm p) {
  switch (p) {
    case Paradigm::dense: return "dense";
    case Paradigm::next_token: return "next-token";
    case Paradigm::next_chunk: return "next-chunk";
  }
  return "unknown";
}

Paradigm parse_paradigm(std::string_view text) {
  if (text == "dense") return Paradigm::dense;
  if (text == "next-token") return Paradigm::next_token;
  if (text == "next-chunk") return Paradigm::next_chunk;
  throw ConfigError(fmt::format("unknown paradigm '{}'", text));
}

std::string to_string(RolloutMode m) {
  return m == RolloutMode::self_rollout ? "self-rollout" : "teacher-forcing";
}

RolloutMode parse_rollout_mode(std::string_view text) {
  if (text == "self-rollout") return RolloutMode::self_rollout;
  if (text == "teacher-forcing") return RolloutMode::teacher_forcing;
  throw ConfigError(fmt::format("unknown rollout mode '{}'", text));
}

std::unique_ptr<ActionHead> make_head(Paradigm paradigm, const HeadConfig& config,
                                      Rng& rng) {
  switch (paradigm) {
    case Paradigm::dense:
      return std::make_unique<DenseHead>(config, rng);
    case Paradigm::next_token:
      return std::make_unique<ChunkedArHead>(config, ChunkConfig{1}, rng);
    case Paradigm::next_chunk:
      return std::make_unique<ChunkedArHead>(config, ChunkConfig{config.chunk_size}, rng);
  }
  throw ConfigError("unknown paradigm");
}

}  // namespace densegen
