#pragma once

#include <cstddef>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "densegen/encoder.hpp"
#include "densegen/levels.hpp"

namespace densegen {

enum class Paradigm { dense, next_token, next_chunk };

std::string to_string(Paradigm p);
Paradigm parse_paradigm(std::string_view text);

/// How a head forms its inputs during training: from its own previous
/// predictions (dense) or from ground truth.
enum class RolloutMode { self_rollout, teacher_forcing };

std::string to_string(RolloutMode m);
RolloutMode parse_rollout_mode(std::string_view text);

struct HeadConfig {
  EncoderConfig encoder;
  std::size_t action_dim = 2;
  int horizon = 16;
  /// Used by next-chunk only.
  std::size_t chunk_size = 2;
};

struct HeadOutput {
  Tensor actions;                   // [B, T, action_dim], normalized space
  std::vector<ActionLevel> levels;  // dense only: levels 1..log2 T
  int forward_pass_count = 0;
};

/// An action decoder conditioned on observation tokens [B, M, d_model].
class ActionHead {
 public:
  virtual ~ActionHead() = default;

  virtual Paradigm paradigm() const = 0;
  virtual const Horizon& horizon() const = 0;
  virtual std::size_t action_dim() const = 0;

  /// Inference-time generation.
  virtual HeadOutput decode(const Tensor& obs_tokens) const = 0;
  /// Differentiable forward used by training; gt is [B, T, action_dim].
  virtual HeadOutput train_forward(const Tensor& obs_tokens, const Tensor& gt,
                                   RolloutMode mode, ForwardContext ctx) const = 0;

  /// Encoder invocations one decode() performs.
  virtual int expected_passes() const = 0;

  virtual ParameterList parameters() const = 0;
};

std::unique_ptr<ActionHead> make_head(Paradigm paradigm, const HeadConfig& config,
                                      Rng& rng);

}  // namespace densegen
