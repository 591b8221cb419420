#pragma once

#include "densegen/encoder.hpp"
#include "densegen/head.hpp"

namespace densegen {

struct ChunkConfig {
  std::size_t chunk_size = 2;

  /// Throws ConfigError unless chunk_size divides the horizon.
  void validate(int horizon) const;
};

/// Unidirectional autoregressive decoder emitting `chunk_size` actions per
/// encoder pass. Position j is fed the action at j - chunk_size (zeros for
/// the first chunk) and attends only to chunks at or before its own.
/// chunk_size == 1 is next-token prediction.
class ChunkedArHead final : public ActionHead {
 public:
  ChunkedArHead(const HeadConfig& config, ChunkConfig chunk, Rng& rng);

  Paradigm paradigm() const override {
    return chunk_.chunk_size == 1 ? Paradigm::next_token : Paradigm::next_chunk;
  }
  const Horizon& horizon() const override { return horizon_; }
  std::size_t action_dim() const override { return config_.action_dim; }
  std::size_t chunk_size() const { return chunk_.chunk_size; }

  HeadOutput decode(const Tensor& obs_tokens) const override;
  /// Always teacher-forced; `mode` is ignored.
  HeadOutput train_forward(const Tensor& obs_tokens, const Tensor& gt,
                           RolloutMode mode, ForwardContext ctx) const override;
  int expected_passes() const override {
    return horizon_.steps() / static_cast<int>(chunk_.chunk_size);
  }
  ParameterList parameters() const override;

  /// One encoder pass over shifted inputs [B, S, A] (S a multiple of the
  /// chunk size); returns per-position predictions [B, S, A].
  Tensor forward_positions(const Tensor& inputs, const Tensor& obs_tokens,
                           ForwardContext ctx = {}) const;
  /// Teacher-forcing inputs for a full action sequence [B, T, A].
  Tensor shift_inputs(const Tensor& actions) const;

 private:
  HeadConfig config_;
  ChunkConfig chunk_;
  Horizon horizon_;
  EncoderStack encoder_;
  Linear proj_in_;
  Linear proj_out_;
};

/// Next-token decoding: T sequential passes.
HeadOutput next_token_decode(const ChunkedArHead& head, const Tensor& obs_tokens);
/// Next-chunk decoding: T / chunk_size sequential passes.
HeadOutput next_chunk_decode(const ChunkedArHead& head, const Tensor& obs_tokens);

}  // namespace densegen
