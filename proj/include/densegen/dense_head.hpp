#pragma once

#include "densegen/encoder.hpp"
#include "densegen/head.hpp"
#include "densegen/levels.hpp"

namespace densegen {

/// Coarse-to-fine decoder. Starting from the constant zero token, every
/// dense step doubles the number of keyframes: upsample the previous level,
/// project to d_model, add time and level codes, refine with the shared
/// encoder (cross-attending to observations), project back to actions.
class DenseHead final : public ActionHead {
 public:
  DenseHead(const HeadConfig& config, Rng& rng);

  Paradigm paradigm() const override { return Paradigm::dense; }
  const Horizon& horizon() const override { return horizon_; }
  std::size_t action_dim() const override { return config_.action_dim; }

  /// One level transition n -> n+1.
  ActionLevel dense_step(const ActionLevel& prev, const Tensor& obs_tokens,
                         ForwardContext ctx = {}) const;

  /// log2(T) dense steps from A^0 = 0; returns every level and the pass count.
  HeadOutput rollout(const Tensor& obs_tokens, ForwardContext ctx = {}) const;

  HeadOutput decode(const Tensor& obs_tokens) const override { return rollout(obs_tokens); }
  HeadOutput train_forward(const Tensor& obs_tokens, const Tensor& gt,
                           RolloutMode mode, ForwardContext ctx) const override;
  int expected_passes() const override { return horizon_.levels(); }
  ParameterList parameters() const override;

  const EncoderStack& encoder() const { return encoder_; }
  EncoderStack& encoder() { return encoder_; }
  const Linear& proj_in() const { return proj_in_; }
  const Linear& proj_out() const { return proj_out_; }

 private:
  HeadConfig config_;
  Horizon horizon_;
  EncoderStack encoder_;
  Linear proj_in_;
  Linear proj_out_;
};

}  // namespace densegen
