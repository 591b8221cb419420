#include "densegen/dense_head.hpp"

#include <fmt/format.h>

#include "densegen/error.hpp"

namespace densegen {

DenseHead::DenseHead(const HeadConfig& config, Rng& rng)
    : config_(config), horizon_(config.horizon) {
  if (config_.action_dim == 0) throw ConfigError("action_dim must be positive");
  if (horizon_.levels() < 1) {
    throw ConfigError(fmt::format("dense head needs a horizon >= 2, got {}", horizon_.steps()));
  }
  if (config_.encoder.level_embedding &&
      config_.encoder.max_levels < static_cast<std::size_t>(horizon_.levels())) {
    throw ConfigError(fmt::format("horizon {} needs {} level embeddings, config has {}",
                                  horizon_.steps(), horizon_.levels(),
                                  config_.encoder.max_levels));
  }
  encoder_ = EncoderStack(config_.encoder, rng);
  proj_in_ = Linear(config_.action_dim, config_.encoder.d_model, rng);
  proj_out_ = Linear(config_.encoder.d_model, config_.action_dim, rng);
}

ActionLevel DenseHead::dense_step(const ActionLevel& prev, const Tensor& obs_tokens,
                                  ForwardContext ctx) const {
  if (prev.space != ActionSpace::normalized_action) {
    throw ContractError("dense_step expects a level in normalized action space");
  }
  const ActionLevel up = upsample(prev, horizon_);
  TokenBatch tokens{proj_in_(up.values), level_indices(horizon_, up.level), up.level};
  tokens = encoder_.embed_positions(tokens, horizon_.steps());
  tokens = encoder_.forward(tokens, obs_tokens, nullptr, ctx);
  return ActionLevel{up.level, proj_out_(tokens.tokens), ActionSpace::normalized_action};
}

HeadOutput DenseHead::rollout(const Tensor& obs_tokens, ForwardContext ctx) const {
  HeadOutput out;
  ActionLevel level = zero_level(obs_tokens.dim(0), config_.action_dim);
  for (int n = 0; n < horizon_.levels(); ++n) {
    level = dense_step(level, obs_tokens, ctx);
    ++out.forward_pass_count;
    out.levels.push_back(level);
  }
  out.actions = level.values;
  return out;
}

HeadOutput DenseHead::train_forward(const Tensor& obs_tokens, const Tensor& gt,
                                    RolloutMode mode, ForwardContext ctx) const {
  if (mode == RolloutMode::self_rollout) return rollout(obs_tokens, ctx);
  HeadOutput out;
  for (int n = 0; n < horizon_.levels(); ++n) {
    const ActionLevel input = downsample_gt(gt, horizon_, n);
    out.levels.push_back(dense_step(input, obs_tokens, ctx));
    ++out.forward_pass_count;
  }
  out.actions = out.levels.back().values;
  return out;
}

ParameterList DenseHead::parameters() const {
  ParameterList out = encoder_.parameters();
  proj_in_.collect(out, "head.proj_in");
  proj_out_.collect(out, "head.proj_out");
  return out;
}

}  // namespace densegen
