#include "densegen/ar_head.hpp"

#include <numeric>

#include <fmt/format.h>

#include "densegen/error.hpp"

namespace densegen {

void ChunkConfig::validate(int horizon) const {
  if (chunk_size == 0 || horizon % static_cast<int>(chunk_size) != 0) {
    throw ConfigError(fmt::format("chunk size {} does not divide horizon {}", chunk_size,
                                  horizon));
  }
}

namespace {

EncoderConfig without_level_embedding(EncoderConfig config) {
  config.level_embedding = false;
  return config;
}

}  // namespace

ChunkedArHead::ChunkedArHead(const HeadConfig& config, ChunkConfig chunk, Rng& rng)
    : config_(config), chunk_(chunk), horizon_(config.horizon) {
  chunk_.validate(horizon_.steps());
  if (config_.action_dim == 0) throw ConfigError("action_dim must be positive");
  config_.encoder = without_level_embedding(config_.encoder);
  encoder_ = EncoderStack(config_.encoder, rng);
  proj_in_ = Linear(config_.action_dim, config_.encoder.d_model, rng);
  proj_out_ = Linear(config_.encoder.d_model, config_.action_dim, rng);
}

Tensor ChunkedArHead::forward_positions(const Tensor& inputs, const Tensor& obs_tokens,
                                        ForwardContext ctx) const {
  const std::size_t seq = inputs.dim(1);
  if (seq == 0 || seq % chunk_.chunk_size != 0 ||
      seq > static_cast<std::size_t>(horizon_.steps())) {
    throw DimensionError(fmt::format("{} positions for chunk size {} and horizon {}", seq,
                                     chunk_.chunk_size, horizon_.steps()));
  }
  std::vector<int> times(seq);
  std::iota(times.begin(), times.end(), 0);
  TokenBatch tokens{proj_in_(inputs), std::move(times), 0};
  tokens = encoder_.embed_positions(tokens, horizon_.steps());
  const AttentionMask mask = AttentionMask::block_causal(seq, chunk_.chunk_size);
  tokens = encoder_.forward(tokens, obs_tokens, &mask, ctx);
  return proj_out_(tokens.tokens);
}

Tensor ChunkedArHead::shift_inputs(const Tensor& actions) const {
  const std::size_t batch = actions.dim(0), steps = actions.dim(1), adim = actions.dim(2);
  const std::size_t c = chunk_.chunk_size;
  Tensor start(Shape{batch, c, adim}, 0.0);
  if (c == steps) return start;
  return concat({start, slice(actions, 1, 0, steps - c)}, 1);
}

HeadOutput ChunkedArHead::decode(const Tensor& obs_tokens) const {
  const std::size_t batch = obs_tokens.dim(0), c = chunk_.chunk_size;
  const std::size_t passes = static_cast<std::size_t>(expected_passes());
  HeadOutput out;
  std::vector<Tensor> inputs{Tensor(Shape{batch, c, config_.action_dim}, 0.0)};
  std::vector<Tensor> chunks;
  for (std::size_t i = 0; i < passes; ++i) {
    const Tensor predicted = forward_positions(concat(inputs, 1), obs_tokens);
    ++out.forward_pass_count;
    Tensor chunk = slice(predicted, 1, i * c, (i + 1) * c);
    chunks.push_back(chunk);
    inputs.push_back(chunk);
  }
  out.actions = chunks.size() == 1 ? chunks.front() : concat(chunks, 1);
  return out;
}

HeadOutput ChunkedArHead::train_forward(const Tensor& obs_tokens, const Tensor& gt,
                                        RolloutMode, ForwardContext ctx) const {
  if (gt.rank() != 3 || gt.dim(1) != static_cast<std::size_t>(horizon_.steps())) {
    throw DimensionError(fmt::format("ground truth {} does not span horizon {}",
                                     to_string(gt.shape()), horizon_.steps()));
  }
  HeadOutput out;
  out.actions = forward_positions(shift_inputs(gt), obs_tokens, ctx);
  out.forward_pass_count = 1;
  return out;
}

ParameterList ChunkedArHead::parameters() const {
  ParameterList out = encoder_.parameters();
  proj_in_.collect(out, "head.proj_in");
  proj_out_.collect(out, "head.proj_out");
  return out;
}

HeadOutput next_token_decode(const ChunkedArHead& head, const Tensor& obs_tokens) {
  if (head.chunk_size() != 1) {
    throw ConfigError("next_token_decode needs a head with chunk size 1");
  }
  return head.decode(obs_tokens);
}

HeadOutput next_chunk_decode(const ChunkedArHead& head, const Tensor& obs_tokens) {
  return head.decode(obs_tokens);
}

}  // namespace densegen
