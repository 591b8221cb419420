#include "densegen/encoder.hpp"

#include <cmath>

#include <fmt/format.h>

#include "densegen/error.hpp"
#include "densegen/rng.hpp"

namespace densegen {

std::size_t count_params(const ParameterList& params) {
  std::size_t total = 0;
  for (const auto& p : params) total += p.tensor.size();
  return total;
}

void init_uniform(Tensor& param, double bound, Rng& rng) {
  for (double& v : param.mutable_data()) v = rng.uniform(-bound, bound);
}

Linear::Linear(std::size_t in, std::size_t out, Rng& rng)
    : weight(Shape{in, out}), bias(Shape{out}) {
  init_uniform(weight, 1.0 / std::sqrt(static_cast<double>(in)), rng);
  weight.set_requires_grad(true);
  bias.set_requires_grad(true);
}

void Linear::collect(ParameterList& out, const std::string& prefix) const {
  out.push_back({prefix + ".weight", weight});
  out.push_back({prefix + ".bias", bias});
}

LayerNorm::LayerNorm(std::size_t d) : gain(Shape{d}, 1.0), bias(Shape{d}, 0.0) {
  gain.set_requires_grad(true);
  bias.set_requires_grad(true);
}

void LayerNorm::collect(ParameterList& out, const std::string& prefix) const {
  out.push_back({prefix + ".gain", gain});
  out.push_back({prefix + ".bias", bias});
}

void EncoderConfig::validate() const {
  if (d_model == 0 || n_heads == 0 || n_layers == 0 || d_ffn == 0) {
    throw ConfigError("encoder dimensions must be positive");
  }
  if (d_model % n_heads != 0) {
    throw ConfigError(fmt::format("d_model {} is not divisible by n_heads {}",
                                  d_model, n_heads));
  }
  if (dropout_rate < 0.0 || dropout_rate >= 1.0) {
    throw ConfigError(fmt::format("dropout_rate {} outside [0, 1)", dropout_rate));
  }
  if (level_embedding && max_levels == 0) {
    throw ConfigError("max_levels must be positive when level embedding is on");
  }
}

AttentionMask AttentionMask::causal(std::size_t length) {
  return block_causal(length, 1);
}

AttentionMask AttentionMask::block_causal(std::size_t length, std::size_t block) {
  AttentionMask mask{length, length, std::vector<std::uint8_t>(length * length, 0)};
  for (std::size_t i = 0; i < length; ++i)
    for (std::size_t j = 0; j < length; ++j)
      mask.allowed[i * length + j] = (j / block <= i / block) ? 1 : 0;
  return mask;
}

Attention::Attention(std::size_t d_model, Rng& rng)
    : query(d_model, d_model, rng),
      key(d_model, d_model, rng),
      value(d_model, d_model, rng),
      output(d_model, d_model, rng) {}

void Attention::collect(ParameterList& out, const std::string& prefix) const {
  query.collect(out, prefix + ".query");
  key.collect(out, prefix + ".key");
  value.collect(out, prefix + ".value");
  output.collect(out, prefix + ".output");
}

namespace {

// [B,S,d] -> [B*H, S, d/H]
Tensor split_heads(const Tensor& x, std::size_t heads) {
  const std::size_t b = x.dim(0), s = x.dim(1), d = x.dim(2);
  Tensor t = swap_axes_12(reshape(x, {b, s, heads, d / heads}));
  return reshape(t, {b * heads, s, d / heads});
}

// [B*H, S, dh] -> [B,S,H*dh]
Tensor merge_heads(const Tensor& x, std::size_t batch, std::size_t heads) {
  const std::size_t s = x.dim(1), dh = x.dim(2);
  Tensor t = swap_axes_12(reshape(x, {batch, heads, s, dh}));
  return reshape(t, {batch, s, heads * dh});
}

Tensor maybe_dropout(const Tensor& x, double rate, ForwardContext ctx) {
  if (ctx.dropout_rng == nullptr || rate == 0.0) return x;
  return dropout(x, rate, *ctx.dropout_rng);
}

}  // namespace

Tensor multi_head_attention(const Attention& attn, const Tensor& queries,
                            const Tensor& keys_values, std::size_t n_heads,
                            const AttentionMask* mask) {
  if (queries.rank() != 3 || keys_values.rank() != 3 ||
      queries.dim(0) != keys_values.dim(0) ||
      queries.dim(2) != keys_values.dim(2)) {
    throw DimensionError(fmt::format("attention: queries {} and keys/values {}",
                                     to_string(queries.shape()),
                                     to_string(keys_values.shape())));
  }
  const std::size_t batch = queries.dim(0), d = queries.dim(2);
  if (n_heads == 0 || d % n_heads != 0) {
    throw ConfigError(fmt::format("attention: d_model {} not divisible into {} heads",
                                  d, n_heads));
  }
  const std::size_t head_dim = d / n_heads;
  Tensor q = split_heads(attn.query(queries), n_heads);
  Tensor k = split_heads(attn.key(keys_values), n_heads);
  Tensor v = split_heads(attn.value(keys_values), n_heads);
  Tensor scores = scale(bmm(q, k, /*transpose_b=*/true),
                        1.0 / std::sqrt(static_cast<double>(head_dim)));
  if (mask != nullptr) {
    if (mask->queries != queries.dim(1) || mask->keys != keys_values.dim(1)) {
      throw DimensionError(fmt::format("attention mask {}x{} for {} queries and {} keys",
                                       mask->queries, mask->keys, queries.dim(1),
                                       keys_values.dim(1)));
    }
    scores = mask_scores(scores, mask->allowed);
  }
  Tensor context = bmm(softmax(scores), v);
  return attn.output(merge_heads(context, batch, n_heads));
}

EncoderLayer::EncoderLayer(const EncoderConfig& config, Rng& rng)
    : norm_self(config.d_model),
      norm_cross(config.d_model),
      norm_ffn(config.d_model),
      self_attn(config.d_model, rng),
      cross_attn(config.d_model, rng),
      ffn_in(config.d_model, config.d_ffn, rng),
      ffn_out(config.d_ffn, config.d_model, rng) {}

void EncoderLayer::collect(ParameterList& out, const std::string& prefix) const {
  norm_self.collect(out, prefix + ".norm_self");
  self_attn.collect(out, prefix + ".self_attn");
  norm_cross.collect(out, prefix + ".norm_cross");
  cross_attn.collect(out, prefix + ".cross_attn");
  norm_ffn.collect(out, prefix + ".norm_ffn");
  ffn_in.collect(out, prefix + ".ffn_in");
  ffn_out.collect(out, prefix + ".ffn_out");
}

Tensor sinusoidal_embedding(std::span<const int> times, std::size_t d_model) {
  std::vector<double> table(times.size() * d_model);
  for (std::size_t r = 0; r < times.size(); ++r) {
    const double j = static_cast<double>(times[r]);
    for (std::size_t c = 0; c < d_model; ++c) {
      const double pair = static_cast<double>(c - c % 2);
      const double angle =
          j / std::pow(10000.0, pair / static_cast<double>(d_model));
      table[r * d_model + c] = (c % 2 == 0) ? std::sin(angle) : std::cos(angle);
    }
  }
  return Tensor({times.size(), d_model}, std::move(table));
}

TokenBatch encoder_layer_forward(const EncoderLayer& layer,
                                 const EncoderConfig& config, const TokenBatch& x,
                                 const Tensor& obs_tokens,
                                 const AttentionMask* self_mask,
                                 ForwardContext ctx) {
  if (!obs_tokens.defined() || obs_tokens.rank() != 3 || obs_tokens.dim(1) == 0) {
    throw ContractError("encoder layer needs at least one observation token");
  }
  Tensor h = x.tokens;
  Tensor normed = layer.norm_self(h);
  h = add(h, maybe_dropout(multi_head_attention(layer.self_attn, normed, normed,
                                                config.n_heads, self_mask),
                           config.dropout_rate, ctx));
  h = add(h, maybe_dropout(multi_head_attention(layer.cross_attn, layer.norm_cross(h),
                                                obs_tokens, config.n_heads),
                           config.dropout_rate, ctx));
  Tensor ffn = layer.ffn_out(gelu(layer.ffn_in(layer.norm_ffn(h))));
  h = add(h, maybe_dropout(ffn, config.dropout_rate, ctx));
  return TokenBatch{h, x.time_indices, x.level_index};
}

EncoderStack::EncoderStack(const EncoderConfig& config, Rng& rng)
    : config_(config), final_norm_(config.d_model) {
  config_.validate();
  layers_.reserve(config_.n_layers);
  for (std::size_t i = 0; i < config_.n_layers; ++i) layers_.emplace_back(config_, rng);
  if (config_.level_embedding) {
    level_table_ = Tensor(Shape{config_.max_levels, config_.d_model});
    init_uniform(level_table_, 0.02, rng);
    level_table_.set_requires_grad(true);
  }
}

TokenBatch EncoderStack::embed_positions(const TokenBatch& level, int horizon) const {
  const std::size_t seq = level.tokens.dim(1);
  if (level.time_indices.size() != seq) {
    throw DimensionError(fmt::format("{} time indices for {} tokens",
                                     level.time_indices.size(), seq));
  }
  for (std::size_t i = 0; i < seq; ++i) {
    const int j = level.time_indices[i];
    if (j < 0 || j >= horizon) {
      throw ContractError(fmt::format("time index {} outside horizon {}", j, horizon));
    }
    if (i > 0 && j <= level.time_indices[i - 1]) {
      throw ContractError("time indices must be strictly increasing");
    }
  }
  Tensor out = add(level.tokens, sinusoidal_embedding(level.time_indices, config_.d_model));
  if (config_.level_embedding) {
    const int n = level.level_index;
    if (n < 1 || static_cast<std::size_t>(n) > config_.max_levels) {
      throw ContractError(fmt::format("level {} outside [1, {}]", n, config_.max_levels));
    }
    const auto row = static_cast<std::size_t>(n - 1);
    out = add(out, reshape(slice(level_table_, 0, row, row + 1), {config_.d_model}));
  }
  return TokenBatch{out, level.time_indices, level.level_index};
}

TokenBatch EncoderStack::forward(const TokenBatch& x, const Tensor& obs_tokens,
                                 const AttentionMask* self_mask,
                                 ForwardContext ctx) const {
  TokenBatch h = x;
  for (const EncoderLayer& layer : layers_) {
    h = encoder_layer_forward(layer, config_, h, obs_tokens, self_mask, ctx);
  }
  if (config_.final_norm) h.tokens = final_norm_(h.tokens);
  return h;
}

ParameterList EncoderStack::parameters() const {
  ParameterList out;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    layers_[i].collect(out, fmt::format("encoder.layer{}", i));
  }
  if (config_.level_embedding) out.push_back({"encoder.level_table", level_table_});
  if (config_.final_norm) final_norm_.collect(out, "encoder.final_norm");
  return out;
}

std::size_t EncoderStack::count_params() const { return densegen::count_params(parameters()); }

std::size_t EncoderStack::analytic_param_count(const EncoderConfig& c) {
  const std::size_t d = c.d_model, f = c.d_ffn;
  const std::size_t attention = 4 * d * d + 4 * d;
  const std::size_t ffn = d * f + f + f * d + d;
  const std::size_t norms = 3 * 2 * d;
  const std::size_t per_layer = 2 * attention + ffn + norms;
  const std::size_t levels = c.level_embedding ? c.max_levels * d : 0;
  return c.n_layers * per_layer + levels + (c.final_norm ? 2 * d : 0);
}

}  // namespace densegen
