#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "densegen/tensor.hpp"

namespace densegen {

class Rng;

struct NamedTensor {
  std::string name;
  Tensor tensor;
};
using ParameterList = std::vector<NamedTensor>;

std::size_t count_params(const ParameterList& params);

/// Fully connected layer y = x W + b with W stored [in, out].
struct Linear {
  Tensor weight;
  Tensor bias;

  Linear() = default;
  Linear(std::size_t in, std::size_t out, Rng& rng);

  Tensor operator()(const Tensor& x) const { return linear(x, weight, bias); }
  std::size_t in_features() const { return weight.dim(0); }
  std::size_t out_features() const { return weight.dim(1); }
  void collect(ParameterList& out, const std::string& prefix) const;
};

struct LayerNorm {
  Tensor gain;
  Tensor bias;
  double eps = 1e-5;

  LayerNorm() = default;
  explicit LayerNorm(std::size_t d);

  Tensor operator()(const Tensor& x) const { return layer_norm(x, gain, bias, eps); }
  void collect(ParameterList& out, const std::string& prefix) const;
};

struct EncoderConfig {
  std::size_t d_model = 128;
  std::size_t n_heads = 4;
  std::size_t n_layers = 4;
  std::size_t d_ffn = 512;
  double dropout_rate = 0.0;
  /// Rows of the learned level-embedding table (levels 1..max_levels).
  std::size_t max_levels = 8;
  bool level_embedding = true;
  /// Layer norm applied after the last layer.
  bool final_norm = true;

  void validate() const;
  bool operator==(const EncoderConfig&) const = default;
};

/// Boolean [queries x keys] attention pattern; 1 = may attend.
struct AttentionMask {
  std::size_t queries = 0;
  std::size_t keys = 0;
  std::vector<std::uint8_t> allowed;

  static AttentionMask causal(std::size_t length);
  /// Token i may attend to token j iff j / block <= i / block.
  static AttentionMask block_causal(std::size_t length, std::size_t block);
};

struct Attention {
  Linear query, key, value, output;

  Attention() = default;
  Attention(std::size_t d_model, Rng& rng);
  void collect(ParameterList& out, const std::string& prefix) const;
};

/// Scaled dot-product attention over `n_heads` heads. queries [B,Sq,d],
/// keys_values [B,Sk,d]. No mask means full bidirectional attention.
Tensor multi_head_attention(const Attention& attn, const Tensor& queries,
                            const Tensor& keys_values, std::size_t n_heads,
                            const AttentionMask* mask = nullptr);

/// Action tokens at one granularity, with the absolute timestep of every
/// token and the level they belong to.
struct TokenBatch {
  Tensor tokens;  // [B, S, d_model]
  std::vector<int> time_indices;
  int level_index = 0;
};

/// Pre-norm layer: self-attention, cross-attention to observations, FFN.
struct EncoderLayer {
  LayerNorm norm_self, norm_cross, norm_ffn;
  Attention self_attn, cross_attn;
  Linear ffn_in, ffn_out;

  EncoderLayer() = default;
  EncoderLayer(const EncoderConfig& config, Rng& rng);
  void collect(ParameterList& out, const std::string& prefix) const;
};

/// Sinusoidal code of absolute timesteps: row for time j holds
/// sin(j / 10000^(2i/d)) at column 2i and the matching cos at 2i + 1.
Tensor sinusoidal_embedding(std::span<const int> times, std::size_t d_model);

/// Dropout randomness for training forward passes; null at inference.
struct ForwardContext {
  Rng* dropout_rng = nullptr;
};

TokenBatch encoder_layer_forward(const EncoderLayer& layer,
                                 const EncoderConfig& config,
                                 const TokenBatch& x, const Tensor& obs_tokens,
                                 const AttentionMask* self_mask = nullptr,
                                 ForwardContext ctx = {});

/// The shared encoder stack. One instance is applied at every level of the
/// dense process, so all levels read the same parameter tensors.
class EncoderStack {
 public:
  EncoderStack() = default;
  EncoderStack(const EncoderConfig& config, Rng& rng);

  const EncoderConfig& config() const { return config_; }

  /// Adds the absolute-time sinusoid and (if enabled) the learned embedding
  /// of `level_index`. Every time index must be < horizon.
  TokenBatch embed_positions(const TokenBatch& level, int horizon) const;

  /// Runs all layers, then the final norm when configured.
  TokenBatch forward(const TokenBatch& x, const Tensor& obs_tokens,
                     const AttentionMask* self_mask = nullptr,
                     ForwardContext ctx = {}) const;

  ParameterList parameters() const;
  std::size_t count_params() const;
  /// Closed form for the parameter count of a configuration.
  static std::size_t analytic_param_count(const EncoderConfig& config);

  const std::vector<EncoderLayer>& layers() const { return layers_; }
  std::vector<EncoderLayer>& layers() { return layers_; }
  const Tensor& level_table() const { return level_table_; }

 private:
  EncoderConfig config_;
  std::vector<EncoderLayer> layers_;
  Tensor level_table_;  // [max_levels, d_model]
  LayerNorm final_norm_;
};

/// Fills `param` with U(-bound, bound).
void init_uniform(Tensor& param, double bound, Rng& rng);

}  // namespace densegen
