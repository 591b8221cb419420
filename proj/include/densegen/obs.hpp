#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "densegen/encoder.hpp"
#include "densegen/tensor.hpp"

namespace densegen {

class Rng;

/// One observation: environment state features plus end-effector pose.
/// `proprio_masked` is the flag appended to the proprio input of the encoder.
struct Observation {
  std::vector<double> state;
  std::vector<double> proprio;
  bool proprio_masked = false;

  bool operator==(const Observation&) const = default;
};

/// With probability p, zero the proprio vector and set the mask flag.
/// One uniform draw is consumed per call regardless of p.
Observation mask_proprio(const Observation& obs, double p, Rng& rng);

/// Zeroed proprio with the flag set; what mask_proprio returns when it fires.
Observation masked(const Observation& obs);

/// Per-dimension action range. Dimensions with max == min are degenerate and
/// normalize to 0.
struct NormStats {
  std::vector<double> min;
  std::vector<double> max;

  NormStats() = default;
  NormStats(std::vector<double> lo, std::vector<double> hi);

  std::size_t dim() const { return min.size(); }
  bool degenerate(std::size_t i) const { return max[i] == min[i]; }

  /// Running min/max over a set of action vectors.
  static NormStats from_actions(std::span<const std::vector<double>> actions);

  double normalize(double value, std::size_t i) const;
  double denormalize(double value, std::size_t i) const;
  std::vector<double> normalize(std::span<const double> action) const;
  std::vector<double> denormalize(std::span<const double> action) const;

  bool operator==(const NormStats&) const = default;
};

/// Affine map of every action of a sequence to [-1, 1] and its inverse.
std::vector<std::vector<double>> normalize_actions(
    std::span<const std::vector<double>> seq, const NormStats& stats);
std::vector<std::vector<double>> denormalize_actions(
    std::span<const std::vector<double>> seq, const NormStats& stats);

/// Two-layer GELU MLP.
struct Mlp {
  Linear in;
  Linear out;

  Mlp() = default;
  Mlp(std::size_t input, std::size_t hidden, std::size_t output, Rng& rng);

  Tensor operator()(const Tensor& x) const { return out(gelu(in(x))); }
  void collect(ParameterList& params, const std::string& prefix) const;
};

/// Maps a batch of observations to obs tokens [B, 2, d_model]: token 0 from
/// the state, token 1 from proprio with its mask flag appended.
class ObsEncoder {
 public:
  ObsEncoder() = default;
  ObsEncoder(std::size_t state_dim, std::size_t proprio_dim, std::size_t d_model, Rng& rng);

  Tensor encode(std::span<const Observation> batch) const;
  Tensor encode(const Observation& obs) const { return encode(std::span(&obs, 1)); }

  std::size_t state_dim() const { return state_dim_; }
  std::size_t proprio_dim() const { return proprio_dim_; }
  std::size_t d_model() const { return d_model_; }
  const Mlp& state_mlp() const { return state_; }
  const Mlp& proprio_mlp() const { return proprio_; }
  ParameterList parameters() const;

  static constexpr std::size_t n_tokens = 2;

 private:
  std::size_t state_dim_ = 0;
  std::size_t proprio_dim_ = 0;
  std::size_t d_model_ = 0;
  Mlp state_;
  Mlp proprio_;
};

}  // namespace densegen
