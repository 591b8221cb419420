#include "densegen/obs.hpp"

#include <algorithm>

#include <fmt/format.h>

#include "densegen/error.hpp"
#include "densegen/rng.hpp"

namespace densegen {

Observation mask_proprio(const Observation& obs, double p, Rng& rng) {
  if (!(p >= 0.0 && p <= 1.0)) {
    throw ContractError(fmt::format("mask probability {} outside [0, 1]", p));
  }
  return rng.bernoulli(p) ? masked(obs) : obs;
}

Observation masked(const Observation& obs) {
  Observation out = obs;
  std::fill(out.proprio.begin(), out.proprio.end(), 0.0);
  out.proprio_masked = true;
  return out;
}

NormStats::NormStats(std::vector<double> lo, std::vector<double> hi)
    : min(std::move(lo)), max(std::move(hi)) {
  if (min.size() != max.size()) {
    throw DataError(fmt::format("norm stats with {} minima and {} maxima", min.size(),
                                max.size()));
  }
  for (std::size_t i = 0; i < min.size(); ++i) {
    if (!(max[i] >= min[i])) {
      throw DataError(fmt::format("norm stats dimension {}: max {} < min {}", i, max[i], min[i]));
    }
  }
}

NormStats NormStats::from_actions(std::span<const std::vector<double>> actions) {
  if (actions.empty()) throw DataError("norm stats need at least one action");
  std::vector<double> lo = actions.front(), hi = actions.front();
  for (const auto& a : actions) {
    if (a.size() != lo.size()) {
      throw DataError(fmt::format("action of dimension {} among dimension {}", a.size(),
                                  lo.size()));
    }
    for (std::size_t i = 0; i < a.size(); ++i) {
      lo[i] = std::min(lo[i], a[i]);
      hi[i] = std::max(hi[i], a[i]);
    }
  }
  return NormStats(std::move(lo), std::move(hi));
}

double NormStats::normalize(double value, std::size_t i) const {
  if (degenerate(i)) return 0.0;
  return 2.0 * (value - min[i]) / (max[i] - min[i]) - 1.0;
}

double NormStats::denormalize(double value, std::size_t i) const {
  if (degenerate(i)) return min[i];
  return (value + 1.0) * 0.5 * (max[i] - min[i]) + min[i];
}

std::vector<double> NormStats::normalize(std::span<const double> action) const {
  if (action.size() != dim()) {
    throw DimensionError(fmt::format("action of dimension {}, stats have {}", action.size(),
                                     dim()));
  }
  std::vector<double> out(action.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = normalize(action[i], i);
  return out;
}

std::vector<double> NormStats::denormalize(std::span<const double> action) const {
  if (action.size() != dim()) {
    throw DimensionError(fmt::format("action of dimension {}, stats have {}", action.size(),
                                     dim()));
  }
  std::vector<double> out(action.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = denormalize(action[i], i);
  return out;
}

std::vector<std::vector<double>> normalize_actions(
    std::span<const std::vector<double>> seq, const NormStats& stats) {
  std::vector<std::vector<double>> out;
  out.reserve(seq.size());
  for (const auto& a : seq) out.push_back(stats.normalize(a));
  return out;
}

std::vector<std::vector<double>> denormalize_actions(
    std::span<const std::vector<double>> seq, const NormStats& stats) {
  std::vector<std::vector<double>> out;
  out.reserve(seq.size());
  for (const auto& a : seq) out.push_back(stats.denormalize(a));
  return out;
}

Mlp::Mlp(std::size_t input, std::size_t hidden, std::size_t output, Rng& rng)
    : in(input, hidden, rng), out(hidden, output, rng) {}

void Mlp::collect(ParameterList& params, const std::string& prefix) const {
  in.collect(params, prefix + ".in");
  out.collect(params, prefix + ".out");
}

ObsEncoder::ObsEncoder(std::size_t state_dim, std::size_t proprio_dim, std::size_t d_model,
                       Rng& rng)
    : state_dim_(state_dim),
      proprio_dim_(proprio_dim),
      d_model_(d_model),
      state_(state_dim, d_model, d_model, rng),
      proprio_(proprio_dim + 1, d_model, d_model, rng) {
  if (state_dim == 0 || d_model == 0) {
    throw ConfigError("observation encoder needs positive state and model dimensions");
  }
}

Tensor ObsEncoder::encode(std::span<const Observation> batch) const {
  if (batch.empty()) throw ContractError("empty observation batch");
  const std::size_t b = batch.size();
  std::vector<double> state, proprio;
  state.reserve(b * state_dim_);
  proprio.reserve(b * (proprio_dim_ + 1));
  for (const Observation& obs : batch) {
    if (obs.state.size() != state_dim_ || obs.proprio.size() != proprio_dim_) {
      throw DataError(fmt::format("observation dims ({}, {}) do not match encoder ({}, {})",
                                  obs.state.size(), obs.proprio.size(), state_dim_,
                                  proprio_dim_));
    }
    state.insert(state.end(), obs.state.begin(), obs.state.end());
    proprio.insert(proprio.end(), obs.proprio.begin(), obs.proprio.end());
    proprio.push_back(obs.proprio_masked ? 1.0 : 0.0);
  }
  const Tensor s = state_(Tensor({b, state_dim_}, std::move(state)));
  const Tensor p = proprio_(Tensor({b, proprio_dim_ + 1}, std::move(proprio)));
  return concat({reshape(s, {b, 1, d_model_}), reshape(p, {b, 1, d_model_})}, 1);
}

ParameterList ObsEncoder::parameters() const {
  ParameterList out;
  state_.collect(out, "obs.state");
  proprio_.collect(out, "obs.proprio");
  return out;
}

}  // namespace densegen
