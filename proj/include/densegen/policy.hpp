#pragma once

#include <functional>
#include <memory>
#include <span>
#include <vector>

#include "densegen/env.hpp"
#include "densegen/head.hpp"
#include "densegen/obs.hpp"

namespace densegen {

/// Maps one observation to T absolute actions in environment units.
using PolicyFn = std::function<std::vector<std::vector<double>>(const Observation&)>;

struct PolicyConfig {
  Paradigm paradigm = Paradigm::dense;
  HeadConfig head;
  /// Replace proprio by the masked input at inference too. Set for models
  /// trained with mask probability 1, which never saw real proprio.
  bool mask_proprio_at_inference = false;
};

/// Observation encoder, action head and the action normalization they were
/// trained with.
class Policy {
 public:
  Policy(const EnvSpec& env, const PolicyConfig& config, NormStats stats, Rng& rng);

  const EnvSpec& env() const { return env_; }
  const PolicyConfig& config() const { return config_; }
  const NormStats& stats() const { return stats_; }
  const ObsEncoder& obs_encoder() const { return obs_; }
  const ActionHead& head() const { return *head_; }

  /// Observation tokens [B, 2, d_model] for observations as fed to training.
  Tensor encode(std::span<const Observation> batch) const { return obs_.encode(batch); }

  /// Normalized predictions [1, T, A] for one observation, inference-time
  /// masking applied.
  HeadOutput decode(const Observation& obs) const;
  /// decode() mapped back to environment units.
  std::vector<std::vector<double>> predict(const Observation& obs) const;
  PolicyFn as_fn() const;

  ParameterList parameters() const;

 private:
  EnvSpec env_;
  PolicyConfig config_;
  NormStats stats_;
  ObsEncoder obs_;
  std::shared_ptr<ActionHead> head_;
};

/// The scripted expert as a policy: T commanded poses obtained by rolling
/// the expert forward in a private copy of the environment.
PolicyFn expert_policy(const EnvSpec& env, int horizon);

}  // namespace densegen
