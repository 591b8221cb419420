#include "densegen/policy.hpp"

#include <fmt/format.h>

#include "densegen/error.hpp"
#include "densegen/rng.hpp"

namespace densegen {

Policy::Policy(const EnvSpec& env, const PolicyConfig& config, NormStats stats, Rng& rng)
    : env_(env), config_(config), stats_(std::move(stats)) {
  if (config_.head.action_dim != env_.action_dim || stats_.dim() != env_.action_dim) {
    throw ConfigError(fmt::format("{} has action_dim {}, model {} and stats {}",
                                  to_string(env_.kind), env_.action_dim,
                                  config_.head.action_dim, stats_.dim()));
  }
  config_.head.encoder.validate();
  obs_ = ObsEncoder(env_.state_dim, env_.proprio_dim, config_.head.encoder.d_model, rng);
  head_ = make_head(config_.paradigm, config_.head, rng);
}

HeadOutput Policy::decode(const Observation& obs) const {
  NoGradGuard no_grad;
  const Observation input = config_.mask_proprio_at_inference ? masked(obs) : obs;
  return head_->decode(obs_.encode(input));
}

std::vector<std::vector<double>> Policy::predict(const Observation& obs) const {
  const Tensor actions = decode(obs).actions;
  const std::size_t steps = actions.dim(1), adim = actions.dim(2);
  std::vector<std::vector<double>> out(steps);
  for (std::size_t t = 0; t < steps; ++t) {
    out[t] = stats_.denormalize(actions.data().subspan(t * adim, adim));
  }
  return out;
}

PolicyFn Policy::as_fn() const {
  return [this](const Observation& obs) { return predict(obs); };
}

ParameterList Policy::parameters() const {
  ParameterList out = obs_.parameters();
  for (auto& p : head_->parameters()) out.push_back(p);
  return out;
}

PolicyFn expert_policy(const EnvSpec& env, int horizon) {
  return [env, horizon](const Observation& obs) {
    EnvState s = state_from_observation(env, obs);
    std::vector<std::vector<double>> plan;
    for (int t = 0; t < horizon; ++t) {
      plan.push_back(scripted_expert(env, s));
      s = env_step(env, s, plan.back());
    }
    return plan;
  };
}

}  // namespace densegen
