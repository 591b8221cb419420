#include "densegen/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>

#include <fmt/format.h>

#include "densegen/ar_head.hpp"
#include "densegen/error.hpp"
#include "densegen/rng.hpp"

namespace densegen {

using nlohmann::json;

std::string to_string(Supervision s) {
  return s == Supervision::all_levels ? "all-levels" : "final-only";
}

Supervision parse_supervision(std::string_view text) {
  if (text == "all-levels") return Supervision::all_levels;
  if (text == "final-only") return Supervision::final_only;
  throw ConfigError(fmt::format("unknown supervision '{}' (all-levels, final-only)", text));
}

void TrainConfig::validate() const {
  const Horizon h(horizon);
  if (epochs < 1) throw ConfigError(fmt::format("epochs must be >= 1, got {}", epochs));
  if (max_steps < 0) throw ConfigError("max_steps must be >= 0");
  if (batch_size == 0) throw ConfigError("batch_size must be >= 1");
  if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be positive");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    throw ConfigError("Adam betas must lie in [0, 1)");
  }
  if (!(eps > 0.0)) throw ConfigError("eps must be positive");
  if (!(mask_prob >= 0.0 && mask_prob <= 1.0)) {
    throw ConfigError(fmt::format("mask_prob {} outside [0, 1]", mask_prob));
  }
  if (!(grad_clip >= 0.0)) throw ConfigError("grad_clip must be >= 0");
  if (paradigm == Paradigm::next_chunk) ChunkConfig{chunk_size}.validate(horizon);
  if (paradigm == Paradigm::dense && h.levels() < 1) {
    throw ConfigError("dense paradigm needs horizon >= 2");
  }
  encoder.validate();
}

PolicyConfig TrainConfig::policy_config(std::size_t action_dim) const {
  PolicyConfig p;
  p.paradigm = paradigm;
  p.head.encoder = encoder;
  p.head.action_dim = action_dim;
  p.head.horizon = horizon;
  p.head.chunk_size = chunk_size;
  p.mask_proprio_at_inference = mask_prob >= 1.0;
  return p;
}

json to_json(const TrainConfig& c) {
  return json{
      {"horizon", c.horizon},
      {"paradigm", to_string(c.paradigm)},
      {"supervision", to_string(c.supervision)},
      {"rollout_mode", to_string(c.rollout_mode)},
      {"learning_rate", c.learning_rate},
      {"betas", {c.beta1, c.beta2}},
      {"eps", c.eps},
      {"batch_size", c.batch_size},
      {"epochs", c.epochs},
      {"max_steps", c.max_steps},
      {"mask_prob", c.mask_prob},
      {"seed", c.seed},
      {"chunk_size", c.chunk_size},
      {"grad_clip", c.grad_clip},
      {"cosine_schedule", c.cosine_schedule},
      {"encoder",
       {{"d_model", c.encoder.d_model},
        {"n_heads", c.encoder.n_heads},
        {"n_layers", c.encoder.n_layers},
        {"d_ffn", c.encoder.d_ffn},
        {"dropout", c.encoder.dropout_rate},
        {"max_levels", c.encoder.max_levels},
        {"level_embedding", c.encoder.level_embedding},
        {"final_norm", c.encoder.final_norm}}},
  };
}

TrainConfig train_config_from_json(const json& j, TrainConfig c) {
  if (!j.is_object()) throw ConfigError("train config must be a JSON object");
  try {
    for (const auto& [key, v] : j.items()) {
      if (key == "horizon") c.horizon = v.get<int>();
      else if (key == "paradigm") c.paradigm = parse_paradigm(v.get<std::string>());
      else if (key == "supervision") c.supervision = parse_supervision(v.get<std::string>());
      else if (key == "rollout_mode") c.rollout_mode = parse_rollout_mode(v.get<std::string>());
      else if (key == "learning_rate") c.learning_rate = v.get<double>();
      else if (key == "betas") {
        const auto b = v.get<std::vector<double>>();
        if (b.size() != 2) throw ConfigError("betas needs two values");
        c.beta1 = b[0];
        c.beta2 = b[1];
      } else if (key == "eps") c.eps = v.get<double>();
      else if (key == "batch_size") c.batch_size = v.get<std::size_t>();
      else if (key == "epochs") c.epochs = v.get<int>();
      else if (key == "max_steps") c.max_steps = v.get<long>();
      else if (key == "mask_prob") c.mask_prob = v.get<double>();
      else if (key == "seed") c.seed = v.get<std::uint64_t>();
      else if (key == "chunk_size") c.chunk_size = v.get<std::size_t>();
      else if (key == "grad_clip") c.grad_clip = v.get<double>();
      else if (key == "cosine_schedule") c.cosine_schedule = v.get<bool>();
      else if (key == "encoder") {
        if (!v.is_object()) throw ConfigError("encoder must be a JSON object");
        for (const auto& [ek, ev] : v.items()) {
          if (ek == "d_model") c.encoder.d_model = ev.get<std::size_t>();
          else if (ek == "n_heads") c.encoder.n_heads = ev.get<std::size_t>();
          else if (ek == "n_layers") c.encoder.n_layers = ev.get<std::size_t>();
          else if (ek == "d_ffn") c.encoder.d_ffn = ev.get<std::size_t>();
          else if (ek == "dropout") c.encoder.dropout_rate = ev.get<double>();
          else if (ek == "max_levels") c.encoder.max_levels = ev.get<std::size_t>();
          else if (ek == "level_embedding") c.encoder.level_embedding = ev.get<bool>();
          else if (ek == "final_norm") c.encoder.final_norm = ev.get<bool>();
          else throw ConfigError(fmt::format("unknown encoder key '{}'", ek));
        }
      } else {
        throw ConfigError(fmt::format("unknown train config key '{}'", key));
      }
    }
  } catch (const json::exception& e) {
    throw ConfigError(fmt::format("bad train config value: {}", e.what()));
  }
  return c;
}

LossResult compute_loss(const HeadOutput& out, const Tensor& gt, Paradigm paradigm,
                        Supervision supervision) {
  LossResult r;
  if (paradigm != Paradigm::dense) {
    r.loss = mse(out.actions, gt);
    return r;
  }
  if (out.levels.empty()) throw ContractError("dense loss needs per-level predictions");
  const Horizon h(static_cast<int>(gt.dim(1)));
  if (static_cast<int>(out.levels.size()) != h.levels()) {
    throw ContractError(fmt::format("{} predicted levels for horizon {}", out.levels.size(),
                                    h.steps()));
  }
  std::vector<Tensor> terms;
  for (int n = 1; n <= h.levels(); ++n) {
    Tensor term = mse(out.levels[n - 1].values, downsample_gt(gt, h, n).values);
    r.level_losses.push_back(term.item());
    terms.push_back(term);
  }
  if (supervision == Supervision::final_only) {
    r.loss = terms.back();
  } else {
    Tensor total = terms.front();
    for (std::size_t i = 1; i < terms.size(); ++i) total = add(total, terms[i]);
    r.loss = scale(total, 1.0 / static_cast<double>(terms.size()));
  }
  return r;
}

void adam_step(const ParameterList& params, AdamState& state, const AdamConfig& config,
               double lr) {
  if (state.m.empty()) {
    for (const auto& p : params) {
      state.m.emplace_back(p.tensor.size(), 0.0);
      state.v.emplace_back(p.tensor.size(), 0.0);
    }
  }
  if (state.m.size() != params.size()) {
    throw ContractError(fmt::format("Adam state for {} parameters, got {}", state.m.size(),
                                    params.size()));
  }
  ++state.step;
  const double c1 = 1.0 - std::pow(config.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(config.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor p = params[i].tensor;
    if (state.m[i].size() != p.size()) {
      throw ContractError(fmt::format("Adam state shape mismatch for {}", params[i].name));
    }
    if (!p.has_grad()) continue;
    const auto g = p.mutable_grad();
    auto w = p.mutable_data();
    auto& m = state.m[i];
    auto& v = state.v[i];
    for (std::size_t k = 0; k < w.size(); ++k) {
      m[k] = config.beta1 * m[k] + (1.0 - config.beta1) * g[k];
      v[k] = config.beta2 * v[k] + (1.0 - config.beta2) * g[k] * g[k];
      w[k] -= lr * (m[k] / c1) / (std::sqrt(v[k] / c2) + config.eps);
    }
  }
}

double global_grad_norm(const ParameterList& params) {
  double sq = 0.0;
  for (const auto& p : params) {
    if (!p.tensor.has_grad()) continue;
    for (double g : Tensor(p.tensor).mutable_grad()) sq += g * g;
  }
  return std::sqrt(sq);
}

double clip_grad_norm(const ParameterList& params, double max_norm) {
  const double norm = global_grad_norm(params);
  if (max_norm > 0.0 && norm > max_norm) {
    const double s = max_norm / norm;
    for (const auto& p : params) {
      if (!p.tensor.has_grad()) continue;
      for (double& g : Tensor(p.tensor).mutable_grad()) g *= s;
    }
  }
  return norm;
}

std::vector<WindowRef> enumerate_windows(const DemonstrationSet& data, int horizon) {
  std::vector<WindowRef> out;
  for (std::size_t e = 0; e < data.episodes.size(); ++e) {
    const std::size_t len = data.episodes[e].actions.size();
    if (len == 0) continue;
    const std::size_t last = len > static_cast<std::size_t>(horizon) ? len - horizon : 0;
    for (std::size_t s = 0; s <= last; ++s) out.push_back({e, s});
  }
  return out;
}

Batch make_batch(const DemonstrationSet& data, std::span<const WindowRef> windows,
                 int horizon) {
  const std::size_t adim = data.meta.env.action_dim;
  Batch b;
  std::vector<double> gt;
  gt.reserve(windows.size() * horizon * adim);
  for (const WindowRef& w : windows) {
    const Episode& ep = data.episodes.at(w.episode);
    if (w.start >= ep.actions.size()) throw ContractError("window starts past episode end");
    b.obs.push_back(ep.observations[w.start]);
    for (int t = 0; t < horizon; ++t) {
      const std::size_t i = std::min(w.start + t, ep.actions.size() - 1);
      const auto a = data.meta.stats.normalize(ep.actions[i]);
      gt.insert(gt.end(), a.begin(), a.end());
    }
  }
  b.gt = Tensor({windows.size(), static_cast<std::size_t>(horizon), adim}, std::move(gt));
  return b;
}

StepResult train_step(Policy& policy, AdamState& adam, const Batch& batch,
                      const TrainConfig& config, double lr, Rng* dropout_rng) {
  const ParameterList params = policy.parameters();
  for (const auto& p : params) Tensor(p.tensor).zero_grad();
  StepResult r;
  {
    Tape tape;
    const Tensor tokens = policy.encode(batch.obs);
    const HeadOutput out =
        policy.head().train_forward(tokens, batch.gt, config.rollout_mode, {dropout_rng});
    LossResult loss = compute_loss(out, batch.gt, config.paradigm, config.supervision);
    r.loss = loss.loss.item();
    r.level_losses = std::move(loss.level_losses);
    if (!std::isfinite(r.loss)) {
      throw NumericalError(fmt::format("non-finite loss {} at step {} (lr {})", r.loss,
                                       adam.step + 1, lr));
    }
    tape.backward(loss.loss);
  }
  r.grad_norm = clip_grad_norm(params, config.grad_clip);
  if (!std::isfinite(r.grad_norm)) {
    throw NumericalError(fmt::format("non-finite gradient norm at step {} (loss {}, lr {})",
                                     adam.step + 1, r.loss, lr));
  }
  adam_step(params, adam, AdamConfig{config.beta1, config.beta2, config.eps}, lr);
  return r;
}

long steps_per_epoch(std::size_t n_windows, std::size_t batch_size) {
  return static_cast<long>((n_windows + batch_size - 1) / batch_size);
}

namespace {

void check_compatible(const DemonstrationSet& data, const TrainConfig& config) {
  const EnvSpec& env = data.meta.env;
  if (data.meta.stats.dim() != env.action_dim) {
    throw ConfigError(fmt::format("dataset stats have {} dims, env action_dim is {}",
                                  data.meta.stats.dim(), env.action_dim));
  }
  if (config.horizon > data.meta.horizon) {
    throw ConfigError(fmt::format("dataset is padded for horizon {}, config asks for {}",
                                  data.meta.horizon, config.horizon));
  }
  for (const Episode& ep : data.episodes) {
    for (const Observation& o : ep.observations) {
      if (o.state.size() != env.state_dim || o.proprio.size() != env.proprio_dim) {
        throw ConfigError(fmt::format("dataset observation dims ({}, {}) differ from {} ({}, {})",
                                      o.state.size(), o.proprio.size(), to_string(env.kind),
                                      env.state_dim, env.proprio_dim));
      }
    }
    for (const auto& a : ep.actions) {
      if (a.size() != env.action_dim) {
        throw ConfigError(fmt::format("dataset action of dimension {}, env expects {}",
                                      a.size(), env.action_dim));
      }
    }
  }
}

std::uint64_t fold(std::uint64_t digest, std::uint64_t value) {
  return mix64(digest ^ (value + 0x9e3779b97f4a7c15ULL));
}

}  // namespace

TrainResult train(const DemonstrationSet& data, const TrainConfig& config,
                  const EpochCallback& on_epoch) {
  config.validate();
  check_compatible(data, config);
  const std::vector<WindowRef> windows = enumerate_windows(data, config.horizon);
  if (windows.empty()) throw DataError("dataset has no training windows");

  Rng init(config.seed, Stream::init);
  TrainResult result{Policy(data.meta.env, config.policy_config(data.meta.env.action_dim),
                            data.meta.stats, init),
                     {}, 0, 0};
  Rng sampler(config.seed, Stream::sampling);
  Rng masker(config.seed, Stream::masking);
  Rng dropout(config.seed, Stream::dropout);
  AdamState adam;

  const long per_epoch = steps_per_epoch(windows.size(), config.batch_size);
  long total = per_epoch * config.epochs;
  if (config.max_steps > 0) total = std::min(total, config.max_steps);

  std::vector<WindowRef> picks(config.batch_size);
  for (int epoch = 1; epoch <= config.epochs && result.steps < total; ++epoch) {
    EpochRecord record{epoch, 0, 0.0, {}};
    long epoch_steps = 0;
    for (long s = 0; s < per_epoch && result.steps < total; ++s) {
      for (WindowRef& w : picks) {
        w = windows[sampler.below(windows.size())];
        result.sample_digest = fold(fold(result.sample_digest, w.episode), w.start);
      }
      Batch batch = make_batch(data, picks, config.horizon);
      for (Observation& o : batch.obs) {
        o = mask_proprio(o, config.mask_prob, masker);
        result.sample_digest = fold(result.sample_digest, o.proprio_masked);
      }
      double lr = config.learning_rate;
      if (config.cosine_schedule) {
        lr *= 0.5 * (1.0 + std::cos(std::numbers::pi * static_cast<double>(result.steps) /
                                    static_cast<double>(total)));
      }
      const StepResult step = train_step(result.policy, adam, batch, config, lr, &dropout);
      ++result.steps;
      ++epoch_steps;
      record.loss += step.loss;
      if (record.level_losses.empty()) record.level_losses.assign(step.level_losses.size(), 0.0);
      for (std::size_t i = 0; i < step.level_losses.size(); ++i)
        record.level_losses[i] += step.level_losses[i];
    }
    record.step = result.steps;
    record.loss /= static_cast<double>(epoch_steps);
    for (double& l : record.level_losses) l /= static_cast<double>(epoch_steps);
    result.curve.push_back(record);
    if (on_epoch && !on_epoch(record, result.policy)) break;
  }
  return result;
}

double dataset_loss(const Policy& policy, const DemonstrationSet& data,
                    const TrainConfig& config) {
  NoGradGuard no_grad;
  const std::vector<WindowRef> windows = enumerate_windows(data, config.horizon);
  if (windows.empty()) throw DataError("dataset has no windows");
  double total = 0.0;
  for (std::size_t begin = 0; begin < windows.size(); begin += config.batch_size) {
    const std::size_t end = std::min(windows.size(), begin + config.batch_size);
    Batch batch = make_batch(data, std::span(windows).subspan(begin, end - begin),
                             config.horizon);
    if (policy.config().mask_proprio_at_inference) {
      for (Observation& o : batch.obs) o = masked(o);
    }
    const HeadOutput out =
        policy.head().train_forward(policy.encode(batch.obs), batch.gt, config.rollout_mode, {});
    total += compute_loss(out, batch.gt, config.paradigm, config.supervision).loss.item() *
             static_cast<double>(end - begin);
  }
  return total / static_cast<double>(windows.size());
}

void write_loss_csv(const std::vector<EpochRecord>& curve, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FileError(fmt::format("cannot write {}", path.string()));
  const std::size_t levels = curve.empty() ? 0 : curve.front().level_losses.size();
  out << "epoch,step,loss";
  for (std::size_t i = 1; i <= levels; ++i) out << ",level_" << i;
  out << '\n';
  for (const EpochRecord& r : curve) {
    out << r.epoch << ',' << r.step << ',' << format_double(r.loss);
    for (double l : r.level_losses) out << ',' << format_double(l);
    out << '\n';
  }
  if (!out) throw FileError(fmt::format("cannot write {}", path.string()));
}

}  // namespace densegen
