#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "densegen/dataset.hpp"
#include "densegen/policy.hpp"

namespace densegen {

enum class Supervision { all_levels, final_only };

std::string to_string(Supervision s);
Supervision parse_supervision(std::string_view text);

struct TrainConfig {
  int horizon = 16;
  Paradigm paradigm = Paradigm::dense;
  Supervision supervision = Supervision::all_levels;
  RolloutMode rollout_mode = RolloutMode::self_rollout;
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::size_t batch_size = 32;
  int epochs = 1000;
  /// Hard cap on optimizer steps; 0 means epochs alone decide.
  long max_steps = 0;
  double mask_prob = 0.25;
  std::uint64_t seed = 0;
  std::size_t chunk_size = 2;
  /// Global gradient-norm clip; 0 disables.
  double grad_clip = 1.0;
  bool cosine_schedule = false;
  EncoderConfig encoder;

  void validate() const;
  PolicyConfig policy_config(std::size_t action_dim) const;
  bool operator==(const TrainConfig&) const = default;
};

nlohmann::json to_json(const TrainConfig& c);
/// Starts from `base` and overwrites the keys present in `j`. Unknown keys
/// are a config error.
TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig base = {});

struct LossResult {
  Tensor loss;
  /// Dense: MSE of every level 1..log2 T. Baselines: empty.
  std::vector<double> level_losses;
};

/// All-levels: mean over n of MSE(level n, ground truth at level n).
/// Final-only: MSE of the last level. Baselines: MSE over all T positions.
LossResult compute_loss(const HeadOutput& out, const Tensor& gt, Paradigm paradigm,
                        Supervision supervision);

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
  long step = 0;
};

/// One bias-corrected Adam update of every parameter from its accumulated
/// gradient. Moments are allocated on first use.
void adam_step(const ParameterList& params, AdamState& state, const AdamConfig& config,
               double lr);

double global_grad_norm(const ParameterList& params);
/// Rescales gradients so their global norm is at most max_norm; returns the
/// norm before clipping.
double clip_grad_norm(const ParameterList& params, double max_norm);

struct WindowRef {
  std::size_t episode = 0;
  std::size_t start = 0;
  bool operator==(const WindowRef&) const = default;
};

/// Every (episode, start) whose T-step action window lies inside the episode
/// after final-action padding.
std::vector<WindowRef> enumerate_windows(const DemonstrationSet& data, int horizon);

struct Batch {
  std::vector<Observation> obs;
  Tensor gt;  // [B, T, A], normalized
};

/// Observation at the window start, next T actions normalized with the
/// dataset stats.
Batch make_batch(const DemonstrationSet& data, std::span<const WindowRef> windows,
                 int horizon);

struct StepResult {
  double loss = 0.0;
  std::vector<double> level_losses;
  double grad_norm = 0.0;
};

/// Forward, backward, clip and Adam update on one batch.
StepResult train_step(Policy& policy, AdamState& adam, const Batch& batch,
                      const TrainConfig& config, double lr, Rng* dropout_rng = nullptr);

struct EpochRecord {
  int epoch = 0;
  long step = 0;
  double loss = 0.0;
  std::vector<double> level_losses;
};

struct TrainResult {
  Policy policy;
  std::vector<EpochRecord> curve;
  long steps = 0;
  /// Hash of every sampled window and mask draw, in order.
  std::uint64_t sample_digest = 0;
};

/// Called after each epoch; return false to stop early.
using EpochCallback = std::function<bool(const EpochRecord&, const Policy&)>;

/// ceil(windows / batch_size): one epoch is one pass-equivalent of samples.
long steps_per_epoch(std::size_t n_windows, std::size_t batch_size);

TrainResult train(const DemonstrationSet& data, const TrainConfig& config,
                  const EpochCallback& on_epoch = {});

/// Training objective averaged over every window of the dataset, no
/// dropout, proprio masked only where inference masks it.
double dataset_loss(const Policy& policy, const DemonstrationSet& data,
                    const TrainConfig& config);

void write_loss_csv(const std::vector<EpochRecord>& curve, const std::filesystem::path& path);

struct Checkpoint {
  Policy policy;
  TrainConfig config;
  long step = 0;
};

/// `params.bin` (little-endian float64, parameters in list order) and
/// `manifest.json` (names, shapes, byte offsets, config, env, stats, step).
void save_checkpoint(const Policy& policy, const TrainConfig& config, long step,
                     const std::filesystem::path& dir);
Checkpoint load_checkpoint(const std::filesystem::path& dir);

}  // namespace densegen
