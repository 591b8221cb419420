#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "densegen/head.hpp"
#include "densegen/policy.hpp"
#include "densegen/trainer.hpp"

namespace densegen {

struct EvalProtocol {
  std::vector<std::uint64_t> seeds{0, 1, 2};
  int episodes_per_eval = 20;
  int eval_every_epochs = 200;
  std::size_t top_k = 5;
  /// Actions executed per prediction before re-planning; 0 means T / 2.
  int execute_steps = 0;
};

struct EvalResult {
  int episodes = 0;
  int successes = 0;
  /// Episodes ended by a non-finite action.
  int nan_failures = 0;
  double success_rate() const { return episodes ? double(successes) / episodes : 0.0; }
};

/// Closed-loop receding-horizon control from `episodes_per_eval` start
/// states drawn from the evaluation stream of `seed`: predict, execute the
/// first m actions, re-observe, until success or the step limit.
EvalResult evaluate_policy(const PolicyFn& policy, const EnvSpec& env, int horizon,
                           const EvalProtocol& protocol, std::uint64_t seed);
EvalResult evaluate_policy(const Policy& policy, const EvalProtocol& protocol,
                           std::uint64_t seed);

/// Mean of the k largest values. ContractError if the series is shorter.
double top_k_protocol(std::span<const double> series, std::size_t k);

struct Aggregate {
  double mean = 0.0;
  /// Population standard deviation (divides by n).
  double std = 0.0;
};
Aggregate aggregate(std::span<const double> values);

/// 1-based index of the first eval point reaching `fraction` of the series
/// peak; 0 for an all-zero series.
std::size_t points_to_fraction_of_peak(std::span<const double> series, double fraction = 0.5);

struct LearningCurve {
  std::vector<int> epochs;
  std::vector<double> success;
  std::optional<TrainResult> final;
};

/// Trains and evaluates every `eval_every_epochs` epochs (and after the last
/// epoch when it is not a multiple) with the evaluation seed `eval_seed`.
LearningCurve run_learning_curve(const DemonstrationSet& data, const TrainConfig& config,
                                 const EvalProtocol& protocol, std::uint64_t eval_seed);

struct BenchOptions {
  int warmup = 10;
  int runs = 100;
  std::uint64_t seed = 0;
};

struct BenchRow {
  Paradigm paradigm = Paradigm::dense;
  int horizon = 0;
  std::size_t chunk_size = 0;
  int passes = 0;
  double latency_us_median = 0.0;
  double latency_us_iqr = 0.0;
  std::size_t params = 0;
};

/// Timed decode() of randomly initialized heads on fixed observation tokens.
/// Observation encoding is excluded.
std::vector<BenchRow> bench_inference(std::span<const Paradigm> paradigms,
                                      std::span<const int> horizons, const HeadConfig& base,
                                      const BenchOptions& options = {});

/// Linear-interpolated quantile (q in [0, 1]) of unsorted samples.
double quantile(std::vector<double> samples, double q);

void write_eval_csv(const std::vector<std::uint64_t>& seeds,
                    const std::vector<std::vector<double>>& series,
                    const std::filesystem::path& path);
void write_summary_csv(const std::vector<std::vector<double>>& series, std::size_t top_k,
                       const std::filesystem::path& path);
void write_bench_csv(const std::vector<BenchRow>& rows, const std::filesystem::path& path);

}  // namespace densegen
