#include "densegen/eval.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>

#include <fmt/format.h>

#include "densegen/dataset.hpp"
#include "densegen/error.hpp"
#include "densegen/rng.hpp"

namespace densegen {

EvalResult evaluate_policy(const PolicyFn& policy, const EnvSpec& env, int horizon,
                           const EvalProtocol& protocol, std::uint64_t seed) {
  const int m = protocol.execute_steps > 0 ? protocol.execute_steps : std::max(1, horizon / 2);
  if (m > horizon) {
    throw ConfigError(fmt::format("execute_steps {} exceeds horizon {}", m, horizon));
  }
  if (protocol.episodes_per_eval < 1) throw ConfigError("episodes_per_eval must be >= 1");
  EvalResult result;
  for (int e = 0; e < protocol.episodes_per_eval; ++e) {
    Rng rng(seed, Stream::evaluation, static_cast<std::uint64_t>(e));
    EnvState state = sample_solvable_state(env, rng);
    int steps = 0;
    bool success = check_success(env, state);
    while (!success && !state.failed && steps < env.max_episode_steps) {
      const auto plan = policy(observe(env, state));
      if (plan.size() < static_cast<std::size_t>(m)) {
        throw ContractError(fmt::format("policy returned {} actions, need {}", plan.size(), m));
      }
      for (int i = 0; i < m && steps < env.max_episode_steps; ++i) {
        state = env_step(env, state, plan[i]);
        ++steps;
        success = check_success(env, state);
        if (success || state.failed) break;
      }
    }
    ++result.episodes;
    result.successes += success;
    result.nan_failures += state.failed;
  }
  return result;
}

EvalResult evaluate_policy(const Policy& policy, const EvalProtocol& protocol,
                           std::uint64_t seed) {
  return evaluate_policy(policy.as_fn(), policy.env(), policy.head().horizon().steps(), protocol,
                         seed);
}

double top_k_protocol(std::span<const double> series, std::size_t k) {
  if (k == 0 || series.size() < k) {
    throw ContractError(fmt::format("top-{} of a series of length {}", k, series.size()));
  }
  std::vector<double> sorted(series.begin(), series.end());
  std::sort(sorted.begin(), sorted.end(), std::greater<>());
  return std::accumulate(sorted.begin(), sorted.begin() + static_cast<std::ptrdiff_t>(k), 0.0) /
         static_cast<double>(k);
}

Aggregate aggregate(std::span<const double> values) {
  if (values.empty()) throw ContractError("aggregate of an empty set");
  Aggregate a;
  const double n = static_cast<double>(values.size());
  a.mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
  double sq = 0.0;
  for (double v : values) sq += (v - a.mean) * (v - a.mean);
  a.std = std::sqrt(sq / n);
  return a;
}

std::size_t points_to_fraction_of_peak(std::span<const double> series, double fraction) {
  if (series.empty()) return 0;
  const double peak = *std::max_element(series.begin(), series.end());
  if (peak <= 0.0) return 0;
  for (std::size_t i = 0; i < series.size(); ++i) {
    if (series[i] >= fraction * peak) return i + 1;
  }
  return series.size();
}

LearningCurve run_learning_curve(const DemonstrationSet& data, const TrainConfig& config,
                                 const EvalProtocol& protocol, std::uint64_t eval_seed) {
  if (protocol.eval_every_epochs < 1) throw ConfigError("eval_every_epochs must be >= 1");
  LearningCurve curve;
  const auto on_epoch = [&](const EpochRecord& r, const Policy& policy) {
    if (r.epoch % protocol.eval_every_epochs == 0) {
      curve.epochs.push_back(r.epoch);
      curve.success.push_back(evaluate_policy(policy, protocol, eval_seed).success_rate());
    }
    return true;
  };
  curve.final.emplace(train(data, config, on_epoch));
  const int last = curve.final->curve.empty() ? 0 : curve.final->curve.back().epoch;
  if (last > 0 && (curve.epochs.empty() || curve.epochs.back() != last)) {
    curve.epochs.push_back(last);
    curve.success.push_back(
        evaluate_policy(curve.final->policy, protocol, eval_seed).success_rate());
  }
  return curve;
}

double quantile(std::vector<double> samples, double q) {
  if (samples.empty()) throw ContractError("quantile of no samples");
  std::sort(samples.begin(), samples.end());
  const double pos = q * static_cast<double>(samples.size() - 1);
  const std::size_t lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, samples.size() - 1);
  return samples[lo] + (pos - static_cast<double>(lo)) * (samples[hi] - samples[lo]);
}

std::vector<BenchRow> bench_inference(std::span<const Paradigm> paradigms,
                                      std::span<const int> horizons, const HeadConfig& base,
                                      const BenchOptions& options) {
  if (options.runs < 1 || options.warmup < 0) throw ConfigError("bench needs runs >= 1");
  std::vector<BenchRow> rows;
  for (Paradigm p : paradigms) {
    for (int T : horizons) {
      HeadConfig config = base;
      config.horizon = T;
      Rng rng(options.seed, Stream::bench, static_cast<std::uint64_t>(T));
      const auto head = make_head(p, config, rng);
      std::vector<double> tokens(ObsEncoder::n_tokens * config.encoder.d_model);
      for (double& v : tokens) v = rng.uniform(-1.0, 1.0);
      const Tensor obs({1, ObsEncoder::n_tokens, config.encoder.d_model}, std::move(tokens));

      BenchRow row;
      row.paradigm = p;
      row.horizon = T;
      row.chunk_size = p == Paradigm::next_chunk ? config.chunk_size
                       : p == Paradigm::next_token ? 1
                                                   : 0;
      row.params = count_params(head->parameters());
      NoGradGuard no_grad;
      for (int i = 0; i < options.warmup; ++i) row.passes = head->decode(obs).forward_pass_count;
      std::vector<double> us;
      for (int i = 0; i < options.runs; ++i) {
        const auto t0 = std::chrono::steady_clock::now();
        const HeadOutput out = head->decode(obs);
        const auto t1 = std::chrono::steady_clock::now();
        row.passes = out.forward_pass_count;
        us.push_back(std::chrono::duration<double, std::micro>(t1 - t0).count());
      }
      row.latency_us_median = quantile(us, 0.5);
      row.latency_us_iqr = quantile(us, 0.75) - quantile(us, 0.25);
      rows.push_back(row);
    }
  }
  return rows;
}

namespace {

std::ofstream open_csv(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FileError(fmt::format("cannot write {}", path.string()));
  return out;
}

}  // namespace

void write_eval_csv(const std::vector<std::uint64_t>& seeds,
                    const std::vector<std::vector<double>>& series,
                    const std::filesystem::path& path) {
  auto out = open_csv(path);
  out << "seed,eval_point,success_rate\n";
  for (std::size_t s = 0; s < seeds.size(); ++s)
    for (std::size_t i = 0; i < series.at(s).size(); ++i)
      out << seeds[s] << ',' << i << ',' << format_double(series[s][i]) << '\n';
}

void write_summary_csv(const std::vector<std::vector<double>>& series, std::size_t top_k,
                       const std::filesystem::path& path) {
  std::vector<double> per_seed;
  for (const auto& s : series) per_seed.push_back(top_k_protocol(s, top_k));
  const Aggregate a = aggregate(per_seed);
  auto out = open_csv(path);
  out << "n_seeds,top_k,mean,std\n";
  out << per_seed.size() << ',' << top_k << ',' << format_double(a.mean) << ','
      << format_double(a.std) << '\n';
}

void write_bench_csv(const std::vector<BenchRow>& rows, const std::filesystem::path& path) {
  auto out = open_csv(path);
  out << "paradigm,T,passes,latency_us_median,latency_us_iqr,params\n";
  for (const BenchRow& r : rows) {
    out << to_string(r.paradigm) << ',' << r.horizon << ',' << r.passes << ','
        << fmt::format("{:.3f}", r.latency_us_median) << ','
        << fmt::format("{:.3f}", r.latency_us_iqr) << ',' << r.params << '\n';
  }
}

}  // namespace densegen
