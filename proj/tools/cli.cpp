#include "cli.hpp"

#include <CLI11.hpp>
#include <fmt/format.h>
#include <fmt/ranges.h>
#include <json.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <optional>
#include <thread>

#include "densegen/ar_head.hpp"
#include "densegen/dataset.hpp"
#include "densegen/error.hpp"
#include "densegen/eval.hpp"
#include "densegen/trainer.hpp"

namespace densegen::cli {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

json load_section(const std::string& path, const char* section) {
  if (path.empty()) return json::object();
  std::ifstream in(path);
  if (!in) throw FileError(fmt::format("cannot open config {}", path));
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError(fmt::format("config {} is not valid JSON: {}", path, e.what()));
  }
  if (!j.is_object()) throw ConfigError(fmt::format("config {} must be a JSON object", path));
  if (j.contains(section)) return j.at(section);
  return j;
}

template <class T>
T take(const json& j, const char* key, T fallback) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(fmt::format("config key '{}': {}", key, e.what()));
  }
}

void reject_unknown(const json& j, std::initializer_list<const char*> known) {
  for (const auto& [key, _] : j.items()) {
    if (std::find_if(known.begin(), known.end(), [&](const char* k) { return key == k; }) ==
        known.end()) {
      throw ConfigError(fmt::format("unknown config key '{}'", key));
    }
  }
}

void prepare_out_dir(const fs::path& dir, bool force) {
  if (fs::exists(dir)) {
    if (!fs::is_directory(dir)) {
      throw ConfigError(fmt::format("output path {} exists and is not a directory", dir.string()));
    }
    if (!fs::is_empty(dir)) {
      if (!force) {
        throw ConfigError(fmt::format("output directory {} is not empty (use --force)",
                                      dir.string()));
      }
      fs::remove_all(dir);
    }
  }
  fs::create_directories(dir);
}

void echo_config(const ordered_json& config, const fs::path& dir) {
  std::ofstream out(dir / "config.json", std::ios::binary);
  out << config.dump(2) << '\n';
  if (!out) throw FileError(fmt::format("cannot write {}", (dir / "config.json").string()));
}

int thread_cap() {
  const char* env = std::getenv("DENSEGEN_THREADS");
  if (!env || !*env) return 1;
  char* end = nullptr;
  const long n = std::strtol(env, &end, 10);
  if (*end != '\0' || n < 1) {
    throw ConfigError(fmt::format("DENSEGEN_THREADS must be a positive integer, got '{}'", env));
  }
  return static_cast<int>(n);
}

std::vector<Paradigm> parse_paradigms(const std::vector<std::string>& names) {
  std::vector<Paradigm> out;
  for (const auto& n : names) out.push_back(parse_paradigm(n));
  return out;
}

// ---------------------------------------------------------------------------

struct GenDataArgs {
  std::string config;
  std::optional<std::string> env;
  std::optional<long> episodes;
  std::optional<std::uint64_t> seed;
  std::optional<int> horizon;
  std::string out;
  bool force = false;
};

int gen_data(const GenDataArgs& a, std::ostream& out) {
  const json file = load_section(a.config, "gen_data");
  reject_unknown(file, {"env", "episodes", "seed", "horizon"});
  const std::string env_name = a.env.value_or(take<std::string>(file, "env", ""));
  if (env_name.empty()) throw ConfigError("gen-data needs --env");
  const long episodes = a.episodes.value_or(take<long>(file, "episodes", 10));
  const std::uint64_t seed = a.seed.value_or(take<std::uint64_t>(file, "seed", 0));
  const int horizon = a.horizon.value_or(take<int>(file, "horizon", 16));
  if (episodes < 1) throw ConfigError(fmt::format("--episodes must be >= 1, got {}", episodes));

  const EnvSpec spec = EnvSpec::make(parse_env(env_name));
  const DemonstrationSet data =
      generate_dataset(spec, static_cast<std::size_t>(episodes), seed, horizon);
  prepare_out_dir(a.out, a.force);
  write_dataset(data, a.out);
  echo_config({{"command", "gen-data"},
               {"env", env_name},
               {"episodes", episodes},
               {"seed", seed},
               {"horizon", horizon}},
              a.out);
  out << fmt::format("wrote {} {} episodes to {}\n", data.episodes.size(), env_name, a.out);
  for (std::size_t i = 0; i < data.meta.stats.dim(); ++i) {
    out << fmt::format("  action[{}] min {:.6g} max {:.6g}{}\n", i, data.meta.stats.min[i],
                       data.meta.stats.max[i], data.meta.stats.degenerate(i) ? " (degenerate)" : "");
  }
  return kOk;
}

// ---------------------------------------------------------------------------

struct TrainArgs {
  std::string config;
  std::string data;
  std::string out;
  std::optional<std::string> paradigm;
  std::optional<std::string> supervision;
  std::optional<std::string> rollout;
  std::optional<std::size_t> chunk;
  std::optional<int> horizon;
  std::optional<int> epochs;
  std::optional<long> max_steps;
  std::optional<std::size_t> batch_size;
  std::optional<double> lr;
  std::optional<double> mask_prob;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> d_model;
  std::optional<std::size_t> n_layers;
  std::optional<std::size_t> n_heads;
  std::optional<std::size_t> d_ffn;
  std::optional<bool> cosine;
  int save_every = 0;
  bool force = false;
};

int train_cmd(const TrainArgs& a, std::ostream& out) {
  TrainConfig c = train_config_from_json(load_section(a.config, "train"));
  if (a.paradigm) c.paradigm = parse_paradigm(*a.paradigm);
  if (a.supervision) c.supervision = parse_supervision(*a.supervision);
  if (a.rollout) c.rollout_mode = parse_rollout_mode(*a.rollout);
  if (a.chunk) c.chunk_size = *a.chunk;
  if (a.horizon) c.horizon = *a.horizon;
  if (a.epochs) c.epochs = *a.epochs;
  if (a.max_steps) c.max_steps = *a.max_steps;
  if (a.batch_size) c.batch_size = *a.batch_size;
  if (a.lr) c.learning_rate = *a.lr;
  if (a.mask_prob) c.mask_prob = *a.mask_prob;
  if (a.seed) c.seed = *a.seed;
  if (a.d_model) c.encoder.d_model = *a.d_model;
  if (a.n_layers) c.encoder.n_layers = *a.n_layers;
  if (a.n_heads) c.encoder.n_heads = *a.n_heads;
  if (a.d_ffn) c.encoder.d_ffn = *a.d_ffn;
  if (a.cosine) c.cosine_schedule = *a.cosine;
  c.validate();
  if (a.save_every < 0) throw ConfigError("--save-every must be >= 0");

  const DemonstrationSet data = read_dataset(a.data);
  prepare_out_dir(a.out, a.force);
  ordered_json echo = {{"command", "train"}, {"data", a.data}, {"save_every", a.save_every}};
  echo["train"] = to_json(c);
  echo_config(echo, a.out);

  const fs::path dir(a.out);
  const auto on_epoch = [&](const EpochRecord& r, const Policy& policy) {
    if (a.save_every > 0 && r.epoch % a.save_every == 0) {
      save_checkpoint(policy, c, r.step, dir / "checkpoints" / fmt::format("epoch_{:06d}", r.epoch));
    }
    return true;
  };
  const TrainResult result = train(data, c, on_epoch);
  save_checkpoint(result.policy, c, result.steps, dir / "checkpoint");
  write_loss_csv(result.curve, dir / "loss.csv");
  out << fmt::format("trained {} for {} steps ({} epochs), final epoch loss {:.6g}\n",
                     to_string(c.paradigm), result.steps, result.curve.size(),
                     result.curve.empty() ? 0.0 : result.curve.back().loss);
  return kOk;
}

// ---------------------------------------------------------------------------

struct EvalArgs {
  std::string config;
  std::vector<std::string> checkpoints;
  std::optional<std::string> env;
  std::optional<std::vector<std::uint64_t>> seeds;
  std::optional<int> episodes;
  std::optional<std::size_t> top_k;
  std::optional<int> execute_steps;
  std::string out;
  bool force = false;
};

int eval_cmd(const EvalArgs& a, std::ostream& out) {
  const json file = load_section(a.config, "eval");
  reject_unknown(file, {"env", "seeds", "episodes_per_eval", "top_k", "execute_steps"});
  EvalProtocol p;
  p.seeds = a.seeds.value_or(take(file, "seeds", p.seeds));
  p.episodes_per_eval = a.episodes.value_or(take(file, "episodes_per_eval", p.episodes_per_eval));
  p.top_k = a.top_k.value_or(take(file, "top_k", p.top_k));
  p.execute_steps = a.execute_steps.value_or(take(file, "execute_steps", p.execute_steps));
  const std::string env_name = a.env.value_or(take<std::string>(file, "env", ""));
  if (p.seeds.empty()) throw ConfigError("--seeds needs at least one seed");
  if (a.checkpoints.empty()) throw ConfigError("eval needs --checkpoint");

  std::vector<Checkpoint> points;
  for (const auto& path : a.checkpoints) {
    if (!fs::exists(path)) throw FileError(fmt::format("checkpoint {} does not exist", path));
    points.push_back(load_checkpoint(path));
    const EnvSpec& env = points.back().policy.env();
    if (!env_name.empty() && parse_env(env_name) != env.kind) {
      throw ConfigError(fmt::format("checkpoint {} was trained on {}, not {}", path,
                                    to_string(env.kind), env_name));
    }
    if (env != points.front().policy.env()) {
      throw ConfigError("all checkpoints must share one environment");
    }
  }
  const std::size_t k = std::min(p.top_k, points.size());

  std::vector<std::vector<double>> series(p.seeds.size(), std::vector<double>(points.size()));
  const int workers = std::min<int>(thread_cap(), static_cast<int>(p.seeds.size()));
  std::vector<std::exception_ptr> errors(p.seeds.size());
  const auto run_seed = [&](std::size_t s) {
    try {
      for (std::size_t i = 0; i < points.size(); ++i)
        series[s][i] = evaluate_policy(points[i].policy, p, p.seeds[s]).success_rate();
    } catch (...) {
      errors[s] = std::current_exception();
    }
  };
  if (workers <= 1) {
    for (std::size_t s = 0; s < p.seeds.size(); ++s) run_seed(s);
  } else {
    for (std::size_t begin = 0; begin < p.seeds.size(); begin += workers) {
      std::vector<std::thread> pool;
      for (std::size_t s = begin; s < std::min(p.seeds.size(), begin + workers); ++s)
        pool.emplace_back(run_seed, s);
      for (auto& t : pool) t.join();
    }
  }
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);

  prepare_out_dir(a.out, a.force);
  echo_config({{"command", "eval"},
               {"checkpoints", a.checkpoints},
               {"env", to_string(points.front().policy.env().kind)},
               {"seeds", p.seeds},
               {"episodes_per_eval", p.episodes_per_eval},
               {"top_k", k},
               {"execute_steps", p.execute_steps}},
              a.out);
  write_eval_csv(p.seeds, series, fs::path(a.out) / "eval.csv");
  write_summary_csv(series, k, fs::path(a.out) / "summary.csv");
  std::vector<double> per_seed;
  for (const auto& s : series) per_seed.push_back(top_k_protocol(s, k));
  const Aggregate agg = aggregate(per_seed);
  out << fmt::format("success (top-{} mean over {} seeds): {:.3f} +/- {:.3f}\n", k,
                     p.seeds.size(), agg.mean, agg.std);
  return kOk;
}

// ---------------------------------------------------------------------------

struct BenchArgs {
  std::string config;
  std::optional<std::vector<int>> horizons;
  std::optional<std::vector<std::string>> paradigms;
  std::optional<std::size_t> chunk;
  std::optional<int> runs;
  std::optional<int> warmup;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> d_model;
  std::optional<std::size_t> n_layers;
  std::optional<std::size_t> n_heads;
  std::optional<std::size_t> d_ffn;
  std::string out;
  bool force = false;
};

int bench_cmd(const BenchArgs& a, std::ostream& out) {
  const json file = load_section(a.config, "bench");
  reject_unknown(file, {"horizons", "paradigms", "chunk_size", "runs", "warmup", "seed",
                        "encoder"});
  const auto horizons = a.horizons.value_or(take(file, "horizons", std::vector<int>{8, 16, 32, 64}));
  const auto names = a.paradigms.value_or(
      take(file, "paradigms", std::vector<std::string>{"dense", "next-token", "next-chunk"}));
  BenchOptions opt;
  opt.runs = a.runs.value_or(take(file, "runs", opt.runs));
  opt.warmup = a.warmup.value_or(take(file, "warmup", opt.warmup));
  opt.seed = a.seed.value_or(take(file, "seed", opt.seed));
  HeadConfig head;
  if (file.contains("encoder")) {
    head.encoder = train_config_from_json({{"encoder", file.at("encoder")}}).encoder;
  }
  head.chunk_size = a.chunk.value_or(take(file, "chunk_size", head.chunk_size));
  if (a.d_model) head.encoder.d_model = *a.d_model;
  if (a.n_layers) head.encoder.n_layers = *a.n_layers;
  if (a.n_heads) head.encoder.n_heads = *a.n_heads;
  if (a.d_ffn) head.encoder.d_ffn = *a.d_ffn;
  head.encoder.validate();
  const auto paradigms = parse_paradigms(names);
  for (int T : horizons) {
    const Horizon h(T);
    if (std::find(paradigms.begin(), paradigms.end(), Paradigm::next_chunk) != paradigms.end()) {
      ChunkConfig{head.chunk_size}.validate(T);
    }
  }

  const auto rows = bench_inference(paradigms, horizons, head, opt);
  prepare_out_dir(a.out, a.force);
  TrainConfig echo_head;
  echo_head.encoder = head.encoder;
  echo_config({{"command", "bench"},
               {"horizons", horizons},
               {"paradigms", names},
               {"chunk_size", head.chunk_size},
               {"runs", opt.runs},
               {"warmup", opt.warmup},
               {"seed", opt.seed},
               {"encoder", to_json(echo_head).at("encoder")}},
              a.out);
  write_bench_csv(rows, fs::path(a.out) / "bench.csv");
  for (const BenchRow& r : rows) {
    out << fmt::format("{:<10} T={:<3} passes={:<3} median={:.1f}us iqr={:.1f}us params={}\n",
                       to_string(r.paradigm), r.horizon, r.passes, r.latency_us_median,
                       r.latency_us_iqr, r.params);
  }
  return kOk;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Coarse-to-fine action decoding: data generation, training, evaluation, benchmarks"};
  app.require_subcommand(1);

  GenDataArgs g;
  auto* gen = app.add_subcommand("gen-data", "Generate expert demonstrations");
  gen->add_option("--config", g.config, "JSON config (section 'gen_data' or flat)");
  gen->add_option("--env", g.env, "reach2d | waypoints2d | rotate-pour");
  gen->add_option("--episodes", g.episodes, "Number of episodes (default 10)");
  gen->add_option("--seed", g.seed, "Master seed (default 0)");
  gen->add_option("--horizon", g.horizon, "Horizon the episodes are padded for (default 16)");
  gen->add_option("--out", g.out, "Output directory")->required();
  gen->add_flag("--force", g.force, "Replace a non-empty output directory");

  TrainArgs t;
  auto* tr = app.add_subcommand("train", "Behavior-cloning training");
  tr->add_option("--config", t.config, "JSON config (section 'train' or flat)");
  tr->add_option("--data", t.data, "Dataset directory")->required();
  tr->add_option("--out", t.out, "Output directory")->required();
  tr->add_option("--paradigm", t.paradigm, "dense | next-token | next-chunk");
  tr->add_option("--supervision", t.supervision, "all-levels | final-only");
  tr->add_option("--rollout", t.rollout, "self-rollout | teacher-forcing");
  tr->add_option("--chunk", t.chunk, "Chunk size for next-chunk");
  tr->add_option("--horizon", t.horizon, "Prediction horizon T");
  tr->add_option("--epochs", t.epochs, "Training epochs");
  tr->add_option("--max-steps", t.max_steps, "Optimizer step cap (0 = none)");
  tr->add_option("--batch-size", t.batch_size, "Batch size");
  tr->add_option("--lr", t.lr, "Learning rate");
  tr->add_option("--mask-prob", t.mask_prob, "Proprio mask probability");
  tr->add_option("--seed", t.seed, "Seed");
  tr->add_option("--d-model", t.d_model, "Model width");
  tr->add_option("--layers", t.n_layers, "Encoder layers");
  tr->add_option("--heads", t.n_heads, "Attention heads");
  tr->add_option("--ffn", t.d_ffn, "Feed-forward width");
  tr->add_option("--cosine", t.cosine, "Cosine learning-rate decay (true/false)");
  tr->add_option("--save-every", t.save_every, "Also checkpoint every N epochs");
  tr->add_flag("--force", t.force, "Replace a non-empty output directory");

  EvalArgs e;
  auto* ev = app.add_subcommand("eval", "Closed-loop evaluation");
  ev->add_option("--config", e.config, "JSON config (section 'eval' or flat)");
  ev->add_option("--checkpoint", e.checkpoints, "Checkpoint directory; repeat for eval points")
      ->required();
  ev->add_option("--env", e.env, "Expected environment");
  ev->add_option("--seeds", e.seeds, "Evaluation seeds (default 0,1,2)")->delimiter(',');
  ev->add_option("--episodes", e.episodes, "Episodes per eval point (default 20)");
  ev->add_option("--top-k", e.top_k, "Top-k aggregation (default 5)");
  ev->add_option("--execute-steps", e.execute_steps, "Actions per re-plan (default T/2)");
  ev->add_option("--out", e.out, "Output directory")->required();
  ev->add_flag("--force", e.force, "Replace a non-empty output directory");

  BenchArgs b;
  auto* be = app.add_subcommand("bench", "Inference pass-count and latency benchmark");
  be->add_option("--config", b.config, "JSON config (section 'bench' or flat)");
  be->add_option("--horizons", b.horizons, "Horizons (default 8,16,32,64)")->delimiter(',');
  be->add_option("--paradigms", b.paradigms, "Paradigms (default all)")->delimiter(',');
  be->add_option("--chunk", b.chunk, "Chunk size for next-chunk (default 2)");
  be->add_option("--runs", b.runs, "Timed runs (default 100)");
  be->add_option("--warmup", b.warmup, "Warmup runs (default 10)");
  be->add_option("--seed", b.seed, "Seed for weights and tokens");
  be->add_option("--d-model", b.d_model, "Model width");
  be->add_option("--layers", b.n_layers, "Encoder layers");
  be->add_option("--heads", b.n_heads, "Attention heads");
  be->add_option("--ffn", b.d_ffn, "Feed-forward width");
  be->add_option("--out", b.out, "Output directory")->required();
  be->add_flag("--force", b.force, "Replace a non-empty output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& ex) {
    const int code = app.exit(ex, out, err);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*gen) return gen_data(g, out);
    if (*tr) return train_cmd(t, out);
    if (*ev) return eval_cmd(e, out);
    if (*be) return bench_cmd(b, out);
  } catch (const ConfigError& ex) {
    err << "config error: " << ex.what() << '\n';
    return kUsage;
  } catch (const NumericalError& ex) {
    err << "numerical error: " << ex.what() << '\n';
    return kNumerical;
  } catch (const FileError& ex) {
    err << "file error: " << ex.what() << '\n';
    return kData;
  } catch (const DataError& ex) {
    err << "data error: " << ex.what() << '\n';
    return kData;
  } catch (const std::exception& ex) {
    err << "error: " << ex.what() << '\n';
    return kInternal;
  }
  return kInternal;
}

}  // namespace densegen::cli
