#include <bit>
#include <fstream>
#include <iterator>

#include <fmt/format.h>
#include <json.hpp>

#include "densegen/error.hpp"
#include "densegen/rng.hpp"
#include "densegen/trainer.hpp"

namespace densegen {

namespace {

using nlohmann::json;
using nlohmann::ordered_json;

constexpr int kCheckpointVersion = 1;

void put_f64(std::string& out, double v) {
  const auto bits = std::bit_cast<std::uint64_t>(v);
  for (int b = 0; b < 8; ++b) out.push_back(static_cast<char>((bits >> (8 * b)) & 0xff));
}

double get_f64(const std::string& in, std::size_t offset) {
  std::uint64_t bits = 0;
  for (int b = 0; b < 8; ++b) {
    bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[offset + b])) << (8 * b);
  }
  return std::bit_cast<double>(bits);
}

}  // namespace

void save_checkpoint(const Policy& policy, const TrainConfig& config, long step,
                     const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw FileError(fmt::format("cannot create {}: {}", dir.string(), ec.message()));

  std::string buffer;
  ordered_json entries = ordered_json::array();
  std::size_t offset = 0;
  for (const auto& p : policy.parameters()) {
    entries.push_back({{"name", p.name},
                       {"shape", p.tensor.shape()},
                       {"offset_bytes", offset},
                       {"count", p.tensor.size()}});
    for (double v : p.tensor.data()) put_f64(buffer, v);
    offset += 8 * p.tensor.size();
  }
  const EnvSpec& env = policy.env();
  ordered_json manifest = {
      {"format_version", kCheckpointVersion},
      {"step", step},
      {"total_values", offset / 8},
      {"dtype", "float64-le"},
      {"env",
       {{"name", to_string(env.kind)},
        {"state_dim", env.state_dim},
        {"action_dim", env.action_dim},
        {"proprio_dim", env.proprio_dim},
        {"max_episode_steps", env.max_episode_steps},
        {"success_threshold", env.success_threshold},
        {"delta_max", env.delta_max}}},
      {"norm_stats", {{"min", policy.stats().min}, {"max", policy.stats().max}}},
      {"config", to_json(config)},
      {"parameters", entries},
  };
  {
    std::ofstream out(dir / "params.bin", std::ios::binary);
    out.write(buffer.data(), static_cast<std::streamsize>(buffer.size()));
    if (!out) throw FileError(fmt::format("cannot write {}", (dir / "params.bin").string()));
  }
  std::ofstream out(dir / "manifest.json", std::ios::binary);
  out << manifest.dump(2) << '\n';
  if (!out) throw FileError(fmt::format("cannot write {}", (dir / "manifest.json").string()));
}

Checkpoint load_checkpoint(const std::filesystem::path& dir) {
  const auto manifest_path = dir / "manifest.json";
  const auto params_path = dir / "params.bin";
  std::ifstream manifest_in(manifest_path);
  if (!manifest_in) throw FileError(fmt::format("cannot open {}", manifest_path.string()));
  std::ifstream params_in(params_path, std::ios::binary);
  if (!params_in) throw FileError(fmt::format("cannot open {}", params_path.string()));
  const std::string buffer{std::istreambuf_iterator<char>(params_in), {}};

  try {
    const json m = json::parse(manifest_in);
    if (m.at("format_version").get<int>() != kCheckpointVersion) {
      throw DataError(fmt::format("checkpoint format {} unsupported",
                                  m.at("format_version").get<int>()));
    }
    const json& e = m.at("env");
    EnvSpec env = EnvSpec::make(parse_env(e.at("name").get<std::string>()));
    env.max_episode_steps = e.at("max_episode_steps").get<int>();
    env.success_threshold = e.at("success_threshold").get<double>();
    env.delta_max = e.at("delta_max").get<double>();
    const TrainConfig config = train_config_from_json(m.at("config"));
    NormStats stats(m.at("norm_stats").at("min").get<std::vector<double>>(),
                    m.at("norm_stats").at("max").get<std::vector<double>>());

    Rng scratch(0);
    Checkpoint ck{Policy(env, config.policy_config(env.action_dim), std::move(stats), scratch),
                  config, m.at("step").get<long>()};

    const json& entries = m.at("parameters");
    const ParameterList params = ck.policy.parameters();
    if (entries.size() != params.size()) {
      throw DataError(fmt::format("checkpoint has {} parameters, model has {}", entries.size(),
                                  params.size()));
    }
    std::size_t expected_values = 0;
    for (const auto& entry : entries) {
      std::size_t n = 1;
      for (std::size_t d : entry.at("shape").get<Shape>()) n *= d;
      expected_values += n;
    }
    if (expected_values * 8 != buffer.size() ||
        expected_values != m.at("total_values").get<std::size_t>()) {
      throw DataError(fmt::format("{} holds {} bytes, manifest describes {} values",
                                  params_path.string(), buffer.size(), expected_values));
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
      const json& entry = entries[i];
      Tensor t = params[i].tensor;
      if (entry.at("name").get<std::string>() != params[i].name ||
          entry.at("shape").get<Shape>() != t.shape()) {
        throw DataError(fmt::format("checkpoint entry {} ({}) does not match model parameter {} {}",
                                    i, entry.at("name").get<std::string>(), params[i].name,
                                    to_string(t.shape())));
      }
      const std::size_t offset = entry.at("offset_bytes").get<std::size_t>();
      if (offset + 8 * t.size() > buffer.size()) throw DataError("parameter offset out of range");
      auto values = t.mutable_data();
      for (std::size_t k = 0; k < values.size(); ++k) values[k] = get_f64(buffer, offset + 8 * k);
    }
    return ck;
  } catch (const json::exception& ex) {
    throw DataError(fmt::format("malformed checkpoint manifest {}: {}", manifest_path.string(),
                                ex.what()));
  }
}

}  // namespace densegen
