#include "densegen/dataset.hpp"

#include <fstream>
#include <sstream>

#include <fmt/format.h>
#include <json.hpp>

#include "densegen/error.hpp"
#include "densegen/levels.hpp"
#include "densegen/rng.hpp"

namespace densegen {

namespace {

using nlohmann::json;

void append_array(std::string& out, const std::vector<double>& v) {
  out += '[';
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ',';
    out += format_double(v[i]);
  }
  out += ']';
}

void append_rows(std::string& out, const std::vector<std::vector<double>>& rows) {
  out += '[';
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (i) out += ',';
    append_array(out, rows[i]);
  }
  out += ']';
}

std::vector<std::vector<double>> rows_of(const json& j, std::size_t width, const char* what) {
  if (!j.is_array()) throw DataError(fmt::format("'{}' is not an array", what));
  std::vector<std::vector<double>> rows;
  for (const auto& r : j) {
    auto row = r.get<std::vector<double>>();
    if (row.size() != width) {
      throw DataError(fmt::format("'{}' row of width {}, expected {}", what, row.size(), width));
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace

std::string format_double(double v) { return fmt::format("{:.17g}", v); }

void pad_episode(Episode& episode, std::size_t count) {
  if (episode.observations.empty()) throw DataError("cannot pad an empty episode");
  const Observation last_obs = episode.observations.back();
  const std::vector<double> last_action = episode.actions.back();
  for (std::size_t i = 0; i < count; ++i) {
    episode.observations.push_back(last_obs);
    episode.actions.push_back(last_action);
  }
}

DemonstrationSet generate_dataset(const EnvSpec& spec, std::size_t n_episodes,
                                  std::uint64_t seed, int horizon) {
  if (n_episodes == 0) throw ConfigError("n_episodes must be at least 1");
  const Horizon h(horizon);
  DemonstrationSet data;
  data.meta.env = spec;
  data.meta.horizon = h.steps();
  data.meta.seed = seed;
  std::vector<std::vector<double>> all_actions;
  for (std::size_t i = 0; i < n_episodes; ++i) {
    Rng rng(seed, Stream::dataset, i);
    Episode ep = run_expert(spec, sample_solvable_state(spec, rng));
    if (!ep.success || !check_success(ep, spec)) {
      throw DataError(fmt::format("expert failed on {} episode {} (seed {})",
                                  to_string(spec.kind), i, seed));
    }
    pad_episode(ep, static_cast<std::size_t>(h.steps() - 1));
    all_actions.insert(all_actions.end(), ep.actions.begin(), ep.actions.end());
    data.episodes.push_back(std::move(ep));
  }
  data.meta.stats = NormStats::from_actions(all_actions);
  return data;
}

void write_dataset(const DemonstrationSet& data, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw FileError(fmt::format("cannot create {}: {}", dir.string(), ec.message()));

  const DatasetMeta& m = data.meta;
  std::string meta = "{\n";
  meta += fmt::format("  \"format_version\": {},\n", m.format_version);
  meta += fmt::format(
      "  \"env\": {{\"name\": \"{}\", \"state_dim\": {}, \"action_dim\": {}, "
      "\"proprio_dim\": {}, \"max_episode_steps\": {}, \"success_threshold\": {}, "
      "\"delta_max\": {}}},\n",
      to_string(m.env.kind), m.env.state_dim, m.env.action_dim, m.env.proprio_dim,
      m.env.max_episode_steps, format_double(m.env.success_threshold),
      format_double(m.env.delta_max));
  meta += fmt::format("  \"horizon\": {},\n", m.horizon);
  meta += fmt::format("  \"seed\": {},\n", m.seed);
  meta += fmt::format("  \"n_episodes\": {},\n", data.episodes.size());
  meta += "  \"norm_stats\": {\"min\": ";
  append_array(meta, m.stats.min);
  meta += ", \"max\": ";
  append_array(meta, m.stats.max);
  meta += "}\n}\n";

  std::string lines;
  for (const Episode& ep : data.episodes) {
    std::vector<std::vector<double>> states, proprio;
    for (const Observation& o : ep.observations) {
      states.push_back(o.state);
      proprio.push_back(o.proprio);
    }
    lines += "{\"observations\":";
    append_rows(lines, states);
    lines += ",\"proprio\":";
    append_rows(lines, proprio);
    lines += ",\"actions\":";
    append_rows(lines, ep.actions);
    lines += ep.success ? ",\"success\":true}\n" : ",\"success\":false}\n";
  }

  for (const auto& [name, text] : {std::pair{"meta.json", &meta}, {"episodes.jsonl", &lines}}) {
    std::ofstream out(dir / name, std::ios::binary);
    out << *text;
    if (!out) throw FileError(fmt::format("cannot write {}", (dir / name).string()));
  }
}

DemonstrationSet read_dataset(const std::filesystem::path& dir) {
  const auto meta_path = dir / "meta.json";
  const auto episodes_path = dir / "episodes.jsonl";
  std::ifstream meta_in(meta_path);
  if (!meta_in) throw FileError(fmt::format("cannot open {}", meta_path.string()));
  std::ifstream ep_in(episodes_path);
  if (!ep_in) throw FileError(fmt::format("cannot open {}", episodes_path.string()));

  DemonstrationSet data;
  try {
    const json meta = json::parse(meta_in);
    DatasetMeta& m = data.meta;
    m.format_version = meta.at("format_version").get<int>();
    if (m.format_version != DatasetMeta::kFormatVersion) {
      throw DataError(fmt::format("dataset format version {} unsupported", m.format_version));
    }
    const json& env = meta.at("env");
    m.env = EnvSpec::make(parse_env(env.at("name").get<std::string>()));
    if (env.at("state_dim").get<std::size_t>() != m.env.state_dim ||
        env.at("action_dim").get<std::size_t>() != m.env.action_dim ||
        env.at("proprio_dim").get<std::size_t>() != m.env.proprio_dim) {
      throw DataError(fmt::format("{} dims in {} disagree with the environment",
                                  to_string(m.env.kind), meta_path.string()));
    }
    m.env.max_episode_steps = env.at("max_episode_steps").get<int>();
    m.env.success_threshold = env.at("success_threshold").get<double>();
    m.env.delta_max = env.at("delta_max").get<double>();
    m.horizon = meta.at("horizon").get<int>();
    m.seed = meta.at("seed").get<std::uint64_t>();
    m.stats = NormStats(meta.at("norm_stats").at("min").get<std::vector<double>>(),
                        meta.at("norm_stats").at("max").get<std::vector<double>>());
    if (m.stats.dim() != m.env.action_dim) throw DataError("norm stats do not match action_dim");

    std::string line;
    std::size_t line_no = 0;
    while (std::getline(ep_in, line)) {
      ++line_no;
      if (line.empty()) continue;
      const json j = json::parse(line);
      Episode ep;
      const auto states = rows_of(j.at("observations"), m.env.state_dim, "observations");
      const auto proprio = rows_of(j.at("proprio"), m.env.proprio_dim, "proprio");
      ep.actions = rows_of(j.at("actions"), m.env.action_dim, "actions");
      ep.success = j.at("success").get<bool>();
      if (states.size() != proprio.size() || states.size() != ep.actions.size()) {
        throw DataError(fmt::format("episode on line {} has {} observations, {} proprio, {} "
                                    "actions",
                                    line_no, states.size(), proprio.size(), ep.actions.size()));
      }
      for (std::size_t t = 0; t < states.size(); ++t)
        ep.observations.push_back(Observation{states[t], proprio[t], false});
      data.episodes.push_back(std::move(ep));
    }
    if (meta.at("n_episodes").get<std::size_t>() != data.episodes.size()) {
      throw DataError(fmt::format("{} lists {} episodes, found {}", meta_path.string(),
                                  meta.at("n_episodes").get<std::size_t>(),
                                  data.episodes.size()));
    }
  } catch (const json::exception& e) {
    throw DataError(fmt::format("malformed dataset in {}: {}", dir.string(), e.what()));
  }
  return data;
}

}  // namespace densegen
