#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <limits>

#include "densegen/dataset.hpp"
#include "densegen/env.hpp"
#include "densegen/error.hpp"
#include "densegen/rng.hpp"

using namespace densegen;

namespace {

const EnvKind kAll[] = {EnvKind::reach2d, EnvKind::waypoints2d, EnvKind::rotate_pour};

EnvState reach_state(double x, double y, double gx, double gy) {
  return EnvState{{x, y}, {gx, gy}};
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

std::filesystem::path temp_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("densegen_test_env_" + name);
  std::filesystem::remove_all(dir);
  return dir;
}

}  // namespace

TEST_CASE("commanding the current pose is a fixed point") {
  for (EnvKind k : kAll) {
    const EnvSpec spec = EnvSpec::make(k);
    Rng rng(51);
    const EnvState s = sample_initial_state(spec, rng);
    CHECK(env_step(spec, s, s.pose) == s);
  }
}

TEST_CASE("displacement is clamped to delta_max") {
  const EnvSpec spec = EnvSpec::make(EnvKind::reach2d);
  const EnvState s = reach_state(0.0, 0.0, 0.5, 0.5);
  const EnvState n = env_step(spec, s, std::vector<double>{0.5, 0.0});
  CHECK(n.pose[0] == doctest::Approx(0.1).epsilon(1e-15));
  CHECK(n.pose[1] == 0.0);

  const EnvSpec pour = EnvSpec::make(EnvKind::rotate_pour);
  EnvState p{{0.0, 0.0, 0.0}, {0.5, 0.5, 0.7}};
  const EnvState q = env_step(pour, p, std::vector<double>{0.0, 0.0, -0.5});
  CHECK(q.pose[2] == doctest::Approx(-0.1).epsilon(1e-15));
}

TEST_CASE("repeated commands converge within ceil(dist / delta) steps") {
  const EnvSpec spec = EnvSpec::make(EnvKind::reach2d);
  Rng rng(52);
  for (int trial = 0; trial < 50; ++trial) {
    EnvState s = reach_state(rng.uniform(-1, 1), rng.uniform(-1, 1), 0, 0);
    const std::vector<double> target{rng.uniform(-1, 1), rng.uniform(-1, 1)};
    const double d = std::hypot(target[0] - s.pose[0], target[1] - s.pose[1]);
    const int bound = static_cast<int>(std::ceil(d / spec.delta_max));
    for (int i = 0; i < bound; ++i) s = env_step(spec, s, target);
    CHECK(s.pose == target);
  }
}

TEST_CASE("non-finite action marks failure") {
  const EnvSpec spec = EnvSpec::make(EnvKind::reach2d);
  const EnvState s = reach_state(0, 0, 0.5, 0.5);
  const EnvState f = env_step(spec, s, std::vector<double>{std::nan(""), 0.0});
  CHECK(f.failed);
  CHECK(f.pose == s.pose);
  CHECK_FALSE(check_success(spec, f));
  CHECK(env_step(spec, f, std::vector<double>{0.5, 0.5}).pose == s.pose);
}

TEST_CASE("reach expert moves along the segment and holds at the goal") {
  const EnvSpec spec = EnvSpec::make(EnvKind::reach2d);
  const auto a = scripted_expert(spec, reach_state(0, 0, 1, 1));
  CHECK(a[0] == doctest::Approx(a[1]));
  CHECK(a[0] > 0.0);
  CHECK(std::hypot(a[0], a[1]) == doctest::Approx(spec.delta_max));
  const auto hold = scripted_expert(spec, reach_state(0.3, -0.2, 0.3, -0.2));
  CHECK(hold == std::vector<double>{0.3, -0.2});
  CHECK(check_success(spec, reach_state(0.3, -0.2, 0.3, -0.2)));
}

TEST_CASE("waypoints must be visited in order") {
  const EnvSpec spec = EnvSpec::make(EnvKind::waypoints2d);
  EnvState s{{0.0, 0.0}, {0.5, 0.0, 0.5, 0.5, 0.0, 0.5}};
  // Reverse order: only the first waypoint counts when finally reached.
  for (int k : {2, 1, 0}) {
    const std::vector<double> w{s.targets[2 * k], s.targets[2 * k + 1]};
    for (int i = 0; i < 20; ++i) s = env_step(spec, s, w);
  }
  CHECK(s.progress == 1);
  CHECK_FALSE(check_success(spec, s));
  for (int k : {1, 2}) {
    const std::vector<double> w{s.targets[2 * k], s.targets[2 * k + 1]};
    for (int i = 0; i < 20; ++i) s = env_step(spec, s, w);
  }
  CHECK(s.progress == 3);
  CHECK(check_success(spec, s));
}

TEST_CASE("pour needs the full angle schedule and the final position") {
  const EnvSpec spec = EnvSpec::make(EnvKind::rotate_pour);
  EnvState s{{0.4, 0.4, 0.0}, {0.4, 0.4, 0.6}};
  s = env_step(spec, s, s.pose);
  CHECK(s.progress == 1);
  CHECK_FALSE(check_success(spec, s));
  for (int i = 0; i < 10; ++i) s = env_step(spec, s, std::vector<double>{0.4, 0.4, 0.6});
  CHECK(s.progress == 2);
  for (int i = 0; i < 10; ++i) s = env_step(spec, s, std::vector<double>{0.4, 0.4, 0.0});
  CHECK(s.progress == 3);
  CHECK(check_success(spec, s));
  s = env_step(spec, s, std::vector<double>{0.6, 0.4, 0.0});
  CHECK_FALSE(check_success(spec, s));
}

TEST_CASE("observation round trip through state features") {
  for (EnvKind k : kAll) {
    const EnvSpec spec = EnvSpec::make(k);
    Rng rng(53);
    const EnvState s = sample_solvable_state(spec, rng);
    const Observation o = observe(spec, s);
    CHECK(o.state.size() == spec.state_dim);
    CHECK(o.proprio.size() == spec.proprio_dim);
    CHECK(state_from_observation(spec, o) == s);
  }
}

TEST_CASE("expert solves 100 seeds of every task") {
  for (EnvKind k : kAll) {
    const EnvSpec spec = EnvSpec::make(k);
    int solved = 0;
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
      Rng rng(seed, Stream::dataset, 0);
      const Episode ep = run_expert(spec, sample_solvable_state(spec, rng));
      solved += ep.success && check_success(ep, spec);
      CHECK(ep.observations.size() == ep.actions.size());
      CHECK(static_cast<int>(ep.actions.size()) <= spec.max_episode_steps + 1);
      for (const auto& o : ep.observations)
        for (double v : o.proprio) CHECK(std::abs(v) <= 1.0);
    }
    CHECK(solved == 100);
  }
}

TEST_CASE("dataset has the requested episodes, padding and stats") {
  const EnvSpec spec = EnvSpec::make(EnvKind::waypoints2d);
  const DemonstrationSet data = generate_dataset(spec, 10, 3, 16);
  CHECK(data.episodes.size() == 10);
  for (const Episode& ep : data.episodes) {
    CHECK(ep.success);
    CHECK(check_success(ep, spec));
    CHECK(ep.actions.size() >= 16);
    for (std::size_t t = ep.actions.size() - 15; t < ep.actions.size(); ++t)
      CHECK(ep.actions[t] == ep.actions.back());
    for (const auto& a : ep.actions)
      for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i] >= data.meta.stats.min[i]);
        CHECK(a[i] <= data.meta.stats.max[i]);
      }
  }
  CHECK_THROWS_AS(generate_dataset(spec, 0, 3), ConfigError);
}

TEST_CASE("same seed gives byte-identical files that read back exactly") {
  const EnvSpec spec = EnvSpec::make(EnvKind::rotate_pour);
  const auto a = temp_dir("a"), b = temp_dir("b");
  write_dataset(generate_dataset(spec, 4, 11), a);
  write_dataset(generate_dataset(spec, 4, 11), b);
  CHECK(slurp(a / "meta.json") == slurp(b / "meta.json"));
  CHECK(slurp(a / "episodes.jsonl") == slurp(b / "episodes.jsonl"));

  const DemonstrationSet original = generate_dataset(spec, 4, 11);
  const DemonstrationSet loaded = read_dataset(a);
  CHECK(loaded.meta.env == spec);
  CHECK(loaded.meta.stats == original.meta.stats);
  REQUIRE(loaded.episodes.size() == original.episodes.size());
  for (std::size_t i = 0; i < loaded.episodes.size(); ++i) {
    CHECK(loaded.episodes[i].actions == original.episodes[i].actions);
    CHECK(loaded.episodes[i].observations == original.episodes[i].observations);
  }
  const auto c = temp_dir("c");
  write_dataset(generate_dataset(spec, 4, 12), c);
  CHECK(slurp(a / "episodes.jsonl") != slurp(c / "episodes.jsonl"));
  for (const auto& d : {a, b, c}) std::filesystem::remove_all(d);
}

TEST_CASE("format_double round-trips") {
  Rng rng(54);
  for (int i = 0; i < 1000; ++i) {
    const double v = rng.uniform(-1, 1) * std::pow(10.0, rng.uniform(-20, 20));
    CHECK(std::stod(format_double(v)) == v);
  }
  CHECK(std::stod(format_double(std::numeric_limits<double>::min())) ==
        std::numeric_limits<double>::min());
}

TEST_CASE("reading a missing or malformed dataset") {
  CHECK_THROWS_AS(read_dataset("/nonexistent/densegen"), FileError);
  const auto d = temp_dir("bad");
  std::filesystem::create_directories(d);
  std::ofstream(d / "meta.json") << "{\"format_version\": 1}";
  std::ofstream(d / "episodes.jsonl") << "";
  CHECK_THROWS_AS(read_dataset(d), DataError);
  std::filesystem::remove_all(d);
}
