#include <doctest.h>

#include <cmath>

#include "densegen/error.hpp"
#include "densegen/obs.hpp"
#include "densegen/rng.hpp"
#include "grad_check.hpp"

using namespace densegen;
using densegen::testing::check_gradients;

namespace {

Observation sample_obs(Rng& rng, std::size_t sd, std::size_t pd) {
  Observation o;
  for (std::size_t i = 0; i < sd; ++i) o.state.push_back(rng.uniform(-1, 1));
  for (std::size_t i = 0; i < pd; ++i) o.proprio.push_back(rng.uniform(-1, 1));
  return o;
}

}  // namespace

TEST_CASE("zero weights give zero tokens") {
  Rng rng(41);
  ObsEncoder enc(4, 2, 8, rng);
  for (auto& p : enc.parameters())
    for (double& v : p.tensor.mutable_data()) v = 0.0;
  const Tensor tokens = enc.encode(sample_obs(rng, 4, 2));
  CHECK(tokens.shape() == Shape{1, 2, 8});
  for (double v : tokens.data()) CHECK(v == 0.0);
}

TEST_CASE("two tokens whatever the state dimension") {
  Rng rng(42);
  for (std::size_t sd : {1, 4, 11, 30}) {
    ObsEncoder enc(sd, 3, 16, rng);
    std::vector<Observation> batch{sample_obs(rng, sd, 3), sample_obs(rng, sd, 3),
                                   sample_obs(rng, sd, 3)};
    CHECK(enc.encode(batch).shape() == Shape{3, ObsEncoder::n_tokens, 16});
  }
}

TEST_CASE("dimension mismatch is a data error") {
  Rng rng(43);
  ObsEncoder enc(4, 2, 8, rng);
  CHECK_THROWS_AS(enc.encode(sample_obs(rng, 5, 2)), DataError);
  CHECK_THROWS_AS(enc.encode(sample_obs(rng, 4, 3)), DataError);
}

TEST_CASE("encoder gradients match finite differences") {
  Rng rng(44);
  ObsEncoder enc(4, 2, 6, rng);
  std::vector<Observation> batch{sample_obs(rng, 4, 2), masked(sample_obs(rng, 4, 2))};
  const Tensor target = testing::random_tensor({2, 2, 6}, rng, -1, 1, false);
  std::vector<Tensor> params;
  for (auto& p : enc.parameters()) params.push_back(p.tensor);
  const double err = check_gradients([&] { return mse(enc.encode(batch), target); }, params);
  CHECK(err < 1e-5);
}

TEST_CASE("mask flag changes the proprio token only") {
  Rng rng(45);
  ObsEncoder enc(4, 2, 8, rng);
  Observation o = sample_obs(rng, 4, 2);
  Observation z = o;
  z.proprio = {0.0, 0.0};
  const Tensor a = enc.encode(z), b = enc.encode(masked(o));
  for (std::size_t i = 0; i < 8; ++i) CHECK(a[i] == b[i]);
  bool differs = false;
  for (std::size_t i = 8; i < 16; ++i) differs |= a[i] != b[i];
  CHECK(differs);
}

TEST_CASE("mask probability extremes") {
  Rng rng(46);
  Observation o = sample_obs(rng, 3, 2);
  for (int i = 0; i < 100; ++i) {
    CHECK(mask_proprio(o, 0.0, rng) == o);
    const Observation m = mask_proprio(o, 1.0, rng);
    CHECK(m.proprio_masked);
    CHECK(m.state == o.state);
    for (double v : m.proprio) CHECK(v == 0.0);
  }
  CHECK_THROWS_AS(mask_proprio(o, 1.5, rng), ContractError);
  CHECK_THROWS_AS(mask_proprio(o, -0.1, rng), ContractError);
}

TEST_CASE("empirical mask rate at p = 0.25") {
  // 10000 draws: sd = sqrt(0.25 * 0.75 / 10000) ~ 0.0043, so [0.23, 0.27] is
  // more than 4.6 sd either side.
  Rng rng(derive_seed(7, Stream::masking, 0));
  Observation o{{0.1}, {0.2, 0.3}};
  int hits = 0;
  for (int i = 0; i < 10000; ++i) hits += mask_proprio(o, 0.25, rng).proprio_masked ? 1 : 0;
  const double rate = hits / 10000.0;
  CHECK(rate >= 0.23);
  CHECK(rate <= 0.27);
}

TEST_CASE("normalization worked examples") {
  NormStats stats({-2.0, 0.0, 5.0}, {2.0, 1.0, 5.0});
  CHECK(stats.normalize(-2.0, 0) == -1.0);
  CHECK(stats.normalize(2.0, 0) == 1.0);
  CHECK(stats.normalize(0.0, 0) == 0.0);
  CHECK(stats.normalize(0.5, 1) == 0.0);
  CHECK(stats.degenerate(2));
  CHECK(stats.normalize(5.0, 2) == 0.0);
  CHECK(stats.denormalize(0.0, 2) == 5.0);
  CHECK_THROWS_AS(NormStats({1.0}, {0.0}), DataError);
}

TEST_CASE("normalize round trip") {
  Rng rng(47);
  std::vector<std::vector<double>> seq;
  for (int t = 0; t < 200; ++t) seq.push_back({rng.uniform(-3, 3), rng.uniform(0.1, 0.2)});
  const NormStats stats = NormStats::from_actions(seq);
  const auto norm = normalize_actions(seq, stats);
  const auto back = denormalize_actions(norm, stats);
  double worst = 0.0;
  for (std::size_t t = 0; t < seq.size(); ++t)
    for (std::size_t k = 0; k < 2; ++k) {
      CHECK(norm[t][k] >= -1.0);
      CHECK(norm[t][k] <= 1.0);
      worst = std::max(worst, std::abs(back[t][k] - seq[t][k]));
    }
  CHECK(worst < 1e-12);
}
