#include <doctest.h>

#include <cmath>
#include <numeric>

#include "densegen/encoder.hpp"
#include "densegen/error.hpp"
#include "densegen/rng.hpp"
#include "grad_check.hpp"

using namespace densegen;
using densegen::testing::check_gradients;
using densegen::testing::random_tensor;

namespace {

EncoderConfig small_config() {
  EncoderConfig c;
  c.d_model = 8;
  c.n_heads = 2;
  c.n_layers = 2;
  c.d_ffn = 16;
  return c;
}

void zero(Tensor t) {
  for (double& v : t.mutable_data()) v = 0.0;
}

// Row vector u [d] through a Linear, computed by explicit loops.
std::vector<double> apply_linear(const Linear& l, const std::vector<double>& u) {
  const std::size_t in = l.in_features(), out = l.out_features();
  std::vector<double> y(out);
  for (std::size_t o = 0; o < out; ++o) {
    double acc = l.bias[o];
    for (std::size_t i = 0; i < in; ++i) acc += u[i] * l.weight[i * out + o];
    y[o] = acc;
  }
  return y;
}

}  // namespace

TEST_CASE("attention over identical keys returns the projected value") {
  Rng rng(1);
  const std::size_t d = 8;
  Attention attn(d, rng);
  Tensor q = random_tensor({2, 3, d}, rng, -2, 2, false);
  std::vector<double> u(d);
  for (double& x : u) x = rng.uniform(-1, 1);
  std::vector<double> kv_data;
  for (int b = 0; b < 2; ++b)
    for (int k = 0; k < 4; ++k) kv_data.insert(kv_data.end(), u.begin(), u.end());
  Tensor kv({2, 4, d}, kv_data);
  Tensor out = multi_head_attention(attn, q, kv, 2);
  const auto expected = apply_linear(attn.output, apply_linear(attn.value, u));
  for (std::size_t row = 0; row < 6; ++row)
    for (std::size_t i = 0; i < d; ++i)
      CHECK(out[row * d + i] == doctest::Approx(expected[i]).epsilon(1e-12));

  // A single key-value pair receives weight exactly 1.
  Tensor single = slice(kv, 1, 0, 1);
  Tensor out1 = multi_head_attention(attn, q, single, 4);
  for (std::size_t row = 0; row < 6; ++row)
    for (std::size_t i = 0; i < d; ++i)
      CHECK(out1[row * d + i] == doctest::Approx(expected[i]).epsilon(1e-12));
}

TEST_CASE("single-head attention matches softmax(QK^T / sqrt(d)) V computed directly") {
  Rng rng(2);
  const std::size_t d = 6, sq = 4, sk = 5;
  Attention attn(d, rng);
  Tensor x = random_tensor({1, sq, d}, rng, -2, 2, false);
  Tensor m = random_tensor({1, sk, d}, rng, -2, 2, false);
  Tensor out = multi_head_attention(attn, x, m, 1);

  const auto row = [&](const Tensor& t, std::size_t r) {
    return std::vector<double>(t.data().begin() + r * d, t.data().begin() + (r + 1) * d);
  };
  std::vector<std::vector<double>> keys, values;
  for (std::size_t j = 0; j < sk; ++j) {
    keys.push_back(apply_linear(attn.key, row(m, j)));
    values.push_back(apply_linear(attn.value, row(m, j)));
  }
  for (std::size_t i = 0; i < sq; ++i) {
    const auto qi = apply_linear(attn.query, row(x, i));
    std::vector<double> logits(sk);
    for (std::size_t j = 0; j < sk; ++j) {
      logits[j] = std::inner_product(qi.begin(), qi.end(), keys[j].begin(), 0.0) /
                  std::sqrt(static_cast<double>(d));
    }
    const double mx = *std::max_element(logits.begin(), logits.end());
    double z = 0;
    for (double& l : logits) z += (l = std::exp(l - mx));
    std::vector<double> ctx(d, 0.0);
    for (std::size_t j = 0; j < sk; ++j)
      for (std::size_t c = 0; c < d; ++c) ctx[c] += logits[j] / z * values[j][c];
    const auto expected = apply_linear(attn.output, ctx);
    for (std::size_t c = 0; c < d; ++c) CHECK(std::abs(out[i * d + c] - expected[c]) < 1e-10);
  }
}

TEST_CASE("head count must divide d_model") {
  EncoderConfig c = small_config();
  c.n_heads = 3;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  Rng rng(0);
  Attention attn(8, rng);
  Tensor x({1, 2, 8});
  CHECK_THROWS_AS(multi_head_attention(attn, x, x, 3), ConfigError);
}

TEST_CASE("encoder layer preserves shape and is the identity with zeroed sublayers") {
  Rng rng(3);
  const EncoderConfig c = small_config();
  EncoderLayer layer(c, rng);
  for (std::size_t seq : {1u, 3u, 7u}) {
    TokenBatch x{random_tensor({2, seq, c.d_model}, rng, -2, 2, false),
                 std::vector<int>(seq), 1};
    std::iota(x.time_indices.begin(), x.time_indices.end(), 0);
    Tensor obs = random_tensor({2, 2, c.d_model}, rng, -2, 2, false);
    TokenBatch y = encoder_layer_forward(layer, c, x, obs);
    CHECK(y.tokens.shape() == x.tokens.shape());
    CHECK(y.time_indices == x.time_indices);
  }

  ParameterList params;
  layer.collect(params, "l");
  for (auto& p : params) {
    if (p.name.find("norm") == std::string::npos) zero(p.tensor);
  }
  TokenBatch x{random_tensor({1, 4, c.d_model}, rng, -2, 2, false), {0, 1, 2, 3}, 1};
  Tensor obs = random_tensor({1, 2, c.d_model}, rng, -2, 2, false);
  TokenBatch y = encoder_layer_forward(layer, c, x, obs);
  for (std::size_t i = 0; i < x.tokens.size(); ++i) CHECK(y.tokens[i] == x.tokens[i]);

  CHECK_THROWS_AS(encoder_layer_forward(layer, c, x, Tensor(Shape{1, 0, c.d_model})),
                  ContractError);
}

TEST_CASE("encoder layer weight gradients match finite differences") {
  Rng rng(4);
  const EncoderConfig c = small_config();
  EncoderLayer layer(c, rng);
  TokenBatch x{random_tensor({2, 3, c.d_model}, rng, -2, 2, false), {0, 2, 4}, 1};
  Tensor obs = random_tensor({2, 2, c.d_model}, rng, -2, 2, false);
  ParameterList params;
  layer.collect(params, "l");
  for (const char* name : {"l.self_attn.query.weight", "l.cross_attn.value.weight",
                           "l.ffn_in.weight", "l.norm_cross.gain"}) {
    auto it = std::find_if(params.begin(), params.end(),
                           [&](const NamedTensor& p) { return p.name == name; });
    REQUIRE(it != params.end());
    const double err = check_gradients(
        [&] { return sum(encoder_layer_forward(layer, c, x, obs).tokens); }, {it->tensor});
    CHECK_MESSAGE(err < 1e-4, name);
  }
}

TEST_CASE("sinusoidal codes depend on absolute time only") {
  Rng rng(5);
  EncoderConfig c = small_config();
  EncoderStack stack(c, rng);
  const int T = 8;

  const std::vector<int> zero_time{0};
  Tensor pe0 = sinusoidal_embedding(zero_time, c.d_model);
  for (std::size_t i = 0; i < c.d_model; ++i) CHECK(pe0[i] == (i % 2 == 0 ? 0.0 : 1.0));

  // j = 4 at level 1 ([0, 4]) and level 2 ([0, 2, 4, 6]) with zero tokens.
  Tensor lt = stack.level_table();
  zero(lt);
  TokenBatch l1{Tensor(Shape{1, 2, c.d_model}), {0, 4}, 1};
  TokenBatch l2{Tensor(Shape{1, 4, c.d_model}), {0, 2, 4, 6}, 2};
  Tensor e1 = stack.embed_positions(l1, T).tokens;
  Tensor e2 = stack.embed_positions(l2, T).tokens;
  for (std::size_t i = 0; i < c.d_model; ++i) CHECK(e1[c.d_model + i] == e2[2 * c.d_model + i]);
}

TEST_CASE("levels differ only by the level-embedding delta") {
  Rng rng(6);
  EncoderConfig c = small_config();
  EncoderStack stack(c, rng);
  Tensor tokens = random_tensor({2, 3, c.d_model}, rng, -1, 1, false);
  const std::vector<int> times{1, 3, 5};
  Tensor a = stack.embed_positions({tokens, times, 1}, 8).tokens;
  Tensor b = stack.embed_positions({tokens, times, 3}, 8).tokens;
  const Tensor& table = stack.level_table();
  for (std::size_t r = 0; r < 6; ++r)
    for (std::size_t i = 0; i < c.d_model; ++i) {
      const double delta = table[2 * c.d_model + i] - table[0 * c.d_model + i];
      CHECK(std::abs((b[r * c.d_model + i] - a[r * c.d_model + i]) - delta) < 1e-12);
    }
}

TEST_CASE("embed_positions rejects times outside the horizon") {
  Rng rng(7);
  EncoderStack stack(small_config(), rng);
  TokenBatch bad{Tensor(Shape{1, 2, 8}), {0, 8}, 1};
  CHECK_THROWS_AS(stack.embed_positions(bad, 8), ContractError);
  TokenBatch unordered{Tensor(Shape{1, 2, 8}), {4, 2}, 1};
  CHECK_THROWS_AS(stack.embed_positions(unordered, 8), ContractError);
}

TEST_CASE("parameter counts follow the closed form") {
  Rng rng(8);
  Linear l(3, 2, rng);
  ParameterList p;
  l.collect(p, "l");
  CHECK(count_params(p) == 8);

  // d=128, f=512, 4 layers: per layer 2*(4*128^2 + 4*128) + (2*128*512 + 512 + 128)
  // + 6*128 = 264576; plus 8*128 level table and 2*128 final norm.
  const EncoderConfig def;
  CHECK(EncoderStack::analytic_param_count(def) == 1059584);
  EncoderStack stack(def, rng);
  CHECK(stack.count_params() == 1059584);

  EncoderConfig doubled = def;
  doubled.n_layers = 8;
  const std::size_t fixed = 8 * 128 + 2 * 128;
  CHECK(EncoderStack::analytic_param_count(doubled) - fixed ==
        2 * (EncoderStack::analytic_param_count(def) - fixed));
  CHECK(EncoderStack(doubled, rng).count_params() ==
        EncoderStack::analytic_param_count(doubled));
}

TEST_CASE("encoder is bidirectional: permutation equivariant without a mask") {
  Rng rng(9);
  EncoderConfig c = small_config();
  c.level_embedding = false;
  EncoderStack stack(c, rng);
  Tensor obs = random_tensor({1, 2, c.d_model}, rng, -1, 1, false);
  const std::vector<int> times{0, 1, 2, 3, 4};
  Tensor raw = random_tensor({1, 5, c.d_model}, rng, -1, 1, false);
  Tensor embedded = add(raw, sinusoidal_embedding(times, c.d_model));
  Tensor out = stack.forward({embedded, times, 0}, obs).tokens;

  const std::vector<std::size_t> perm{3, 0, 4, 1, 2};
  std::vector<double> permuted;
  for (std::size_t p : perm)
    permuted.insert(permuted.end(), embedded.data().begin() + p * c.d_model,
                    embedded.data().begin() + (p + 1) * c.d_model);
  Tensor out_p =
      stack.forward({Tensor({1, 5, c.d_model}, permuted), times, 0}, obs).tokens;
  for (std::size_t r = 0; r < 5; ++r)
    for (std::size_t i = 0; i < c.d_model; ++i)
      CHECK(std::abs(out_p[r * c.d_model + i] - out[perm[r] * c.d_model + i]) < 1e-10);

  Tensor again = stack.forward({embedded, times, 0}, obs).tokens;
  for (std::size_t i = 0; i < out.size(); ++i) CHECK(again[i] == out[i]);
}

TEST_CASE("causal masks") {
  const auto m = AttentionMask::causal(3);
  CHECK(m.allowed == std::vector<std::uint8_t>{1, 0, 0, 1, 1, 0, 1, 1, 1});
  const auto b = AttentionMask::block_causal(4, 2);
  CHECK(b.allowed == std::vector<std::uint8_t>{1, 1, 0, 0, 1, 1, 0, 0, 1, 1, 1, 1, 1, 1, 1, 1});
}
