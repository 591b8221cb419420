#include <doctest.h>

#include <cmath>

#include "densegen/error.hpp"
#include "densegen/rng.hpp"
#include "densegen/tensor.hpp"
#include "grad_check.hpp"

using namespace densegen;
using densegen::testing::check_gradients;
using densegen::testing::random_tensor;

namespace {

void require_values(const Tensor& t, std::vector<double> expected, double tol = 0.0) {
  REQUIRE(t.size() == expected.size());
  for (std::size_t i = 0; i < expected.size(); ++i) {
    CHECK(std::abs(t[i] - expected[i]) <= tol);
  }
}

}  // namespace

TEST_CASE("matmul of identity and projector") {
  Tensor eye({2, 2}, {1, 0, 0, 1});
  Tensor m({2, 2}, {1, 2, 3, 4});
  require_values(matmul(eye, m), {1, 2, 3, 4});

  Tensor proj({2, 2}, {1, 0, 0, 0});
  Tensor n({2, 2}, {5, 6, 7, 8});
  require_values(matmul(proj, n), {5, 6, 0, 0});
}

TEST_CASE("matmul shape mismatch names both shapes") {
  Tensor a({2, 3}), b({2, 2});
  try {
    matmul(a, b);
    FAIL("expected DimensionError");
  } catch (const DimensionError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("[2, 3]") != std::string::npos);
    CHECK(msg.find("[2, 2]") != std::string::npos);
  }
}

TEST_CASE("matmul gradient matches finite differences") {
  Rng rng(11);
  Tensor a = random_tensor({3, 3}, rng);
  Tensor b = random_tensor({3, 3}, rng);
  CHECK(check_gradients([&] { return sum(matmul(a, b)); }, {a, b}) < 1e-6);
}

TEST_CASE("softmax values and stability") {
  require_values(softmax(Tensor({2}, {0, 0})), {0.5, 0.5});
  Tensor big = softmax(Tensor({2}, {1000, 0}));
  CHECK(std::isfinite(big[0]));
  CHECK(big[0] == doctest::Approx(1.0));
  CHECK(big[1] == doctest::Approx(0.0));

  Rng rng(3);
  Tensor x = random_tensor({4, 7}, rng, -5, 5);
  Tensor y = softmax(x);
  for (std::size_t r = 0; r < 4; ++r) {
    double total = 0;
    for (std::size_t c = 0; c < 7; ++c) total += y[r * 7 + c];
    CHECK(std::abs(total - 1.0) < 1e-12);
  }
}

TEST_CASE("softmax gradient matches finite differences") {
  Rng rng(5);
  Tensor x = random_tensor({5}, rng);
  Tensor w = random_tensor({5}, rng, -2, 2, false);
  CHECK(check_gradients([&] { return sum(mul(softmax(x), w)); }, {x}) < 1e-6);
}

TEST_CASE("layer_norm edge cases") {
  Tensor gain({3}, {1, 1, 1}), bias({3}, {0, 0, 0});
  require_values(layer_norm(Tensor({1, 3}, {2.5, 2.5, 2.5}), gain, bias), {0, 0, 0});

  Tensor zero_gain({3}, {0, 0, 0}), b2({3}, {0.1, -0.2, 0.3});
  require_values(layer_norm(Tensor({2, 3}, {1, 5, -2, 0, 3, 9}), zero_gain, b2),
                 {0.1, -0.2, 0.3, 0.1, -0.2, 0.3});

  CHECK_THROWS_AS(layer_norm(Tensor({1, 3}), gain, bias, 0.0), ContractError);
}

TEST_CASE("layer_norm gradient matches finite differences") {
  Rng rng(7);
  Tensor x = random_tensor({3, 6}, rng);
  Tensor g = random_tensor({6}, rng);
  Tensor b = random_tensor({6}, rng);
  Tensor w = random_tensor({3, 6}, rng, -2, 2, false);
  CHECK(check_gradients([&] { return sum(mul(layer_norm(x, g, b), w)); }, {x, g, b}) <
        1e-5);
}

TEST_CASE("backward on simple losses") {
  Tensor x({3}, {1, 2, 3}, true);
  {
    Tape tape;
    tape.backward(sum(x));
  }
  require_values(Tensor({3}, x.grad()), {1, 1, 1});

  x.zero_grad();
  {
    Tape tape;
    tape.backward(sum(mul(x, x)));
  }
  require_values(Tensor({3}, x.grad()), {2, 4, 6});
}

TEST_CASE("backward rejects non-scalar loss") {
  Tensor x({3}, {1, 2, 3}, true);
  Tape tape;
  Tensor y = scale(x, 2.0);
  CHECK_THROWS_AS(tape.backward(y), ContractError);
}

TEST_CASE("no graph is recorded without an active tape") {
  Tensor x({2}, {1, 2}, true);
  Tensor y = mul(x, x);
  CHECK_FALSE(y.requires_grad());
  Tape tape;
  {
    NoGradGuard guard;
    CHECK_FALSE(mul(x, x).requires_grad());
  }
  CHECK(mul(x, x).requires_grad());
  CHECK(tape.size() == 1);
}

TEST_CASE("a node feeding two consumers receives the sum of both paths") {
  Rng rng(13);
  Tensor x = random_tensor({2, 3}, rng);
  Tensor w = random_tensor({3, 3}, rng);
  const auto loss = [&] {
    Tensor h = gelu(x);
    return add(sum(matmul(h, w)), mean(mul(h, h)));
  };
  CHECK(check_gradients(loss, {x, w}) < 1e-4);
}

// Every differentiable op, random inputs in [-2, 2]: analytic vs central
// differences. Linear ops at 1e-6, the rest at 1e-4.
TEST_CASE("elementwise and structural ops pass the finite-difference property") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Rng rng(100 + seed);
    Tensor a = random_tensor({2, 3, 4}, rng);
    Tensor b = random_tensor({2, 3, 4}, rng);
    Tensor v = random_tensor({4}, rng);
    Tensor w = random_tensor({4, 5}, rng);
    Tensor bias = random_tensor({5}, rng);
    Tensor probe = random_tensor({2, 3, 5}, rng, -2, 2, false);
    Tensor probe4 = random_tensor({2, 3, 4}, rng, -2, 2, false);

    CHECK(check_gradients([&] { return sum(mul(add(a, v), probe4)); }, {a, v}) < 1e-6);
    CHECK(check_gradients([&] { return sum(mul(sub(a, b), probe4)); }, {a, b}) < 1e-6);
    CHECK(check_gradients([&] { return sum(mul(linear(a, w, bias), probe)); },
                          {a, w, bias}) < 1e-6);
    CHECK(check_gradients([&] { return mean(mul(scale(a, -1.5), probe4)); }, {a}) < 1e-6);
    CHECK(check_gradients([&] { return sum(mul(mul(a, b), probe4)); }, {a, b}) < 1e-4);
    CHECK(check_gradients([&] { return sum(mul(gelu(a), probe4)); }, {a}) < 1e-4);
    CHECK(check_gradients([&] { return mse(a, b); }, {a, b}) < 1e-4);
    CHECK(check_gradients(
              [&] {
                Tensor c = concat({a, b}, 1);
                Tensor s = slice(c, 1, 2, 5);
                return sum(mul(s, slice(concat({probe4, probe4}, 1), 1, 1, 4)));
              },
              {a, b}) < 1e-6);
    CHECK(check_gradients(
              [&] {
                Tensor t = swap_axes_12(reshape(a, {2, 3, 2, 2}));
                return sum(mul(reshape(t, {2, 3, 4}), probe4));
              },
              {a}) < 1e-6);
    const std::vector<std::pair<std::size_t, std::size_t>> src{{0, 0}, {0, 2}, {2, 2}, {1, 2}};
    Tensor probe_rows = random_tensor({2, 4, 4}, rng, -2, 2, false);
    CHECK(check_gradients([&] { return sum(mul(average_rows(a, src), probe_rows)); },
                          {a}) < 1e-6);
    Tensor m = random_tensor({2, 4, 3}, rng);
    Tensor n = random_tensor({2, 3, 3}, rng);
    Tensor probe_bmm = random_tensor({2, 4, 3}, rng, -2, 2, false);
    CHECK(check_gradients([&] { return sum(mul(bmm(m, n), probe_bmm)); }, {m, n}) < 1e-6);
    Tensor p = random_tensor({2, 5, 3}, rng);
    Tensor probe_nt = random_tensor({2, 4, 5}, rng, -2, 2, false);
    CHECK(check_gradients([&] { return sum(mul(bmm(m, p, true), probe_nt)); }, {m, p}) <
          1e-6);
    const std::vector<std::uint8_t> allowed{1, 0, 0, 1, 1, 0, 1, 1, 1};
    Tensor scores = random_tensor({2, 3, 3}, rng);
    Tensor probe_s = random_tensor({2, 3, 3}, rng, -2, 2, false);
    CHECK(check_gradients(
              [&] { return sum(mul(softmax(mask_scores(scores, allowed)), probe_s)); },
              {scores}) < 1e-4);
  }
}

TEST_CASE("masked scores give zero attention weight") {
  Tensor s({1, 2, 2}, {0.3, 0.9, -1.0, 2.0});
  const std::vector<std::uint8_t> causal{1, 0, 1, 1};
  Tensor w = softmax(mask_scores(s, causal));
  CHECK(w[0] == 1.0);
  CHECK(w[1] == 0.0);
}

TEST_CASE("average_rows copies exactly when both sources agree") {
  Tensor x({1, 2, 2}, {0.1, 0.7, 1e300, -3.3});
  const std::vector<std::pair<std::size_t, std::size_t>> src{{0, 0}, {1, 1}};
  Tensor y = average_rows(x, src);
  for (std::size_t i = 0; i < 4; ++i) CHECK(y[i] == x[i]);
}

TEST_CASE("constructor validates storage size") {
  CHECK_THROWS_AS(Tensor({2, 2}, {1, 2, 3}), DimensionError);
  CHECK(numel({}) == 1);
  CHECK(Tensor::scalar(2.5).item() == 2.5);
}

TEST_CASE("dropout is identity at rate zero and rescales kept units") {
  Rng rng(1);
  Tensor x({1000}, 1.0);
  CHECK(dropout(x, 0.0, rng).id() == x.id());
  Tensor y = dropout(x, 0.5, rng);
  for (double v : y.data()) CHECK((v == 0.0 || v == 2.0));
}
