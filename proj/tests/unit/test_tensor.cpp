#include <cmath>
#include <random>

#include "ctxgan/errors.hpp"
#include "ctxgan/ops.hpp"
#include "ctxgan/optim.hpp"
#include "doctest.h"
#include "support/conv_oracle.hpp"
#include "support/gradcheck.hpp"

using namespace ctxgan;
using ctxgan::testing::grad_check;
using ctxgan::testing::random_tensor;

namespace {

// Random inputs kept away from the lrelu / clamp kinks so central
// differences stay on one side.
Tensor<double> away_from_zero(Shape shape, std::mt19937_64& rng) {
  auto t = random_tensor<double>(std::move(shape), rng, 0.1, 1.0);
  std::bernoulli_distribution sign(0.5);
  for (double& v : t.mutable_data()) v = sign(rng) ? v : -v;
  return t;
}

Shape random_shape(std::mt19937_64& rng, std::size_t rank, std::size_t max_extent) {
  std::uniform_int_distribution<std::size_t> extent(1, max_extent);
  Shape s(rank);
  for (auto& e : s) e = extent(rng);
  return s;
}

constexpr double kGradTol = 1e-4;

}  // namespace

TEST_CASE("tensor construction checks shape against data") {
  CHECK_THROWS_AS(Tensor<float>({2, 3}, std::vector<float>(5)), DimensionError);
  Tensor<float> t({2, 3}, std::vector<float>(6, 1.0f));
  CHECK(t.size() == 6);
  CHECK(t.rank() == 2);
  CHECK(Tensor<double>::scalar(4.0).item() == 4.0);
}

TEST_CASE("detach and reshape share storage, clone does not") {
  Tensor<float> t({4}, {1, 2, 3, 4}, true);
  auto d = t.detach();
  auto r = reshape(t, {2, 2});
  auto c = t.clone();
  t.mutable_data()[0] = 9.0f;
  CHECK(d.at(0) == 9.0f);
  CHECK(r.at(0) == 9.0f);
  CHECK(c.at(0) == 1.0f);
  CHECK_FALSE(d.requires_grad());
}

TEST_CASE("conv2d box sum with same padding") {
  Tensor<float> x = Tensor<float>::full({1, 4, 4, 1}, 1.0f);
  Tensor<float> w = Tensor<float>::full({3, 3, 1, 1}, 1.0f);
  auto y = conv2d(x, w, 1, Padding::same);
  REQUIRE(y.shape() == Shape{1, 4, 4, 1});
  CHECK(y.at(0) == 4.0f);
  CHECK(y.at(3) == 4.0f);
  CHECK(y.at(1 * 4 + 1) == 9.0f);
  CHECK(y.at(2 * 4 + 2) == 9.0f);
  CHECK(y.at(15) == 4.0f);
}

TEST_CASE("conv2d of scalars is a product with the kernel as gradient") {
  Tensor<double> x({1, 1, 1, 1}, {1.5}, true);
  Tensor<double> w({1, 1, 1, 1}, {-2.0}, true);
  auto y = conv2d(x, w, 1, Padding::same);
  CHECK(y.item() == doctest::Approx(-3.0));
  backward(sum(y));
  CHECK(x.grad()[0] == doctest::Approx(-2.0));
  CHECK(w.grad()[0] == doctest::Approx(1.5));
}

TEST_CASE("conv2d matches the nested-loop oracle") {
  std::mt19937_64 rng(11);
  auto x = random_tensor<double>({1, 8, 8, 2}, rng);
  auto w = random_tensor<double>({5, 5, 2, 3}, rng);
  auto y = conv2d(x, w, 2, Padding::same);
  int oh = 0, ow = 0;
  auto ref = ctxgan::testing::conv2d_reference(x, w, 2, true, &oh, &ow);
  REQUIRE(y.shape() == Shape{1, static_cast<std::size_t>(oh), static_cast<std::size_t>(ow), 3});
  for (std::size_t i = 0; i < ref.size(); ++i) CHECK(std::abs(y.at(i) - ref[i]) < 1e-6);

  auto yv = conv2d(x, w, 1, Padding::valid);
  auto refv = ctxgan::testing::conv2d_reference(x, w, 1, false, &oh, &ow);
  REQUIRE(yv.shape() == Shape{1, 4, 4, 3});
  for (std::size_t i = 0; i < refv.size(); ++i) CHECK(std::abs(yv.at(i) - refv[i]) < 1e-6);
}

TEST_CASE("conv2d rejects channel mismatch and bad arguments") {
  auto x = Tensor<float>::zeros({1, 4, 4, 2});
  CHECK_THROWS_AS(conv2d(x, Tensor<float>::zeros({3, 3, 3, 1}), 1, Padding::same), DimensionError);
  CHECK_THROWS_AS(conv2d(x, Tensor<float>::zeros({3, 3, 2, 1}), 0, Padding::same), ArgumentError);
  CHECK_THROWS_AS(conv2d(x, Tensor<float>::zeros({5, 5, 2, 1}), 1, Padding::valid), DimensionError);
  CHECK_THROWS_AS(conv2d_transpose(x, Tensor<float>::zeros({5, 5, 3, 4}), 2), DimensionError);
}

TEST_CASE("conv2d_transpose places a delta") {
  Tensor<float> x({1, 1, 1, 1}, {1.0f});
  Tensor<float> w({1, 1, 1, 1}, {3.0f});
  auto y = conv2d_transpose(x, w, 2);
  REQUIRE(y.shape() == Shape{1, 2, 2, 1});
  CHECK(y.at(0) == 3.0f);
  CHECK(y.at(1) == 0.0f);
  CHECK(y.at(2) == 0.0f);
  CHECK(y.at(3) == 0.0f);
}

TEST_CASE("conv2d_transpose doubles spatial size exactly") {
  std::mt19937_64 rng(3);
  auto x = random_tensor<float>({1, 4, 8, 512}, rng);
  auto w = random_tensor<float>({5, 5, 4, 512}, rng, -0.01, 0.01);
  auto y = conv2d_transpose(x, w, 2);
  CHECK(y.shape() == Shape{1, 8, 16, 4});
}

TEST_CASE("conv2d_transpose is the adjoint of conv2d") {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 5; ++trial) {
    auto x = random_tensor<double>({2, 3, 4, 3}, rng);     // small side
    auto w = random_tensor<double>({5, 5, 2, 3}, rng);     // [k,k,F,C]
    auto g = random_tensor<double>({2, 6, 8, 2}, rng);     // large side
    auto up = conv2d_transpose(x, w, 2);
    auto down = conv2d(g, w, 2, Padding::same);
    double lhs = 0.0, rhs = 0.0;
    for (std::size_t i = 0; i < up.size(); ++i) lhs += up.at(i) * g.at(i);
    for (std::size_t i = 0; i < down.size(); ++i) rhs += x.at(i) * down.at(i);
    CHECK(std::abs(lhs - rhs) < 1e-6);
  }
}

TEST_CASE("batchnorm behaviour") {
  SUBCASE("constant input normalizes to zero") {
    auto x = Tensor<float>::full({4, 2, 2, 3}, 7.0f);
    RunningStats<float> stats(3);
    auto y = batchnorm_train(x, Tensor<float>::full({3}, 1.0f), Tensor<float>::zeros({3}), &stats);
    for (float v : y.data()) CHECK(v == 0.0f);
  }
  SUBCASE("beta shifts the channel mean") {
    std::mt19937_64 rng(1);
    auto x = random_tensor<double>({6, 3, 3, 2}, rng, -4, 9);
    auto y = batchnorm_train(x, Tensor<double>::full({2}, 1.0), Tensor<double>::full({2}, 5.0),
                             static_cast<RunningStats<double>*>(nullptr));
    for (std::size_t ch = 0; ch < 2; ++ch) {
      double m = 0;
      for (std::size_t i = ch; i < y.size(); i += 2) m += y.at(i);
      CHECK(std::abs(m / (y.size() / 2) - 5.0) < 1e-5);
    }
  }
  SUBCASE("normalized statistics match a two-pass oracle") {
    std::mt19937_64 rng(2);
    auto x = random_tensor<double>({8, 4, 4, 2}, rng, -3, 6);
    RunningStats<double> stats(2);
    auto y = batchnorm_train(x, Tensor<double>::full({2}, 1.0), Tensor<double>::zeros({2}), &stats);
    const std::size_t m = x.size() / 2;
    for (std::size_t ch = 0; ch < 2; ++ch) {
      double mu_x = 0, var_x = 0, mu_y = 0, var_y = 0;
      for (std::size_t i = ch; i < x.size(); i += 2) mu_x += x.at(i), mu_y += y.at(i);
      mu_x /= m;
      mu_y /= m;
      for (std::size_t i = ch; i < x.size(); i += 2) {
        var_x += (x.at(i) - mu_x) * (x.at(i) - mu_x);
        var_y += (y.at(i) - mu_y) * (y.at(i) - mu_y);
      }
      var_x /= m;
      var_y /= m;
      CHECK(std::abs(mu_y) < 1e-4);
      CHECK(std::abs(var_y - 1.0) < 1e-4);
      CHECK(stats.mean[ch] == doctest::Approx(0.1 * mu_x).epsilon(1e-12));
      CHECK(stats.var[ch] == doctest::Approx(0.9 + 0.1 * var_x * m / (m - 1)).epsilon(1e-12));
    }
  }
  SUBCASE("errors") {
    RunningStats<float> stats(3);
    CHECK_THROWS_AS(batchnorm_train(Tensor<float>::zeros({0, 3}), Tensor<float>::zeros({3}),
                                    Tensor<float>::zeros({3}), &stats),
                    ArgumentError);
    CHECK_THROWS_AS(batchnorm_train(Tensor<float>::zeros({2, 3}), Tensor<float>::zeros({2}),
                                    Tensor<float>::zeros({3}), &stats),
                    DimensionError);
  }
  SUBCASE("infer mode uses running stats") {
    RunningStats<double> stats(1);
    stats.mean[0] = 2.0;
    stats.var[0] = 4.0;
    auto y = batchnorm_infer(Tensor<double>({1, 1}, {6.0}), Tensor<double>::full({1}, 1.0),
                             Tensor<double>::zeros({1}), stats, {0.1, 0.0});
    CHECK(y.item() == doctest::Approx(2.0));
  }
}

TEST_CASE("pointwise definitions") {
  auto y = lrelu(Tensor<float>({2}, {-1.0f, 3.0f}), 0.2f);
  CHECK(y.at(0) == doctest::Approx(-0.2f));
  CHECK(y.at(1) == 3.0f);

  Tensor<double> z({1}, {0.0}, true);
  auto t = tanh(z);
  CHECK(t.item() == 0.0);
  backward(sum(t));
  CHECK(z.grad()[0] == 1.0);

  CHECK_THROWS_AS(log(Tensor<double>({2}, {1.0, 0.0})), DomainError);
  auto lc = log_clamped(Tensor<double>({2}, {0.0, 1.0}), 1e-8);
  CHECK(std::isfinite(lc.at(0)));
  CHECK(lc.at(0) == doctest::Approx(std::log(1e-8)));

  auto sp = softplus(Tensor<double>({3}, {-800.0, 0.0, 800.0}));
  CHECK(sp.at(0) == doctest::Approx(0.0));
  CHECK(sp.at(1) == doctest::Approx(std::log(2.0)));
  CHECK(sp.at(2) == doctest::Approx(800.0));
  auto sg = sigmoid(Tensor<double>({2}, {-800.0, 800.0}));
  CHECK(std::isfinite(sg.at(0)));
  CHECK(sg.at(1) == 1.0);
}

TEST_CASE("matmul matches a triple loop") {
  std::mt19937_64 rng(9);
  auto a = random_tensor<double>({3, 4}, rng);
  auto b = random_tensor<double>({4, 2}, rng);
  auto c = matmul(a, b);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 2; ++j) {
      double acc = 0;
      for (std::size_t k = 0; k < 4; ++k) acc += a.at(i * 4 + k) * b.at(k * 2 + j);
      CHECK(std::abs(c.at(i * 2 + j) - acc) < 1e-9);
    }
  CHECK_THROWS_AS(matmul(a, a), DimensionError);
}

TEST_CASE("slice and concat invert each other") {
  std::mt19937_64 rng(4);
  auto x = random_tensor<float>({2, 3, 6, 3}, rng);
  auto left = slice(x, 2, 0, 3);
  auto right = slice(x, 2, 3, 6);
  const Tensor<float> parts[] = {left, right};
  auto joined = concat<float>(parts, 2);
  REQUIRE(joined.shape() == x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) CHECK(joined.at(i) == x.at(i));
  CHECK_THROWS_AS(slice(x, 2, 4, 4), DimensionError);
}

TEST_CASE("backward semantics") {
  SUBCASE("polynomial") {
    Tensor<double> x({2}, {1.0, 2.0}, true);
    backward(sum(mul(x, x)));
    CHECK(x.grad()[0] == 2.0);
    CHECK(x.grad()[1] == 4.0);
  }
  SUBCASE("chain rule through tanh") {
    Tensor<double> w({1}, {0.3}, true);
    Tensor<double> x({1}, {1.7});
    auto y = tanh(mul(w, x));
    backward(sum(y));
    const double t = std::tanh(0.3 * 1.7);
    CHECK(w.grad()[0] == doctest::Approx((1 - t * t) * 1.7));
  }
  SUBCASE("non-scalar loss is rejected") {
    Tensor<double> x({2}, {1.0, 2.0}, true);
    CHECK_THROWS_AS(backward(mul(x, x)), ArgumentError);
  }
  SUBCASE("a tape runs backward once") {
    Tensor<double> x({2}, {1.0, 2.0}, true);
    auto loss = sum(mul(x, x));
    backward(loss);
    CHECK_THROWS_AS(backward(loss), ArgumentError);
  }
  SUBCASE("loss off the tape is rejected") {
    CHECK_THROWS_AS(backward(sum(Tensor<double>({2}, {1.0, 2.0}))), ArgumentError);
  }
  SUBCASE("leaf gradients accumulate across tapes until zero_grad") {
    Tensor<double> x({1}, {3.0}, true);
    backward(sum(x));
    backward(sum(x));
    CHECK(x.grad()[0] == 2.0);
    x.zero_grad();
    CHECK_FALSE(x.has_grad());
  }
}

TEST_CASE("finite-difference gradient checks over random shapes") {
  std::mt19937_64 rng(2024);
  using V = std::vector<Tensor<double>>;
  for (int trial = 0; trial < 5; ++trial) {
    CAPTURE(trial);
    const Shape s = random_shape(rng, 1 + trial % 3, 4);
    auto a = random_tensor<double>(s, rng);
    auto b = random_tensor<double>(s, rng);
    auto pos = random_tensor<double>(s, rng, 0.2, 2.0);
    auto nz = away_from_zero(s, rng);

    CHECK(grad_check([](const V& v) { return add(v[0], v[1]); }, {a, b}, rng).relative_error < kGradTol);
    CHECK(grad_check([](const V& v) { return sub(v[0], v[1]); }, {a, b}, rng).relative_error < kGradTol);
    CHECK(grad_check([](const V& v) { return mul(v[0], v[1]); }, {a, b}, rng).relative_error < kGradTol);
    CHECK(grad_check([](const V& v) { return affine(v[0], -1.5, 0.25); }, {a}, rng).relative_error < kGradTol);
    CHECK(grad_check([](const V& v) { return lrelu(v[0], 0.2); }, {nz}, rng).relative_error < kGradTol);
    CHECK(grad_check([](const V& v) { return tanh(v[0]); }, {a}, rng).relative_error < kGradTol);
    CHECK(grad_check([](const V& v) { return sigmoid(v[0]); }, {a}, rng).relative_error < kGradTol);
    CHECK(grad_check([](const V& v) { return softplus(v[0]); }, {a}, rng).relative_error < kGradTol);
    CHECK(grad_check([](const V& v) { return log(v[0]); }, {pos}, rng).relative_error < kGradTol);
    CHECK(grad_check([](const V& v) { return log_clamped(v[0], 0.05); }, {pos}, rng).relative_error < kGradTol);
    CHECK(grad_check([](const V& v) { return sum(v[0]); }, {a}, rng).relative_error < kGradTol);
    CHECK(grad_check([](const V& v) { return mean(v[0]); }, {a}, rng).relative_error < kGradTol);
    CHECK(grad_check([](const V& v) { return reshape(v[0], {v[0].size()}); }, {a}, rng).relative_error < kGradTol);

    auto bias = random_tensor<double>({s.back()}, rng);
    CHECK(grad_check([](const V& v) { return add_bias(v[0], v[1]); }, {a, bias}, rng).relative_error < kGradTol);
    auto factor = random_tensor<double>({}, rng);
    CHECK(grad_check([](const V& v) { return mul_scalar(v[0], v[1]); }, {a, factor}, rng).relative_error < kGradTol);

    const Shape ms = random_shape(rng, 2, 5);
    auto m1 = random_tensor<double>(ms, rng);
    auto m2 = random_tensor<double>({ms[1], 1 + ms[0] % 4}, rng);
    CHECK(grad_check([](const V& v) { return matmul(v[0], v[1]); }, {m1, m2}, rng).relative_error < kGradTol);

    const Shape cs = random_shape(rng, 3, 4);
    auto c1 = random_tensor<double>(cs, rng);
    Shape cs2 = cs;
    cs2[1] += 1;
    auto c2 = random_tensor<double>(cs2, rng);
    CHECK(grad_check([](const V& v) {
            const Tensor<double> parts[] = {v[0], v[1]};
            return concat<double>(parts, 1);
          }, {c1, c2}, rng).relative_error < kGradTol);
    CHECK(grad_check([](const V& v) { return slice(v[0], 1, 1, v[0].dim(1)); }, {c2}, rng).relative_error < kGradTol);
    std::vector<std::size_t> idx = {0, c2.size() - 1, c2.size() / 2, 0};
    CHECK(grad_check([idx](const V& v) { return gather<double>(v[0], idx); }, {c2}, rng).relative_error < kGradTol);
  }
}

TEST_CASE("finite-difference checks for convolution and normalization") {
  std::mt19937_64 rng(77);
  using V = std::vector<Tensor<double>>;
  std::uniform_int_distribution<std::size_t> small(1, 3);
  for (int trial = 0; trial < 5; ++trial) {
    CAPTURE(trial);
    const std::size_t n = small(rng), h = 2 + small(rng) * 2, w = 2 + small(rng) * 2;
    const std::size_t c = small(rng), f = small(rng), k = trial % 2 ? 5 : 3;
    const std::size_t stride = 1 + trial % 2;
    auto x = random_tensor<double>({n, h, w, c}, rng);
    auto kern = random_tensor<double>({k, k, c, f}, rng);
    CHECK(grad_check([stride](const V& v) { return conv2d(v[0], v[1], stride, Padding::same); },
                     {x, kern}, rng).relative_error < kGradTol);
    auto kv = random_tensor<double>({3, 3, c, f}, rng);
    CHECK(grad_check([stride](const V& v) { return conv2d(v[0], v[1], stride, Padding::valid); },
                     {x, kv}, rng).relative_error < kGradTol);

    auto xt = random_tensor<double>({n, h / 2, w / 2, c}, rng);
    auto kt = random_tensor<double>({k, k, f, c}, rng);
    CHECK(grad_check([stride](const V& v) { return conv2d_transpose(v[0], v[1], stride); },
                     {xt, kt}, rng).relative_error < kGradTol);

    auto xb = random_tensor<double>({n + 1, h, w, c}, rng, -2, 3);
    auto gamma = random_tensor<double>({c}, rng, 0.5, 1.5);
    auto beta = random_tensor<double>({c}, rng);
    CHECK(grad_check([](const V& v) {
            return batchnorm_train(v[0], v[1], v[2], static_cast<RunningStats<double>*>(nullptr));
          }, {xb, gamma, beta}, rng).relative_error < kGradTol);
    RunningStats<double> stats(c);
    for (auto& m : stats.mean) m = 0.3;
    for (auto& s : stats.var) s = 1.7;
    CHECK(grad_check([stats](const V& v) { return batchnorm_infer(v[0], v[1], v[2], stats); },
                     {xb, gamma, beta}, rng).relative_error < kGradTol);
  }
}

TEST_CASE("adam first step") {
  // f(x) = x^2 at x0 = 1: g = 2, m_hat = 2, v_hat = 4 after bias correction.
  Tensor<double> x({1}, {1.0}, true);
  backward(sum(mul(x, x)));
  std::vector<Tensor<double>> params{x};
  auto state = make_adam_state<double>(params, {0.1, 0.5, 0.999, 1e-8});
  adam_step<double>(params, state);
  CHECK(x.at(0) == doctest::Approx(1.0 - 0.1 * 2.0 / (2.0 + 1e-8)).epsilon(1e-14));
  CHECK(state.step == 1);

  std::vector<Tensor<double>> wrong{Tensor<double>::zeros({3})};
  CHECK_THROWS_AS(adam_step<double>(wrong, state), DimensionError);
}

TEST_CASE("momentum descent") {
  SUBCASE("zero momentum is plain gradient descent") {
    std::vector<double> x{1.0, -2.0};
    const std::vector<double> g{0.5, 0.25};
    const std::size_t sizes[] = {2};
    auto state = make_momentum_state<double>(sizes, {0.1, 0.0});
    momentum_step<double>(x, g, state);
    CHECK(x[0] == doctest::Approx(0.95));
    CHECK(x[1] == doctest::Approx(-2.025));
  }
  SUBCASE("constant gradient drives velocity to g / (1 - momentum)") {
    std::vector<double> x{0.0};
    const std::vector<double> g{0.3};
    const std::size_t sizes[] = {1};
    auto state = make_momentum_state<double>(sizes, {0.01, 0.9});
    for (int i = 0; i < 400; ++i) momentum_step<double>(x, g, state);
    CHECK(state.velocity[0][0] == doctest::Approx(3.0).epsilon(1e-9));
  }
  SUBCASE("shape mismatch") {
    std::vector<double> x{0.0, 1.0};
    const std::vector<double> g{0.3};
    const std::size_t sizes[] = {2};
    auto state = make_momentum_state<double>(sizes);
    CHECK_THROWS_AS(momentum_step<double>(x, g, state), DimensionError);
  }
}

TEST_CASE("forward results are deterministic for a fixed seed") {
  auto run = [] {
    std::mt19937_64 rng(123);
    auto x = random_tensor<float>({2, 8, 8, 3}, rng);
    auto w = random_tensor<float>({5, 5, 3, 4}, rng);
    RunningStats<float> stats(4);
    auto y = batchnorm_train(conv2d(x, w, 2, Padding::same), Tensor<float>::full({4}, 1.0f),
                             Tensor<float>::zeros({4}), &stats);
    return std::vector<float>(y.data().begin(), y.data().end());
  };
  CHECK(run() == run());
}
