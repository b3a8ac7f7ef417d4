#include <cmath>
#include <random>

#include <doctest.h>

#include "distill_lab/gradcheck.hpp"
#include "distill_lab/ops.hpp"
#include "support.hpp"

using namespace distill_lab;
using test_support::random_tensor;

namespace {

// Softmax evaluated term by term in extended precision.
std::vector<long double> softmax_oracle(const std::vector<long double>& o) {
  long double z = 0;
  for (auto v : o) z += std::exp(v);
  std::vector<long double> p;
  for (auto v : o) p.push_back(std::exp(v) / z);
  return p;
}

using Fn = std::function<Tensor(const Tensor&)>;

double check(const Fn& fn, const Tensor& point) {
  const auto r = finite_diff_check<double>(fn, point);
  REQUIRE(r.checked > 0);
  return r.max_rel_error;
}

}  // namespace

TEST_CASE("matmul examples") {
  const auto eye = Tensor::from({2, 2}, {1, 0, 0, 1});
  CHECK(matmul(eye, eye).values() == eye.values());
  const auto a = Tensor::from({2, 2}, {1, 2, 3, 4});
  const auto b = Tensor::from({2, 1}, {0, 1});
  const auto c = matmul(a, b);
  CHECK(c.shape() == Shape{2, 1});
  CHECK(c.values() == std::vector<double>{2, 4});
}

TEST_CASE("matmul shape mismatch names both shapes") {
  const auto a = Tensor::zeros({2, 3});
  const auto b = Tensor::zeros({2, 3});
  try {
    matmul(a, b);
    FAIL("expected DimensionError");
  } catch (const DimensionError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("[2x3]") != std::string::npos);
  }
}

TEST_CASE("elementwise and reductions") {
  CHECK(mean(Tensor::from({3}, {2, 4, 6})).item() == 4.0);
  CHECK(sum(Tensor::from({3}, {2, 4, 6})).item() == 12.0);
  const auto x = Tensor::from({2, 2}, {1, -2, 3.5, 4});
  const auto d = sub(x, x);
  for (double v : d.values()) CHECK(v == 0.0);
  CHECK(scale(x, 2.0).values() == std::vector<double>{2, -4, 7, 8});
  CHECK_THROWS_AS(add(x, Tensor::zeros({3, 2})), DimensionError);

  // Rank-1 right operand broadcasts over rows.
  const auto y = add(x, Tensor::from({2}, {10, 20}));
  CHECK(y.values() == std::vector<double>{11, 18, 13.5, 24});
}

TEST_CASE("mean gradient is 1/N everywhere") {
  auto x = Tensor::from({2, 5}, std::vector<double>(10, 0.3), true);
  mean(x).backward();
  for (double g : x.grad()) CHECK(g == doctest::Approx(0.1).epsilon(1e-15));
}

TEST_CASE("relu values and gradient") {
  CHECK(relu(Tensor::from({3}, {-1, 0, 2})).values() == std::vector<double>{0, 0, 2});
  auto neg = Tensor::from({3}, {-1, -2, -0.5}, true);
  const auto out = relu(neg);
  for (double v : out.values()) CHECK(v == 0.0);
  sum(out).backward();
  for (double g : neg.grad()) CHECK(g == 0.0);

  // Subgradient at exactly zero is zero.
  auto z = Tensor::from({1}, {0.0}, true);
  sum(relu(z)).backward();
  CHECK(z.grad()[0] == 0.0);
}

TEST_CASE("softmax examples") {
  const auto u = softmax(Tensor::from({1, 4}, {0, 0, 0, 0}));
  for (double v : u.values()) CHECK(v == doctest::Approx(0.25).epsilon(1e-15));

  const auto p = softmax(Tensor::from({1, 3}, {1, 2, 3}));
  const auto oracle = softmax_oracle({1, 2, 3});
  for (std::size_t j = 0; j < 3; ++j) CHECK(std::abs(p[j] - double(oracle[j])) < 1e-15);
  CHECK(p[0] == doctest::Approx(0.09003).epsilon(1e-4));
  CHECK(p[1] == doctest::Approx(0.24473).epsilon(1e-4));
  CHECK(p[2] == doctest::Approx(0.66524).epsilon(1e-4));
}

TEST_CASE("softmax rows sum to one and are shift invariant") {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 50; ++trial) {
    const auto o = random_tensor({6, 5}, rng, -20, 20);
    const double c = std::uniform_real_distribution<double>(-50, 50)(rng);
    auto shifted = o.clone();
    for (auto& v : shifted.mutable_data()) v += c;
    const auto p = softmax(o);
    const auto q = softmax(shifted);
    for (std::size_t r = 0; r < 6; ++r) {
      double total = 0;
      for (std::size_t j = 0; j < 5; ++j) {
        total += p.at(r, j);
        CHECK(std::abs(p.at(r, j) - q.at(r, j)) < 1e-12);
      }
      CHECK(std::abs(total - 1.0) < 1e-12);
    }
  }
}

TEST_CASE("log_softmax examples") {
  const auto a = log_softmax(Tensor::from({1, 2}, {0, 0}));
  CHECK(a[0] == doctest::Approx(-std::log(2.0)).epsilon(1e-15));
  CHECK(a[1] == doctest::Approx(-std::log(2.0)).epsilon(1e-15));

  const auto b = log_softmax(Tensor::from({1, 3}, {1, 2, 3}));
  const long double lse = std::log(std::exp(1.0L) + std::exp(2.0L) + std::exp(3.0L));
  for (int j = 0; j < 3; ++j) CHECK(std::abs(b[j] - double((j + 1) - lse)) < 1e-14);
  CHECK(b[0] == doctest::Approx(-2.40761).epsilon(1e-5));
  CHECK(b[2] == doctest::Approx(-0.40761).epsilon(1e-4));

  std::mt19937_64 rng(3);
  const auto o = random_tensor({4, 6}, rng, -5, 5);
  const auto ls = log_softmax(o);
  const auto p = softmax(o);
  for (std::size_t i = 0; i < o.numel(); ++i) CHECK(std::abs(std::exp(ls[i]) - p[i]) < 1e-12);
}

TEST_CASE("batchnorm train and eval semantics") {
  auto gamma = Tensor::full({2}, 1.0);
  auto beta = Tensor::zeros({2});

  SUBCASE("constant column normalises to zero") {
    auto state = BatchNormState<double>::fresh(2);
    const auto x = Tensor::from({3, 2}, {5, 1, 5, 2, 5, 3});
    const auto y = batchnorm1d(x, gamma, beta, state, Mode::train);
    for (std::size_t r = 0; r < 3; ++r) CHECK(y.at(r, 0) == 0.0);
    // Running stats: mean moves 10% toward 5 and 2, unbiased var of {1,2,3} is 1.
    CHECK(state.running_mean[0] == doctest::Approx(0.5));
    CHECK(state.running_mean[1] == doctest::Approx(0.2));
    CHECK(state.running_var[0] == doctest::Approx(0.9));
    CHECK(state.running_var[1] == doctest::Approx(1.0));
  }

  SUBCASE("eval with fresh stats is the identity up to eps") {
    auto state = BatchNormState<double>::fresh(2);
    const auto x = Tensor::from({2, 2}, {0.5, -1.5, 2.0, 3.0});
    const auto y = batchnorm1d(x, gamma, beta, state, Mode::eval);
    for (std::size_t i = 0; i < 4; ++i) CHECK(y[i] == doctest::Approx(x[i] / std::sqrt(1.0 + kBatchNormEps)));
  }

  SUBCASE("train mode needs two rows") {
    auto state = BatchNormState<double>::fresh(2);
    CHECK_THROWS_AS(batchnorm1d(Tensor::zeros({1, 2}), gamma, beta, state, Mode::train), BatchSizeError);
    CHECK_NOTHROW(batchnorm1d(Tensor::zeros({1, 2}), gamma, beta, state, Mode::eval));
  }
}

TEST_CASE("backward accumulates and needs a scalar") {
  auto x = Tensor::from({3}, {1, 2, 3}, true);
  const auto loss = sum(x);
  loss.backward();
  CHECK(x.values().size() == 3);
  for (double g : x.grad()) CHECK(g == 1.0);

  std::mt19937_64 rng(11);
  auto w = random_tensor({4, 3}, rng);
  w.set_requires_grad(true);
  const auto in = random_tensor({5, 4}, rng);
  const auto l = mean(square(relu(matmul(in, w))));
  l.backward();
  const auto once = test_support::values(w.grad_tensor());
  l.backward();
  for (std::size_t i = 0; i < once.size(); ++i) CHECK(w.grad()[i] == 2.0 * once[i]);

  w.zero_grad();
  scale(sum(w), 0.0).backward();
  for (double g : w.grad()) CHECK(g == 0.0);

  CHECK_THROWS_AS(relu(w).backward(), RankError);
}

TEST_CASE("finite difference checker basics") {
  const auto linear = finite_diff_check<double>(
      [](const Tensor& x) { return sum(scale(x, 3.0)); }, Tensor::from({4}, {0.1, -0.7, 2.0, 5.0}));
  CHECK(linear.max_rel_error < 1e-9);

  auto x = Tensor::from({2}, {1, 2}, true);
  sum(square(x)).backward();
  CHECK(x.grad()[0] == 2.0);
  CHECK(x.grad()[1] == 4.0);
}

TEST_CASE("primitive gradients on random shapes") {
  std::mt19937_64 rng(2024);
  std::uniform_int_distribution<std::size_t> dim(1, 6);
  std::size_t cases = 0;
  double worst = 0;
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t n = dim(rng) + 1, k = dim(rng), m = dim(rng);
    const auto b = random_tensor({k, m}, rng);
    const auto a = random_tensor({n, k}, rng);
    const auto wgt = random_tensor({n, k}, rng);
    const auto bias = random_tensor({k}, rng);
    const auto gamma = random_tensor({k}, rng, 0.5, 1.5);
    const auto beta = random_tensor({k}, rng);

    // Weighted sums give every output coordinate a distinct sensitivity.
    auto wsum = [&](const Tensor& t) {
      std::vector<double> c(t.numel());
      for (std::size_t i = 0; i < c.size(); ++i) c[i] = 0.3 + 0.1 * double(i % 7);
      return sum(mul(t, Tensor::from(t.shape(), c)));
    };

    worst = std::max(worst, check([&](const Tensor& x) { return wsum(matmul(x, b)); }, a));
    worst = std::max(worst, check([&](const Tensor& x) { return wsum(matmul(a, x)); }, b));
    worst = std::max(worst, check([&](const Tensor& x) { return wsum(add(x, bias)); }, a));
    worst = std::max(worst, check([&](const Tensor& x) { return wsum(sub(wgt, x)); }, a));
    worst = std::max(worst, check([&](const Tensor& x) { return wsum(mul(x, wgt)); }, a));
    worst = std::max(worst, check([&](const Tensor& x) { return mean(square(x)); }, a));
    worst = std::max(worst, check([&](const Tensor& x) { return wsum(relu(x)); }, a));
    worst = std::max(worst, check([&](const Tensor& x) { return wsum(softmax(x)); }, a));
    worst = std::max(worst, check([&](const Tensor& x) { return wsum(log_softmax(x)); }, a));
    worst = std::max(worst, check([&](const Tensor& x) { return wsum(transpose(x)); }, a));
    worst = std::max(worst, check(
                                [&](const Tensor& x) {
                                  auto state = BatchNormState<double>::fresh(k);
                                  return wsum(square(batchnorm1d(x, gamma, beta, state, Mode::train)));
                                },
                                a));
    worst = std::max(worst, check(
                                [&](const Tensor& x) {
                                  auto state = BatchNormState<double>::fresh(k);
                                  return wsum(batchnorm1d(a, x, beta, state, Mode::train));
                                },
                                gamma));
    cases += 12;
  }
  CHECK(cases >= 100);
  CHECK(worst < 1e-4);
}

TEST_CASE("matmul gradient on 5x7 by 7x3") {
  std::mt19937_64 rng(5);
  const auto a = random_tensor({5, 7}, rng);
  const auto b = random_tensor({7, 3}, rng);
  const auto c = random_tensor({5, 3}, rng);
  CHECK(check([&](const Tensor& x) { return sum(mul(matmul(x, b), c)); }, a) < 1e-6);
}

TEST_CASE("batchnorm gradient on 8x4 input") {
  std::mt19937_64 rng(9);
  const auto x = random_tensor({8, 4}, rng);
  const auto gamma = random_tensor({4}, rng, 0.5, 1.5);
  const auto beta = random_tensor({4}, rng);
  const auto c = random_tensor({8, 4}, rng);
  const auto r = finite_diff_check<double>(
      [&](const Tensor& p) {
        auto state = BatchNormState<double>::fresh(4);
        return sum(mul(batchnorm1d(p, gamma, beta, state, Mode::train), c));
      },
      x);
  CHECK(r.max_rel_error < 1e-4);
}

TEST_CASE("relu gradient away from the kink") {
  std::mt19937_64 rng(13);
  auto x = random_tensor({6, 6}, rng);
  for (auto& v : x.mutable_data())
    if (std::abs(v) < 1e-2) v = 0.5;
  const auto c = random_tensor({6, 6}, rng);
  const auto r = finite_diff_check<double>([&](const Tensor& p) { return sum(mul(relu(p), c)); }, x);
  CHECK(r.skipped == 0);
  CHECK(r.max_rel_error < 1e-6);
}

TEST_CASE("32-bit tensors run the same graph") {
  auto w = Tensor32::from({2, 2}, {1.0f, 2.0f, 3.0f, 4.0f}, true);
  const auto x = Tensor32::from({1, 2}, {0.5f, -1.0f});
  const auto loss = sum(matmul(x, w));
  CHECK(loss.item() == -5.5f);
  loss.backward();
  CHECK(w.grad()[0] == 0.5f);
  CHECK(w.grad()[3] == -1.0f);
  const auto p = softmax(Tensor32::from({1, 3}, {1.0f, 2.0f, 3.0f}));
  CHECK(p[2] == doctest::Approx(0.66524).epsilon(1e-4));
}

TEST_CASE("no-grad guard records nothing") {
  auto w = Tensor::from({2}, {1, 2}, true);
  Tensor y;
  {
    NoGradGuard guard;
    y = scale(w, 2.0);
  }
  CHECK_FALSE(y.requires_grad());
  CHECK(scale(w, 2.0).requires_grad());
}

TEST_CASE("operations are deterministic") {
  std::mt19937_64 r1(1), r2(1);
  const auto a = random_tensor({4, 4}, r1);
  const auto b = random_tensor({4, 4}, r2);
  CHECK(softmax(matmul(a, a)).values() == softmax(matmul(b, b)).values());
}
