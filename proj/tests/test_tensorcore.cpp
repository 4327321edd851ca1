#include <cmath>
#include <random>

#include "doctest.h"
#include "halo/ops.hpp"
#include "halo/tensor_io.hpp"
#include "test_util.hpp"

using namespace halo;
using halo::test::random_tensor;

namespace {

Tensor<double> triple_loop(const Tensor<double>& a, const Tensor<double>& b) {
  Tensor<double> c({a.dim(0), b.dim(1)});
  for (Index i = 0; i < a.dim(0); ++i)
    for (Index j = 0; j < b.dim(1); ++j) {
      double acc = 0;
      for (Index k = 0; k < a.dim(1); ++k) acc += a(i, k) * b(k, j);
      c(i, j) = acc;
    }
  return c;
}

}  // namespace

TEST_SUITE("tensorcore") {

TEST_CASE("matmul small cases") {
  const Tensor<double> id({2, 2}, {1, 0, 0, 1});
  const Tensor<double> m({2, 2}, {1, 2, 3, 4});
  CHECK(matmul(id, m) == m);

  const Tensor<double> proj({2, 2}, {1, 0, 0, 0});
  const Tensor<double> r({2, 2}, {5, 6, 7, 8});
  CHECK(matmul(proj, r) == Tensor<double>({2, 2}, {5, 6, 0, 0}));
}

TEST_CASE("matmul equals triple loop bit-exactly") {
  std::mt19937_64 rng(7);
  const auto a = random_tensor({7, 5}, rng);
  const auto b = random_tensor({5, 3}, rng);
  CHECK(matmul(a, b) == triple_loop(a, b));
}

TEST_CASE("matmul shape mismatch names both shapes") {
  const Tensor<double> a({2, 3}), b({4, 2});
  try {
    matmul(a, b);
    FAIL("expected DimensionError");
  } catch (const DimensionError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("[2,3]") != std::string::npos);
    CHECK(msg.find("[4,2]") != std::string::npos);
  }
}

TEST_CASE("1x1 conv equals per-pixel matmul") {
  std::mt19937_64 rng(11);
  const auto x = random_tensor({2, 5, 6, 4}, rng);
  const auto k = random_tensor({1, 1, 4, 3}, rng);
  const auto y = conv2d(x, k, 1, Padding::ZeroSame);
  const auto ref = matmul(x.reshaped({60, 4}), k.reshaped({4, 3})).reshaped({2, 5, 6, 3});
  CHECK(y == ref);
}

TEST_CASE("stem conv output size") {
  const Tensor<double> x({1, 224, 224, 1});
  const Tensor<double> k({7, 7, 1, 1});
  const auto y = conv2d(x, k, 2, Padding::ZeroSame);
  CHECK(y.shape() == Shape{1, 112, 112, 1});
  CHECK(conv2d(Tensor<double>({1, 15, 15, 1}), Tensor<double>({3, 3, 1, 1}), 2, Padding::ZeroSame).dim(1) == 8);
}

TEST_CASE("delta kernel is the identity") {
  std::mt19937_64 rng(3);
  const auto x = random_tensor({1, 6, 5, 3}, rng);
  Tensor<double> k({3, 3, 3, 3});
  for (Index c = 0; c < 3; ++c) k(1, 1, c, c) = 1.0;
  CHECK(conv2d(x, k, 1, Padding::ZeroSame) == x);
}

TEST_CASE("conv channel mismatch and even kernel") {
  CHECK_THROWS_AS(conv2d(Tensor<double>({1, 4, 4, 3}), Tensor<double>({3, 3, 2, 1}), 1, Padding::ZeroSame),
                  DimensionError);
  CHECK_THROWS(conv2d(Tensor<double>({1, 4, 4, 1}), Tensor<double>({2, 2, 1, 1}), 1, Padding::ZeroSame));
}

TEST_CASE("maxpool constant, ramp and resolution") {
  const auto c = Tensor<double>::constant({1, 6, 6, 2}, 3.5);
  CHECK(maxpool(c, 3, 2) == Tensor<double>::constant({1, 3, 3, 2}, 3.5));

  const auto r = halo::test::ramp({1, 4, 4, 1});
  const auto y = maxpool(r, 3, 2);
  REQUIRE(y.shape() == Shape{1, 2, 2, 1});
  for (Index oi = 0; oi < 2; ++oi)
    for (Index oj = 0; oj < 2; ++oj) {
      double m = -1;
      for (Index i = oi * 2 - 1; i <= oi * 2 + 1; ++i)
        for (Index j = oj * 2 - 1; j <= oj * 2 + 1; ++j)
          if (i >= 0 && i < 4 && j >= 0 && j < 4) m = std::max(m, r(0, i, j, 0));
      CHECK(y(0, oi, oj, 0) == m);
    }
  CHECK(y(0, 0, 0, 0) == 5.0);
  CHECK(y(0, 1, 1, 0) == 15.0);

  CHECK(maxpool(Tensor<double>({1, 112, 112, 1}), 3, 2).shape() == Shape{1, 56, 56, 1});
}

TEST_CASE("maxpool of all-negative input ignores padding") {
  const auto x = Tensor<double>::constant({1, 4, 4, 1}, -2.0);
  CHECK(maxpool(x, 3, 2) == Tensor<double>::constant({1, 2, 2, 1}, -2.0));
}

TEST_CASE("softmax closed forms") {
  auto sm = [](double a, double b) { return softmax_lastdim(Tensor<double>({1, 2}, {a, b})); };
  CHECK(sm(0, 0) == Tensor<double>({1, 2}, {0.5, 0.5}));
  CHECK(sm(1000, 1000) == Tensor<double>({1, 2}, {0.5, 0.5}));
  const auto p = sm(0, std::log(3.0));
  CHECK(p[0] == doctest::Approx(0.25).epsilon(1e-15));
  CHECK(p[1] == doctest::Approx(0.75).epsilon(1e-15));
}

TEST_CASE("softmax rows sum to one") {
  std::mt19937_64 rng(5);
  for (double mag : {1.0, 10.0, 1e3}) {
    const auto x = random_tensor({16, 37}, rng, -mag, mag);
    const auto p = softmax_lastdim(x);
    REQUIRE(p.all_finite());
    for (Index i = 0; i < 16; ++i) {
      double s = 0;
      for (Index j = 0; j < 37; ++j) s += p(i, j);
      CHECK(std::abs(s - 1.0) < 1e-12);
    }
  }
}

TEST_CASE("relu and silu") {
  const Tensor<double> x({3}, {-1, 2, 0});
  CHECK(activation(x, Activation::Relu) == Tensor<double>({3}, {0, 2, 0}));
  const auto s = activation(Tensor<double>({2}, {0, 1}), Activation::Silu);
  CHECK(s[0] == 0.0);
  CHECK(s[1] == doctest::Approx(0.7310585786300049).epsilon(1e-15));
}

TEST_CASE("affine_norm") {
  std::mt19937_64 rng(9);
  const Tensor<double> ones = Tensor<double>::constant({3}, 1.0), zeros({3});
  const auto x = random_tensor({2, 3, 4, 3}, rng);
  CHECK(affine_norm(x, ones, zeros, zeros, ones, 0.0) == x);

  const Tensor<double> shift({3}, {0.5, -1, 2});
  const auto five = Tensor<double>::constant({1, 2, 2, 3}, 5.0);
  const auto y = affine_norm(five, ones, shift, Tensor<double>::constant({3}, 5.0), ones, 1e-5);
  for (Index i = 0; i < y.size(); ++i) CHECK(y[i] == shift[i % 3]);

  // scalar-loop reference on a 5D blocked-shaped tensor
  const auto xb = random_tensor({1, 2, 2, 4, 3}, rng);
  const auto sc = random_tensor({3}, rng), sh = random_tensor({3}, rng), mu = random_tensor({3}, rng);
  const auto var = random_tensor({3}, rng, 0.1, 2.0);
  const double eps = 1e-5;
  const auto z = affine_norm(xb, sc, sh, mu, var, eps);
  for (Index i = 0; i < xb.size(); ++i) {
    const Index c = i % 3;
    CHECK(z[i] == (xb[i] - mu[c]) / std::sqrt(var[c] + eps) * sc[c] + sh[c]);
  }

  const Tensor<double> neg({3}, {1, -0.5, 1});
  CHECK_THROWS_AS(affine_norm(x, ones, zeros, zeros, neg, 0.0), DomainError);
}

TEST_CASE("operations are deterministic") {
  std::mt19937_64 rng(13);
  const auto x = random_tensor({1, 9, 9, 4}, rng);
  const auto k = random_tensor({3, 3, 4, 5}, rng);
  CHECK(conv2d(x, k, 2, Padding::ZeroSame) == conv2d(x, k, 2, Padding::ZeroSame));
  CHECK(softmax_lastdim(x) == softmax_lastdim(x));
}

TEST_CASE("tensor file round trip") {
  std::mt19937_64 rng(17);
  const auto t = random_tensor({2, 3, 5}, rng);
  std::stringstream ss;
  write_tensor(ss, t);
  CHECK(read_tensor(ss) == t);
  std::stringstream bad("not a tensor");
  CHECK_THROWS_AS(read_tensor(bad), IoError);
}

}  // TEST_SUITE
