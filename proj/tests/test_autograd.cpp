#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "topodelin/autograd.hpp"
#include "topodelin/gradcheck.hpp"

using namespace topodelin;

namespace {

Tensor<double> random_tensor(const Shape& shape, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> d(0.0, 1.0);
  Tensor<double> t(shape);
  for (auto& v : t.data()) v = d(rng);
  return t;
}

// Direct windowed sums: out[n][o][y][x] = sum_c,i,j k[o][c][i][j] * in[n][c][y*s+i-p][x*s+j-p].
Tensor<double> conv_oracle(const Tensor<double>& in, const Tensor<double>& k, std::size_t s, std::size_t p) {
  const auto N = in.extent(0), C = in.extent(1), H = in.extent(2), W = in.extent(3);
  const auto O = k.extent(0), K = k.extent(2);
  const auto oh = (H + 2 * p - K) / s + 1, ow = (W + 2 * p - K) / s + 1;
  Tensor<double> out(Shape{N, O, oh, ow});
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t o = 0; o < O; ++o)
      for (std::size_t y = 0; y < oh; ++y)
        for (std::size_t x = 0; x < ow; ++x) {
          double acc = 0;
          for (std::size_t c = 0; c < C; ++c)
            for (std::size_t i = 0; i < K; ++i)
              for (std::size_t j = 0; j < K; ++j) {
                const long yy = static_cast<long>(y * s + i) - static_cast<long>(p);
                const long xx = static_cast<long>(x * s + j) - static_cast<long>(p);
                if (yy < 0 || xx < 0 || yy >= static_cast<long>(H) || xx >= static_cast<long>(W)) continue;
                acc += k[((o * C + c) * K + i) * K + j] * in[((n * C + c) * H + yy) * W + xx];
              }
          out[((n * O + o) * oh + y) * ow + x] = acc;
        }
  return out;
}

void require_close(const Tensor<double>& a, const Tensor<double>& b, double tol) {
  REQUIRE(a.shape() == b.shape());
  for (std::size_t i = 0; i < a.size(); ++i) REQUIRE(a[i] == doctest::Approx(b[i]).epsilon(tol));
}

}  // namespace

TEST_CASE("conv2d equals direct windowed sums") {
  for (auto [s, p, k] : {std::tuple{1, 0, 3}, std::tuple{1, 1, 3}, std::tuple{2, 1, 3}, std::tuple{1, 0, 1},
                         std::tuple{2, 2, 5}}) {
    const auto in = random_tensor({2, 3, 9, 8}, 1);
    const auto kernel = random_tensor({4, 3, static_cast<std::size_t>(k), static_cast<std::size_t>(k)}, 2);
    Graph<double> g;
    const auto out = conv2d(g.constant(in), g.constant(kernel), s, p);
    require_close(out.value(), conv_oracle(in, kernel, s, p), 1e-12);
  }
}

TEST_CASE("conv2d on a known 3x3 example") {
  // 3x3 ones kernel over a 4x4 ramp, no padding: each output is a window sum.
  Tensor<double> in(Shape{1, 1, 4, 4});
  for (std::size_t i = 0; i < 16; ++i) in[i] = static_cast<double>(i);
  Graph<double> g;
  const auto out = conv2d(g.constant(in), g.constant(Tensor<double>(Shape{1, 1, 3, 3}, 1.0)));
  CHECK(out.shape() == Shape{1, 1, 2, 2});
  CHECK(out.value()[0] == 45.0);  // 0+1+2+4+5+6+8+9+10
  CHECK(out.value()[3] == 90.0);  // 5+6+7+9+10+11+13+14+15
}

TEST_CASE("transpose_conv2d is the adjoint of conv2d") {
  // <conv(x), y> == <x, conv^T(y)> for the same kernel, stride 2.
  const auto x = random_tensor({1, 2, 8, 8}, 3);
  const auto k = random_tensor({3, 2, 2, 2}, 4);  // conv kernel (out, in, k, k)
  const auto y = random_tensor({1, 3, 4, 4}, 5);
  Graph<double> g;
  const auto cx = conv2d(g.constant(x), g.constant(k), 2, 0).value();
  // transpose_conv2d expects (in, out, k, k): the conv's (out=3) channels map back to its (in=2).
  const auto ty = transpose_conv2d(g.constant(y), g.constant(k), 2).value();
  double lhs = 0, rhs = 0;
  for (std::size_t i = 0; i < cx.size(); ++i) lhs += cx[i] * y[i];
  for (std::size_t i = 0; i < x.size(); ++i) rhs += x[i] * ty[i];
  CHECK(lhs == doctest::Approx(rhs).epsilon(1e-12));
}

TEST_CASE("batchnorm normalizes each channel with batch moments") {
  const auto x = random_tensor({3, 2, 4, 5}, 6);
  Graph<double> g;
  const auto out = batchnorm(g.constant(x), g.constant(Tensor<double>(Shape{2}, 1.0)),
                             g.constant(Tensor<double>(Shape{2}, 0.0)))
                       .value();
  for (std::size_t c = 0; c < 2; ++c) {
    double mean = 0, var = 0, raw_mean = 0, raw_var = 0;
    std::vector<double> xs, ys;
    for (std::size_t n = 0; n < 3; ++n)
      for (std::size_t i = 0; i < 20; ++i) {
        xs.push_back(x[(n * 2 + c) * 20 + i]);
        ys.push_back(out[(n * 2 + c) * 20 + i]);
      }
    for (std::size_t i = 0; i < xs.size(); ++i) {
      mean += ys[i] / 60;
      raw_mean += xs[i] / 60;
    }
    for (std::size_t i = 0; i < xs.size(); ++i) {
      var += (ys[i] - mean) * (ys[i] - mean) / 60;
      raw_var += (xs[i] - raw_mean) * (xs[i] - raw_mean) / 60;
    }
    CHECK(mean == doctest::Approx(0.0).epsilon(1e-12).scale(1.0));
    // Biased variance with eps = 1e-5 in the denominator.
    CHECK(var == doctest::Approx(raw_var / (raw_var + 1e-5)).epsilon(1e-10));
  }
}

TEST_CASE("maxpool, replicate padding and concat shapes") {
  Graph<double> g;
  Tensor<double> x(Shape{1, 1, 2, 2}, std::vector<double>{1, 4, 3, 2});
  CHECK(maxpool2x2(g.constant(x)).value()[0] == 4.0);
  const auto padded = pad_replicate(g.constant(x), 1).value();
  CHECK(padded.shape() == Shape{1, 1, 4, 4});
  CHECK(padded[0] == 1.0);
  CHECK(padded[15] == 2.0);
  CHECK_THROWS_AS(maxpool2x2(g.constant(Tensor<double>(Shape{1, 1, 3, 4}))), ShapeError);
  CHECK(concat_channels(g.constant(x), g.constant(x)).shape() == Shape{1, 2, 2, 2});
  CHECK_THROWS_AS(concat_channels(g.constant(x), g.constant(Tensor<double>(Shape{1, 1, 4, 4}))), ShapeError);
}

TEST_CASE("backward requires a scalar root and reports every learnable parameter") {
  Graph<double> g;
  const auto w = g.parameter("w", Tensor<double>(Shape{2}, 3.0));
  g.parameter("unused", Tensor<double>(Shape{3}, 1.0));
  const auto frozen = g.parameter("frozen", Tensor<double>(Shape{2}, 2.0), true);
  const auto y = mul(w, frozen);
  CHECK_THROWS_AS(g.backward(y), ShapeError);
  const auto grads = g.backward(sum(y));
  REQUIRE(grads.size() == 2);
  CHECK(grads.count("frozen") == 0);
  CHECK(grads.at("w")[0] == 2.0);
  CHECK(grads.at("unused")[0] == 0.0);
}

TEST_CASE("non-finite values and invalid domains raise") {
  Graph<double> g;
  CHECK_THROWS_AS(log(g.constant(Tensor<double>(Shape{1}, 0.0))), NumericalError);
  CHECK_THROWS_AS(g.constant(Tensor<double>(Shape{1}, std::nan(""))), NumericalError);
  const auto big = g.constant(Tensor<double>(Shape{1}, 1e308));
  CHECK_THROWS_AS(affine(big, 10.0, 0.0), NumericalError);
}

TEST_CASE("sigmoid stays finite and in range for large inputs") {
  Graph<double> g;
  const auto s = sigmoid(g.constant(Tensor<double>(Shape{3}, std::vector<double>{-800, 0, 800}))).value();
  CHECK(s[0] == 0.0);
  CHECK(s[1] == 0.5);
  CHECK(s[2] == 1.0);
}

TEST_CASE("gradcheck suite passes in double precision and is reproducible") {
  const auto report = run_gradcheck(7);
  CHECK(report.passed());
  CHECK(report.worst().error < 1e-4);
  CHECK(report.checks.size() >= 25);
  CHECK(run_gradcheck(7).text() == report.text());
}
