#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "topodelin/extractor.hpp"

using namespace topodelin;

namespace {

const std::vector<std::string> kAll{"level1", "level2", "level3"};

double mean_abs_channel(const Tensor<double>& map, std::size_t channel) {
  const auto d = image_dims(map.shape());
  double s = 0;
  for (std::size_t i = 0; i < d.plane(); ++i) s += std::abs(map[channel * d.plane() + i]);
  return s / static_cast<double>(d.plane());
}

}  // namespace

TEST_CASE("default bank layout") {
  const auto ex = Extractor::analytic();
  CHECK(ex.layers().size() == 3);
  for (const auto& name : kAll) CHECK(ex.channels(name) == 15);
  CHECK(ex.downsampling("level1") == 1);
  CHECK(ex.downsampling("level2") == 2);
  CHECK(ex.downsampling("level3") == 4);
  CHECK(ex.required_divisor(kAll) == 4);
  CHECK_THROWS_AS(Extractor::analytic(3, 3), std::invalid_argument);
  CHECK_THROWS_AS(Extractor::analytic(4, 0), std::invalid_argument);
}

TEST_CASE("construction is deterministic") {
  const auto a = Extractor::analytic(6, 2).to_tensors();
  const auto b = Extractor::analytic(6, 2).to_tensors();
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i].value == b[i].value);
}

TEST_CASE("horizontal line excites the 0 degree channel more than the 90 degree one") {
  Tensor<double> img(Shape{1, 1, 32, 32});
  for (std::size_t x = 0; x < 32; ++x) img[16 * 32 + x] = 1.0;
  const auto level1 = Extractor::analytic().describe_values(img, {"level1"}).front().second;
  // Channel order: orientation-major within each scale, 4 orientations.
  for (std::size_t s = 0; s < 3; ++s) {
    CAPTURE(s);
    CHECK(mean_abs_channel(level1, 4 * s) > mean_abs_channel(level1, 4 * s + 2));
  }
}

TEST_CASE("constant and zero inputs give no band-pass response") {
  const auto ex = Extractor::analytic();
  for (double level : {0.0, 0.37, 1.0}) {
    const auto stack = ex.describe_values(Tensor<double>(Shape{1, 1, 32, 32}, level), kAll);
    for (const auto& [name, map] : stack) {
      for (double v : map.values()) REQUIRE(std::abs(v) < 1e-6);
    }
  }
}

TEST_CASE("level 1 is shift-equivariant away from the borders") {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0, 1);
  Tensor<double> img(Shape{1, 1, 40, 40}), shifted(Shape{1, 1, 40, 40});
  for (auto& v : img.data()) v = u(rng);
  for (std::size_t y = 0; y < 40; ++y)
    for (std::size_t x = 1; x < 40; ++x) shifted[y * 40 + x] = img[y * 40 + x - 1];
  const auto ex = Extractor::analytic();
  const auto a = ex.describe_values(img, {"level1"}).front().second;
  const auto b = ex.describe_values(shifted, {"level1"}).front().second;
  const std::size_t margin = ex.layer("level1").kernel.extent(2) / 2 + 1;
  for (std::size_t c = 0; c < 15; ++c)
    for (std::size_t y = margin; y < 40 - margin; ++y)
      for (std::size_t x = margin; x + 1 < 40 - margin; ++x) {
        REQUIRE(b[(c * 40 + y) * 40 + x + 1] == doctest::Approx(a[(c * 40 + y) * 40 + x]).epsilon(1e-12));
      }
}

TEST_CASE("stack shapes depend only on the input shape") {
  const auto ex = Extractor::analytic();
  const auto a = ex.describe_values(Tensor<double>(Shape{2, 1, 16, 24}, 0.0), kAll);
  const auto b = ex.describe_values(Tensor<double>(Shape{2, 1, 16, 24}, 0.9), kAll);
  for (std::size_t i = 0; i < 3; ++i) CHECK(a[i].second.shape() == b[i].second.shape());
  CHECK(a[2].second.shape() == Shape{2, 15, 4, 6});
}

TEST_CASE("describe rejects out-of-range inputs and gives no gradient to the kernels") {
  const auto ex = Extractor::analytic();
  Graph<double> g;
  CHECK_THROWS_AS(ex.describe(g.constant(Tensor<double>(Shape{1, 1, 8, 8}, 1.5)), kAll), std::domain_error);
  auto image = g.parameter("image", Tensor<double>(Shape{1, 1, 8, 8}, 0.5));
  const auto stack = ex.describe(image, kAll);
  const auto grads = g.backward(squared_l2(stack.back().map));
  CHECK(grads.size() == 1);
  CHECK(grads.count("image") == 1);
}

TEST_CASE("VGG-style stacks load from weight tensors") {
  std::vector<NamedTensor> tensors{
      {"conv1_1.weight", StoredType::float32, Tensor<double>(Shape{4, 3, 3, 3}, 0.01)},
      {"conv1_1.bias", StoredType::float32, Tensor<double>(Shape{4}, 0.0)},
      {"conv2_1.weight", StoredType::float32, Tensor<double>(Shape{5, 4, 3, 3}, 0.01)},
  };
  const auto ex = Extractor::from_tensors(tensors, InputAdapter::replicate_rgb);
  CHECK(ex.channels("conv2_1") == 5);
  CHECK(ex.downsampling("conv2_1") == 2);
  tensors[2].value = Tensor<double>(Shape{5, 3, 3, 3}, 0.01);
  CHECK_THROWS_AS(Extractor::from_tensors(tensors, InputAdapter::replicate_rgb), WeightFormatError);
}
