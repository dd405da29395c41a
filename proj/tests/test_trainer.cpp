#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "topodelin/trainer.hpp"

using namespace topodelin;
namespace fs = std::filesystem;

namespace {

UNetConfig tiny_model() {
  UNetConfig c;
  c.depth = 2;
  c.base_channels = 4;
  return c;
}

std::vector<Sample> tiny_data(std::size_t n, std::uint64_t seed) {
  SynthConfig c;
  c.canvas = 32;
  c.strokes_min = 1;
  c.strokes_max = 2;
  c.segment_length_min = 8;
  c.segment_length_max = 14;
  c.foreground_max = 0.4;
  c.seed = seed;
  return synth(c, n);
}

TrainConfig tiny_config(Precision precision = Precision::double_) {
  TrainConfig c;
  c.adam.learning_rate = 1e-3;
  c.batch_size = 2;
  c.patch_size = 16;
  c.precision = precision;
  return c;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::ostringstream s;
  s << f.rdbuf();
  return s.str();
}

fs::path scratch_dir(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("topodelin_test_" + name);
  fs::remove_all(dir);
  return dir;
}

// Refinement loss of a batch through the public building blocks.
double chain_loss(const ModelParams<double>& params, const Tensor<double>& image, const Tensor<double>& gt,
                  std::size_t K, const Extractor& ex, const LossConfig& lc, GradientMap<double>* grads = nullptr) {
  Graph<double> g;
  const auto bound = bind_params(g, params);
  const auto x = g.constant(image);
  const auto y = g.constant(gt);
  auto previous = g.constant(empty_prediction<double>(image.shape()));
  std::vector<Var<double>> partials;
  for (std::size_t k = 1; k <= K; ++k) {
    const auto pred = unet_forward(params.config, bound, x, previous);
    partials.push_back(combined_loss(pred, y, ex, lc, k).total);
    previous = pred;
  }
  const auto total = refinement_loss(partials);
  if (grads) *grads = g.backward(total);
  return total.value().item();
}

}  // namespace

TEST_CASE("Adam with zero gradients leaves the weights unchanged") {
  auto params = init_params<double>(tiny_model(), 1);
  const auto before = params.tensors;
  GradientMap<double> grads;
  for (const auto& [name, t] : params.tensors) grads.emplace(name, Tensor<double>(t.shape()));
  AdamState<double> state;
  adam_step(params, grads, state, AdamConfig{});
  adam_step(params, grads, state, AdamConfig{});
  CHECK(params.tensors == before);
  CHECK(state.t == 2);
}

TEST_CASE("Adam with a constant gradient moves each weight by lr per step") {
  // m_hat = g and v_hat = g^2 at every step, so each update is lr * g / (|g| + eps).
  auto params = init_params<double>(tiny_model(), 1);
  const auto before = params.tensors;
  GradientMap<double> grads;
  for (const auto& [name, t] : params.tensors) grads.emplace(name, Tensor<double>(t.shape(), -0.3));
  AdamConfig c;
  c.learning_rate = 0.01;
  AdamState<double> state;
  for (int i = 0; i < 3; ++i) adam_step(params, grads, state, c);
  const double step = 0.01 * 0.3 / (0.3 + 1e-8);
  for (const auto& [name, t] : params.tensors)
    for (std::size_t i = 0; i < t.size(); ++i)
      REQUIRE(t[i] == doctest::Approx(before.at(name)[i] + 3 * step).epsilon(1e-12));
}

TEST_CASE("Adam treats weights symmetrically and rejects mismatched gradients") {
  ModelParams<double> params;
  params.tensors.emplace("a", Tensor<double>(Shape{2}, std::vector<double>{1.0, 1.0}));
  GradientMap<double> grads;
  grads.emplace("a", Tensor<double>(Shape{2}, std::vector<double>{0.5, -0.5}));
  AdamState<double> state;
  adam_step(params, grads, state, AdamConfig{});
  CHECK(params.tensors.at("a")[0] - 1.0 == doctest::Approx(-(params.tensors.at("a")[1] - 1.0)).epsilon(1e-15));

  GradientMap<double> wrong;
  wrong.emplace("b", Tensor<double>(Shape{2}));
  CHECK_THROWS_AS(adam_step(params, wrong, state, AdamConfig{}), std::invalid_argument);
  GradientMap<double> shape;
  shape.emplace("a", Tensor<double>(Shape{3}));
  CHECK_THROWS(adam_step(params, shape, state, AdamConfig{}));
}

TEST_CASE("a small Adam step lowers the refinement loss") {
  const auto data = tiny_data(2, 3);
  Tensor<double> image(Shape{2, 1, 32, 32}), gt(Shape{2, 1, 32, 32});
  for (std::size_t b = 0; b < 2; ++b)
    for (std::size_t i = 0; i < 32 * 32; ++i) {
      image[b * 1024 + i] = data[b].image[i];
      gt[b * 1024 + i] = data[b].gt[i];
    }
  const auto ex = Extractor::analytic();
  LossConfig lc;
  auto params = init_params<double>(tiny_model(), 2);
  GradientMap<double> grads;
  const double before = chain_loss(params, image, gt, 2, ex, lc, &grads);
  AdamState<double> state;
  AdamConfig c;
  c.learning_rate = 1e-5;
  adam_step(params, grads, state, c);
  CHECK(chain_loss(params, image, gt, 2, ex, lc) < before);
}

TEST_CASE("refinement chain applies the shared network to its own output") {
  const auto params = init_params<double>(tiny_model(), 4);
  Tensor<double> image(Shape{1, 1, 16, 16});
  for (std::size_t i = 0; i < image.size(); ++i) image[i] = static_cast<double>(i % 7) / 7.0;
  const auto chain = predict_refined(params, image, 3);
  REQUIRE(chain.size() == 3);
  auto previous = empty_prediction<double>(image.shape());
  for (std::size_t k = 0; k < 3; ++k) {
    previous = unet_forward(params, image, previous);
    CHECK(chain[k] == previous);
  }
  CHECK(predict_refined(params, image, 0).empty());
  CHECK(predict_image(params, Image(16, 16, 0.5), 0).empty());
}

TEST_CASE("refinement schedules") {
  const auto r = RefinementConfig::incremental(3, 2);
  REQUIRE(r.schedule.size() == 3);
  CHECK(r.schedule[0].K == 1);
  CHECK(r.schedule[2].K == 3);
  CHECK(r.total_epochs() == 6);
  RefinementConfig bad;
  bad.K = 2;
  bad.schedule = {{2, 1}, {1, 1}};
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad.schedule = {{1, 1}};
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}

TEST_CASE("log format") {
  CHECK(format_log_header() == "epoch\tK\trefinement\tbce\ttopo\tval_quality\n");
  EpochLog e{3, 2, 0.5, 0.25, 0.125, 0.75, 0.4};
  CHECK(format_log_line(e) == "3\t2\t0.5\t0.25\t0.125\t0.750000\n");
}

TEST_CASE("training is deterministic and resumable") {
  const auto data = tiny_data(6, 5), val = tiny_data(2, 6);
  const auto refinement = RefinementConfig::incremental(2, 2);
  const auto ex = Extractor::analytic();
  const auto before = ex.to_tensors();
  for (auto precision : {Precision::single, Precision::double_}) {
    CAPTURE(static_cast<int>(precision));
    const auto config = tiny_config(precision);
    const auto run = [&](const std::string& name, std::size_t stop_after, bool resume) {
      const auto dir = fs::temp_directory_path() / ("topodelin_test_" + name);
      TrainOptions o;
      o.out_dir = dir;
      o.sidecar = "note = test\n";
      o.stop_after = stop_after;
      o.resume = resume;
      if (precision == Precision::single) {
        train<float>(data, val, tiny_model(), refinement, config, ex, o);
      } else {
        train<double>(data, val, tiny_model(), refinement, config, ex, o);
      }
      return dir;
    };
    const auto a = run("train_a", 0, false);
    fs::remove_all(scratch_dir("train_b"));
    const auto b = run("train_b", 0, false);
    for (const char* f : {files::kCheckpoint, files::kSidecar, files::kLog, files::kResumeState}) {
      CAPTURE(f);
      REQUIRE(fs::exists(a / f));
      CHECK(slurp(a / f) == slurp(b / f));
    }
    // Four epochs with a one-line header.
    std::istringstream log(slurp(a / files::kLog));
    std::string line;
    std::size_t lines = 0;
    while (std::getline(log, line)) ++lines;
    CHECK(lines == 5);

    fs::remove_all(scratch_dir("train_c"));
    run("train_c", 3, false);
    const auto c = run("train_c", 0, true);
    for (const char* f : {files::kCheckpoint, files::kSidecar, files::kLog, files::kResumeState}) {
      CAPTURE(f);
      CHECK(slurp(a / f) == slurp(c / f));
    }
    for (const auto& d : {a, b, c}) fs::remove_all(d);
  }
  const auto after = ex.to_tensors();
  for (std::size_t i = 0; i < before.size(); ++i) CHECK(after[i].value == before[i].value);
}

TEST_CASE("training logs follow the configuration") {
  const auto data = tiny_data(4, 7), val = tiny_data(1, 8);
  auto config = tiny_config();
  config.loss.mu = 0;
  RefinementConfig single;
  single.K = 1;
  single.schedule = {{1, 2}};
  const auto r = train<double>(data, val, tiny_model(), single, config, Extractor::analytic());
  REQUIRE(r.log.size() == 2);
  for (const auto& e : r.log) {
    CHECK(e.topo == 0.0);
    CHECK(e.K == 1);
    CHECK(e.refinement == doctest::Approx(e.bce).epsilon(1e-12));
    CHECK(e.val_quality >= 0.0);
    CHECK(e.val_quality <= 1.0);
  }
  CHECK(r.best_quality == std::max(r.log[0].val_quality, r.log[1].val_quality));
}

TEST_CASE("divergence is reported with the epoch") {
  const auto data = tiny_data(4, 9), val = tiny_data(1, 10);
  auto config = tiny_config(Precision::single);
  config.adam.learning_rate = 1e30;
  try {
    train<float>(data, val, tiny_model(), RefinementConfig::incremental(1, 5), config, Extractor::analytic());
    FAIL("training with lr 1e30 did not diverge");
  } catch (const DivergenceError& e) {
    CHECK(e.epoch() >= 1);
    CHECK_FALSE(e.term().empty());
  }
}

TEST_CASE("training rejects samples smaller than the patch") {
  auto config = tiny_config();
  config.patch_size = 64;
  CHECK_THROWS(train<double>(tiny_data(2, 1), tiny_data(1, 2), tiny_model(), RefinementConfig::incremental(1, 1),
                             config, Extractor::analytic()));
}
