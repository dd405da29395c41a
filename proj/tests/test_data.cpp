#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "topodelin/dataset.hpp"

using namespace topodelin;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("topodelin_test_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

Image numbered(std::size_t h, std::size_t w) {
  Image g(h, w);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) g(y, x) = static_cast<double>(y * w + x);
  return g;
}

bool same(const Sample& a, const Sample& b) {
  for (std::size_t y = 0; y < a.gt.height(); ++y)
    for (std::size_t x = 0; x < a.gt.width(); ++x)
      if (a.image(y, x) != b.image(y, x) || a.gt(y, x) != b.gt(y, x)) return false;
  return true;
}

}  // namespace

TEST_CASE("synth is deterministic in seed and index") {
  SynthConfig c;
  const auto a = synth(c, 4), b = synth(c, 4);
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK(a[i].id == "s" + std::to_string(i));
    CHECK(same(a[i], b[i]));
    CHECK(same(a[i], synth_one(c, i)));
  }
  CHECK_FALSE(same(a[0], a[1]));
  c.seed = 2;
  CHECK_FALSE(same(synth_one(c, 0), a[0]));
}

TEST_CASE("synth respects the foreground bounds and value ranges") {
  SynthConfig c;
  c.seed = 11;
  for (const auto& s : synth(c, 25)) {
    CHECK_NOTHROW(s.validate());
    const double fraction = static_cast<double>(count_foreground(s.gt)) / static_cast<double>(s.gt.size());
    CHECK(fraction >= c.foreground_min);
    CHECK(fraction <= c.foreground_max);
  }
}

TEST_CASE("degenerate synth renders the gt itself") {
  SynthConfig c;
  c.noise_std = 0;
  c.distractors_min = c.distractors_max = 0;
  c.gap_probability = 0;
  c.background_level = 0;
  c.texture_amplitude = 0;
  c.stroke_intensity_min = c.stroke_intensity_max = 1.0;
  for (const auto& s : synth(c, 5))
    for (std::size_t y = 0; y < s.gt.height(); ++y)
      for (std::size_t x = 0; x < s.gt.width(); ++x) REQUIRE(s.image(y, x) == static_cast<double>(s.gt(y, x)));
}

TEST_CASE("synth configuration bounds") {
  SynthConfig c;
  c.width_min = 1.0;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c = {};
  c.strokes_min = 5;
  c.strokes_max = 2;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c = {};
  c.gap_probability = 1.5;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
}

TEST_CASE("rotation and mirror act as the dihedral group") {
  const auto g = numbered(5, 5);
  auto r = g;
  for (int i = 0; i < 4; ++i) r = rotate90(r);
  CHECK(r.values() == g.values());
  CHECK(mirror(mirror(g)).values() == g.values());
  // Counter-clockwise: the top-right corner moves to the top-left.
  CHECK(rotate90(g)(0, 0) == g(0, 4));
  CHECK(mirror(g)(0, 0) == g(0, 4));
  // Reflection conjugates rotation into its inverse: m r m = r^3.
  CHECK(mirror(rotate90(mirror(g))).values() == rotate90(rotate90(rotate90(g))).values());
}

TEST_CASE("augment yields eight distinct variants of an asymmetric sample") {
  Sample s;
  s.id = "a";
  s.image = Image(4, 4);
  s.gt = Mask(4, 4);
  for (std::size_t i = 0; i < 16; ++i) s.image(i / 4, i % 4) = static_cast<double>(i) / 15.0;
  s.gt(0, 1) = 1;
  const auto variants = augment(s);
  REQUIRE(variants.size() == 8);
  for (std::size_t i = 0; i < 8; ++i) {
    CHECK(count_foreground(variants[i].gt) == 1);
    for (std::size_t j = 0; j < i; ++j) CHECK(variants[i].image.values() != variants[j].image.values());
  }
  CHECK(same(variants[0], s));
  s.image = Image(4, 6);
  s.gt = Mask(4, 6);
  CHECK_THROWS_AS(augment(s), std::invalid_argument);
}

TEST_CASE("elastic deformation") {
  const auto s = synth_one(SynthConfig{}, 0);
  ElasticConfig identity;
  identity.displacement_std = 0;
  CHECK(same(elastic_deform(s, identity, 1), s));

  ElasticConfig c;
  const auto a = elastic_deform(s, c, 3), b = elastic_deform(s, c, 3);
  CHECK(same(a, b));
  CHECK_FALSE(same(a, s));
  CHECK_NOTHROW(a.validate());
  c.spacing = 2;
  CHECK_THROWS_AS(elastic_deform(s, c, 3), std::invalid_argument);
}

TEST_CASE("patches tile the canvas") {
  Sample s;
  s.id = "p";
  s.image = Image(8, 8);
  s.gt = Mask(8, 8);
  for (std::size_t i = 0; i < 64; ++i) s.image(i / 8, i % 8) = static_cast<double>(i) / 63.0;
  const auto tiles = patches(s, 4, 4);
  REQUIRE(tiles.size() == 4);
  CHECK(tiles[3].id == "p_p4_4");
  CHECK(tiles[3].image(0, 0) == s.image(4, 4));
  CHECK(patches(s, 4, 3).size() == 4);
  CHECK(patches(s, 9, 1).empty());
}

TEST_CASE("dataset files round trip through png and pgm") {
  SynthConfig c;
  c.canvas = 32;
  c.foreground_max = 0.5;
  auto samples = synth(c, 3);
  // Quantize to the 8-bit file grid first so the comparison is exact.
  for (auto& s : samples)
    for (auto& v : s.image.values()) v = std::round(v * 255.0) / 255.0;
  for (const char* ext : {".png", ".pgm"}) {
    const auto dir = scratch_dir(std::string("io") + (ext + 1));
    save_dataset(dir, samples, ext);
    CHECK(fs::exists(dir / "images" / (std::string("s0") + ext)));
    const auto loaded = load_dataset(dir);
    REQUIRE(loaded.size() == samples.size());
    for (std::size_t i = 0; i < samples.size(); ++i) {
      CHECK(loaded[i].id == samples[i].id);
      CHECK(same(loaded[i], samples[i]));
    }
    fs::remove_all(dir);
  }
}

TEST_CASE("malformed datasets raise DataError") {
  const auto dir = scratch_dir("bad");
  CHECK_THROWS_AS(load_dataset(dir), DataError);
  std::ofstream(dir / "manifest.txt") << "missing\n";
  CHECK_THROWS_AS(load_dataset(dir), DataError);
  fs::create_directories(dir / "images");
  std::ofstream(dir / "images" / "missing.pgm") << "P5\n4 4\n255\nxx";
  CHECK_THROWS_AS(read_gray(dir / "images" / "missing.pgm"), DataError);
  fs::remove_all(dir);
}

TEST_CASE("threshold and counting") {
  Image p(1, 4, std::vector<double>{0.2, 0.5, 0.49, 1.0});
  const auto m = threshold(p, 0.5);
  CHECK(m(0, 0) == 0);
  CHECK(m(0, 1) == 1);
  CHECK(m(0, 2) == 0);
  CHECK(count_foreground(m) == 2);
}
