#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <bit>
#include <cstring>
#include <filesystem>

#include "topodelin/unet.hpp"
#include "topodelin/weights_io.hpp"

using namespace topodelin;

namespace {

// Independent little-endian encoder for the expected byte stream.
struct Bytes {
  std::vector<std::uint8_t> b;
  void u8(unsigned v) { b.push_back(static_cast<std::uint8_t>(v)); }
  void u16(unsigned v) { for (int i = 0; i < 2; ++i) u8((v >> (8 * i)) & 0xFF); }
  void u32(std::uint32_t v) { for (int i = 0; i < 4; ++i) u8((v >> (8 * i)) & 0xFF); }
  void f32(float f) { u32(std::bit_cast<std::uint32_t>(f)); }
  void str(const std::string& s) { for (char c : s) u8(static_cast<unsigned char>(c)); }
};

WeightErrorKind decode_error(const std::vector<std::uint8_t>& bytes) {
  try {
    decode_weights(bytes);
  } catch (const WeightFormatError& e) {
    return e.kind();
  }
  FAIL("decode accepted malformed bytes");
  return WeightErrorKind::io;
}

std::vector<NamedTensor> sample_tensors() {
  Tensor<double> w(Shape{2, 1, 3, 3});
  for (std::size_t i = 0; i < w.size(); ++i) w[i] = static_cast<float>(0.1 * static_cast<double>(i) - 0.7);
  Tensor<double> b(Shape{2}, std::vector<double>{0.5, -1.25});
  Tensor<double> d(Shape{3}, std::vector<double>{1.0 / 3.0, -2.0 / 7.0, 1e-300});
  return {{"conv1_1.weight", StoredType::float32, w}, {"conv1_1.bias", StoredType::float32, b},
          {"state.extra", StoredType::float64, d}};
}

}  // namespace

TEST_CASE("encoding matches the byte layout") {
  Bytes expected;
  expected.str("TDLW");
  expected.u32(1);
  expected.u32(1);
  expected.u16(6);
  expected.str("conv.w");
  expected.u8(0);
  expected.u8(2);
  expected.u32(1);
  expected.u32(2);
  expected.f32(1.5f);
  expected.f32(-0.25f);
  const auto bytes = encode_weights({{"conv.w", StoredType::float32, Tensor<double>(Shape{1, 2}, {1.5, -0.25})}});
  CHECK(bytes == expected.b);
}

TEST_CASE("round trip is bit-exact for both dtypes") {
  const auto tensors = sample_tensors();
  const auto bytes = encode_weights(tensors);
  const auto decoded = decode_weights(bytes);
  REQUIRE(decoded.size() == tensors.size());
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    CHECK(decoded[i].name == tensors[i].name);
    CHECK(decoded[i].stored == tensors[i].stored);
    CHECK(decoded[i].value == tensors[i].value);
  }
  CHECK(encode_weights(decoded) == bytes);

  const auto path = std::filesystem::temp_directory_path() / "topodelin_test_weights.tdlw";
  save_weights(path, tensors);
  CHECK(encode_weights(load_weights(path)) == bytes);
  std::filesystem::remove(path);
}

TEST_CASE("model checkpoints round trip in both precisions") {
  UNetConfig config;
  config.depth = 2;
  config.base_channels = 4;
  const auto pf = init_params<float>(config, 3);
  const auto back_f = params_from_tensors<float>(config, decode_weights(encode_weights(params_to_tensors(pf))));
  CHECK(back_f.tensors == pf.tensors);
  const auto pd = init_params<double>(config, 3);
  const auto back_d = params_from_tensors<double>(config, decode_weights(encode_weights(params_to_tensors(pd))));
  CHECK(back_d.tensors == pd.tensors);
}

TEST_CASE("malformed files raise distinct errors") {
  const auto good = encode_weights(sample_tensors());

  auto magic = good;
  magic[0] = 'X';
  CHECK(decode_error(magic) == WeightErrorKind::bad_magic);

  for (std::size_t cut : {std::size_t{0}, std::size_t{3}, std::size_t{7}, std::size_t{20}, good.size() - 1}) {
    CAPTURE(cut);
    CHECK(decode_error({good.begin(), good.begin() + static_cast<std::ptrdiff_t>(cut)}) == WeightErrorKind::truncated);
  }

  auto version = good;
  version[4] = 2;
  CHECK(decode_error(version) == WeightErrorKind::unsupported_version);

  // dtype byte of the first record: 12 header bytes, 2 length bytes, 14 name bytes.
  auto dtype = good;
  REQUIRE(dtype[12 + 2 + 14] == 0);
  dtype[12 + 2 + 14] = 7;
  CHECK(decode_error(dtype) == WeightErrorKind::unsupported_dtype);

  auto trailing = good;
  trailing.push_back(0);
  CHECK(decode_error(trailing) == WeightErrorKind::shape_mismatch);

  // A huge declared extent must not allocate; it is reported as truncation.
  auto extent = good;
  extent[12 + 2 + 14 + 2 + 3] = 0x7F;
  CHECK(decode_error(extent) == WeightErrorKind::truncated);

  CHECK_THROWS_AS(load_weights("/nonexistent/weights.tdlw"), WeightFormatError);
}

TEST_CASE("loading a checkpoint for the wrong configuration is a shape mismatch") {
  UNetConfig small;
  small.depth = 2;
  small.base_channels = 4;
  UNetConfig wide = small;
  wide.base_channels = 8;
  const auto tensors = params_to_tensors(init_params<float>(small, 1));
  try {
    params_from_tensors<float>(wide, tensors);
    FAIL("accepted mismatched checkpoint");
  } catch (const WeightFormatError& e) {
    CHECK(e.kind() == WeightErrorKind::shape_mismatch);
  }
}
