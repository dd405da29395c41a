#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "topodelin/tensor.hpp"

namespace topodelin {

/// Portable weight file:
///   "TDLW" | u32 version | u32 count | count x record
///   record: u16 name length | name bytes | u8 dtype | u8 rank | rank x u32 extent | raw data
/// Integers and floats are little-endian, data row-major.
/// dtype 0 stores 32-bit floats, dtype 1 stores 64-bit floats.
namespace weight_format {
inline constexpr char kMagic[4] = {'T', 'D', 'L', 'W'};
inline constexpr std::uint32_t kVersion = 1;
inline constexpr std::uint8_t kFloat32 = 0;
inline constexpr std::uint8_t kFloat64 = 1;
}  // namespace weight_format

enum class WeightErrorKind {
  io,
  bad_magic,
  unsupported_version,
  truncated,
  unsupported_dtype,
  shape_mismatch,
};

const char* to_string(WeightErrorKind kind);

class WeightFormatError : public std::runtime_error {
 public:
  WeightFormatError(WeightErrorKind kind, const std::string& message)
      : std::runtime_error(std::string(to_string(kind)) + ": " + message), kind_(kind) {}
  WeightErrorKind kind() const { return kind_; }

 private:
  WeightErrorKind kind_;
};

enum class StoredType : std::uint8_t { float32 = weight_format::kFloat32, float64 = weight_format::kFloat64 };

/// A named tensor as stored on disk. Values are widened to double in memory;
/// `stored` remembers the on-disk width so a reload/resave is bit-exact.
struct NamedTensor {
  std::string name;
  StoredType stored = StoredType::float32;
  Tensor<double> value;
};

std::vector<std::uint8_t> encode_weights(const std::vector<NamedTensor>& tensors);
std::vector<NamedTensor> decode_weights(const std::vector<std::uint8_t>& bytes);

void save_weights(const std::filesystem::path& path, const std::vector<NamedTensor>& tensors);
std::vector<NamedTensor> load_weights(const std::filesystem::path& path);

const NamedTensor& find_tensor(const std::vector<NamedTensor>& tensors, const std::string& name);

}  // namespace topodelin
