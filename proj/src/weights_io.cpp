#include "topodelin/weights_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

namespace topodelin {

const char* to_string(WeightErrorKind kind) {
  switch (kind) {
    case WeightErrorKind::io: return "io error";
    case WeightErrorKind::bad_magic: return "bad magic";
    case WeightErrorKind::unsupported_version: return "unsupported version";
    case WeightErrorKind::truncated: return "truncated file";
    case WeightErrorKind::unsupported_dtype: return "unsupported dtype";
    case WeightErrorKind::shape_mismatch: return "shape mismatch";
  }
  return "unknown";
}

namespace {

static_assert(std::endian::native == std::endian::little || std::endian::native == std::endian::big);

template <typename U>
void put_le(std::vector<std::uint8_t>& out, U value) {
  for (std::size_t i = 0; i < sizeof(U); ++i) {
    out.push_back(static_cast<std::uint8_t>((static_cast<std::uint64_t>(value) >> (8 * i)) & 0xFF));
  }
}

class Reader {
 public:
  explicit Reader(const std::vector<std::uint8_t>& bytes) : bytes_(bytes) {}

  template <typename U>
  U get_le(const char* what) {
    need(sizeof(U), what);
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<std::uint64_t>(bytes_[pos_ + i]) << (8 * i);
    pos_ += sizeof(U);
    return static_cast<U>(v);
  }

  const std::uint8_t* take(std::size_t n, const char* what) {
    need(n, what);
    const auto* p = bytes_.data() + pos_;
    pos_ += n;
    return p;
  }

  bool at_end() const { return pos_ == bytes_.size(); }
  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  void need(std::size_t n, const char* what) const {
    if (bytes_.size() - pos_ < n) {
      throw WeightFormatError(WeightErrorKind::truncated,
                              std::string("file ends while reading ") + what + " at byte " +
                                  std::to_string(pos_));
    }
  }

  const std::vector<std::uint8_t>& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::uint8_t> encode_weights(const std::vector<NamedTensor>& tensors) {
  std::vector<std::uint8_t> out(std::begin(weight_format::kMagic), std::end(weight_format::kMagic));
  put_le<std::uint32_t>(out, weight_format::kVersion);
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& t : tensors) {
    if (t.name.size() > 0xFFFF) throw std::invalid_argument("tensor name too long: " + t.name);
    if (t.value.rank() > 0xFF) throw std::invalid_argument("tensor rank too large: " + t.name);
    put_le<std::uint16_t>(out, static_cast<std::uint16_t>(t.name.size()));
    out.insert(out.end(), t.name.begin(), t.name.end());
    out.push_back(static_cast<std::uint8_t>(t.stored));
    out.push_back(static_cast<std::uint8_t>(t.value.rank()));
    for (auto e : t.value.shape()) put_le<std::uint32_t>(out, static_cast<std::uint32_t>(e));
    for (double v : t.value.values()) {
      if (t.stored == StoredType::float32) {
        put_le<std::uint32_t>(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
      } else {
        put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(v));
      }
    }
  }
  return out;
}

std::vector<NamedTensor> decode_weights(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 4) {
    throw WeightFormatError(WeightErrorKind::truncated, "file shorter than the magic bytes");
  }
  if (std::memcmp(bytes.data(), weight_format::kMagic, 4) != 0) {
    throw WeightFormatError(WeightErrorKind::bad_magic, "expected \"TDLW\"");
  }
  Reader r(bytes);
  r.take(4, "magic");
  const auto version = r.get_le<std::uint32_t>("version");
  if (version != weight_format::kVersion) {
    throw WeightFormatError(WeightErrorKind::unsupported_version, "version " + std::to_string(version));
  }
  const auto count = r.get_le<std::uint32_t>("tensor count");
  std::vector<NamedTensor> tensors;
  for (std::uint32_t i = 0; i < count; ++i) {
    NamedTensor t;
    const auto name_len = r.get_le<std::uint16_t>("name length");
    const auto* name = r.take(name_len, "name");
    t.name.assign(reinterpret_cast<const char*>(name), name_len);
    const auto dtype = r.get_le<std::uint8_t>("dtype");
    if (dtype != weight_format::kFloat32 && dtype != weight_format::kFloat64) {
      throw WeightFormatError(WeightErrorKind::unsupported_dtype,
                              "tensor " + t.name + " has dtype " + std::to_string(dtype));
    }
    t.stored = static_cast<StoredType>(dtype);
    const auto rank = r.get_le<std::uint8_t>("rank");
    if (rank == 0) throw WeightFormatError(WeightErrorKind::shape_mismatch, "tensor " + t.name + " has rank 0");
    Shape shape;
    for (std::uint8_t a = 0; a < rank; ++a) {
      const auto e = r.get_le<std::uint32_t>("extent");
      if (e == 0) throw WeightFormatError(WeightErrorKind::shape_mismatch, "tensor " + t.name + " has a zero extent");
      shape.push_back(e);
    }
    // Bound the element count by the bytes left before allocating.
    const std::size_t width = t.stored == StoredType::float32 ? 4 : 8;
    std::size_t n = 1;
    for (auto e : shape) {
      if (n > r.remaining() / width / e) {
        throw WeightFormatError(WeightErrorKind::truncated, "file ends inside the data of tensor " + t.name);
      }
      n *= e;
    }
    std::vector<double> values(n);
    for (std::size_t j = 0; j < n; ++j) {
      if (t.stored == StoredType::float32) {
        values[j] = std::bit_cast<float>(r.get_le<std::uint32_t>("tensor data"));
      } else {
        values[j] = std::bit_cast<double>(r.get_le<std::uint64_t>("tensor data"));
      }
    }
    t.value = Tensor<double>(std::move(shape), std::move(values));
    tensors.push_back(std::move(t));
  }
  if (!r.at_end()) {
    throw WeightFormatError(WeightErrorKind::shape_mismatch, "trailing bytes after the declared tensors");
  }
  return tensors;
}

void save_weights(const std::filesystem::path& path, const std::vector<NamedTensor>& tensors) {
  const auto bytes = encode_weights(tensors);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw WeightFormatError(WeightErrorKind::io, "cannot open " + path.string() + " for writing");
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw WeightFormatError(WeightErrorKind::io, "failed writing " + path.string());
}

std::vector<NamedTensor> load_weights(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw WeightFormatError(WeightErrorKind::io, "cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return decode_weights(bytes);
}

const NamedTensor& find_tensor(const std::vector<NamedTensor>& tensors, const std::string& name) {
  for (const auto& t : tensors) {
    if (t.name == name) return t;
  }
  throw WeightFormatError(WeightErrorKind::shape_mismatch, "missing tensor " + name);
}

}  // namespace topodelin
