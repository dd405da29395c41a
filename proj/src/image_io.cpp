#include <png.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "topodelin/dataset.hpp"

namespace topodelin {

void Sample::validate() const {
  if (image.height() != gt.height() || image.width() != gt.width()) {
    throw std::invalid_argument("sample " + id + ": image and gt extents differ");
  }
  for (auto v : gt.values()) {
    if (v > 1) throw std::invalid_argument("sample " + id + ": gt is not binary");
  }
  for (double v : image.values()) {
    if (!(v >= 0.0 && v <= 1.0)) throw std::invalid_argument("sample " + id + ": image leaves [0,1]");
  }
}

Mask threshold(const Image& prob, double level) {
  Mask m(prob.height(), prob.width());
  for (std::size_t i = 0; i < prob.size(); ++i) m[i] = prob[i] >= level ? 1 : 0;
  return m;
}

std::size_t count_foreground(const Mask& mask) {
  return static_cast<std::size_t>(std::count(mask.values().begin(), mask.values().end(), std::uint8_t{1}));
}

namespace {

std::string lower_extension(const std::filesystem::path& p) {
  auto ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext;
}

std::uint8_t quantize(double v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

Grid<std::uint8_t> read_bytes_pgm(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open " + path.string());
  const auto token = [&]() {
    std::string t;
    char c;
    while (f.get(c)) {
      if (c == '#') {
        std::string line;
        std::getline(f, line);
        continue;
      }
      if (std::isspace(static_cast<unsigned char>(c))) {
        if (!t.empty()) break;
        continue;
      }
      t.push_back(c);
    }
    return t;
  };
  const auto magic = token();
  if (magic == "P6" || magic == "P3") throw DataError(path.string() + " is a color image; expected grayscale");
  if (magic != "P5") throw DataError(path.string() + " is not a binary PGM (P5) file");
  std::size_t w = 0, h = 0, maxval = 0;
  try {
    w = std::stoul(token());
    h = std::stoul(token());
    maxval = std::stoul(token());
  } catch (const std::exception&) {
    throw DataError("malformed PGM header in " + path.string());
  }
  if (w == 0 || h == 0 || maxval == 0 || maxval > 255) {
    throw DataError(path.string() + ": only 8-bit PGM files are supported");
  }
  std::vector<std::uint8_t> data(w * h);
  f.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(data.size()));
  if (f.gcount() != static_cast<std::streamsize>(data.size())) throw DataError(path.string() + " is truncated");
  if (maxval != 255) {
    for (auto& v : data) v = static_cast<std::uint8_t>(std::lround(v * 255.0 / maxval));
  }
  return Grid<std::uint8_t>(h, w, std::move(data));
}

void write_bytes_pgm(const std::filesystem::path& path, const Grid<std::uint8_t>& g) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw DataError("cannot open " + path.string() + " for writing");
  f << "P5\n" << g.width() << ' ' << g.height() << "\n255\n";
  f.write(reinterpret_cast<const char*>(g.values().data()), static_cast<std::streamsize>(g.size()));
  if (!f) throw DataError("failed writing " + path.string());
}

Grid<std::uint8_t> read_bytes_png(const std::filesystem::path& path) {
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&img, path.string().c_str())) {
    throw DataError("cannot read PNG " + path.string() + ": " + img.message);
  }
  if (img.format & PNG_FORMAT_FLAG_COLOR) {
    png_image_free(&img);
    throw DataError(path.string() + " is a color image; expected grayscale");
  }
  img.format = PNG_FORMAT_GRAY;
  std::vector<std::uint8_t> data(PNG_IMAGE_SIZE(img));
  if (!png_image_finish_read(&img, nullptr, data.data(), 0, nullptr)) {
    throw DataError("cannot decode PNG " + path.string() + ": " + img.message);
  }
  return Grid<std::uint8_t>(img.height, img.width, std::move(data));
}

void write_bytes_png(const std::filesystem::path& path, const Grid<std::uint8_t>& g) {
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(g.width());
  img.height = static_cast<png_uint_32>(g.height());
  img.format = PNG_FORMAT_GRAY;
  if (!png_image_write_to_file(&img, path.string().c_str(), 0, g.values().data(), 0, nullptr)) {
    throw DataError("cannot write PNG " + path.string() + ": " + img.message);
  }
}

Grid<std::uint8_t> read_bytes(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw DataError("missing file " + path.string());
  const auto ext = lower_extension(path);
  if (ext == ".png") return read_bytes_png(path);
  if (ext == ".pgm") return read_bytes_pgm(path);
  throw DataError("unsupported image extension for " + path.string() + " (use .png or .pgm)");
}

void write_bytes(const std::filesystem::path& path, const Grid<std::uint8_t>& g) {
  const auto ext = lower_extension(path);
  if (ext == ".png") return write_bytes_png(path, g);
  if (ext == ".pgm") return write_bytes_pgm(path, g);
  throw DataError("unsupported image extension for " + path.string() + " (use .png or .pgm)");
}

}  // namespace

Image read_gray(const std::filesystem::path& path) {
  const auto bytes = read_bytes(path);
  Image img(bytes.height(), bytes.width());
  for (std::size_t i = 0; i < bytes.size(); ++i) img[i] = bytes[i] / 255.0;
  return img;
}

void write_gray(const std::filesystem::path& path, const Image& image) {
  Grid<std::uint8_t> bytes(image.height(), image.width());
  for (std::size_t i = 0; i < image.size(); ++i) bytes[i] = quantize(image[i]);
  write_bytes(path, bytes);
}

Mask read_mask(const std::filesystem::path& path) {
  auto bytes = read_bytes(path);
  for (auto& v : bytes.values()) v = v ? 1 : 0;
  return bytes;
}

void write_mask(const std::filesystem::path& path, const Mask& mask) {
  Grid<std::uint8_t> bytes(mask.height(), mask.width());
  for (std::size_t i = 0; i < mask.size(); ++i) bytes[i] = mask[i] ? 255 : 0;
  write_bytes(path, bytes);
}

std::vector<std::string> read_manifest(const std::filesystem::path& dir) {
  const auto path = dir / "manifest.txt";
  std::ifstream f(path);
  if (!f) throw DataError("missing manifest " + path.string());
  std::vector<std::string> ids;
  std::string line;
  while (std::getline(f, line)) {
    const auto b = line.find_first_not_of(" \t\r");
    if (b == std::string::npos) continue;
    const auto e = line.find_last_not_of(" \t\r");
    ids.push_back(line.substr(b, e - b + 1));
  }
  if (ids.empty()) throw DataError("manifest " + path.string() + " lists no ids");
  return ids;
}

std::filesystem::path find_image_file(const std::filesystem::path& dir, const std::string& id) {
  for (const char* ext : {".png", ".pgm"}) {
    auto p = dir / (id + ext);
    if (std::filesystem::exists(p)) return p;
  }
  throw DataError("no .png or .pgm file for id '" + id + "' in " + dir.string());
}

std::vector<Sample> load_dataset(const std::filesystem::path& dir) {
  std::vector<Sample> samples;
  for (const auto& id : read_manifest(dir)) {
    Sample s;
    s.id = id;
    s.image = read_gray(find_image_file(dir / "images", id));
    s.gt = read_mask(find_image_file(dir / "labels", id));
    if (s.image.height() != s.gt.height() || s.image.width() != s.gt.width()) {
      throw DataError("image and label for id '" + id + "' differ in size");
    }
    samples.push_back(std::move(s));
  }
  return samples;
}

void save_dataset(const std::filesystem::path& dir, const std::vector<Sample>& samples, const std::string& extension) {
  std::error_code ec;
  std::filesystem::create_directories(dir / "images", ec);
  std::filesystem::create_directories(dir / "labels", ec);
  if (ec) throw DataError("cannot create dataset directory " + dir.string() + ": " + ec.message());
  std::ofstream manifest(dir / "manifest.txt", std::ios::trunc);
  if (!manifest) throw DataError("cannot write " + (dir / "manifest.txt").string());
  for (const auto& s : samples) {
    write_gray(dir / "images" / (s.id + extension), s.image);
    write_mask(dir / "labels" / (s.id + extension), s.gt);
    manifest << s.id << '\n';
  }
}

}  // namespace topodelin
