#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "topodelin/image.hpp"

namespace topodelin {

/// Unreadable or malformed image/dataset files.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// 8-bit grayscale files. The format follows the extension: .pgm (binary P5)
// or .png. Values map to [0,1] by v / 255.
Image read_gray(const std::filesystem::path& path);
void write_gray(const std::filesystem::path& path, const Image& image);
/// Reads a 0/255 label file; any non-zero value is foreground.
Mask read_mask(const std::filesystem::path& path);
void write_mask(const std::filesystem::path& path, const Mask& mask);

/// Dataset directory: images/<id>.png|pgm, labels/<id>.png|pgm, manifest.txt.
std::vector<std::string> read_manifest(const std::filesystem::path& dir);
std::vector<Sample> load_dataset(const std::filesystem::path& dir);
void save_dataset(const std::filesystem::path& dir, const std::vector<Sample>& samples,
                  const std::string& extension = ".png");

/// Finds <dir>/<id>.png or <dir>/<id>.pgm.
std::filesystem::path find_image_file(const std::filesystem::path& dir, const std::string& id);

struct SynthConfig {
  std::size_t canvas = 64;
  std::size_t strokes_min = 2;
  std::size_t strokes_max = 4;
  /// Quadratic segments chained per stroke.
  std::size_t segments_min = 2;
  std::size_t segments_max = 3;
  double segment_length_min = 14.0;
  double segment_length_max = 26.0;
  double width_min = 1.5;
  double width_max = 3.0;
  double stroke_intensity_min = 0.45;
  double stroke_intensity_max = 0.75;
  double gap_probability = 1.0;
  double gap_length_min = 4.0;
  double gap_length_max = 8.0;
  std::size_t distractors_min = 2;
  std::size_t distractors_max = 8;
  double distractor_radius_min = 1.0;
  double distractor_radius_max = 2.5;
  double background_level = 0.25;
  double texture_amplitude = 0.1;
  double noise_std = 0.15;
  /// Accepted range of the gt foreground fraction; draws outside are redrawn.
  double foreground_min = 0.04;
  double foreground_max = 0.3;
  std::uint64_t seed = 1;

  void validate() const;
};

/// Random smooth strokes on textured noisy backgrounds. Gaps are cut from the
/// image only; the gt strokes stay continuous.
std::vector<Sample> synth(const SynthConfig& config, std::size_t n);
Sample synth_one(const SynthConfig& config, std::uint64_t index);

/// Four rotations by multiples of 90° (counter-clockwise), then the same four
/// applied after a horizontal mirror.
std::vector<Sample> augment(const Sample& sample);
template <typename T>
Grid<T> rotate90(const Grid<T>& g);
template <typename T>
Grid<T> mirror(const Grid<T>& g);

struct ElasticConfig {
  std::size_t spacing = 16;
  double displacement_std = 2.0;
};

/// Per-node Gaussian displacements on a regular grid, bilinearly interpolated
/// per pixel. The image is resampled bilinearly, gt resampled with the same
/// field and re-thresholded at 0.5.
Sample elastic_deform(const Sample& sample, const ElasticConfig& config, std::uint64_t seed);

/// Crops of size x size at multiples of stride; crops that would leave the
/// canvas are skipped, so stride > size leaves uncovered pixels.
std::vector<Sample> patches(const Sample& sample, std::size_t size, std::size_t stride);

}  // namespace topodelin
