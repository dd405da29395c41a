#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "topodelin/autograd.hpp"
#include "topodelin/weights_io.hpp"

namespace topodelin {

enum class ExtractorBackend { analytic_bank, loaded_weights };

enum class InputAdapter {
  /// Copy the map into three channels and apply the ImageNet per-channel
  /// normalization the pretrained stack was trained with.
  replicate_rgb,
  pass_through,
};

struct ExtractorConfig {
  ExtractorBackend backend = ExtractorBackend::analytic_bank;
  /// Empty means the backend's default selection.
  std::vector<std::string> selected_layers;
  InputAdapter input_adapter = InputAdapter::pass_through;
  std::filesystem::path weight_file;
  int orientations = 4;
  int scales = 3;
};

/// Layers read by the topology loss when the configuration names none.
std::vector<std::string> default_layers(ExtractorBackend backend);

struct ExtractorLayer {
  std::string name;
  Tensor<double> kernel;  // (out, in, k, k)
  Tensor<double> bias;    // (out) or empty when the layer has none
  bool has_bias = false;
  bool pool_before = false;
  bool replicate_padding = false;
};

template <typename T>
struct FeatureMap {
  std::string name;
  std::size_t downsampling = 1;
  Var<T> map;
};

template <typename T>
using FeatureStack = std::vector<FeatureMap<T>>;

/// Frozen conv/relu/pool stack used as a structural descriptor of binary
/// delineation maps. Immutable after construction.
class Extractor {
 public:
  /// Oriented ridge filters (one per orientation and scale) followed by one
  /// center-surround filter per scale, arranged as three levels separated by
  /// 2x max pooling. Fully determined by its two arguments.
  static Extractor analytic(int orientations = 4, int scales = 3);

  /// Plain VGG-style stack read from "convB_L.weight" / "convB_L.bias" tensors;
  /// a 2x max pool precedes every block after the first.
  static Extractor from_tensors(const std::vector<NamedTensor>& tensors, InputAdapter adapter);
  static Extractor load(const std::filesystem::path& weight_file, InputAdapter adapter);

  static Extractor from_config(const ExtractorConfig& config);

  std::vector<NamedTensor> to_tensors() const;

  const std::vector<ExtractorLayer>& layers() const { return layers_; }
  InputAdapter input_adapter() const { return adapter_; }
  ExtractorBackend backend() const { return backend_; }
  /// Layers compared when a configuration names none.
  std::vector<std::string> default_selection() const { return default_layers(backend_); }
  const ExtractorLayer& layer(const std::string& name) const;
  bool has_layer(const std::string& name) const;
  std::size_t channels(const std::string& name) const;
  std::size_t downsampling(const std::string& name) const;
  /// Spatial divisor the input extents must satisfy.
  std::size_t required_divisor(const std::vector<std::string>& selected) const;

  /// Feature maps of `selected` layers for a single-channel image with values
  /// in [0,1]. Kernels enter the graph as frozen parameters, so gradients flow
  /// to the image only.
  template <typename T>
  FeatureStack<T> describe(Var<T> image, const std::vector<std::string>& selected) const;

  /// Graph-free evaluation.
  std::vector<std::pair<std::string, Tensor<double>>> describe_values(
      const Tensor<double>& image, const std::vector<std::string>& selected) const;

 private:
  std::vector<ExtractorLayer> layers_;
  InputAdapter adapter_ = InputAdapter::pass_through;
  ExtractorBackend backend_ = ExtractorBackend::analytic_bank;
  std::string tag_;
};

}  // namespace topodelin
