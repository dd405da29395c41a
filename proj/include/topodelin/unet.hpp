#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "topodelin/autograd.hpp"
#include "topodelin/weights_io.hpp"

namespace topodelin {

struct UNetConfig {
  std::size_t depth = 3;
  std::size_t base_channels = 8;
  std::size_t convs_per_level = 2;
  /// Image plus previous prediction.
  std::size_t input_channels = 2;

  /// Throws std::invalid_argument describing the first violated bound.
  void validate() const;
  /// Spatial extents must be multiples of this value.
  std::size_t divisor() const { return std::size_t{1} << depth; }
};

/// Learnable weights of the network, keyed by parameter name. One instance
/// serves every refinement step.
template <typename T>
struct ModelParams {
  UNetConfig config;
  std::string init_scheme = "he-normal";
  std::uint64_t seed = 0;
  std::map<std::string, Tensor<T>> tensors;

  std::size_t parameter_count() const;
};

/// Parameter names and shapes implied by a configuration, in creation order.
std::vector<std::pair<std::string, Shape>> parameter_layout(const UNetConfig& config);

/// He-style fan-in initialization from a seeded generator; batchnorm scale 1, shift 0.
template <typename T>
ModelParams<T> init_params(const UNetConfig& config, std::uint64_t seed);

/// Binds every parameter into `graph` as a learnable leaf.
template <typename T>
std::map<std::string, Var<T>> bind_params(Graph<T>& graph, const ModelParams<T>& params);

/// One application of the network to (image ⊕ previous). Both inputs are
/// (N, 1, H, W) with H, W multiples of 2^depth; returns per-pixel probabilities.
template <typename T>
Var<T> unet_forward(const UNetConfig& config, const std::map<std::string, Var<T>>& bound, Var<T> image,
                    Var<T> previous);

/// Graph-free forward for inference.
template <typename T>
Tensor<T> unet_forward(const ModelParams<T>& params, const Tensor<T>& image, const Tensor<T>& previous);

/// The all-zero map the refinement chain starts from.
template <typename T>
Tensor<T> empty_prediction(const Shape& shape);

template <typename T>
std::vector<NamedTensor> params_to_tensors(const ModelParams<T>& params);
template <typename T>
ModelParams<T> params_from_tensors(const UNetConfig& config, const std::vector<NamedTensor>& tensors);

/// Throws std::domain_error unless every value lies in [0,1].
template <typename T>
void check_probability_range(const Tensor<T>& map, const char* what);

}  // namespace topodelin
