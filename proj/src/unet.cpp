#include "topodelin/unet.hpp"

#include <cmath>
#include <random>
#include <stdexcept>

namespace topodelin {

void UNetConfig::validate() const {
  if (depth < 1 || depth > 6) throw std::invalid_argument("unet depth must be in [1, 6]");
  if (base_channels < 1) throw std::invalid_argument("unet base_channels must be positive");
  if (convs_per_level < 1) throw std::invalid_argument("unet convs_per_level must be positive");
  if (input_channels != 2) throw std::invalid_argument("unet input_channels must be 2 (image + previous prediction)");
}

template <typename T>
std::size_t ModelParams<T>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [name, t] : tensors) n += t.size();
  return n;
}

namespace {

std::string conv_name(const std::string& block, std::size_t j) { return block + ".conv" + std::to_string(j); }
std::string bn_name(const std::string& block, std::size_t j) { return block + ".bn" + std::to_string(j); }

std::size_t width_at(const UNetConfig& c, std::size_t level) { return c.base_channels << level; }

void add_conv_block(std::vector<std::pair<std::string, Shape>>& layout, const UNetConfig& c,
                    const std::string& block, std::size_t in, std::size_t out) {
  for (std::size_t j = 0; j < c.convs_per_level; ++j) {
    layout.push_back({conv_name(block, j) + ".weight", {out, j == 0 ? in : out, 3, 3}});
    layout.push_back({bn_name(block, j) + ".scale", {out}});
    layout.push_back({bn_name(block, j) + ".shift", {out}});
  }
}

template <typename T>
Var<T> conv_block(const UNetConfig& c, const std::map<std::string, Var<T>>& p, const std::string& block, Var<T> x) {
  for (std::size_t j = 0; j < c.convs_per_level; ++j) {
    x = conv2d(x, p.at(conv_name(block, j) + ".weight"), 1, 1);
    x = batchnorm(x, p.at(bn_name(block, j) + ".scale"), p.at(bn_name(block, j) + ".shift"));
    x = relu(x);
  }
  return x;
}

std::string enc(std::size_t l) { return "enc" + std::to_string(l); }
std::string dec(std::size_t l) { return "dec" + std::to_string(l); }
std::string up(std::size_t l) { return "up" + std::to_string(l); }

}  // namespace

std::vector<std::pair<std::string, Shape>> parameter_layout(const UNetConfig& c) {
  c.validate();
  std::vector<std::pair<std::string, Shape>> layout;
  std::size_t in = c.input_channels;
  for (std::size_t l = 0; l < c.depth; ++l) {
    add_conv_block(layout, c, enc(l), in, width_at(c, l));
    in = width_at(c, l);
  }
  add_conv_block(layout, c, "mid", in, width_at(c, c.depth));
  for (std::size_t l = c.depth; l-- > 0;) {
    layout.push_back({up(l) + ".weight", {width_at(c, l + 1), width_at(c, l), 2, 2}});
    layout.push_back({up(l) + ".bias", {width_at(c, l)}});
    add_conv_block(layout, c, dec(l), 2 * width_at(c, l), width_at(c, l));
  }
  layout.push_back({"head.weight", {1, c.base_channels, 1, 1}});
  layout.push_back({"head.bias", {1}});
  return layout;
}

template <typename T>
ModelParams<T> init_params(const UNetConfig& config, std::uint64_t seed) {
  ModelParams<T> params;
  params.config = config;
  params.seed = seed;
  std::mt19937_64 rng(seed);
  for (const auto& [name, shape] : parameter_layout(config)) {
    Tensor<T> t(shape);
    const auto ends_with = [&](const char* suffix) {
      const std::string s(suffix);
      return name.size() >= s.size() && name.compare(name.size() - s.size(), s.size(), s) == 0;
    };
    if (ends_with(".scale")) {
      for (auto& v : t.data()) v = T{1};
    } else if (ends_with(".weight")) {
      // Fan-in of a transposed kernel (in, out, k, k) is in * k * k / stride^2 = in.
      const bool transposed = name.rfind("up", 0) == 0;
      const double fan_in = transposed ? static_cast<double>(shape[0])
                                       : static_cast<double>(shape[1] * shape[2] * shape[3]);
      std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / fan_in));
      for (auto& v : t.data()) v = static_cast<T>(dist(rng));
    }
    params.tensors.emplace(name, std::move(t));
  }
  return params;
}

template <typename T>
std::map<std::string, Var<T>> bind_params(Graph<T>& graph, const ModelParams<T>& params) {
  std::map<std::string, Var<T>> bound;
  for (const auto& [name, t] : params.tensors) bound.emplace(name, graph.parameter(name, t));
  return bound;
}

template <typename T>
Var<T> unet_forward(const UNetConfig& c, const std::map<std::string, Var<T>>& p, Var<T> image, Var<T> previous) {
  const auto di = image_dims(image.shape());
  const auto dp = image_dims(previous.shape());
  if (di.channels != 1 || dp.channels != 1 || image.shape() != previous.shape()) {
    throw ShapeError("unet: image " + shape_to_string(image.shape()) + " and previous prediction " +
                     shape_to_string(previous.shape()) + " must be matching single-channel maps");
  }
  if (di.height % c.divisor() || di.width % c.divisor()) {
    throw ShapeError("unet: spatial extents " + shape_to_string(image.shape()) + " must be multiples of " +
                     std::to_string(c.divisor()));
  }
  check_probability_range(previous.value(), "previous prediction");

  Var<T> x = concat_channels(image, previous);
  std::vector<Var<T>> skips;
  for (std::size_t l = 0; l < c.depth; ++l) {
    x = conv_block(c, p, enc(l), x);
    skips.push_back(x);
    x = maxpool2x2(x);
  }
  x = conv_block(c, p, "mid", x);
  for (std::size_t l = c.depth; l-- > 0;) {
    x = bias_add(transpose_conv2d(x, p.at(up(l) + ".weight"), 2), p.at(up(l) + ".bias"));
    x = concat_channels(skips[l], x);
    x = conv_block(c, p, dec(l), x);
  }
  x = bias_add(conv2d(x, p.at("head.weight"), 1, 0), p.at("head.bias"));
  auto out = sigmoid(x);
  check_probability_range(out.value(), "network output");
  return out;
}

template <typename T>
Tensor<T> unet_forward(const ModelParams<T>& params, const Tensor<T>& image, const Tensor<T>& previous) {
  Graph<T> g;
  std::map<std::string, Var<T>> bound;
  for (const auto& [name, t] : params.tensors) bound.emplace(name, g.constant(t));
  return unet_forward(params.config, bound, g.constant(image), g.constant(previous)).value();
}

template <typename T>
Tensor<T> empty_prediction(const Shape& shape) {
  return Tensor<T>(shape, T{0});
}

template <typename T>
std::vector<NamedTensor> params_to_tensors(const ModelParams<T>& params) {
  const auto stored = sizeof(T) == 4 ? StoredType::float32 : StoredType::float64;
  std::vector<NamedTensor> out;
  for (const auto& [name, shape] : parameter_layout(params.config)) {
    out.push_back({name, stored, params.tensors.at(name).template cast<double>()});
  }
  return out;
}

template <typename T>
ModelParams<T> params_from_tensors(const UNetConfig& config, const std::vector<NamedTensor>& tensors) {
  ModelParams<T> params;
  params.config = config;
  const auto layout = parameter_layout(config);
  if (tensors.size() != layout.size()) {
    throw WeightFormatError(WeightErrorKind::shape_mismatch,
                            "checkpoint holds " + std::to_string(tensors.size()) + " tensors, configuration needs " +
                                std::to_string(layout.size()));
  }
  for (const auto& [name, shape] : layout) {
    const auto& t = find_tensor(tensors, name);
    if (t.value.shape() != shape) {
      throw WeightFormatError(WeightErrorKind::shape_mismatch, name + " has shape " + shape_to_string(t.value.shape()) +
                                                                   ", expected " + shape_to_string(shape));
    }
    params.tensors.emplace(name, t.value.template cast<T>());
  }
  return params;
}

template <typename T>
void check_probability_range(const Tensor<T>& map, const char* what) {
  for (T v : map.values()) {
    if (!(v >= T{0} && v <= T{1})) throw std::domain_error(std::string(what) + " has values outside [0,1]");
  }
}

#define TOPODELIN_INSTANTIATE(T)                                                                        \
  template struct ModelParams<T>;                                                                       \
  template ModelParams<T> init_params(const UNetConfig&, std::uint64_t);                                \
  template std::map<std::string, Var<T>> bind_params(Graph<T>&, const ModelParams<T>&);                 \
  template Var<T> unet_forward(const UNetConfig&, const std::map<std::string, Var<T>>&, Var<T>, Var<T>); \
  template Tensor<T> unet_forward(const ModelParams<T>&, const Tensor<T>&, const Tensor<T>&);           \
  template Tensor<T> empty_prediction(const Shape&);                                                    \
  template std::vector<NamedTensor> params_to_tensors(const ModelParams<T>&);                           \
  template ModelParams<T> params_from_tensors(const UNetConfig&, const std::vector<NamedTensor>&);      \
  template void check_probability_range(const Tensor<T>&, const char*);

TOPODELIN_INSTANTIATE(float)
TOPODELIN_INSTANTIATE(double)

#undef TOPODELIN_INSTANTIATE

}  // namespace topodelin
