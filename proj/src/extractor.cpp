#include "topodelin/extractor.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <regex>
#include <stdexcept>

namespace topodelin {

namespace {

constexpr double kImageNetMean[3] = {0.485, 0.456, 0.406};
constexpr double kImageNetStd[3] = {0.229, 0.224, 0.225};

double scale_sigma(int s) { return std::pow(std::numbers::sqrt2, s); }

// Zero-mean, unit-L2 kernel from a raw profile and its envelope: the mean is
// removed in proportion to the envelope so the kernel stays compact.
std::vector<double> balance(std::vector<double> raw, const std::vector<double>& envelope) {
  double s = 0, e = 0;
  for (std::size_t i = 0; i < raw.size(); ++i) {
    s += raw[i];
    e += envelope[i];
  }
  for (std::size_t i = 0; i < raw.size(); ++i) raw[i] -= envelope[i] * (s / e);
  double n = 0;
  for (double v : raw) n += v * v;
  n = std::sqrt(n);
  for (double& v : raw) v /= n;
  return raw;
}

// Bright ridge along direction theta (0 = horizontal): Gaussian along the
// line, Mexican-hat profile across it.
std::vector<double> ridge_kernel(double theta, double sigma, int radius) {
  const int k = 2 * radius + 1;
  std::vector<double> raw(k * k), env(k * k);
  const double c = std::cos(theta), s = std::sin(theta);
  const double along_sigma = 2.0 * sigma;
  for (int y = -radius; y <= radius; ++y)
    for (int x = -radius; x <= radius; ++x) {
      const double u = x * c + y * s;
      const double v = -x * s + y * c;
      const double e = std::exp(-0.5 * (u * u) / (along_sigma * along_sigma) - 0.5 * (v * v) / (sigma * sigma));
      const auto i = static_cast<std::size_t>((y + radius) * k + (x + radius));
      env[i] = e;
      raw[i] = (1.0 - v * v / (sigma * sigma)) * e;
    }
  return balance(std::move(raw), env);
}

// Bright blob: difference of Gaussians with a 1.6 surround ratio.
std::vector<double> center_surround_kernel(double sigma, int radius) {
  const int k = 2 * radius + 1;
  const double outer = 1.6 * sigma;
  std::vector<double> raw(k * k), env(k * k);
  for (int y = -radius; y <= radius; ++y)
    for (int x = -radius; x <= radius; ++x) {
      const double r2 = x * x + y * y;
      const double gi = std::exp(-0.5 * r2 / (sigma * sigma)) / (sigma * sigma);
      const double go = std::exp(-0.5 * r2 / (outer * outer)) / (outer * outer);
      const auto i = static_cast<std::size_t>((y + radius) * k + (x + radius));
      raw[i] = gi - go;
      env[i] = go;
    }
  return balance(std::move(raw), env);
}

struct ChannelSpec {
  bool ridge;
  double theta;
  double sigma;
};

std::vector<ChannelSpec> analytic_channels(int orientations, int scales) {
  std::vector<ChannelSpec> specs;
  for (int s = 0; s < scales; ++s)
    for (int o = 0; o < orientations; ++o)
      specs.push_back({true, std::numbers::pi * o / orientations, scale_sigma(s)});
  for (int s = 0; s < scales; ++s) specs.push_back({false, 0.0, scale_sigma(s)});
  return specs;
}

std::vector<double> channel_kernel(const ChannelSpec& spec, double sigma, int radius) {
  return spec.ridge ? ridge_kernel(spec.theta, sigma, radius) : center_surround_kernel(sigma, radius);
}

std::string layer_prefix(const std::string& tag, const std::string& layer) {
  return "extractor." + tag + "." + layer;
}

}  // namespace

std::vector<std::string> default_layers(ExtractorBackend backend) {
  if (backend == ExtractorBackend::analytic_bank) return {"level1", "level2", "level3"};
  return {"conv1_2", "conv2_2", "conv3_4"};
}

Extractor Extractor::analytic(int orientations, int scales) {
  if (orientations < 4) throw std::invalid_argument("analytic extractor needs at least 4 orientations");
  if (scales < 1) throw std::invalid_argument("analytic extractor needs at least 1 scale");
  const auto specs = analytic_channels(orientations, scales);
  const std::size_t c = specs.size();

  Extractor ex;
  ex.adapter_ = InputAdapter::pass_through;
  ex.tag_ = "analytic";

  // Level 1: every channel filters the image at its own scale.
  const int radius1 = static_cast<int>(std::ceil(3.0 * scale_sigma(scales - 1)));
  const std::size_t k1 = 2 * radius1 + 1;
  Tensor<double> first({c, 1, k1, k1});
  for (std::size_t ch = 0; ch < c; ++ch) {
    const auto kern = channel_kernel(specs[ch], specs[ch].sigma, radius1);
    std::copy(kern.begin(), kern.end(), first.data().begin() + ch * k1 * k1);
  }
  ex.layers_.push_back({"level1", std::move(first), {}, false, false, true});

  // Levels 2 and 3: after pooling, each channel re-applies its own filter type
  // at unit scale to the pooled response of the same channel, aggregating
  // collinear ridge evidence and isolated-blob evidence over larger windows.
  const int radius2 = 3;
  const std::size_t k2 = 2 * radius2 + 1;
  for (const char* name : {"level2", "level3"}) {
    Tensor<double> kernel({c, c, k2, k2});
    for (std::size_t ch = 0; ch < c; ++ch) {
      const auto kern = channel_kernel(specs[ch], 1.0, radius2);
      std::copy(kern.begin(), kern.end(), kernel.data().begin() + (ch * c + ch) * k2 * k2);
    }
    ex.layers_.push_back({name, std::move(kernel), {}, false, true, true});
  }
  return ex;
}

Extractor Extractor::from_tensors(const std::vector<NamedTensor>& tensors, InputAdapter adapter) {
  static const std::regex pattern(R"(conv(\d+)_(\d+)\.(weight|bias))");
  struct Entry {
    int block, index;
    const NamedTensor* weight = nullptr;
    const NamedTensor* bias = nullptr;
  };
  std::vector<Entry> entries;
  for (const auto& t : tensors) {
    std::smatch m;
    if (!std::regex_match(t.name, m, pattern)) {
      throw WeightFormatError(WeightErrorKind::shape_mismatch, "unexpected tensor name " + t.name);
    }
    const int block = std::stoi(m[1]), index = std::stoi(m[2]);
    auto it = std::find_if(entries.begin(), entries.end(),
                           [&](const Entry& e) { return e.block == block && e.index == index; });
    if (it == entries.end()) {
      entries.push_back({block, index});
      it = entries.end() - 1;
    }
    (m[3] == "weight" ? it->weight : it->bias) = &t;
  }
  if (entries.empty()) throw WeightFormatError(WeightErrorKind::shape_mismatch, "no conv layers in weight file");
  std::sort(entries.begin(), entries.end(),
            [](const Entry& a, const Entry& b) { return std::tie(a.block, a.index) < std::tie(b.block, b.index); });

  Extractor ex;
  ex.adapter_ = adapter;
  ex.tag_ = "weights";
  ex.backend_ = ExtractorBackend::loaded_weights;
  std::size_t in_channels = adapter == InputAdapter::replicate_rgb ? 3 : 1;
  int previous_block = entries.front().block;
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const auto& e = entries[i];
    const std::string name = "conv" + std::to_string(e.block) + "_" + std::to_string(e.index);
    if (!e.weight) throw WeightFormatError(WeightErrorKind::shape_mismatch, name + " has no weight tensor");
    const auto& ks = e.weight->value.shape();
    if (ks.size() != 4 || ks[2] != ks[3] || ks[2] % 2 == 0) {
      throw WeightFormatError(WeightErrorKind::shape_mismatch,
                              name + ".weight must be (out, in, k, k) with odd k, got " + shape_to_string(ks));
    }
    if (ks[1] != in_channels) {
      throw WeightFormatError(WeightErrorKind::shape_mismatch,
                              name + ".weight expects " + std::to_string(ks[1]) + " input channels but the stack provides " +
                                  std::to_string(in_channels));
    }
    if (e.bias && e.bias->value.shape() != Shape{ks[0]}) {
      throw WeightFormatError(WeightErrorKind::shape_mismatch,
                              name + ".bias has shape " + shape_to_string(e.bias->value.shape()));
    }
    ExtractorLayer layer;
    layer.name = name;
    layer.kernel = e.weight->value;
    if (e.bias) {
      layer.bias = e.bias->value;
      layer.has_bias = true;
    }
    layer.pool_before = i > 0 && e.block != previous_block;
    layer.replicate_padding = false;
    previous_block = e.block;
    in_channels = ks[0];
    ex.layers_.push_back(std::move(layer));
  }
  return ex;
}

Extractor Extractor::load(const std::filesystem::path& weight_file, InputAdapter adapter) {
  return from_tensors(load_weights(weight_file), adapter);
}

Extractor Extractor::from_config(const ExtractorConfig& config) {
  Extractor ex = config.backend == ExtractorBackend::analytic_bank
                     ? analytic(config.orientations, config.scales)
                     : load(config.weight_file, config.input_adapter);
  const auto selected = config.selected_layers.empty() ? default_layers(config.backend) : config.selected_layers;
  for (const auto& name : selected) {
    if (!ex.has_layer(name)) throw std::invalid_argument("extractor has no layer named " + name);
  }
  return ex;
}

std::vector<NamedTensor> Extractor::to_tensors() const {
  std::vector<NamedTensor> out;
  for (const auto& l : layers_) {
    out.push_back({l.name + ".weight", StoredType::float32, l.kernel});
    if (l.has_bias) out.push_back({l.name + ".bias", StoredType::float32, l.bias});
  }
  return out;
}

const ExtractorLayer& Extractor::layer(const std::string& name) const {
  for (const auto& l : layers_) {
    if (l.name == name) return l;
  }
  throw std::invalid_argument("extractor has no layer named " + name);
}

bool Extractor::has_layer(const std::string& name) const {
  return std::any_of(layers_.begin(), layers_.end(), [&](const auto& l) { return l.name == name; });
}

std::size_t Extractor::channels(const std::string& name) const { return layer(name).kernel.extent(0); }

std::size_t Extractor::downsampling(const std::string& name) const {
  std::size_t factor = 1;
  for (const auto& l : layers_) {
    if (l.pool_before) factor *= 2;
    if (l.name == name) return factor;
  }
  throw std::invalid_argument("extractor has no layer named " + name);
}

std::size_t Extractor::required_divisor(const std::vector<std::string>& selected) const {
  std::size_t d = 1;
  for (const auto& name : selected) d = std::max(d, downsampling(name));
  return d;
}

template <typename T>
FeatureStack<T> Extractor::describe(Var<T> image, const std::vector<std::string>& selected) const {
  if (selected.empty()) throw std::invalid_argument("describe: no layers selected");
  for (const auto& name : selected) layer(name);
  const auto d = image_dims(image.shape());
  if (d.channels != 1) {
    throw ShapeError("describe: expected a single-channel image, got " + shape_to_string(image.shape()));
  }
  for (T v : image.value().values()) {
    if (!(v >= T{0} && v <= T{1})) throw std::domain_error("describe: image values must lie in [0,1]");
  }
  auto& g = *image.graph;

  Var<T> x = image;
  if (adapter_ == InputAdapter::replicate_rgb) {
    std::vector<Var<T>> rgb;
    for (int c = 0; c < 3; ++c) {
      rgb.push_back(affine(image, static_cast<T>(1.0 / kImageNetStd[c]),
                           static_cast<T>(-kImageNetMean[c] / kImageNetStd[c])));
    }
    x = concat_channels(rgb);
  }

  const auto frozen = [&](const std::string& name, const Tensor<double>& value) {
    if (auto existing = g.find_parameter(name)) return *existing;
    return g.parameter(name, value.cast<T>(), /*frozen=*/true);
  };

  FeatureStack<T> stack;
  std::size_t factor = 1;
  for (const auto& l : layers_) {
    if (stack.size() == selected.size()) break;
    if (l.pool_before) {
      x = maxpool2x2(x);
      factor *= 2;
    }
    const std::size_t pad = l.kernel.extent(2) / 2;
    const auto kernel = frozen(layer_prefix(tag_, l.name) + ".weight", l.kernel);
    x = l.replicate_padding ? conv2d(pad_replicate(x, pad), kernel, 1, 0) : conv2d(x, kernel, 1, pad);
    if (l.has_bias) x = bias_add(x, frozen(layer_prefix(tag_, l.name) + ".bias", l.bias));
    x = relu(x);
    if (std::find(selected.begin(), selected.end(), l.name) != selected.end()) {
      stack.push_back({l.name, factor, x});
    }
  }
  // Keep the caller's ordering.
  FeatureStack<T> ordered;
  for (const auto& name : selected) {
    for (const auto& f : stack) {
      if (f.name == name) ordered.push_back(f);
    }
  }
  return ordered;
}

std::vector<std::pair<std::string, Tensor<double>>> Extractor::describe_values(
    const Tensor<double>& image, const std::vector<std::string>& selected) const {
  Graph<double> g;
  const auto stack = describe(g.constant(image), selected);
  std::vector<std::pair<std::string, Tensor<double>>> out;
  for (const auto& f : stack) out.emplace_back(f.name, f.map.value());
  return out;
}

template FeatureStack<float> Extractor::describe(Var<float>, const std::vector<std::string>&) const;
template FeatureStack<double> Extractor::describe(Var<double>, const std::vector<std::string>&) const;

}  // namespace topodelin
