#include "topodelin/config.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <sstream>

namespace topodelin {

namespace {

const std::vector<std::pair<std::string, std::string>>& defaults() {
  static const std::vector<std::pair<std::string, std::string>> table = {
      {"synth.n", "100"},
      {"synth.canvas", "64"},
      {"synth.strokes_min", "2"},
      {"synth.strokes_max", "4"},
      {"synth.segments_min", "2"},
      {"synth.segments_max", "3"},
      {"synth.segment_length_min", "14"},
      {"synth.segment_length_max", "26"},
      {"synth.width_min", "1.5"},
      {"synth.width_max", "3"},
      {"synth.intensity_min", "0.45"},
      {"synth.intensity_max", "0.75"},
      {"synth.gap_probability", "1"},
      {"synth.gap_length_min", "4"},
      {"synth.gap_length_max", "8"},
      {"synth.distractors_min", "2"},
      {"synth.distractors_max", "8"},
      {"synth.distractor_radius_min", "1"},
      {"synth.distractor_radius_max", "2.5"},
      {"synth.background", "0.25"},
      {"synth.texture", "0.1"},
      {"synth.noise", "0.15"},
      {"synth.foreground_min", "0.04"},
      {"synth.foreground_max", "0.3"},
      {"synth.seed", "1"},
      {"model.depth", "3"},
      {"model.base_channels", "8"},
      {"model.convs_per_level", "2"},
      {"extractor.backend", "analytic"},
      {"extractor.weights", ""},
      {"extractor.adapter", "replicate_rgb"},
      {"extractor.orientations", "4"},
      {"extractor.scales", "3"},
      {"loss.mu", "0.1"},
      {"loss.reduction", "mean"},
      {"loss.epsilon", "1e-7"},
      {"loss.layers", ""},
      {"loss.normalize_layers", "false"},
      {"refine.K", "3"},
      {"refine.schedule", ""},
      {"train.learning_rate", "1e-4"},
      {"train.beta1", "0.9"},
      {"train.beta2", "0.999"},
      {"train.adam_epsilon", "1e-8"},
      {"train.batch_size", "8"},
      {"train.epochs", "10"},
      {"train.patch_size", "64"},
      {"train.seed", "1"},
      {"train.augment", "true"},
      {"train.elastic", "false"},
      {"train.elastic_spacing", "16"},
      {"train.elastic_std", "2"},
      {"train.validation_fraction", "0.1"},
      {"train.precision", "single"},
      {"train.rho", "2"},
      {"train.thresholds", "0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9"},
      {"eval.rho", "2"},
      {"eval.rho_match", "auto"},
      {"eval.path_samples", "200"},
      {"eval.path_tolerance", "0.1"},
      {"eval.threshold", "auto"},
      {"eval.seed", "0"},
  };
  return table;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, sep)) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

double parse_number(const std::string& key, const std::string& text) {
  double v = 0;
  const auto* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, v);
  if (ec != std::errc() || ptr != end) throw ConfigError("config: " + key + " expects a number, got '" + text + "'");
  return v;
}

std::size_t parse_count(const std::string& key, const std::string& text) {
  std::size_t v = 0;
  const auto* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, v);
  if (ec != std::errc() || ptr != end) {
    throw ConfigError("config: " + key + " expects a non-negative integer, got '" + text + "'");
  }
  return v;
}

}  // namespace

RunConfig::RunConfig() {
  for (const auto& [k, v] : defaults()) values_[k] = v;
}

bool RunConfig::known(const std::string& key) {
  const auto& t = defaults();
  return std::any_of(t.begin(), t.end(), [&](const auto& kv) { return kv.first == key; });
}

std::vector<std::string> RunConfig::keys() {
  std::vector<std::string> out;
  for (const auto& [k, v] : defaults()) out.push_back(k);
  std::sort(out.begin(), out.end());
  return out;
}

RunConfig RunConfig::parse(const std::string& text, const std::string& origin) {
  RunConfig c;
  std::stringstream ss(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(ss, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(origin + ":" + std::to_string(lineno) + ": expected 'key = value'");
    }
    const auto key = trim(line.substr(0, eq));
    try {
      c.set(key, trim(line.substr(eq + 1)));
    } catch (const ConfigError& e) {
      throw ConfigError(origin + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return c;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot read config file " + path.string());
  std::stringstream ss;
  ss << f.rdbuf();
  return parse(ss.str(), path.string());
}

void RunConfig::set(const std::string& key, const std::string& value) {
  if (!known(key)) throw ConfigError("unknown config key '" + key + "'");
  values_[key] = value;
}

void RunConfig::apply(const std::vector<std::string>& overrides) {
  for (const auto& o : overrides) {
    const auto eq = o.find('=');
    if (eq == std::string::npos) throw ConfigError("override '" + o + "' is not key=value");
    set(trim(o.substr(0, eq)), trim(o.substr(eq + 1)));
  }
}

const std::string& RunConfig::get(const std::string& key) const {
  const auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("unknown config key '" + key + "'");
  return it->second;
}

std::string RunConfig::to_text() const {
  std::string out;
  for (const auto& [k, v] : values_) out += k + " = " + v + "\n";
  return out;
}

double RunConfig::number(const std::string& key) const { return parse_number(key, get(key)); }
std::size_t RunConfig::count(const std::string& key) const { return parse_count(key, get(key)); }

bool RunConfig::flag(const std::string& key) const {
  const auto& v = get(key);
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError("config: " + key + " expects true/false, got '" + v + "'");
}

SynthConfig RunConfig::synth() const {
  SynthConfig c;
  c.canvas = count("synth.canvas");
  c.strokes_min = count("synth.strokes_min");
  c.strokes_max = count("synth.strokes_max");
  c.segments_min = count("synth.segments_min");
  c.segments_max = count("synth.segments_max");
  c.segment_length_min = number("synth.segment_length_min");
  c.segment_length_max = number("synth.segment_length_max");
  c.width_min = number("synth.width_min");
  c.width_max = number("synth.width_max");
  c.stroke_intensity_min = number("synth.intensity_min");
  c.stroke_intensity_max = number("synth.intensity_max");
  c.gap_probability = number("synth.gap_probability");
  c.gap_length_min = number("synth.gap_length_min");
  c.gap_length_max = number("synth.gap_length_max");
  c.distractors_min = count("synth.distractors_min");
  c.distractors_max = count("synth.distractors_max");
  c.distractor_radius_min = number("synth.distractor_radius_min");
  c.distractor_radius_max = number("synth.distractor_radius_max");
  c.background_level = number("synth.background");
  c.texture_amplitude = number("synth.texture");
  c.noise_std = number("synth.noise");
  c.foreground_min = number("synth.foreground_min");
  c.foreground_max = number("synth.foreground_max");
  c.seed = count("synth.seed");
  try {
    c.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  return c;
}

std::size_t RunConfig::synth_count() const { return count("synth.n"); }

UNetConfig RunConfig::model() const {
  UNetConfig c;
  c.depth = count("model.depth");
  c.base_channels = count("model.base_channels");
  c.convs_per_level = count("model.convs_per_level");
  try {
    c.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  return c;
}

ExtractorConfig RunConfig::extractor() const {
  ExtractorConfig c;
  const auto& backend = get("extractor.backend");
  if (backend == "analytic") {
    c.backend = ExtractorBackend::analytic_bank;
  } else if (backend == "vgg" || backend == "loaded") {
    c.backend = ExtractorBackend::loaded_weights;
    if (get("extractor.weights").empty()) throw ConfigError("extractor.backend = " + backend + " needs extractor.weights");
  } else {
    throw ConfigError("extractor.backend must be 'analytic' or 'vgg', got '" + backend + "'");
  }
  c.weight_file = get("extractor.weights");
  const auto& adapter = get("extractor.adapter");
  if (adapter == "replicate_rgb") {
    c.input_adapter = InputAdapter::replicate_rgb;
  } else if (adapter == "pass_through") {
    c.input_adapter = InputAdapter::pass_through;
  } else {
    throw ConfigError("extractor.adapter must be 'replicate_rgb' or 'pass_through'");
  }
  c.orientations = static_cast<int>(count("extractor.orientations"));
  c.scales = static_cast<int>(count("extractor.scales"));
  c.selected_layers = split(get("loss.layers"), ',');
  return c;
}

LossConfig RunConfig::loss() const {
  LossConfig c;
  c.mu = number("loss.mu");
  const auto& r = get("loss.reduction");
  if (r == "mean") {
    c.reduction = Reduction::mean;
  } else if (r == "sum") {
    c.reduction = Reduction::sum;
  } else {
    throw ConfigError("loss.reduction must be 'mean' or 'sum'");
  }
  c.epsilon = number("loss.epsilon");
  c.layers = split(get("loss.layers"), ',');
  c.normalize_layers = flag("loss.normalize_layers");
  try {
    c.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  return c;
}

RefinementConfig RunConfig::refinement() const {
  const auto K = count("refine.K");
  const auto& text = get("refine.schedule");
  RefinementConfig r;
  if (text.empty()) {
    r = RefinementConfig::incremental(K, count("train.epochs"));
  } else {
    r.K = K;
    for (const auto& item : split(text, ',')) {
      const auto colon = item.find(':');
      if (colon == std::string::npos) throw ConfigError("refine.schedule entries must be K:epochs, got '" + item + "'");
      r.schedule.push_back({parse_count("refine.schedule", trim(item.substr(0, colon))),
                            parse_count("refine.schedule", trim(item.substr(colon + 1)))});
    }
  }
  try {
    r.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  return r;
}

TrainConfig RunConfig::train() const {
  TrainConfig c;
  c.adam.learning_rate = number("train.learning_rate");
  c.adam.beta1 = number("train.beta1");
  c.adam.beta2 = number("train.beta2");
  c.adam.epsilon = number("train.adam_epsilon");
  c.batch_size = count("train.batch_size");
  c.patch_size = count("train.patch_size");
  c.seed = count("train.seed");
  c.augment = flag("train.augment");
  c.elastic = flag("train.elastic");
  c.elastic_config.spacing = count("train.elastic_spacing");
  c.elastic_config.displacement_std = number("train.elastic_std");
  c.loss = loss();
  c.rho = number("train.rho");
  c.thresholds.clear();
  for (const auto& t : split(get("train.thresholds"), ',')) c.thresholds.push_back(parse_number("train.thresholds", t));
  const auto& p = get("train.precision");
  if (p == "single") {
    c.precision = Precision::single;
  } else if (p == "double") {
    c.precision = Precision::double_;
  } else {
    throw ConfigError("train.precision must be 'single' or 'double'");
  }
  try {
    c.validate(model());
  } catch (const ConfigError&) {
    throw;
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  return c;
}

double RunConfig::validation_fraction() const {
  const double f = number("train.validation_fraction");
  if (!(f > 0 && f < 1)) throw ConfigError("train.validation_fraction must lie in (0,1)");
  return f;
}

EvalConfig RunConfig::eval() const {
  EvalConfig c;
  c.rho = number("eval.rho");
  c.rho_match = get("eval.rho_match") == "auto" ? c.rho : number("eval.rho_match");
  c.path_samples = count("eval.path_samples");
  c.path_tolerance = number("eval.path_tolerance");
  c.seed = count("eval.seed");
  if (const auto t = eval_threshold()) c.threshold = *t;
  if (!(c.rho >= 0) || !(c.rho_match >= 0)) throw ConfigError("eval.rho and eval.rho_match must be >= 0");
  if (c.path_samples == 0) throw ConfigError("eval.path_samples must be positive");
  return c;
}

std::optional<double> RunConfig::eval_threshold() const {
  const auto& v = get("eval.threshold");
  if (v == "auto") return std::nullopt;
  const double t = parse_number("eval.threshold", v);
  if (!(t > 0 && t < 1)) throw ConfigError("eval.threshold must lie in (0,1)");
  return t;
}

CheckpointInfo read_sidecar(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw DataError("missing checkpoint sidecar " + path.string());
  std::string config_text, line;
  CheckpointInfo info;
  while (std::getline(f, line)) {
    const auto t = trim(line);
    if (t.rfind("checkpoint.", 0) != 0) {
      config_text += line + "\n";
      continue;
    }
    const auto eq = t.find('=');
    if (eq == std::string::npos) throw ConfigError(path.string() + ": malformed line '" + t + "'");
    const auto key = trim(t.substr(0, eq)), value = trim(t.substr(eq + 1));
    if (key == "checkpoint.epoch") {
      info.epoch = parse_count(key, value);
    } else if (key == "checkpoint.K") {
      info.K = parse_count(key, value);
    } else if (key == "checkpoint.threshold") {
      info.threshold = parse_number(key, value);
    } else if (key == "checkpoint.val_quality") {
      info.val_quality = parse_number(key, value);
    } else {
      throw ConfigError(path.string() + ": unknown key '" + key + "'");
    }
  }
  info.config = RunConfig::parse(config_text, path.string());
  return info;
}

}  // namespace topodelin
