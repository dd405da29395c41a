#include "topodelin/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <random>

#include "topodelin/metrics.hpp"

namespace topodelin {

void RefinementConfig::validate() const {
  if (K < 1) throw std::invalid_argument("refinement: K must be at least 1");
  if (schedule.empty()) throw std::invalid_argument("refinement: schedule is empty");
  for (std::size_t i = 0; i < schedule.size(); ++i) {
    if (schedule[i].K < 1) throw std::invalid_argument("refinement: schedule K values must be at least 1");
    if (schedule[i].epochs < 1) throw std::invalid_argument("refinement: every phase needs at least one epoch");
    if (i && schedule[i].K < schedule[i - 1].K) throw std::invalid_argument("refinement: schedule K must not decrease");
  }
  if (schedule.back().K != K) throw std::invalid_argument("refinement: schedule must end at K");
}

RefinementConfig RefinementConfig::incremental(std::size_t K, std::size_t epochs) {
  RefinementConfig r;
  r.K = K;
  for (std::size_t k = 1; k <= K; ++k) r.schedule.push_back({k, epochs});
  return r;
}

std::size_t RefinementConfig::total_epochs() const {
  std::size_t n = 0;
  for (const auto& p : schedule) n += p.epochs;
  return n;
}

void AdamConfig::validate() const {
  if (!(learning_rate > 0)) throw std::invalid_argument("adam: learning rate must be positive");
  if (!(beta1 >= 0 && beta1 < 1) || !(beta2 >= 0 && beta2 < 1)) {
    throw std::invalid_argument("adam: betas must lie in [0,1)");
  }
  if (!(epsilon > 0)) throw std::invalid_argument("adam: epsilon must be positive");
}

template <typename T>
void adam_step(ModelParams<T>& params, const GradientMap<T>& grads, AdamState<T>& state, const AdamConfig& config) {
  config.validate();
  for (const auto& [name, g] : grads) {
    if (!params.tensors.count(name)) throw std::invalid_argument("adam_step: gradient for unknown parameter " + name);
  }
  for (const auto& [name, p] : params.tensors) {
    const auto it = grads.find(name);
    if (it == grads.end()) throw std::invalid_argument("adam_step: missing gradient for " + name);
    if (it->second.shape() != p.shape()) throw ShapeError("adam_step: gradient shape mismatch for " + name);
  }
  ++state.t;
  const double c1 = 1.0 - std::pow(config.beta1, static_cast<double>(state.t));
  const double c2 = 1.0 - std::pow(config.beta2, static_cast<double>(state.t));
  const auto b1 = static_cast<T>(config.beta1), b2 = static_cast<T>(config.beta2);
  const auto step = static_cast<T>(config.learning_rate / c1);
  const auto inv_c2 = static_cast<T>(1.0 / c2);
  const auto eps = static_cast<T>(config.epsilon);
  for (auto& [name, p] : params.tensors) {
    const auto& g = grads.at(name);
    auto& m = state.m.try_emplace(name, p.shape(), T{0}).first->second;
    auto& v = state.v.try_emplace(name, p.shape(), T{0}).first->second;
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = b1 * m[i] + (T{1} - b1) * g[i];
      v[i] = b2 * v[i] + (T{1} - b2) * g[i] * g[i];
      p[i] -= step * m[i] / (std::sqrt(v[i] * inv_c2) + eps);
    }
  }
}

void TrainConfig::validate(const UNetConfig& model) const {
  adam.validate();
  loss.validate();
  if (batch_size < 1) throw std::invalid_argument("train: batch size must be at least 1");
  if (patch_size == 0 || patch_size % model.divisor() != 0) {
    throw std::invalid_argument("train: patch size " + std::to_string(patch_size) + " is not divisible by 2^depth = " +
                                std::to_string(model.divisor()));
  }
  if (!(rho >= 0)) throw std::invalid_argument("train: rho must be >= 0");
  if (thresholds.empty()) throw std::invalid_argument("train: no candidate thresholds");
  for (double t : thresholds) {
    if (!(t > 0 && t < 1)) throw std::invalid_argument("train: candidate thresholds must lie in (0,1)");
  }
}

template <typename T>
std::vector<Tensor<T>> predict_refined(const ModelParams<T>& params, const Tensor<T>& image, std::size_t K) {
  std::vector<Tensor<T>> out;
  Tensor<T> previous = empty_prediction<T>(image.shape());
  for (std::size_t k = 0; k < K; ++k) {
    out.push_back(unet_forward(params, image, previous));
    previous = out.back();
  }
  return out;
}

namespace {

template <typename T>
Tensor<T> image_tensor(const Image& image) {
  Tensor<T> t(Shape{1, 1, image.height(), image.width()});
  for (std::size_t i = 0; i < image.size(); ++i) t[i] = static_cast<T>(image[i]);
  return t;
}

template <typename T>
Image tensor_image(const Tensor<T>& t, std::size_t h, std::size_t w) {
  Image out(h, w);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<double>(t[i]);
  return out;
}

}  // namespace

template <typename T>
std::vector<Image> predict_image(const ModelParams<T>& params, const Image& image, std::size_t K) {
  std::vector<Image> out;
  for (const auto& p : predict_refined(params, image_tensor<T>(image), K)) {
    out.push_back(tensor_image(p, image.height(), image.width()));
  }
  return out;
}

std::string format_log_header() { return "epoch\tK\trefinement\tbce\ttopo\tval_quality\n"; }

std::string format_log_line(const EpochLog& e) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%zu\t%zu\t%.10g\t%.10g\t%.10g\t%.6f\n", e.epoch, e.K, e.refinement, e.bce, e.topo,
                e.val_quality);
  return buf;
}

DivergenceError::DivergenceError(std::size_t epoch, const std::string& term, const std::string& detail)
    : NumericalError("training diverged in epoch " + std::to_string(epoch) + ": non-finite " + term +
                     (detail.empty() ? "" : " (" + detail + ")")),
      epoch_(epoch),
      term_(term) {}

std::filesystem::path sidecar_path(const std::filesystem::path& checkpoint) {
  auto p = checkpoint;
  p.replace_extension(".txt");
  return p;
}

template <typename T>
std::pair<double, double> validation_quality(const ModelParams<T>& params, const std::vector<Sample>& validation,
                                             std::size_t K, const std::vector<double>& thresholds, double rho) {
  if (validation.empty()) throw std::invalid_argument("validation_quality: empty validation split");
  std::vector<Image> probs;
  std::vector<Mask> gts;
  for (const auto& s : validation) {
    probs.push_back(predict_image(params, s.image, K).back());
    gts.push_back(s.gt);
  }
  double best_q = -1, best_t = thresholds.front();
  for (double t : thresholds) {
    const double q = mean_quality(probs, gts, t, rho);
    if (q > best_q) {
      best_q = q;
      best_t = t;
    }
  }
  return {best_q, best_t};
}

namespace {

constexpr const char* kStatePrefix = "state.";

std::mt19937_64 epoch_rng(std::uint64_t seed, std::size_t epoch) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(epoch), 0x7e41u};
  return std::mt19937_64(seq);
}

// Training view of one sample for this epoch: random crop, rotation/mirror, optional elastic warp.
Sample prepare(const Sample& s, const TrainConfig& c, std::mt19937_64& rng) {
  Sample out = s;
  const std::size_t h = s.image.height(), w = s.image.width();
  if (h < c.patch_size || w < c.patch_size) {
    throw std::invalid_argument("train: sample " + s.id + " is smaller than the patch size");
  }
  if (h != c.patch_size || w != c.patch_size) {
    const auto y0 = std::uniform_int_distribution<std::size_t>(0, h - c.patch_size)(rng);
    const auto x0 = std::uniform_int_distribution<std::size_t>(0, w - c.patch_size)(rng);
    Sample crop;
    crop.id = s.id;
    crop.image = Image(c.patch_size, c.patch_size);
    crop.gt = Mask(c.patch_size, c.patch_size);
    for (std::size_t y = 0; y < c.patch_size; ++y)
      for (std::size_t x = 0; x < c.patch_size; ++x) {
        crop.image(y, x) = s.image(y0 + y, x0 + x);
        crop.gt(y, x) = s.gt(y0 + y, x0 + x);
      }
    out = std::move(crop);
  }
  if (c.augment) {
    const auto variant = std::uniform_int_distribution<int>(0, 7)(rng);
    if (variant >= 4) {
      out.image = mirror(out.image);
      out.gt = mirror(out.gt);
    }
    for (int r = 0; r < variant % 4; ++r) {
      out.image = rotate90(out.image);
      out.gt = rotate90(out.gt);
    }
  }
  if (c.elastic) out = elastic_deform(out, c.elastic_config, rng());
  return out;
}

template <typename T>
std::pair<Tensor<T>, Tensor<T>> to_batch(const std::vector<Sample>& samples) {
  const std::size_t n = samples.size(), h = samples.front().image.height(), w = samples.front().image.width();
  Tensor<T> image(Shape{n, 1, h, w}), gt(Shape{n, 1, h, w});
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t i = 0; i < h * w; ++i) {
      image[b * h * w + i] = static_cast<T>(samples[b].image[i]);
      gt[b * h * w + i] = static_cast<T>(samples[b].gt[i]);
    }
  return {std::move(image), std::move(gt)};
}

struct StepRecord {
  double refinement = 0, bce = 0, topo = 0;
};

template <typename T>
StepRecord train_step(ModelParams<T>& params, AdamState<T>& adam, const std::vector<Sample>& batch, std::size_t K,
                      const TrainConfig& config, const Extractor& extractor, std::size_t epoch) {
  auto [image, gt] = to_batch<T>(batch);
  Graph<T> g;
  const auto bound = bind_params(g, params);
  const auto x = g.constant(std::move(image));
  StepRecord rec;
  std::vector<Var<T>> partials;
  std::vector<PartialLossRecord> records;
  try {
    const auto target = make_target(g.constant(std::move(gt)), extractor, config.loss);
    auto previous = g.constant(empty_prediction<T>(x.shape()));
    const double z = refinement_normalizer(K);
    for (std::size_t k = 1; k <= K; ++k) {
      const auto pred = unet_forward(params.config, bound, x, previous);
      auto loss = combined_loss(pred, target, extractor, config.loss, k);
      if (!std::isfinite(loss.record.bce)) throw DivergenceError(epoch, "bce", "step " + std::to_string(k));
      if (!std::isfinite(loss.record.topo)) throw DivergenceError(epoch, "topo", "step " + std::to_string(k));
      rec.bce += static_cast<double>(k) / z * loss.record.bce;
      rec.topo += static_cast<double>(k) / z * loss.record.topo;
      partials.push_back(loss.total);
      records.push_back(loss.record);
      previous = pred;
    }
  } catch (const DivergenceError&) {
    throw;
  } catch (const NumericalError& e) {
    throw DivergenceError(epoch, "forward value", e.what());
  }
  const auto total = refinement_loss(partials);
  rec.refinement = refinement_loss(records);
  if (!std::isfinite(rec.refinement)) throw DivergenceError(epoch, "refinement", "");
  GradientMap<T> grads;
  try {
    grads = g.backward(total);
  } catch (const NumericalError& e) {
    throw DivergenceError(epoch, "gradient", e.what());
  }
  for (const auto& [name, grad] : grads) {
    if (!grad.all_finite()) throw DivergenceError(epoch, "gradient", name);
  }
  adam_step(params, grads, adam, config.adam);
  return rec;
}

template <typename T>
void append_params(std::vector<NamedTensor>& out, const std::string& prefix, const std::map<std::string, Tensor<T>>& m) {
  const auto stored = sizeof(T) == 4 ? StoredType::float32 : StoredType::float64;
  for (const auto& [name, t] : m) out.push_back({prefix + name, stored, t.template cast<double>()});
}

template <typename T>
std::map<std::string, Tensor<T>> read_prefixed(const std::vector<NamedTensor>& tensors, const std::string& prefix) {
  std::map<std::string, Tensor<T>> out;
  for (const auto& t : tensors) {
    if (t.name.rfind(prefix, 0) == 0) out.emplace(t.name.substr(prefix.size()), t.value.template cast<T>());
  }
  return out;
}

double read_scalar(const std::vector<NamedTensor>& tensors, const std::string& name) {
  return find_tensor(tensors, kStatePrefix + name).value[0];
}

template <typename T>
void save_state(const std::filesystem::path& path, std::size_t epoch, const ModelParams<T>& params,
                const AdamState<T>& adam, const TrainResult<T>& result) {
  std::vector<NamedTensor> t;
  append_params(t, "param.", params.tensors);
  append_params(t, "best.", result.best.tensors);
  append_params(t, "adam.m.", adam.m);
  append_params(t, "adam.v.", adam.v);
  const auto scalar = [&](const std::string& name, double v) {
    t.push_back({kStatePrefix + name, StoredType::float64, Tensor<double>::scalar(v)});
  };
  scalar("epoch", static_cast<double>(epoch));
  scalar("adam_t", static_cast<double>(adam.t));
  scalar("best_quality", result.best_quality);
  scalar("best_threshold", result.best_threshold);
  scalar("best_epoch", static_cast<double>(result.best_epoch));
  scalar("best_K", static_cast<double>(result.best_K));
  Tensor<double> log(Shape{std::max<std::size_t>(result.log.size(), 1), 7});
  for (std::size_t i = 0; i < result.log.size(); ++i) {
    const auto& e = result.log[i];
    const double row[7] = {static_cast<double>(e.epoch), static_cast<double>(e.K), e.refinement, e.bce, e.topo,
                           e.val_quality, e.val_threshold};
    for (std::size_t j = 0; j < 7; ++j) log[i * 7 + j] = row[j];
  }
  t.push_back({kStatePrefix + std::string("log"), StoredType::float64, log});
  const auto tmp = path.string() + ".tmp";
  save_weights(tmp, t);
  std::filesystem::rename(tmp, path);
}

template <typename T>
std::size_t load_state(const std::filesystem::path& path, const UNetConfig& model, ModelParams<T>& params,
                       AdamState<T>& adam, TrainResult<T>& result) {
  const auto t = load_weights(path);
  params.tensors = read_prefixed<T>(t, "param.");
  result.best.tensors = read_prefixed<T>(t, "best.");
  for (const auto& [name, shape] : parameter_layout(model)) {
    if (!params.tensors.count(name) || params.tensors.at(name).shape() != shape) {
      throw WeightFormatError(WeightErrorKind::shape_mismatch,
                              "resume state does not match the model configuration at " + name);
    }
  }
  adam.m = read_prefixed<T>(t, "adam.m.");
  adam.v = read_prefixed<T>(t, "adam.v.");
  adam.t = static_cast<std::size_t>(read_scalar(t, "adam_t"));
  result.best_quality = read_scalar(t, "best_quality");
  result.best_threshold = read_scalar(t, "best_threshold");
  result.best_epoch = static_cast<std::size_t>(read_scalar(t, "best_epoch"));
  result.best_K = static_cast<std::size_t>(read_scalar(t, "best_K"));
  const auto epoch = static_cast<std::size_t>(read_scalar(t, "epoch"));
  const auto& log = find_tensor(t, kStatePrefix + std::string("log")).value;
  result.log.clear();
  for (std::size_t i = 0; i < epoch; ++i) {
    EpochLog e;
    e.epoch = static_cast<std::size_t>(log[i * 7]);
    e.K = static_cast<std::size_t>(log[i * 7 + 1]);
    e.refinement = log[i * 7 + 2];
    e.bce = log[i * 7 + 3];
    e.topo = log[i * 7 + 4];
    e.val_quality = log[i * 7 + 5];
    e.val_threshold = log[i * 7 + 6];
    result.log.push_back(e);
  }
  return epoch;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw DataError("cannot write " + path.string());
  f << text;
  if (!f) throw DataError("failed writing " + path.string());
}

template <typename T>
void write_checkpoint(const std::filesystem::path& dir, const TrainResult<T>& r, const TrainOptions& options) {
  save_weights(dir / files::kCheckpoint, params_to_tensors(r.best));
  char buf[256];
  std::snprintf(buf, sizeof buf,
                "checkpoint.epoch = %zu\ncheckpoint.K = %zu\ncheckpoint.threshold = %.17g\n"
                "checkpoint.val_quality = %.17g\n",
                r.best_epoch, r.best_K, r.best_threshold, r.best_quality);
  write_text(dir / files::kSidecar, options.sidecar + buf);
}

void write_log(const std::filesystem::path& dir, const std::vector<EpochLog>& log) {
  std::string text = format_log_header();
  for (const auto& e : log) text += format_log_line(e);
  write_text(dir / files::kLog, text);
}

}  // namespace

template <typename T>
TrainResult<T> train(const std::vector<Sample>& train_set, const std::vector<Sample>& validation,
                     const UNetConfig& model, const RefinementConfig& refinement, const TrainConfig& config,
                     const Extractor& extractor, const TrainOptions& options) {
  model.validate();
  refinement.validate();
  config.validate(model);
  if (train_set.empty()) throw std::invalid_argument("train: training set is empty");
  if (validation.empty()) throw std::invalid_argument("train: validation split is empty");
  if (config.loss.mu > 0) {
    const auto layers = config.loss.layers.empty() ? extractor.default_selection() : config.loss.layers;
    const auto d = extractor.required_divisor(layers);
    if (config.patch_size % d != 0) {
      throw std::invalid_argument("train: patch size must be divisible by the extractor divisor " + std::to_string(d));
    }
  }
  for (const auto& s : train_set) s.validate();
  for (const auto& s : validation) s.validate();

  const bool files_on = !options.out_dir.empty();
  if (files_on) std::filesystem::create_directories(options.out_dir);

  TrainResult<T> result;
  ModelParams<T> params = init_params<T>(model, config.seed);
  AdamState<T> adam;
  result.best = params;
  std::size_t done = 0;
  if (options.resume) {
    const auto state = options.out_dir / files::kResumeState;
    if (!files_on || !std::filesystem::exists(state)) {
      throw DataError("cannot resume: no saved state in " + options.out_dir.string());
    }
    done = load_state(state, model, params, adam, result);
  }

  std::vector<std::size_t> phase_of;  // phase index per epoch (0-based epoch)
  for (std::size_t p = 0; p < refinement.schedule.size(); ++p)
    for (std::size_t e = 0; e < refinement.schedule[p].epochs; ++e) phase_of.push_back(p);
  const std::size_t total = phase_of.size();
  std::vector<std::size_t> order(train_set.size());

  for (std::size_t e = done; e < total; ++e) {
    if (options.stop_after && e >= options.stop_after) {
      result.complete = false;
      break;
    }
    const std::size_t epoch = e + 1;
    const std::size_t K = refinement.schedule[phase_of[e]].K;
    // Each phase starts with fresh optimizer moments.
    if (e == 0 || phase_of[e] != phase_of[e - 1]) adam = AdamState<T>{};
    auto rng = epoch_rng(config.seed, epoch);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), rng);

    EpochLog log;
    log.epoch = epoch;
    log.K = K;
    std::size_t batches = 0;
    for (std::size_t b = 0; b < order.size(); b += config.batch_size) {
      std::vector<Sample> batch;
      for (std::size_t i = b; i < std::min(order.size(), b + config.batch_size); ++i) {
        batch.push_back(prepare(train_set[order[i]], config, rng));
      }
      const auto rec = train_step(params, adam, batch, K, config, extractor, epoch);
      log.refinement += rec.refinement;
      log.bce += rec.bce;
      log.topo += rec.topo;
      ++batches;
    }
    log.refinement /= static_cast<double>(batches);
    log.bce /= static_cast<double>(batches);
    log.topo /= static_cast<double>(batches);
    const auto [q, t] = validation_quality(params, validation, K, config.thresholds, config.rho);
    log.val_quality = q;
    log.val_threshold = t;
    result.log.push_back(log);
    if (q > result.best_quality) {
      result.best_quality = q;
      result.best_threshold = t;
      result.best_epoch = epoch;
      result.best_K = K;
      result.best = params;
    }
    if (files_on) {
      write_log(options.out_dir, result.log);
      if (result.best_epoch == epoch) write_checkpoint(options.out_dir, result, options);
      save_state(options.out_dir / files::kResumeState, epoch, params, adam, result);
    }
    if (options.on_epoch) options.on_epoch(log);
  }
  result.best.config = model;
  result.best.seed = config.seed;
  params.config = model;
  result.last = std::move(params);
  if (files_on && result.log.empty()) write_log(options.out_dir, result.log);
  return result;
}

#define TOPODELIN_INSTANTIATE(T)                                                                                   \
  template void adam_step(ModelParams<T>&, const GradientMap<T>&, AdamState<T>&, const AdamConfig&);               \
  template std::vector<Tensor<T>> predict_refined(const ModelParams<T>&, const Tensor<T>&, std::size_t);          \
  template std::vector<Image> predict_image(const ModelParams<T>&, const Image&, std::size_t);                    \
  template std::pair<double, double> validation_quality(const ModelParams<T>&, const std::vector<Sample>&,        \
                                                        std::size_t, const std::vector<double>&, double);         \
  template TrainResult<T> train(const std::vector<Sample>&, const std::vector<Sample>&, const UNetConfig&,        \
                                const RefinementConfig&, const TrainConfig&, const Extractor&, const TrainOptions&);

TOPODELIN_INSTANTIATE(float)
TOPODELIN_INSTANTIATE(double)

#undef TOPODELIN_INSTANTIATE

}  // namespace topodelin
