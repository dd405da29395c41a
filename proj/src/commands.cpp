#include "topodelin/commands.hpp"

#include <cmath>
#include <fstream>
#include <ostream>

namespace topodelin {

namespace {

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw DataError("cannot write " + path.string());
  f << text;
  if (!f) throw DataError("failed writing " + path.string());
}

void make_dir(const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw DataError("cannot create directory " + dir.string() + ": " + ec.message());
}

Extractor build_extractor(const RunConfig& config) {
  try {
    return Extractor::from_config(config.extractor());
  } catch (const WeightFormatError&) {
    throw;
  } catch (const ConfigError&) {
    throw;
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
}

template <typename T>
void train_with(const RunConfig& config, const TrainRequest& request, const std::vector<Sample>& train_set,
                const std::vector<Sample>& validation, std::ostream& log) {
  TrainOptions options;
  options.out_dir = request.out;
  options.sidecar = config.to_text();
  options.resume = request.resume;
  options.stop_after = request.stop_after;
  options.on_epoch = [&](const EpochLog& e) { log << format_log_line(e) << std::flush; };
  const auto extractor = config.loss().mu > 0 ? build_extractor(config) : Extractor::analytic();
  log << format_log_header();
  const auto result = train<T>(train_set, validation, config.model(), config.refinement(), config.train(), extractor,
                               options);
  if (!result.complete) {
    log << "stopped after epoch " << result.log.size() << "; continue with --resume\n";
  } else {
    log << "best epoch " << result.best_epoch << " (K " << result.best_K << "), validation quality "
        << result.best_quality << " at threshold " << result.best_threshold << "\n";
  }
}

template <typename T>
void predict_with(const RunConfig& config, const PredictRequest& request, std::size_t K,
                  const std::vector<std::string>& ids, std::ostream& log) {
  const auto params = params_from_tensors<T>(config.model(), load_weights(request.checkpoint));
  const auto dir = request.out / "predictions";
  for (const auto& id : ids) {
    const auto image = read_gray(find_image_file(request.data / "images", id));
    if (image.height() % config.model().divisor() || image.width() % config.model().divisor()) {
      throw DataError("image " + id + " extents are not multiples of " + std::to_string(config.model().divisor()));
    }
    const auto maps = predict_image(params, image, K);
    for (std::size_t k = 0; k + 1 < maps.size(); ++k) {
      write_gray(dir / (id + "_k" + std::to_string(k + 1) + ".png"), maps[k]);
    }
    write_gray(dir / (id + ".png"), maps.empty() ? Image(image.height(), image.width(), 0.0) : maps.back());
  }
  log << "wrote " << ids.size() << " predictions with K = " << K << " to " << dir.string() << "\n";
}

std::string format_threshold(double t) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g\n", t);
  return buf;
}

}  // namespace

void run_synth(const RunConfig& config, const std::filesystem::path& out, std::size_t n, std::ostream& log) {
  if (n < 1) throw ConfigError("synth: --n must be at least 1");
  const auto samples = synth(config.synth(), n);
  make_dir(out);
  save_dataset(out, samples);
  write_text(out / "config.txt", config.to_text());
  log << "wrote " << n << " samples to " << out.string() << "\n";
}

void run_train(const RunConfig& config, const TrainRequest& request, std::ostream& log) {
  auto data = load_dataset(request.data);
  std::vector<Sample> validation;
  if (!request.validation.empty()) {
    validation = load_dataset(request.validation);
  } else {
    if (data.size() < 2) throw DataError("train: need at least two samples to hold out a validation split");
    const auto held = std::clamp<std::size_t>(
        static_cast<std::size_t>(std::lround(config.validation_fraction() * static_cast<double>(data.size()))), 1,
        data.size() - 1);
    validation.assign(data.end() - static_cast<std::ptrdiff_t>(held), data.end());
    data.resize(data.size() - held);
  }
  for (const auto* set : {&data, &validation})
    for (const auto& s : *set) {
      try {
        s.validate();
      } catch (const std::invalid_argument& e) {
        throw DataError(e.what());
      }
    }
  make_dir(request.out);
  write_text(request.out / "config.txt", config.to_text());
  if (config.train().precision == Precision::single) {
    train_with<float>(config, request, data, validation, log);
  } else {
    train_with<double>(config, request, data, validation, log);
  }
}

void run_predict(const PredictRequest& request, std::ostream& log) {
  if (!std::filesystem::exists(request.checkpoint)) {
    throw DataError("missing checkpoint " + request.checkpoint.string());
  }
  const auto info = read_sidecar(sidecar_path(request.checkpoint));
  const auto K = request.K.value_or(info.config.count("refine.K"));
  const auto ids = read_manifest(request.data);
  make_dir(request.out / "predictions");
  if (info.config.train().precision == Precision::single) {
    predict_with<float>(info.config, request, K, ids, log);
  } else {
    predict_with<double>(info.config, request, K, ids, log);
  }
  std::string manifest;
  for (const auto& id : ids) manifest += id + "\n";
  write_text(request.out / "manifest.txt", manifest);
  write_text(request.out / "threshold.txt", format_threshold(info.threshold));
  write_text(request.out / "config.txt", info.config.to_text());
}

std::filesystem::path prediction_dir(const std::filesystem::path& pred) {
  if (std::filesystem::is_directory(pred / "predictions")) return pred / "predictions";
  if (std::filesystem::is_directory(pred / "labels")) return pred / "labels";
  return pred;
}

std::vector<MetricReport> run_eval(const RunConfig& config, const std::filesystem::path& pred,
                                   const std::filesystem::path& gt, std::optional<double> threshold) {
  auto eval = config.eval();
  if (threshold) {
    eval.threshold = *threshold;
  } else if (!config.eval_threshold()) {
    const auto file = pred / "threshold.txt";
    eval.threshold = 0.5;
    if (std::filesystem::exists(file)) {
      std::ifstream f(file);
      if (!(f >> eval.threshold)) throw DataError("malformed " + file.string());
    }
  }
  if (!(eval.threshold > 0 && eval.threshold < 1)) throw ConfigError("evaluation threshold must lie in (0,1)");
  if (!std::filesystem::is_directory(pred)) throw DataError("prediction directory " + pred.string() + " not found");
  const auto dir = prediction_dir(pred);
  std::vector<MetricReport> reports;
  for (const auto& id : read_manifest(gt)) {
    const auto truth = read_mask(find_image_file(gt / "labels", id));
    const auto prob = read_gray(find_image_file(dir, id));
    if (prob.height() != truth.height() || prob.width() != truth.width()) {
      throw DataError("prediction and gt for id '" + id + "' differ in size");
    }
    try {
      reports.push_back(evaluate(id, prob, truth, eval));
    } catch (const MetricError& e) {
      throw DataError("id '" + id + "': " + e.what());
    }
  }
  return reports;
}

}  // namespace topodelin
