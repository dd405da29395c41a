#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "topodelin/dataset.hpp"
#include "topodelin/extractor.hpp"
#include "topodelin/losses.hpp"
#include "topodelin/unet.hpp"

namespace topodelin {

/// Training phase: K refinement steps for a number of epochs.
struct Phase {
  std::size_t K = 1;
  std::size_t epochs = 1;
};

struct RefinementConfig {
  std::size_t K = 3;
  /// Phases in order; K values non-decreasing and ending at K.
  std::vector<Phase> schedule;

  void validate() const;
  /// K = 1, 2, ..., K with `epochs` each.
  static RefinementConfig incremental(std::size_t K, std::size_t epochs);
  std::size_t total_epochs() const;
};

struct AdamConfig {
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  void validate() const;
};

template <typename T>
struct AdamState {
  std::size_t t = 0;
  std::map<std::string, Tensor<T>> m;
  std::map<std::string, Tensor<T>> v;
};

/// One bias-corrected Adam update. The gradient map must name exactly the
/// parameters in `params`.
template <typename T>
void adam_step(ModelParams<T>& params, const GradientMap<T>& grads, AdamState<T>& state, const AdamConfig& config);

enum class Precision { single, double_ };

struct TrainConfig {
  AdamConfig adam;
  std::size_t batch_size = 8;
  /// Crop size fed to the network; larger samples are cropped at random offsets.
  std::size_t patch_size = 64;
  std::uint64_t seed = 1;
  /// Random rotation/mirror per sample and epoch.
  bool augment = true;
  bool elastic = false;
  ElasticConfig elastic_config;
  LossConfig loss;
  /// Centerline tolerance of the validation quality.
  double rho = 2.0;
  /// Candidate binarization thresholds searched on the validation split.
  std::vector<double> thresholds{0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9};
  Precision precision = Precision::single;

  void validate(const UNetConfig& model) const;
};

/// Returns [ŷ¹..ŷᴷ] for a (N, 1, H, W) image batch, starting from ŷ⁰ = 0;
/// each step sees the previous output unmodified.
template <typename T>
std::vector<Tensor<T>> predict_refined(const ModelParams<T>& params, const Tensor<T>& image, std::size_t K);

/// Per-image refinement chain of a single sample, as probability images.
template <typename T>
std::vector<Image> predict_image(const ModelParams<T>& params, const Image& image, std::size_t K);

struct EpochLog {
  std::size_t epoch = 0;
  std::size_t K = 0;
  double refinement = 0;
  /// Sums over steps of (k/Z) * term, averaged over batches.
  double bce = 0;
  double topo = 0;
  double val_quality = 0;
  double val_threshold = 0;
};

std::string format_log_header();
std::string format_log_line(const EpochLog& e);

/// Raised when a loss becomes non-finite; names the epoch and the term.
class DivergenceError : public NumericalError {
 public:
  DivergenceError(std::size_t epoch, const std::string& term, const std::string& detail);
  std::size_t epoch() const { return epoch_; }
  const std::string& term() const { return term_; }

 private:
  std::size_t epoch_;
  std::string term_;
};

struct TrainOptions {
  /// When set, the log, best checkpoint and resume state are written here.
  std::filesystem::path out_dir;
  /// Plain-text config copied into the checkpoint sidecar.
  std::string sidecar;
  bool resume = false;
  /// Stop after this many epochs in total (0 = run the full schedule).
  std::size_t stop_after = 0;
  std::function<void(const EpochLog&)> on_epoch;
};

template <typename T>
struct TrainResult {
  ModelParams<T> best;
  ModelParams<T> last;
  double best_quality = -1;
  double best_threshold = 0.5;
  std::size_t best_epoch = 0;
  std::size_t best_K = 1;
  std::vector<EpochLog> log;
  /// False when stopped early through TrainOptions::stop_after.
  bool complete = true;
};

/// Mean validation quality for each candidate threshold; returns the best
/// (quality, threshold) pair, lowest threshold on ties.
template <typename T>
std::pair<double, double> validation_quality(const ModelParams<T>& params, const std::vector<Sample>& validation,
                                             std::size_t K, const std::vector<double>& thresholds, double rho);

template <typename T>
TrainResult<T> train(const std::vector<Sample>& train_set, const std::vector<Sample>& validation,
                     const UNetConfig& model, const RefinementConfig& refinement, const TrainConfig& config,
                     const Extractor& extractor, const TrainOptions& options = {});

/// Checkpoint file names inside a training output directory.
namespace files {
inline constexpr const char* kCheckpoint = "checkpoint.tdlw";
inline constexpr const char* kSidecar = "checkpoint.txt";
inline constexpr const char* kResumeState = "last_state.tdlw";
inline constexpr const char* kLog = "train_log.tsv";
}  // namespace files

/// Sidecar path for a checkpoint file (same stem, ".txt").
std::filesystem::path sidecar_path(const std::filesystem::path& checkpoint);

}  // namespace topodelin
