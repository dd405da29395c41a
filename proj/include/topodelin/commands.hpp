#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "topodelin/config.hpp"

namespace topodelin {

// File-level workflows behind the command-line subcommands. Progress and
// diagnostics go to `log`; nothing here calls exit().

/// Writes `n` synthetic samples as a dataset directory.
void run_synth(const RunConfig& config, const std::filesystem::path& out, std::size_t n, std::ostream& log);

struct TrainRequest {
  std::filesystem::path data;
  /// Validation dataset; empty holds out the tail of `data`.
  std::filesystem::path validation;
  std::filesystem::path out;
  bool resume = false;
  std::size_t stop_after = 0;
};

/// Trains and writes checkpoint.tdlw, checkpoint.txt, train_log.tsv and config.txt into `out`.
void run_train(const RunConfig& config, const TrainRequest& request, std::ostream& log);

struct PredictRequest {
  std::filesystem::path checkpoint;
  std::filesystem::path data;
  std::filesystem::path out;
  /// Refinement steps; the checkpoint's refine.K when unset.
  std::optional<std::size_t> K;
};

/// Writes <out>/predictions/<id>.png (final map) and <id>_k<i>.png for the
/// earlier steps, plus manifest.txt and threshold.txt.
void run_predict(const PredictRequest& request, std::ostream& log);

/// Directory holding the prediction maps inside `pred`: predictions/, then
/// labels/, then `pred` itself.
std::filesystem::path prediction_dir(const std::filesystem::path& pred);

/// Evaluates every id of the gt dataset. The threshold comes from
/// `threshold` when set, else eval.threshold, else <pred>/threshold.txt, else 0.5.
std::vector<MetricReport> run_eval(const RunConfig& config, const std::filesystem::path& pred,
                                   const std::filesystem::path& gt, std::optional<double> threshold);

}  // namespace topodelin
