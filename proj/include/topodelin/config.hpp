#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "topodelin/dataset.hpp"
#include "topodelin/extractor.hpp"
#include "topodelin/losses.hpp"
#include "topodelin/metrics.hpp"
#include "topodelin/trainer.hpp"
#include "topodelin/unet.hpp"

namespace topodelin {

/// Unknown keys, malformed lines or values, missing config files.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Flat `key = value` settings covering every configurable module. Keys are
/// dotted: synth.*, model.*, extractor.*, loss.*, refine.*, train.*, eval.*.
class RunConfig {
 public:
  /// Every known key at its default value.
  RunConfig();

  /// Reads `key = value` lines; `#` starts a comment. Unknown keys are errors.
  static RunConfig load(const std::filesystem::path& path);
  static RunConfig parse(const std::string& text, const std::string& origin = "<string>");

  void set(const std::string& key, const std::string& value);
  /// Applies "key=value" overrides in order.
  void apply(const std::vector<std::string>& overrides);
  const std::string& get(const std::string& key) const;
  static bool known(const std::string& key);
  static std::vector<std::string> keys();

  /// All keys in sorted order, one `key = value` per line.
  std::string to_text() const;

  SynthConfig synth() const;
  std::size_t synth_count() const;
  UNetConfig model() const;
  ExtractorConfig extractor() const;
  LossConfig loss() const;
  RefinementConfig refinement() const;
  TrainConfig train() const;
  double validation_fraction() const;
  EvalConfig eval() const;
  /// Empty when eval.threshold is "auto".
  std::optional<double> eval_threshold() const;

  double number(const std::string& key) const;
  std::size_t count(const std::string& key) const;
  bool flag(const std::string& key) const;

 private:
  std::map<std::string, std::string> values_;
};

/// Extra `checkpoint.*` lines a trainer appends to the sidecar.
struct CheckpointInfo {
  RunConfig config;
  std::size_t epoch = 0;
  std::size_t K = 1;
  double threshold = 0.5;
  double val_quality = 0;
};

CheckpointInfo read_sidecar(const std::filesystem::path& path);

}  // namespace topodelin
