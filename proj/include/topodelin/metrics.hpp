#pragma once

#include <cstdint>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <vector>

#include "topodelin/image.hpp"

namespace topodelin {

/// Raised when a metric is undefined for its input (e.g. gt without foreground).
class MetricError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Skeleton pixels with 8-connected edges (weight 1 axial, √2 diagonal).
struct SkeletonGraph {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::size_t> pixels;     // linear indices y * width + x, ascending
  std::vector<std::int32_t> component; // component id per entry of `pixels`
  std::vector<std::size_t> component_sizes;
  Grid<std::int32_t> index;            // position in `pixels`, -1 off the skeleton

  std::size_t size() const { return pixels.size(); }
  bool empty() const { return pixels.empty(); }
  Mask mask() const;
  /// Neighbours of vertex v as (vertex, edge length) pairs.
  std::vector<std::pair<std::size_t, double>> neighbors(std::size_t v) const;
};

/// Guo-Hall two-subiteration thinning; 8-connected, one pixel wide.
Mask thin(const Mask& binary);
/// Graph over the pixels of an already thin mask.
SkeletonGraph skeleton_graph(const Mask& skeleton);
SkeletonGraph skeletonize(const Mask& binary);

/// Geodesic distances from `source` to every vertex (infinity when unreachable).
std::vector<double> geodesic_distances(const SkeletonGraph& g, std::size_t source);
double geodesic_distance(const SkeletonGraph& g, std::size_t from, std::size_t to);

/// Exact squared Euclidean distance to the nearest foreground pixel of `mask`;
/// infinity everywhere when the mask is empty.
Grid<double> squared_distance_transform(const Mask& mask);

struct CenterlineScores {
  double correctness = 0;
  double completeness = 0;
  double quality = 0;
  std::size_t matched_pred = 0;
  std::size_t pred_pixels = 0;
  std::size_t matched_gt = 0;
  std::size_t gt_pixels = 0;
};

/// Relaxed precision/recall/IoU between two skeleton masks at tolerance rho.
CenterlineScores centerline_scores(const Mask& pred_skeleton, const Mask& gt_skeleton, double rho);
CenterlineScores centerline_from_counts(std::size_t matched_pred, std::size_t pred_pixels, std::size_t matched_gt,
                                        std::size_t gt_pixels);

struct PathConfig {
  std::size_t samples = 200;
  double tolerance = 0.10;
  double rho_match = 2.0;
  std::uint64_t seed = 0;
};

struct PathTopology {
  double correct = 0;
  double infeasible = 0;
  double too_long_short = 0;
  std::size_t n_correct = 0;
  std::size_t n_infeasible = 0;
  std::size_t n_too_long_short = 0;
  /// Set when the prediction has no component with at least two pixels.
  bool empty_prediction = false;
};

enum class PathOutcome { correct, infeasible, too_long_short };

/// Classifies a single predicted path between skeleton vertices a and b.
PathOutcome classify_path(const SkeletonGraph& pred, const SkeletonGraph& gt, std::size_t a, std::size_t b,
                          const PathConfig& config);
PathTopology path_topology(const SkeletonGraph& pred, const SkeletonGraph& gt, const PathConfig& config = {});

/// Precision and recall at the 256 thresholds j/255; a pixel is positive when p >= threshold.
struct ThresholdSweep {
  std::vector<double> thresholds;
  std::vector<std::size_t> true_positives;
  std::vector<std::size_t> predicted_positives;
  std::size_t gt_positives = 0;

  double precision(std::size_t j) const;
  double recall(std::size_t j) const;
  void merge(const ThresholdSweep& other);
};

ThresholdSweep sweep_thresholds(const Image& prob, const Mask& gt);
double pr_breakeven(const ThresholdSweep& sweep);
double f1_best(const ThresholdSweep& sweep);
double pr_breakeven(const Image& prob, const Mask& gt);
double f1_best(const Image& prob, const Mask& gt);

/// Positive cell ids for the 4-connected components of gt background;
/// gt foreground (membrane) pixels get label 0.
Labels cell_labels(const Mask& gt);
/// 4-connected components of pixels below `threshold`, ids from 1; the rest 0.
Labels segment_cells(const Image& membrane_prob, double threshold);

struct RandCounts {
  double joint = 0;     // Σ n_ij²
  double pred_sq = 0;   // Σ s_i²
  double gt_sq = 0;     // Σ t_j²
  double fscore() const { return 2 * joint / (pred_sq + gt_sq); }
};

/// Pair counts restricted to gt cells; membrane-labelled pixels of the
/// prediction inside a gt cell count as singleton segments.
RandCounts rand_counts(const Labels& pred_segments, const Labels& gt_cells);
double rand_fscore_foreground(const Image& membrane_prob, const Labels& gt_cells, double threshold);

struct EvalConfig {
  double rho = 2.0;
  double rho_match = 2.0;
  std::size_t path_samples = 200;
  double path_tolerance = 0.10;
  double threshold = 0.5;
  std::uint64_t seed = 0;
};

struct MetricReport {
  std::string id;
  double pr_breakeven = 0;
  double f1 = 0;
  double correctness = 0;
  double completeness = 0;
  double quality = 0;
  double paths_correct = 0;
  double paths_infeasible = 0;
  double paths_too_long_short = 0;
  double rand_fscore = 0;
  double threshold = 0;
  double rho = 0;
  bool path_warning = false;

  // Raw counts, kept so images can be pooled.
  ThresholdSweep sweep;
  CenterlineScores centerline;
  PathTopology paths;
  RandCounts rand;
};

MetricReport evaluate(const std::string& id, const Image& prob, const Mask& gt, const EvalConfig& config);
/// Per-column mean over images.
MetricReport mean_report(const std::vector<MetricReport>& reports);
/// Scores recomputed from counts summed over images.
MetricReport pooled_report(const std::vector<MetricReport>& reports);

void write_report_header(std::ostream& os);
void write_report_row(std::ostream& os, const MetricReport& r);
/// Header, one row per image, then "mean" and "pooled" rows.
void write_report(std::ostream& os, const std::vector<MetricReport>& reports);

/// Quality at the given threshold averaged over images.
double mean_quality(const std::vector<Image>& probs, const std::vector<Mask>& gts, double threshold, double rho);

}  // namespace topodelin
