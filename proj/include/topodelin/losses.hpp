#pragma once

#include <string>
#include <vector>

#include "topodelin/autograd.hpp"
#include "topodelin/extractor.hpp"

namespace topodelin {

enum class Reduction { sum, mean };

struct LossConfig {
  double mu = 0.1;
  Reduction reduction = Reduction::mean;
  double epsilon = 1e-7;
  /// Layers of the extractor compared by the topology term; empty = backend default.
  std::vector<std::string> layers;
  /// Divide each layer's squared distance by that layer's element count.
  bool normalize_layers = false;

  void validate() const;
};

/// Terms of one partial loss L^k = bce + mu * topo.
struct PartialLossRecord {
  std::size_t k = 0;
  double value = 0;
  double bce = 0;
  double topo = 0;
};

/// Pixel-wise binary cross-entropy. Predictions are clamped to [eps, 1 - eps]
/// before the logarithms; mean reduction divides by the pixel count.
template <typename T>
Var<T> bce_loss(Var<T> pred, Var<T> gt, const LossConfig& config);

/// Sum over selected layers and channels of the squared distance between the
/// extractor's feature maps of gt and pred. Mean reduction divides the total
/// by the prediction's pixel count, like the cross-entropy term.
template <typename T>
Var<T> topo_loss(Var<T> pred, Var<T> gt, const Extractor& extractor, const LossConfig& config);

/// Ground truth with its feature maps computed once, for reuse across the
/// partial losses of one refinement chain.
template <typename T>
struct LossTarget {
  Var<T> gt;
  FeatureStack<T> features;  // empty when mu == 0
};

template <typename T>
LossTarget<T> make_target(Var<T> gt, const Extractor& extractor, const LossConfig& config);

template <typename T>
Var<T> topo_loss(Var<T> pred, const LossTarget<T>& target, const Extractor& extractor, const LossConfig& config);

template <typename T>
struct CombinedLoss {
  Var<T> total;
  Var<T> bce;
  Var<T> topo;
  PartialLossRecord record;
};

/// bce + mu * topo. With mu == 0 the topology term is not evaluated and its
/// record entry is 0.
template <typename T>
CombinedLoss<T> combined_loss(Var<T> pred, Var<T> gt, const Extractor& extractor, const LossConfig& config,
                              std::size_t k = 1);
template <typename T>
CombinedLoss<T> combined_loss(Var<T> pred, const LossTarget<T>& target, const Extractor& extractor,
                              const LossConfig& config, std::size_t k = 1);

/// Normalization Z = K (K + 1) / 2 of the iteration-weighted average.
double refinement_normalizer(std::size_t K);

/// (1/Z) * sum_k k * L^k over records with k = 1..K in order.
double refinement_loss(const std::vector<PartialLossRecord>& records);

/// Differentiable version over the graph nodes of the partial losses, given in
/// order k = 1..K.
template <typename T>
Var<T> refinement_loss(const std::vector<Var<T>>& partial_losses);

/// Throws std::invalid_argument unless every gt value is 0 or 1.
template <typename T>
void check_binary(const Tensor<T>& gt, const char* what);

}  // namespace topodelin
