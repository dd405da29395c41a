#include "topodelin/losses.hpp"

#include <stdexcept>

namespace topodelin {

void LossConfig::validate() const {
  if (!(mu >= 0.0)) throw std::invalid_argument("loss mu must be non-negative");
  if (!(epsilon > 0.0 && epsilon <= 1e-3)) throw std::invalid_argument("loss epsilon must lie in (0, 1e-3]");
}

template <typename T>
void check_binary(const Tensor<T>& gt, const char* what) {
  for (T v : gt.values()) {
    if (v != T{0} && v != T{1}) throw std::invalid_argument(std::string(what) + " must be binary (0/1)");
  }
}

namespace {

template <typename T>
void check_pair(Var<T> pred, Var<T> gt) {
  if (pred.shape() != gt.shape()) {
    throw ShapeError("loss: prediction " + shape_to_string(pred.shape()) + " and ground truth " +
                     shape_to_string(gt.shape()) + " differ in shape");
  }
  check_binary(gt.value(), "ground truth");
}

template <typename T>
std::vector<std::string> selected_layers(const Extractor& extractor, const LossConfig& config) {
  if (!config.layers.empty()) return config.layers;
  return extractor.default_selection();
}

}  // namespace

template <typename T>
Var<T> bce_loss(Var<T> pred, Var<T> gt, const LossConfig& config) {
  config.validate();
  check_pair(pred, gt);
  const T eps = static_cast<T>(config.epsilon);
  auto p = clamp(pred, eps, T{1} - eps);
  auto positive = mul(gt, log(p));
  auto negative = mul(affine(gt, T{-1}, T{1}), log(affine(p, T{-1}, T{1})));
  // Sorted accumulation: equal per-pixel terms give a bit-identical loss in any arrangement.
  auto total = sum_sorted(add(positive, negative));
  const T n = static_cast<T>(pred.value().size());
  return affine(total, config.reduction == Reduction::mean ? T{-1} / n : T{-1}, T{0});
}

template <typename T>
LossTarget<T> make_target(Var<T> gt, const Extractor& extractor, const LossConfig& config) {
  LossTarget<T> target{gt, {}};
  if (config.mu > 0.0) target.features = extractor.describe(gt, selected_layers<T>(extractor, config));
  return target;
}

template <typename T>
Var<T> topo_loss(Var<T> pred, const LossTarget<T>& target, const Extractor& extractor, const LossConfig& config) {
  config.validate();
  check_pair(pred, target.gt);
  const auto layers = selected_layers<T>(extractor, config);
  const auto gt_features = target.features.empty() ? extractor.describe(target.gt, layers) : target.features;
  const auto pred_features = extractor.describe(pred, layers);
  std::vector<Var<T>> terms;
  std::vector<T> weights;
  for (std::size_t n = 0; n < pred_features.size(); ++n) {
    const auto& fp = pred_features[n].map;
    terms.push_back(squared_l2(sub(gt_features[n].map, fp)));
    weights.push_back(config.normalize_layers ? T{1} / static_cast<T>(fp.value().size()) : T{1});
  }
  if (config.reduction == Reduction::mean) {
    const T n = static_cast<T>(pred.value().size());
    for (auto& w : weights) w /= n;
  }
  return weighted_sum(terms, weights);
}

template <typename T>
Var<T> topo_loss(Var<T> pred, Var<T> gt, const Extractor& extractor, const LossConfig& config) {
  return topo_loss(pred, LossTarget<T>{gt, {}}, extractor, config);
}

template <typename T>
CombinedLoss<T> combined_loss(Var<T> pred, const LossTarget<T>& target, const Extractor& extractor,
                              const LossConfig& config, std::size_t k) {
  config.validate();
  CombinedLoss<T> out{};
  out.bce = bce_loss(pred, target.gt, config);
  out.record.k = k;
  out.record.bce = static_cast<double>(out.bce.value()[0]);
  if (config.mu == 0.0) {
    out.topo = pred.graph->constant(Tensor<T>::scalar(T{0}));
    out.total = out.bce;
    out.record.topo = 0.0;
  } else {
    out.topo = topo_loss(pred, target, extractor, config);
    out.total = weighted_sum<T>({out.bce, out.topo}, {T{1}, static_cast<T>(config.mu)});
    out.record.topo = static_cast<double>(out.topo.value()[0]);
  }
  out.record.value = out.record.bce + config.mu * out.record.topo;
  return out;
}

template <typename T>
CombinedLoss<T> combined_loss(Var<T> pred, Var<T> gt, const Extractor& extractor, const LossConfig& config,
                              std::size_t k) {
  return combined_loss(pred, make_target(gt, extractor, config), extractor, config, k);
}

double refinement_normalizer(std::size_t K) { return 0.5 * static_cast<double>(K) * static_cast<double>(K + 1); }

double refinement_loss(const std::vector<PartialLossRecord>& records) {
  if (records.empty()) throw std::invalid_argument("refinement loss needs at least one partial loss");
  double total = 0;
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (records[i].k != i + 1) {
      throw std::invalid_argument("partial losses must be contiguous k = 1..K, found k = " +
                                  std::to_string(records[i].k) + " at position " + std::to_string(i + 1));
    }
    total += static_cast<double>(records[i].k) * records[i].value;
  }
  return total / refinement_normalizer(records.size());
}

template <typename T>
Var<T> refinement_loss(const std::vector<Var<T>>& partial_losses) {
  if (partial_losses.empty()) throw std::invalid_argument("refinement loss needs at least one partial loss");
  const double z = refinement_normalizer(partial_losses.size());
  std::vector<T> weights;
  for (std::size_t k = 1; k <= partial_losses.size(); ++k) weights.push_back(static_cast<T>(k / z));
  return weighted_sum(partial_losses, weights);
}

#define TOPODELIN_INSTANTIATE(T)                                                                              \
  template void check_binary(const Tensor<T>&, const char*);                                                  \
  template Var<T> bce_loss(Var<T>, Var<T>, const LossConfig&);                                                \
  template LossTarget<T> make_target(Var<T>, const Extractor&, const LossConfig&);                            \
  template Var<T> topo_loss(Var<T>, const LossTarget<T>&, const Extractor&, const LossConfig&);               \
  template Var<T> topo_loss(Var<T>, Var<T>, const Extractor&, const LossConfig&);                             \
  template CombinedLoss<T> combined_loss(Var<T>, const LossTarget<T>&, const Extractor&, const LossConfig&,   \
                                         std::size_t);                                                        \
  template CombinedLoss<T> combined_loss(Var<T>, Var<T>, const Extractor&, const LossConfig&, std::size_t);   \
  template Var<T> refinement_loss(const std::vector<Var<T>>&);

TOPODELIN_INSTANTIATE(float)
TOPODELIN_INSTANTIATE(double)

#undef TOPODELIN_INSTANTIATE

}  // namespace topodelin
