#pragma once

#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "topodelin/tensor.hpp"

namespace topodelin {

template <typename T>
class Graph;

/// Handle to a node recorded in a Graph.
template <typename T>
struct Var {
  Graph<T>* graph = nullptr;
  std::size_t id = 0;

  const Tensor<T>& value() const;
  const Shape& shape() const { return value().shape(); }
};

template <typename T>
using GradientMap = std::map<std::string, Tensor<T>>;

/// Tape of operations applied in creation order. A graph is built and
/// differentiated by one caller at a time; nodes are never mutated after
/// they are recorded.
template <typename T>
class Graph {
 public:
  /// Accumulates gradients into the inputs of `node` given its output gradient.
  using BackwardFn = std::function<void(Graph&, std::size_t node)>;

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  /// Named learnable tensor. Frozen parameters pass gradients through the
  /// operations that consume them but never appear in the gradient map.
  Var<T> parameter(const std::string& name, Tensor<T> value, bool frozen = false);
  /// Differentiable unnamed input, gradient available via grad() after backward.
  Var<T> input(Tensor<T> value);
  /// Non-differentiable value.
  Var<T> constant(Tensor<T> value);

  /// Previously registered parameter with this name, if any.
  std::optional<Var<T>> find_parameter(const std::string& name);

  Var<T> record(Tensor<T> value, std::vector<std::size_t> inputs, BackwardFn fn);

  const Tensor<T>& value(std::size_t id) const { return nodes_.at(id).value; }
  bool requires_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }
  std::size_t size() const { return nodes_.size(); }

  /// Reverse-mode pass from a scalar root. Gradients are recomputed from
  /// scratch on every call.
  GradientMap<T> backward(Var<T> root);

  /// Gradient of the last backward root with respect to `v` (zeros when `v`
  /// did not influence the root).
  Tensor<T> grad(Var<T> v) const;

  // Used by operation implementations during backward.
  const Tensor<T>& output_grad(std::size_t id) const { return *nodes_.at(id).grad; }
  Tensor<T>& input_grad(std::size_t id);

 private:
  struct Node {
    Tensor<T> value;
    std::optional<Tensor<T>> grad;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
    bool requires_grad = false;
    bool frozen = false;
    std::string parameter_name;
  };

  Var<T> add_leaf(Tensor<T> value, bool requires_grad, bool frozen, std::string name);

  std::vector<Node> nodes_;
};

template <typename T>
const Tensor<T>& Var<T>::value() const {
  return graph->value(id);
}

// Layer primitives. Image tensors are (C, H, W) or (N, C, H, W).

/// Cross-correlation with zero padding. Kernel is (out, in, k, k).
template <typename T>
Var<T> conv2d(Var<T> input, Var<T> kernel, std::size_t stride = 1, std::size_t padding = 0);
/// Transposed convolution (no padding). Kernel is (in, out, k, k); output extent
/// (in - 1) * stride + k.
template <typename T>
Var<T> transpose_conv2d(Var<T> input, Var<T> kernel, std::size_t stride);
/// Adds a per-channel bias of shape {C}.
template <typename T>
Var<T> bias_add(Var<T> input, Var<T> bias);
template <typename T>
Var<T> relu(Var<T> x);
template <typename T>
Var<T> sigmoid(Var<T> x);
template <typename T>
Var<T> log(Var<T> x);
/// Elementwise clamp to [lo, hi]; gradient is zero where the bound is active.
template <typename T>
Var<T> clamp(Var<T> x, T lo, T hi);
/// Elementwise scale * x + offset.
template <typename T>
Var<T> affine(Var<T> x, T scale, T offset);
template <typename T>
Var<T> maxpool2x2(Var<T> x);
/// Pads spatial extents by repeating edge pixels.
template <typename T>
Var<T> pad_replicate(Var<T> x, std::size_t padding);
/// Channel concatenation (the image/prediction join fed to the model).
template <typename T>
Var<T> concat_channels(const std::vector<Var<T>>& parts);
template <typename T>
Var<T> concat_channels(Var<T> a, Var<T> b);
/// Normalizes each channel with the statistics of the current batch, then
/// applies per-channel scale and shift of shape {C}.
template <typename T>
Var<T> batchnorm(Var<T> x, Var<T> scale, Var<T> shift, T epsilon = T(1e-5));
template <typename T>
Var<T> add(Var<T> a, Var<T> b);
template <typename T>
Var<T> sub(Var<T> a, Var<T> b);
template <typename T>
Var<T> mul(Var<T> a, Var<T> b);
template <typename T>
Var<T> sum(Var<T> x);
/// Sum accumulated in ascending value order: the result depends only on the
/// multiset of values, not on where they sit in the tensor.
template <typename T>
Var<T> sum_sorted(Var<T> x);
template <typename T>
Var<T> mean(Var<T> x);
template <typename T>
Var<T> squared_l2(Var<T> x);
/// Weighted sum of scalars: sum_i weights[i] * terms[i].
template <typename T>
Var<T> weighted_sum(const std::vector<Var<T>>& terms, const std::vector<T>& weights);

}  // namespace topodelin
