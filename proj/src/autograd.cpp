#include "topodelin/autograd.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>

namespace topodelin {

// ---------------------------------------------------------------------------
// Graph

template <typename T>
Var<T> Graph<T>::add_leaf(Tensor<T> value, bool requires_grad, bool frozen, std::string name) {
  if (!value.all_finite()) throw NumericalError("non-finite value fed to graph leaf " + name);
  Node node;
  node.value = std::move(value);
  node.requires_grad = requires_grad;
  node.frozen = frozen;
  node.parameter_name = std::move(name);
  nodes_.push_back(std::move(node));
  return Var<T>{this, nodes_.size() - 1};
}

template <typename T>
Var<T> Graph<T>::parameter(const std::string& name, Tensor<T> value, bool frozen) {
  if (name.empty()) throw std::invalid_argument("parameter name must not be empty");
  for (const auto& n : nodes_) {
    if (n.parameter_name == name) throw std::invalid_argument("duplicate parameter " + name);
  }
  return add_leaf(std::move(value), !frozen, frozen, name);
}

template <typename T>
std::optional<Var<T>> Graph<T>::find_parameter(const std::string& name) {
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    if (nodes_[i].parameter_name == name) return Var<T>{this, i};
  }
  return std::nullopt;
}

template <typename T>
Var<T> Graph<T>::input(Tensor<T> value) {
  return add_leaf(std::move(value), true, false, {});
}

template <typename T>
Var<T> Graph<T>::constant(Tensor<T> value) {
  return add_leaf(std::move(value), false, false, {});
}

template <typename T>
Var<T> Graph<T>::record(Tensor<T> value, std::vector<std::size_t> inputs, BackwardFn fn) {
  if (!value.all_finite()) {
    throw NumericalError("engine operation produced a non-finite value (node " +
                         std::to_string(nodes_.size()) + ", shape " +
                         shape_to_string(value.shape()) + ")");
  }
  Node node;
  node.value = std::move(value);
  for (auto i : inputs) {
    if (i >= nodes_.size()) throw std::logic_error("graph input refers to a future node");
    node.requires_grad = node.requires_grad || nodes_[i].requires_grad;
  }
  node.inputs = std::move(inputs);
  node.backward = std::move(fn);
  nodes_.push_back(std::move(node));
  return Var<T>{this, nodes_.size() - 1};
}

template <typename T>
Tensor<T>& Graph<T>::input_grad(std::size_t id) {
  auto& node = nodes_.at(id);
  if (!node.grad) node.grad.emplace(node.value.shape(), T{0});
  return *node.grad;
}

template <typename T>
GradientMap<T> Graph<T>::backward(Var<T> root) {
  if (root.graph != this) throw std::invalid_argument("backward root belongs to another graph");
  const auto& rv = nodes_.at(root.id).value;
  if (rv.size() != 1) {
    throw ShapeError("backward root must be a scalar, got shape " + shape_to_string(rv.shape()));
  }
  for (auto& n : nodes_) n.grad.reset();
  nodes_[root.id].grad.emplace(rv.shape(), T{1});

  for (std::size_t i = root.id + 1; i-- > 0;) {
    auto& node = nodes_[i];
    if (!node.grad || !node.requires_grad || !node.backward) continue;
    node.backward(*this, i);
  }

  GradientMap<T> grads;
  for (const auto& n : nodes_) {
    if (n.parameter_name.empty() || n.frozen) continue;
    grads.emplace(n.parameter_name, n.grad ? *n.grad : Tensor<T>(n.value.shape(), T{0}));
  }
  return grads;
}

template <typename T>
Tensor<T> Graph<T>::grad(Var<T> v) const {
  const auto& node = nodes_.at(v.id);
  return node.grad ? *node.grad : Tensor<T>(node.value.shape(), T{0});
}

// ---------------------------------------------------------------------------
// helpers

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;

template <typename T>
Graph<T>& graph_of(Var<T> a) {
  if (!a.graph) throw std::invalid_argument("operation on an unbound variable");
  return *a.graph;
}

template <typename T>
Graph<T>& graph_of(Var<T> a, Var<T> b) {
  if (a.graph != b.graph || !a.graph) throw std::invalid_argument("operands belong to different graphs");
  return *a.graph;
}

void require_same_shape(const Shape& a, const Shape& b, const char* op) {
  if (a != b) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_to_string(a) + " vs " +
                     shape_to_string(b));
  }
}

struct ConvGeometry {
  std::size_t channels, height, width, k, stride, padding, out_h, out_w;
  std::size_t rows() const { return channels * k * k; }
  std::size_t cols() const { return out_h * out_w; }
};

// Output columns ox whose input column ox * stride + kj - padding lies inside [0, width).
std::pair<std::size_t, std::size_t> valid_span(std::size_t kj, const ConvGeometry& g) {
  const auto pad = static_cast<std::ptrdiff_t>(g.padding), off = static_cast<std::ptrdiff_t>(kj) - pad;
  const auto s = static_cast<std::ptrdiff_t>(g.stride), w = static_cast<std::ptrdiff_t>(g.width);
  const std::ptrdiff_t lo = off >= 0 ? 0 : (-off + s - 1) / s;
  const std::ptrdiff_t hi = w - 1 - off < 0 ? 0 : (w - 1 - off) / s + 1;
  const auto out_w = static_cast<std::ptrdiff_t>(g.out_w);
  return {static_cast<std::size_t>(std::min(lo, out_w)), static_cast<std::size_t>(std::clamp(hi, lo, out_w))};
}

// Unfolds one (C, H, W) image into a (C*k*k, out_h*out_w) matrix.
template <typename T>
void im2col(const T* image, const ConvGeometry& g, T* cols) {
  const auto n_cols = g.cols();
  for (std::size_t c = 0; c < g.channels; ++c) {
    const T* plane = image + c * g.height * g.width;
    for (std::size_t ki = 0; ki < g.k; ++ki) {
      for (std::size_t kj = 0; kj < g.k; ++kj) {
        T* row = cols + ((c * g.k + ki) * g.k + kj) * n_cols;
        const auto [lo, hi] = valid_span(kj, g);
        for (std::size_t oy = 0; oy < g.out_h; ++oy) {
          const auto y = static_cast<std::ptrdiff_t>(oy * g.stride + ki) -
                         static_cast<std::ptrdiff_t>(g.padding);
          T* out = row + oy * g.out_w;
          if (y < 0 || y >= static_cast<std::ptrdiff_t>(g.height)) {
            std::fill(out, out + g.out_w, T{0});
            continue;
          }
          const T* src = plane + static_cast<std::size_t>(y) * g.width;
          const auto off = static_cast<std::ptrdiff_t>(kj) - static_cast<std::ptrdiff_t>(g.padding);
          std::fill(out, out + lo, T{0});
          if (g.stride == 1) {
            std::copy(src + (static_cast<std::ptrdiff_t>(lo) + off), src + (static_cast<std::ptrdiff_t>(hi) + off), out + lo);
          } else {
            for (std::size_t ox = lo; ox < hi; ++ox) out[ox] = src[static_cast<std::ptrdiff_t>(ox * g.stride) + off];
          }
          std::fill(out + hi, out + g.out_w, T{0});
        }
      }
    }
  }
}

// Adjoint of im2col: scatters and accumulates columns back into an image.
template <typename T>
void col2im(const T* cols, const ConvGeometry& g, T* image) {
  const auto n_cols = g.cols();
  for (std::size_t c = 0; c < g.channels; ++c) {
    T* plane = image + c * g.height * g.width;
    for (std::size_t ki = 0; ki < g.k; ++ki) {
      for (std::size_t kj = 0; kj < g.k; ++kj) {
        const T* row = cols + ((c * g.k + ki) * g.k + kj) * n_cols;
        const auto [lo, hi] = valid_span(kj, g);
        for (std::size_t oy = 0; oy < g.out_h; ++oy) {
          const auto y = static_cast<std::ptrdiff_t>(oy * g.stride + ki) -
                         static_cast<std::ptrdiff_t>(g.padding);
          if (y < 0 || y >= static_cast<std::ptrdiff_t>(g.height)) continue;
          T* dst = plane + static_cast<std::size_t>(y) * g.width;
          const auto off = static_cast<std::ptrdiff_t>(kj) - static_cast<std::ptrdiff_t>(g.padding);
          const T* in = row + oy * g.out_w;
          for (std::size_t ox = lo; ox < hi; ++ox) dst[static_cast<std::ptrdiff_t>(ox * g.stride) + off] += in[ox];
        }
      }
    }
  }
}

bool is_identity_unfold(const ConvGeometry& g) {
  return g.k == 1 && g.stride == 1 && g.padding == 0;
}

template <typename T, typename F, typename D>
Var<T> unary(Var<T> x, F forward, D derivative) {
  auto& g = graph_of(x);
  const auto& xv = x.value();
  Tensor<T> out(xv.shape());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = forward(xv[i]);
  const auto xi = x.id;
  return g.record(std::move(out), {xi}, [xi, derivative](Graph<T>& gr, std::size_t self) {
    if (!gr.requires_grad(xi)) return;
    const auto& in = gr.value(xi);
    const auto& o = gr.value(self);
    const auto& go = gr.output_grad(self);
    auto& gi = gr.input_grad(xi);
    for (std::size_t i = 0; i < in.size(); ++i) gi[i] += go[i] * derivative(in[i], o[i]);
  });
}

}  // namespace

// ---------------------------------------------------------------------------
// convolution

template <typename T>
Var<T> conv2d(Var<T> input, Var<T> kernel, std::size_t stride, std::size_t padding) {
  auto& g = graph_of(input, kernel);
  const auto& xs = input.shape();
  const auto& ks = kernel.shape();
  const auto d = image_dims(xs);
  if (ks.size() != 4 || ks[2] != ks[3] || ks[1] != d.channels) {
    throw ShapeError("conv2d: kernel " + shape_to_string(ks) + " incompatible with input " +
                     shape_to_string(xs) + " (expected (out, " + std::to_string(d.channels) +
                     ", k, k))");
  }
  if (stride == 0) throw ShapeError("conv2d: stride must be positive");
  const std::size_t k = ks[2];
  if (d.height + 2 * padding < k || d.width + 2 * padding < k) {
    throw ShapeError("conv2d: kernel " + shape_to_string(ks) + " larger than padded input " +
                     shape_to_string(xs));
  }
  ConvGeometry geo{d.channels, d.height, d.width, k, stride, padding,
                   (d.height + 2 * padding - k) / stride + 1, (d.width + 2 * padding - k) / stride + 1};
  const std::size_t out_c = ks[0];

  Tensor<T> out(make_image_shape(xs, out_c, geo.out_h, geo.out_w));
  std::vector<T> cols(is_identity_unfold(geo) ? 0 : geo.rows() * geo.cols());
  ConstMatMap<T> kmat(kernel.value().data().data(), out_c, geo.rows());
  for (std::size_t n = 0; n < d.batch; ++n) {
    const T* img = input.value().data().data() + n * d.channels * d.plane();
    const T* colp = img;
    if (!cols.empty()) {
      im2col(img, geo, cols.data());
      colp = cols.data();
    }
    MatMap<T> o(out.data().data() + n * out_c * geo.cols(), out_c, geo.cols());
    o.noalias() = kmat * ConstMatMap<T>(colp, geo.rows(), geo.cols());
  }

  const auto xi = input.id, ki = kernel.id;
  return g.record(std::move(out), {xi, ki}, [xi, ki, geo, out_c, d](Graph<T>& gr, std::size_t self) {
    const bool need_x = gr.requires_grad(xi), need_k = gr.requires_grad(ki);
    const auto& go = gr.output_grad(self);
    const auto& xv = gr.value(xi);
    ConstMatMap<T> kmat(gr.value(ki).data().data(), out_c, geo.rows());
    std::vector<T> cols(is_identity_unfold(geo) ? 0 : geo.rows() * geo.cols());
    RowMat<T> dk;
    if (need_k) dk = RowMat<T>::Zero(out_c, geo.rows());
    T* gx = need_x ? gr.input_grad(xi).data().data() : nullptr;
    for (std::size_t n = 0; n < d.batch; ++n) {
      ConstMatMap<T> gout(go.data().data() + n * out_c * geo.cols(), out_c, geo.cols());
      if (need_k) {
        const T* img = xv.data().data() + n * d.channels * d.plane();
        const T* colp = img;
        if (!cols.empty()) {
          im2col(img, geo, cols.data());
          colp = cols.data();
        }
        dk.noalias() += gout * ConstMatMap<T>(colp, geo.rows(), geo.cols()).transpose();
      }
      if (need_x) {
        T* gimg = gx + n * d.channels * d.plane();
        if (cols.empty() && is_identity_unfold(geo)) {
          MatMap<T>(gimg, geo.rows(), geo.cols()).noalias() += kmat.transpose() * gout;
        } else {
          if (cols.empty()) cols.resize(geo.rows() * geo.cols());
          MatMap<T> dcols(cols.data(), geo.rows(), geo.cols());
          dcols.noalias() = kmat.transpose() * gout;
          col2im(cols.data(), geo, gimg);
        }
      }
    }
    if (need_k) {
      auto& gk = gr.input_grad(ki);
      MatMap<T>(gk.data().data(), out_c, geo.rows()) += dk;
    }
  });
}

template <typename T>
Var<T> transpose_conv2d(Var<T> input, Var<T> kernel, std::size_t stride) {
  auto& g = graph_of(input, kernel);
  const auto& xs = input.shape();
  const auto& ks = kernel.shape();
  const auto d = image_dims(xs);
  if (ks.size() != 4 || ks[2] != ks[3] || ks[0] != d.channels) {
    throw ShapeError("transpose_conv2d: kernel " + shape_to_string(ks) +
                     " incompatible with input " + shape_to_string(xs) + " (expected (" +
                     std::to_string(d.channels) + ", out, k, k))");
  }
  if (stride == 0) throw ShapeError("transpose_conv2d: stride must be positive");
  const std::size_t k = ks[2], out_c = ks[1];
  const std::size_t oh = (d.height - 1) * stride + k, ow = (d.width - 1) * stride + k;
  // Geometry of the equivalent forward convolution over the output image.
  ConvGeometry geo{out_c, oh, ow, k, stride, 0, d.height, d.width};

  Tensor<T> out(make_image_shape(xs, out_c, oh, ow));
  std::vector<T> cols(geo.rows() * geo.cols());
  ConstMatMap<T> kmat(kernel.value().data().data(), d.channels, geo.rows());
  for (std::size_t n = 0; n < d.batch; ++n) {
    ConstMatMap<T> x(input.value().data().data() + n * d.channels * d.plane(), d.channels, d.plane());
    MatMap<T>(cols.data(), geo.rows(), geo.cols()).noalias() = kmat.transpose() * x;
    col2im(cols.data(), geo, out.data().data() + n * out_c * oh * ow);
  }

  const auto xi = input.id, ki = kernel.id;
  return g.record(std::move(out), {xi, ki}, [xi, ki, geo, d, oh, ow](Graph<T>& gr, std::size_t self) {
    const bool need_x = gr.requires_grad(xi), need_k = gr.requires_grad(ki);
    const auto& go = gr.output_grad(self);
    const auto& xv = gr.value(xi);
    ConstMatMap<T> kmat(gr.value(ki).data().data(), d.channels, geo.rows());
    std::vector<T> cols(geo.rows() * geo.cols());
    RowMat<T> dk;
    if (need_k) dk = RowMat<T>::Zero(d.channels, geo.rows());
    for (std::size_t n = 0; n < d.batch; ++n) {
      im2col(go.data().data() + n * geo.channels * oh * ow, geo, cols.data());
      ConstMatMap<T> dcols(cols.data(), geo.rows(), geo.cols());
      if (need_k) {
        ConstMatMap<T> x(xv.data().data() + n * d.channels * d.plane(), d.channels, d.plane());
        dk.noalias() += x * dcols.transpose();
      }
      if (need_x) {
        auto& gx = gr.input_grad(xi);
        MatMap<T>(gx.data().data() + n * d.channels * d.plane(), d.channels, d.plane()).noalias() +=
            kmat * dcols;
      }
    }
    if (need_k) {
      auto& gk = gr.input_grad(ki);
      MatMap<T>(gk.data().data(), d.channels, geo.rows()) += dk;
    }
  });
}

template <typename T>
Var<T> bias_add(Var<T> input, Var<T> bias) {
  auto& g = graph_of(input, bias);
  const auto d = image_dims(input.shape());
  if (bias.shape() != Shape{d.channels}) {
    throw ShapeError("bias_add: bias " + shape_to_string(bias.shape()) + " does not match input " +
                     shape_to_string(input.shape()));
  }
  Tensor<T> out = input.value();
  const auto& b = bias.value();
  for (std::size_t n = 0; n < d.batch; ++n)
    for (std::size_t c = 0; c < d.channels; ++c) {
      T* p = out.data().data() + (n * d.channels + c) * d.plane();
      for (std::size_t i = 0; i < d.plane(); ++i) p[i] += b[c];
    }
  const auto xi = input.id, bi = bias.id;
  return g.record(std::move(out), {xi, bi}, [xi, bi, d](Graph<T>& gr, std::size_t self) {
    const auto& go = gr.output_grad(self);
    if (gr.requires_grad(xi)) {
      auto& gx = gr.input_grad(xi);
      for (std::size_t i = 0; i < go.size(); ++i) gx[i] += go[i];
    }
    if (gr.requires_grad(bi)) {
      auto& gb = gr.input_grad(bi);
      for (std::size_t n = 0; n < d.batch; ++n)
        for (std::size_t c = 0; c < d.channels; ++c) {
          const T* p = go.data().data() + (n * d.channels + c) * d.plane();
          T s{0};
          for (std::size_t i = 0; i < d.plane(); ++i) s += p[i];
          gb[c] += s;
        }
    }
  });
}

// ---------------------------------------------------------------------------
// elementwise

template <typename T>
Var<T> relu(Var<T> x) {
  return unary<T>(
      x, [](T v) { return v > T{0} ? v : T{0}; },
      [](T in, T) { return in > T{0} ? T{1} : T{0}; });
}

template <typename T>
Var<T> sigmoid(Var<T> x) {
  return unary<T>(
      x,
      [](T v) {
        if (v >= T{0}) return T{1} / (T{1} + std::exp(-v));
        const T e = std::exp(v);
        return e / (T{1} + e);
      },
      [](T, T out) { return out * (T{1} - out); });
}

template <typename T>
Var<T> log(Var<T> x) {
  for (T v : x.value().values()) {
    if (!(v > T{0})) throw NumericalError("log of non-positive value");
  }
  return unary<T>(
      x, [](T v) { return std::log(v); }, [](T in, T) { return T{1} / in; });
}

template <typename T>
Var<T> clamp(Var<T> x, T lo, T hi) {
  if (!(lo <= hi)) throw std::invalid_argument("clamp: lower bound above upper bound");
  return unary<T>(
      x, [lo, hi](T v) { return std::clamp(v, lo, hi); },
      [lo, hi](T in, T) { return (in >= lo && in <= hi) ? T{1} : T{0}; });
}

template <typename T>
Var<T> affine(Var<T> x, T scale, T offset) {
  return unary<T>(
      x, [scale, offset](T v) { return scale * v + offset; }, [scale](T, T) { return scale; });
}

template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
  auto& g = graph_of(a, b);
  require_same_shape(a.shape(), b.shape(), "add");
  Tensor<T> out = a.value();
  const auto& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  const auto ai = a.id, bi = b.id;
  return g.record(std::move(out), {ai, bi}, [ai, bi](Graph<T>& gr, std::size_t self) {
    const auto& go = gr.output_grad(self);
    for (auto id : {ai, bi}) {
      if (!gr.requires_grad(id)) continue;
      auto& gi = gr.input_grad(id);
      for (std::size_t i = 0; i < go.size(); ++i) gi[i] += go[i];
    }
  });
}

template <typename T>
Var<T> sub(Var<T> a, Var<T> b) {
  auto& g = graph_of(a, b);
  require_same_shape(a.shape(), b.shape(), "sub");
  Tensor<T> out = a.value();
  const auto& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
  const auto ai = a.id, bi = b.id;
  return g.record(std::move(out), {ai, bi}, [ai, bi](Graph<T>& gr, std::size_t self) {
    const auto& go = gr.output_grad(self);
    if (gr.requires_grad(ai)) {
      auto& ga = gr.input_grad(ai);
      for (std::size_t i = 0; i < go.size(); ++i) ga[i] += go[i];
    }
    if (gr.requires_grad(bi)) {
      auto& gb = gr.input_grad(bi);
      for (std::size_t i = 0; i < go.size(); ++i) gb[i] -= go[i];
    }
  });
}

template <typename T>
Var<T> mul(Var<T> a, Var<T> b) {
  auto& g = graph_of(a, b);
  require_same_shape(a.shape(), b.shape(), "mul");
  Tensor<T> out = a.value();
  const auto& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  const auto ai = a.id, bi = b.id;
  return g.record(std::move(out), {ai, bi}, [ai, bi](Graph<T>& gr, std::size_t self) {
    const auto& go = gr.output_grad(self);
    if (gr.requires_grad(ai)) {
      const auto& bv = gr.value(bi);
      auto& ga = gr.input_grad(ai);
      for (std::size_t i = 0; i < go.size(); ++i) ga[i] += go[i] * bv[i];
    }
    if (gr.requires_grad(bi)) {
      const auto& av = gr.value(ai);
      auto& gb = gr.input_grad(bi);
      for (std::size_t i = 0; i < go.size(); ++i) gb[i] += go[i] * av[i];
    }
  });
}

// ---------------------------------------------------------------------------
// spatial

template <typename T>
Var<T> maxpool2x2(Var<T> x) {
  auto& g = graph_of(x);
  const auto d = image_dims(x.shape());
  if (d.height % 2 || d.width % 2) {
    throw ShapeError("maxpool2x2: spatial extents must be even, got " + shape_to_string(x.shape()));
  }
  const std::size_t oh = d.height / 2, ow = d.width / 2;
  Tensor<T> out(make_image_shape(x.shape(), d.channels, oh, ow));
  auto argmax = std::make_shared<std::vector<std::size_t>>(out.size());
  const auto& xv = x.value();
  for (std::size_t p = 0; p < d.batch * d.channels; ++p) {
    const std::size_t base = p * d.plane();
    for (std::size_t oy = 0; oy < oh; ++oy)
      for (std::size_t ox = 0; ox < ow; ++ox) {
        std::size_t best = base + 2 * oy * d.width + 2 * ox;
        for (std::size_t dy = 0; dy < 2; ++dy)
          for (std::size_t dx = 0; dx < 2; ++dx) {
            const std::size_t idx = base + (2 * oy + dy) * d.width + 2 * ox + dx;
            if (xv[idx] > xv[best]) best = idx;
          }
        const std::size_t o = p * oh * ow + oy * ow + ox;
        out[o] = xv[best];
        (*argmax)[o] = best;
      }
  }
  const auto xi = x.id;
  return g.record(std::move(out), {xi}, [xi, argmax](Graph<T>& gr, std::size_t self) {
    if (!gr.requires_grad(xi)) return;
    const auto& go = gr.output_grad(self);
    auto& gx = gr.input_grad(xi);
    for (std::size_t o = 0; o < go.size(); ++o) gx[(*argmax)[o]] += go[o];
  });
}

template <typename T>
Var<T> pad_replicate(Var<T> x, std::size_t padding) {
  auto& g = graph_of(x);
  const auto d = image_dims(x.shape());
  const std::size_t oh = d.height + 2 * padding, ow = d.width + 2 * padding;
  auto source = std::make_shared<std::vector<std::size_t>>(d.batch * d.channels * oh * ow);
  Tensor<T> out(make_image_shape(x.shape(), d.channels, oh, ow));
  const auto& xv = x.value();
  const auto clamp_index = [padding](std::size_t i, std::size_t extent) {
    const auto v = static_cast<std::ptrdiff_t>(i) - static_cast<std::ptrdiff_t>(padding);
    return static_cast<std::size_t>(std::clamp<std::ptrdiff_t>(v, 0, static_cast<std::ptrdiff_t>(extent) - 1));
  };
  for (std::size_t p = 0; p < d.batch * d.channels; ++p)
    for (std::size_t y = 0; y < oh; ++y)
      for (std::size_t xx = 0; xx < ow; ++xx) {
        const std::size_t src = p * d.plane() + clamp_index(y, d.height) * d.width + clamp_index(xx, d.width);
        const std::size_t o = (p * oh + y) * ow + xx;
        (*source)[o] = src;
        out[o] = xv[src];
      }
  const auto xi = x.id;
  return g.record(std::move(out), {xi}, [xi, source](Graph<T>& gr, std::size_t self) {
    if (!gr.requires_grad(xi)) return;
    const auto& go = gr.output_grad(self);
    auto& gx = gr.input_grad(xi);
    for (std::size_t o = 0; o < go.size(); ++o) gx[(*source)[o]] += go[o];
  });
}

template <typename T>
Var<T> concat_channels(const std::vector<Var<T>>& parts) {
  if (parts.empty()) throw ShapeError("concat_channels: no inputs");
  auto& g = graph_of(parts.front());
  const auto first = image_dims(parts.front().shape());
  std::size_t total_c = 0;
  for (const auto& p : parts) {
    graph_of(parts.front(), p);
    const auto d = image_dims(p.shape());
    if (p.shape().size() != parts.front().shape().size() || d.batch != first.batch ||
        d.height != first.height || d.width != first.width) {
      throw ShapeError("concat_channels: incompatible shapes " +
                       shape_to_string(parts.front().shape()) + " and " + shape_to_string(p.shape()));
    }
    total_c += d.channels;
  }
  Tensor<T> out(make_image_shape(parts.front().shape(), total_c, first.height, first.width));
  std::vector<std::size_t> ids, channels;
  std::size_t offset = 0;
  for (const auto& p : parts) {
    const auto d = image_dims(p.shape());
    for (std::size_t n = 0; n < d.batch; ++n) {
      const T* src = p.value().data().data() + n * d.channels * d.plane();
      std::copy(src, src + d.channels * d.plane(),
                out.data().data() + (n * total_c + offset) * d.plane());
    }
    ids.push_back(p.id);
    channels.push_back(d.channels);
    offset += d.channels;
  }
  const auto plane = first.plane();
  const auto batch = first.batch;
  return g.record(std::move(out), ids, [ids, channels, total_c, plane, batch](Graph<T>& gr, std::size_t self) {
    const auto& go = gr.output_grad(self);
    std::size_t offset = 0;
    for (std::size_t j = 0; j < ids.size(); ++j) {
      if (gr.requires_grad(ids[j])) {
        auto& gi = gr.input_grad(ids[j]);
        for (std::size_t n = 0; n < batch; ++n) {
          const T* src = go.data().data() + (n * total_c + offset) * plane;
          T* dst = gi.data().data() + n * channels[j] * plane;
          for (std::size_t i = 0; i < channels[j] * plane; ++i) dst[i] += src[i];
        }
      }
      offset += channels[j];
    }
  });
}

template <typename T>
Var<T> concat_channels(Var<T> a, Var<T> b) {
  return concat_channels(std::vector<Var<T>>{a, b});
}

template <typename T>
Var<T> batchnorm(Var<T> x, Var<T> scale, Var<T> shift, T epsilon) {
  auto& g = graph_of(x, scale);
  graph_of(x, shift);
  const auto d = image_dims(x.shape());
  if (scale.shape() != Shape{d.channels} || shift.shape() != Shape{d.channels}) {
    throw ShapeError("batchnorm: scale/shift must have shape (" + std::to_string(d.channels) + ")");
  }
  if (!(epsilon > T{0})) throw std::invalid_argument("batchnorm: epsilon must be positive");
  const std::size_t count = d.batch * d.plane();
  auto normalized = std::make_shared<Tensor<T>>(x.shape());
  auto inv_std = std::make_shared<std::vector<T>>(d.channels);
  Tensor<T> out(x.shape());
  const auto& xv = x.value();
  for (std::size_t c = 0; c < d.channels; ++c) {
    double m = 0;
    for (std::size_t n = 0; n < d.batch; ++n) {
      const T* p = xv.data().data() + (n * d.channels + c) * d.plane();
      for (std::size_t i = 0; i < d.plane(); ++i) m += p[i];
    }
    m /= static_cast<double>(count);
    double var = 0;
    for (std::size_t n = 0; n < d.batch; ++n) {
      const T* p = xv.data().data() + (n * d.channels + c) * d.plane();
      for (std::size_t i = 0; i < d.plane(); ++i) var += (p[i] - m) * (p[i] - m);
    }
    var /= static_cast<double>(count);
    const T is = static_cast<T>(1.0 / std::sqrt(var + static_cast<double>(epsilon)));
    (*inv_std)[c] = is;
    const T gamma = scale.value()[c], beta = shift.value()[c];
    for (std::size_t n = 0; n < d.batch; ++n) {
      const std::size_t base = (n * d.channels + c) * d.plane();
      for (std::size_t i = 0; i < d.plane(); ++i) {
        const T xh = (xv[base + i] - static_cast<T>(m)) * is;
        (*normalized)[base + i] = xh;
        out[base + i] = gamma * xh + beta;
      }
    }
  }
  const auto xi = x.id, si = scale.id, bi = shift.id;
  return g.record(std::move(out), {xi, si, bi},
                  [xi, si, bi, d, count, normalized, inv_std](Graph<T>& gr, std::size_t self) {
    const auto& go = gr.output_grad(self);
    const auto& xh = *normalized;
    for (std::size_t c = 0; c < d.channels; ++c) {
      T sum_g{0}, sum_gx{0};
      for (std::size_t n = 0; n < d.batch; ++n) {
        const std::size_t base = (n * d.channels + c) * d.plane();
        for (std::size_t i = 0; i < d.plane(); ++i) {
          sum_g += go[base + i];
          sum_gx += go[base + i] * xh[base + i];
        }
      }
      if (gr.requires_grad(si)) gr.input_grad(si)[c] += sum_gx;
      if (gr.requires_grad(bi)) gr.input_grad(bi)[c] += sum_g;
      if (gr.requires_grad(xi)) {
        auto& gx = gr.input_grad(xi);
        const T gamma = gr.value(si)[c];
        const T k = gamma * (*inv_std)[c];
        const T mg = sum_g / static_cast<T>(count), mgx = sum_gx / static_cast<T>(count);
        for (std::size_t n = 0; n < d.batch; ++n) {
          const std::size_t base = (n * d.channels + c) * d.plane();
          for (std::size_t i = 0; i < d.plane(); ++i)
            gx[base + i] += k * (go[base + i] - mg - xh[base + i] * mgx);
        }
      }
    }
  });
}

// ---------------------------------------------------------------------------
// reductions

template <typename T>
Var<T> sum(Var<T> x) {
  auto& g = graph_of(x);
  T s{0};
  for (T v : x.value().values()) s += v;
  const auto xi = x.id;
  return g.record(Tensor<T>::scalar(s), {xi}, [xi](Graph<T>& gr, std::size_t self) {
    if (!gr.requires_grad(xi)) return;
    const T go = gr.output_grad(self)[0];
    auto& gx = gr.input_grad(xi);
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += go;
  });
}

template <typename T>
Var<T> sum_sorted(Var<T> x) {
  auto& g = graph_of(x);
  std::vector<T> sorted = x.value().values();
  std::sort(sorted.begin(), sorted.end());
  T s{0};
  for (T v : sorted) s += v;
  const auto xi = x.id;
  return g.record(Tensor<T>::scalar(s), {xi}, [xi](Graph<T>& gr, std::size_t self) {
    if (!gr.requires_grad(xi)) return;
    const T go = gr.output_grad(self)[0];
    auto& gx = gr.input_grad(xi);
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += go;
  });
}

template <typename T>
Var<T> mean(Var<T> x) {
  return affine(sum(x), T{1} / static_cast<T>(x.value().size()), T{0});
}

template <typename T>
Var<T> squared_l2(Var<T> x) {
  auto& g = graph_of(x);
  T s{0};
  for (T v : x.value().values()) s += v * v;
  const auto xi = x.id;
  return g.record(Tensor<T>::scalar(s), {xi}, [xi](Graph<T>& gr, std::size_t self) {
    if (!gr.requires_grad(xi)) return;
    const T go = gr.output_grad(self)[0];
    const auto& xv = gr.value(xi);
    auto& gx = gr.input_grad(xi);
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += T{2} * go * xv[i];
  });
}

template <typename T>
Var<T> weighted_sum(const std::vector<Var<T>>& terms, const std::vector<T>& weights) {
  if (terms.empty() || terms.size() != weights.size()) {
    throw std::invalid_argument("weighted_sum: need one weight per term");
  }
  auto& g = graph_of(terms.front());
  T s{0};
  std::vector<std::size_t> ids;
  for (std::size_t j = 0; j < terms.size(); ++j) {
    graph_of(terms.front(), terms[j]);
    if (terms[j].value().size() != 1) throw ShapeError("weighted_sum: terms must be scalars");
    s += weights[j] * terms[j].value()[0];
    ids.push_back(terms[j].id);
  }
  return g.record(Tensor<T>::scalar(s), ids, [ids, weights](Graph<T>& gr, std::size_t self) {
    const T go = gr.output_grad(self)[0];
    for (std::size_t j = 0; j < ids.size(); ++j) {
      if (gr.requires_grad(ids[j])) gr.input_grad(ids[j])[0] += weights[j] * go;
    }
  });
}

// ---------------------------------------------------------------------------

#define TOPODELIN_INSTANTIATE(T)                                                      \
  template class Graph<T>;                                                            \
  template Var<T> conv2d(Var<T>, Var<T>, std::size_t, std::size_t);                   \
  template Var<T> transpose_conv2d(Var<T>, Var<T>, std::size_t);                      \
  template Var<T> bias_add(Var<T>, Var<T>);                                           \
  template Var<T> relu(Var<T>);                                                       \
  template Var<T> sigmoid(Var<T>);                                                    \
  template Var<T> log(Var<T>);                                                        \
  template Var<T> clamp(Var<T>, T, T);                                                \
  template Var<T> affine(Var<T>, T, T);                                               \
  template Var<T> maxpool2x2(Var<T>);                                                 \
  template Var<T> pad_replicate(Var<T>, std::size_t);                                 \
  template Var<T> concat_channels(const std::vector<Var<T>>&);                        \
  template Var<T> concat_channels(Var<T>, Var<T>);                                    \
  template Var<T> batchnorm(Var<T>, Var<T>, Var<T>, T);                               \
  template Var<T> add(Var<T>, Var<T>);                                                \
  template Var<T> sub(Var<T>, Var<T>);                                                \
  template Var<T> mul(Var<T>, Var<T>);                                                \
  template Var<T> sum(Var<T>);                                                        \
  template Var<T> sum_sorted(Var<T>);                                                 \
  template Var<T> mean(Var<T>);                                                       \
  template Var<T> squared_l2(Var<T>);                                                 \
  template Var<T> weighted_sum(const std::vector<Var<T>>&, const std::vector<T>&);

TOPODELIN_INSTANTIATE(float)
TOPODELIN_INSTANTIATE(double)

#undef TOPODELIN_INSTANTIATE

}  // namespace topodelin
