#include "topodelin/tensor.hpp"

#include <cmath>
#include <sstream>

namespace topodelin {

std::size_t shape_size(const Shape& shape) {
  std::size_t n = 1;
  for (auto e : shape) n *= e;
  return n;
}

std::string shape_to_string(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ')';
  return os.str();
}

namespace {

void check_shape(const Shape& shape) {
  if (shape.empty()) throw ShapeError("tensor shape must have at least one extent");
  for (auto e : shape) {
    if (e == 0) throw ShapeError("tensor extents must be positive, got " + shape_to_string(shape));
  }
}

}  // namespace

template <typename T>
Tensor<T>::Tensor(Shape shape, T fill) : shape_(std::move(shape)) {
  check_shape(shape_);
  data_.assign(shape_size(shape_), fill);
}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
  check_shape(shape_);
  if (data_.size() != shape_size(shape_)) {
    throw ShapeError("tensor of shape " + shape_to_string(shape_) + " needs " +
                     std::to_string(shape_size(shape_)) + " values, got " +
                     std::to_string(data_.size()));
  }
}

template <typename T>
T Tensor<T>::item() const {
  if (data_.size() != 1) throw ShapeError("item() on non-scalar tensor " + shape_to_string(shape_));
  return data_[0];
}

template <typename T>
bool Tensor<T>::all_finite() const {
  for (T v : data_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

ImageDims image_dims(const Shape& shape) {
  if (shape.size() == 3) return {1, shape[0], shape[1], shape[2]};
  if (shape.size() == 4) return {shape[0], shape[1], shape[2], shape[3]};
  throw ShapeError("expected a (C, H, W) or (N, C, H, W) tensor, got " + shape_to_string(shape));
}

Shape make_image_shape(const Shape& like, std::size_t channels, std::size_t height,
                       std::size_t width) {
  if (like.size() == 3) return {channels, height, width};
  return {like.at(0), channels, height, width};
}

template class Tensor<float>;
template class Tensor<double>;

}  // namespace topodelin
