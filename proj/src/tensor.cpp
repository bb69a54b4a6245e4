#include "glyphclass/tensor.hpp"

#include <algorithm>
#include <functional>
#include <numeric>

#include "glyphclass/error.hpp"

namespace glyphclass::nn {

std::string shape_string(const Shape& shape) {
  std::string out = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(shape[i]);
  }
  return out + "]";
}

std::size_t element_count(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

namespace {

void check_dims(const Shape& shape) {
  for (std::size_t axis = 0; axis < shape.size(); ++axis)
    if (shape[axis] == 0)
      fail(ErrorKind::Dimension, "tensor axis " + std::to_string(axis) + " has zero extent in " + shape_string(shape));
}

}  // namespace

Tensor::Tensor(Shape shape, float fill) : shape_(std::move(shape)) {
  check_dims(shape_);
  data_.assign(element_count(shape_), fill);
}

Tensor::Tensor(Shape shape, std::vector<float> data) : shape_(std::move(shape)), data_(std::move(data)) {
  check_dims(shape_);
  if (data_.size() != element_count(shape_))
    fail(ErrorKind::Dimension, "tensor data length " + std::to_string(data_.size()) + " does not match shape " +
                                   shape_string(shape_));
}

Tensor Tensor::reshaped(Shape shape) const& { return Tensor(std::move(shape), data_); }

Tensor Tensor::reshaped(Shape shape) && { return Tensor(std::move(shape), std::move(data_)); }

void Tensor::fill(float value) { std::fill(data_.begin(), data_.end(), value); }

Tensor& Tensor::operator+=(const Tensor& other) {
  require_shape(other, shape_, "accumulated tensor");
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
  return *this;
}

void require_rank(const Tensor& t, std::size_t rank, const std::string& what) {
  if (t.rank() != rank)
    fail(ErrorKind::Dimension, what + ": expected rank " + std::to_string(rank) + ", got shape " +
                                   shape_string(t.shape()));
}

void require_shape(const Tensor& t, const Shape& expected, const std::string& what) {
  require_rank(t, expected.size(), what);
  for (std::size_t axis = 0; axis < expected.size(); ++axis)
    if (t.dim(axis) != expected[axis])
      fail(ErrorKind::Dimension, what + ": axis " + std::to_string(axis) + " is " + std::to_string(t.dim(axis)) +
                                     ", expected " + std::to_string(expected[axis]));
}

}  // namespace glyphclass::nn
