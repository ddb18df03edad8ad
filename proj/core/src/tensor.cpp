#include "ldct/tensor.hpp"

#include <fmt/format.h>

namespace ldct {

std::string to_string(const Shape& shape) {
  std::string out = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += ", ";
    out += std::to_string(shape[i]);
  }
  return out + "]";
}

std::size_t element_count(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

namespace {
void check_dims(const Shape& shape) {
  if (shape.empty()) throw ShapeError("tensor shape must have at least one dimension");
  for (auto d : shape) {
    if (d == 0) throw ShapeError(fmt::format("tensor dimensions must be >= 1, got {}", to_string(shape)));
  }
}
}  // namespace

template <class T>
Tensor<T>::Tensor(Shape shape, T fill) : shape_(std::move(shape)) {
  check_dims(shape_);
  data_.assign(element_count(shape_), fill);
}

template <class T>
Tensor<T>::Tensor(Shape shape, std::vector<T> values) : shape_(std::move(shape)), data_(std::move(values)) {
  check_dims(shape_);
  if (data_.size() != element_count(shape_)) {
    throw ShapeError(fmt::format("{} values do not fill shape {}", data_.size(), to_string(shape_)));
  }
}

template <class T>
Tensor<T> Tensor<T>::from(std::initializer_list<T> values, Shape shape) {
  return Tensor(std::move(shape), std::vector<T>(values));
}

template <class T>
T& Tensor<T>::at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) {
  return data_[((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
}

template <class T>
const T& Tensor<T>::at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const {
  return data_[((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
}

template <class T>
T Tensor<T>::item() const {
  if (data_.size() != 1) throw ShapeError(fmt::format("item() needs one element, shape is {}", to_string(shape_)));
  return data_[0];
}

template <class T>
Tensor<T> Tensor<T>::reshaped(Shape shape) const {
  if (element_count(shape) != data_.size()) {
    throw ShapeError(fmt::format("cannot reshape {} to {}", to_string(shape_), to_string(shape)));
  }
  return Tensor(std::move(shape), data_);
}

template class Tensor<float>;
template class Tensor<double>;

}  // namespace ldct
