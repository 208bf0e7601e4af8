#include "secnn/tensor.hpp"

#include <algorithm>
#include <sstream>

#include "secnn/errors.hpp"

namespace secnn {

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

static void check_dims(const Shape& shape) {
  if (shape.empty()) fail(ErrorCode::InvalidShape, "tensor needs at least one dimension");
  if (std::any_of(shape.begin(), shape.end(), [](std::size_t d) { return d == 0; }))
    fail(ErrorCode::InvalidShape, "zero-sized dimension in " + shape_str(shape));
}

Tensor::Tensor(Shape shape, float fill) : shape_(std::move(shape)) {
  check_dims(shape_);
  data_.assign(shape_numel(shape_), fill);
}

Tensor::Tensor(Shape shape, std::vector<float> data) : shape_(std::move(shape)), data_(std::move(data)) {
  check_dims(shape_);
  if (data_.size() != shape_numel(shape_))
    fail(ErrorCode::InvalidShape, "data length " + std::to_string(data_.size()) + " does not match " +
                                      shape_str(shape_));
}

Tensor Tensor::reshaped(Shape shape) const {
  if (shape_numel(shape) != numel())
    fail(ErrorCode::InvalidShape, "cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
  return Tensor(std::move(shape), data_);
}

Tensor slice_rows(const Tensor& source, std::size_t begin, std::size_t end) {
  if (begin >= end || end > source.dim(0))
    fail(ErrorCode::InvalidShape, "row slice [" + std::to_string(begin) + ", " + std::to_string(end) + ") of " +
                                      shape_str(source.shape()));
  Shape shape = source.shape();
  const std::size_t row = source.numel() / shape[0];
  shape[0] = end - begin;
  std::vector<float> data(source.data().begin() + static_cast<std::ptrdiff_t>(begin * row),
                          source.data().begin() + static_cast<std::ptrdiff_t>(end * row));
  return Tensor(std::move(shape), std::move(data));
}

void Tensor::fill(float value) { std::fill(data_.begin(), data_.end(), value); }

}  // namespace secnn
