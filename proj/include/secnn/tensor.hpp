#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace secnn {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

// Dense row-major f32 array. Activations are laid out (batch, channel, height, width).
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, float fill = 0.0f);
  Tensor(Shape shape, std::vector<float> data);

  static Tensor scalar(float value) { return Tensor(Shape{1}, value); }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t numel() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  std::span<float> data() noexcept { return data_; }
  std::span<const float> data() const noexcept { return data_; }
  float* ptr() noexcept { return data_.data(); }
  const float* ptr() const noexcept { return data_.data(); }

  float& operator[](std::size_t i) noexcept { return data_[i]; }
  float operator[](std::size_t i) const noexcept { return data_[i]; }

  // 4-D accessors for (n, c, h, w) tensors.
  float& at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) {
    return data_[((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
  }
  float at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const {
    return data_[((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
  }

  Tensor reshaped(Shape shape) const;
  void fill(float value);

  bool operator==(const Tensor& other) const = default;

 private:
  Shape shape_;
  std::vector<float> data_;
};

// Rows [begin, end) of the leading axis.
Tensor slice_rows(const Tensor& source, std::size_t begin, std::size_t end);

// Grows `source` along `axis` to `new_extent`; existing entries keep their
// positions, appended entries are produced by `fill` in row-major order.
template <typename Fill>
Tensor grow_axis(const Tensor& source, std::size_t axis, std::size_t new_extent, Fill&& fill) {
  Shape shape = source.shape();
  const std::size_t old_extent = shape.at(axis);
  shape[axis] = new_extent;
  Tensor out(shape);
  std::size_t outer = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= shape[i];
  std::size_t inner = 1;
  for (std::size_t i = axis + 1; i < shape.size(); ++i) inner *= shape[i];
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t a = 0; a < new_extent; ++a) {
      for (std::size_t i = 0; i < inner; ++i) {
        const std::size_t dst = (o * new_extent + a) * inner + i;
        out[dst] = a < old_extent ? source[(o * old_extent + a) * inner + i] : fill();
      }
    }
  }
  return out;
}

}  // namespace secnn
