#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace netsurgeon {

struct Shape3 {
  int channels = 1;
  int height = 1;
  int width = 1;

  std::size_t size() const {
    return static_cast<std::size_t>(channels) * height * width;
  }
  friend bool operator==(const Shape3&, const Shape3&) = default;
};

/// Dense (channel, row, column) grid of 32-bit reals.
class Tensor {
 public:
  Tensor() : Tensor(Shape3{}) {}
  explicit Tensor(Shape3 shape, float fill = 0.0f);
  Tensor(Shape3 shape, std::vector<float> data);

  const Shape3& shape() const { return shape_; }
  int channels() const { return shape_.channels; }
  int height() const { return shape_.height; }
  int width() const { return shape_.width; }
  std::size_t size() const { return data_.size(); }

  float& at(int c, int y, int x) { return data_[index(c, y, x)]; }
  float at(int c, int y, int x) const { return data_[index(c, y, x)]; }

  std::span<float> data() { return data_; }
  std::span<const float> data() const { return data_; }

  std::span<float> plane(int c);
  std::span<const float> plane(int c) const;

  /// Copy of a single channel as a 1-channel tensor.
  Tensor channel(int c) const;

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  std::size_t index(int c, int y, int x) const {
    return (static_cast<std::size_t>(c) * shape_.height + y) * shape_.width + x;
  }

  Shape3 shape_;
  std::vector<float> data_;
};

}  // namespace netsurgeon
