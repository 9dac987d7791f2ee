#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace graphmar {

using Shape = std::vector<int>;

std::size_t shape_numel(const Shape& shape);
std::string shape_to_string(const Shape& shape);

/// Dense row-major float32 tensor of rank 1 to 4.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, float fill = 0.0f);
  Tensor(Shape shape, std::vector<float> data);

  static Tensor zeros_like(const Tensor& other) { return Tensor(other.shape_); }

  const Shape& shape() const noexcept { return shape_; }
  int rank() const noexcept { return static_cast<int>(shape_.size()); }
  int dim(int axis) const;
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  std::span<float> data() noexcept { return data_; }
  std::span<const float> data() const noexcept { return data_; }
  const std::vector<float>& values() const noexcept { return data_; }

  float& operator[](std::size_t i) noexcept { return data_[i]; }
  float operator[](std::size_t i) const noexcept { return data_[i]; }

  // 2-D accessors; rank must be 2.
  float& at(int r, int c) { return data_[static_cast<std::size_t>(r) * shape_[1] + c]; }
  float at(int r, int c) const { return data_[static_cast<std::size_t>(r) * shape_[1] + c]; }

  /// Same data, new shape with identical element count.
  Tensor reshaped(Shape shape) const;

  void fill(float value);
  bool all_finite() const noexcept;
  float min() const;
  float max() const;
  double sum() const noexcept;

  friend bool operator==(const Tensor& a, const Tensor& b) = default;

 private:
  Shape shape_;
  std::vector<float> data_;
};

/// Integer pixel coordinate, row-major.
struct Pixel {
  int row = 0;
  int col = 0;
  friend bool operator==(const Pixel&, const Pixel&) = default;
  friend auto operator<=>(const Pixel&, const Pixel&) = default;
};

inline constexpr float kHuMin = -1024.0f;
inline constexpr float kHuMax = 4096.0f;

/// Single CT slice in Hounsfield units, clamped to [kHuMin, kHuMax].
class HuImage {
 public:
  HuImage() = default;
  HuImage(int height, int width, float fill = -1000.0f);
  explicit HuImage(Tensor values);

  int height() const noexcept { return height_; }
  int width() const noexcept { return width_; }
  const Tensor& tensor() const noexcept { return values_; }
  float at(int r, int c) const { return values_.at(r, c); }
  void set(int r, int c, float hu);

 private:
  int height_ = 0;
  int width_ = 0;
  Tensor values_;
};

class BinaryMask {
 public:
  BinaryMask() = default;
  BinaryMask(int height, int width);
  /// Any nonzero value counts as set.
  static BinaryMask from_tensor(const Tensor& t);

  int height() const noexcept { return height_; }
  int width() const noexcept { return width_; }
  bool at(int r, int c) const { return bits_[index(r, c)] != 0; }
  bool at(Pixel p) const { return at(p.row, p.col); }
  void set(int r, int c, bool v = true) { bits_[index(r, c)] = v ? 1 : 0; }
  bool contains(int r, int c) const noexcept { return r >= 0 && c >= 0 && r < height_ && c < width_; }
  std::size_t count() const noexcept;
  bool any() const noexcept { return count() > 0; }
  std::span<const std::uint8_t> bits() const noexcept { return bits_; }
  Tensor to_tensor() const;

  friend bool operator==(const BinaryMask&, const BinaryMask&) = default;

 private:
  std::size_t index(int r, int c) const { return static_cast<std::size_t>(r) * width_ + c; }
  int height_ = 0;
  int width_ = 0;
  std::vector<std::uint8_t> bits_;
};

}  // namespace graphmar
