#include "graphmar/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace graphmar {

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (int d : shape) n *= static_cast<std::size_t>(d);
  return n;
}

std::string shape_to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

namespace {

void validate_shape(const Shape& shape) {
  if (shape.empty() || shape.size() > 4)
    throw std::invalid_argument("tensor rank must be 1..4, got " + std::to_string(shape.size()));
  for (int d : shape)
    if (d < 0) throw std::invalid_argument("negative tensor dimension in " + shape_to_string(shape));
}

}  // namespace

Tensor::Tensor(Shape shape, float fill) : shape_(std::move(shape)) {
  validate_shape(shape_);
  data_.assign(shape_numel(shape_), fill);
}

Tensor::Tensor(Shape shape, std::vector<float> data) : shape_(std::move(shape)), data_(std::move(data)) {
  validate_shape(shape_);
  if (data_.size() != shape_numel(shape_))
    throw std::invalid_argument("data length " + std::to_string(data_.size()) + " does not match shape " +
                                shape_to_string(shape_));
}

int Tensor::dim(int axis) const {
  if (axis < 0) axis += rank();
  if (axis < 0 || axis >= rank()) throw std::out_of_range("tensor axis out of range");
  return shape_[axis];
}

Tensor Tensor::reshaped(Shape shape) const {
  if (shape_numel(shape) != data_.size())
    throw std::invalid_argument("cannot reshape " + shape_to_string(shape_) + " to " + shape_to_string(shape));
  return Tensor(std::move(shape), data_);
}

void Tensor::fill(float value) { std::fill(data_.begin(), data_.end(), value); }

bool Tensor::all_finite() const noexcept {
  return std::all_of(data_.begin(), data_.end(), [](float v) { return std::isfinite(v); });
}

float Tensor::min() const {
  if (data_.empty()) throw std::logic_error("min of empty tensor");
  return *std::min_element(data_.begin(), data_.end());
}

float Tensor::max() const {
  if (data_.empty()) throw std::logic_error("max of empty tensor");
  return *std::max_element(data_.begin(), data_.end());
}

double Tensor::sum() const noexcept {
  double acc = 0.0;
  for (float v : data_) acc += v;
  return acc;
}

HuImage::HuImage(int height, int width, float fill)
    : height_(height), width_(width), values_({height, width}, std::clamp(fill, kHuMin, kHuMax)) {}

HuImage::HuImage(Tensor values) {
  if (values.rank() == 3 && values.dim(0) == 1) values = values.reshaped({values.dim(1), values.dim(2)});
  if (values.rank() != 2) throw std::invalid_argument("HU image must be a 2-D tensor");
  height_ = values.dim(0);
  width_ = values.dim(1);
  for (float& v : values.data()) v = std::isfinite(v) ? std::clamp(v, kHuMin, kHuMax) : kHuMin;
  values_ = std::move(values);
}

void HuImage::set(int r, int c, float hu) { values_.at(r, c) = std::clamp(hu, kHuMin, kHuMax); }

BinaryMask::BinaryMask(int height, int width)
    : height_(height), width_(width), bits_(static_cast<std::size_t>(height) * width, 0) {
  if (height < 0 || width < 0) throw std::invalid_argument("negative mask dimension");
}

BinaryMask BinaryMask::from_tensor(const Tensor& t) {
  Tensor t2 = t;
  if (t2.rank() == 3 && t2.dim(0) == 1) t2 = t2.reshaped({t2.dim(1), t2.dim(2)});
  if (t2.rank() != 2) throw std::invalid_argument("mask tensor must be 2-D");
  BinaryMask m(t2.dim(0), t2.dim(1));
  for (std::size_t i = 0; i < t2.size(); ++i) m.bits_[i] = t2[i] != 0.0f ? 1 : 0;
  return m;
}

std::size_t BinaryMask::count() const noexcept {
  return static_cast<std::size_t>(std::count(bits_.begin(), bits_.end(), std::uint8_t{1}));
}

Tensor BinaryMask::to_tensor() const {
  Tensor t({height_, width_});
  for (std::size_t i = 0; i < bits_.size(); ++i) t[i] = bits_[i] ? 1.0f : 0.0f;
  return t;
}

}  // namespace graphmar
