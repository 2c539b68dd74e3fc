#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "tmpa/check.hpp"

namespace tmpa {

using Shape = std::vector<int>;

int64_t shape_numel(const Shape& s);
std::string shape_str(const Shape& s);

// Dense row-major tensor of 64-bit reals. Plain value type: copying copies
// the buffer, so tensors are safe to move between threads. Gradient tracking
// lives on the Tape, not here.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape) : shape_(std::move(shape)), data_(shape_numel(shape_), 0.0) {}
  Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
    TMPA_CHECK(shape_numel(shape_) == static_cast<int64_t>(data_.size()),
               "tensor data length must equal product of shape " + shape_str(shape_));
  }

  static Tensor full(Shape shape, double v);
  static Tensor scalar(double v) { return Tensor({1}, {v}); }

  const Shape& shape() const { return shape_; }
  int ndim() const { return static_cast<int>(shape_.size()); }
  int dim(int i) const { return shape_[static_cast<size_t>(i)]; }
  int64_t size() const { return static_cast<int64_t>(data_.size()); }
  bool empty() const { return data_.empty(); }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::vector<double>& raw() { return data_; }
  const std::vector<double>& raw() const { return data_; }

  double& operator[](int64_t i) { return data_[static_cast<size_t>(i)]; }
  double operator[](int64_t i) const { return data_[static_cast<size_t>(i)]; }

  // Multi-dimensional accessors for the shapes used throughout: [B,C] and [B,C,H,W].
  double& at2(int i, int j) { return data_[static_cast<size_t>(i) * dim(1) + j]; }
  double at2(int i, int j) const { return data_[static_cast<size_t>(i) * dim(1) + j]; }
  double& at4(int b, int c, int y, int x) {
    return data_[((static_cast<size_t>(b) * dim(1) + c) * dim(2) + y) * dim(3) + x];
  }
  double at4(int b, int c, int y, int x) const {
    return data_[((static_cast<size_t>(b) * dim(1) + c) * dim(2) + y) * dim(3) + x];
  }

  double item() const {
    TMPA_CHECK(size() == 1, "item() requires a scalar tensor, got shape " + shape_str(shape_));
    return data_[0];
  }

  bool all_finite() const;
  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

 private:
  Shape shape_;
  std::vector<double> data_;
};

bool bitwise_equal(const Tensor& a, const Tensor& b);

}  // namespace tmpa
