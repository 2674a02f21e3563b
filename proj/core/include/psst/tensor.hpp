#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "psst/errors.hpp"

namespace psst::ad {

// Dense row-major tensor of 64-bit reals. Rank 1 and 2 cover everything the
// agents need; row vectors are stored as [1, n] matrices throughout the nets.
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(std::vector<std::size_t> shape)
      : shape_(std::move(shape)), data_(checked_numel(shape_), 0.0) {}

  Tensor(std::vector<std::size_t> shape, std::vector<double> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    if (checked_numel(shape_) != data_.size()) {
      throw ShapeError("tensor: shape does not match data length");
    }
  }

  static Tensor scalar(double v) { return Tensor({1}, {v}); }

  static Tensor zeros(std::vector<std::size_t> shape) {
    return Tensor(std::move(shape));
  }

  static Tensor full(std::vector<std::size_t> shape, double v) {
    Tensor t(std::move(shape));
    t.fill(v);
    return t;
  }

  // [1, n] row vector.
  static Tensor row_vector(std::vector<double> v) {
    const std::size_t n = v.size();
    return Tensor({1, n}, std::move(v));
  }

  // [1, n] one-hot row vector.
  static Tensor one_hot(std::size_t n, std::size_t index) {
    if (index >= n) throw ShapeError("one_hot: index out of range");
    Tensor t({1, n});
    t.data_[index] = 1.0;
    return t;
  }

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t numel() const { return data_.size(); }

  std::size_t rows() const {
    require_rank2("rows");
    return shape_[0];
  }
  std::size_t cols() const {
    require_rank2("cols");
    return shape_[1];
  }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  double& at(std::size_t r, std::size_t c) {
    require_rank2("at");
    return data_[r * shape_[1] + c];
  }
  double at(std::size_t r, std::size_t c) const {
    require_rank2("at");
    return data_[r * shape_[1] + c];
  }

  std::vector<double>& data() { return data_; }
  const std::vector<double>& data() const { return data_; }

  void fill(double v) {
    for (double& x : data_) x = v;
  }

  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

  bool all_finite() const {
    for (double x : data_) {
      if (!std::isfinite(x)) return false;
    }
    return true;
  }

  std::string shape_string() const {
    std::string s = "[";
    for (std::size_t i = 0; i < shape_.size(); ++i) {
      if (i) s += "x";
      s += std::to_string(shape_[i]);
    }
    return s + "]";
  }

 private:
  static std::size_t checked_numel(const std::vector<std::size_t>& shape) {
    if (shape.empty()) throw ShapeError("tensor: rank must be >= 1");
    std::size_t n = 1;
    for (std::size_t d : shape) {
      if (d == 0) throw ShapeError("tensor: zero dimension");
      n *= d;
    }
    return n;
  }

  void require_rank2(const char* who) const {
    if (shape_.size() != 2) {
      throw ShapeError(std::string(who) + ": tensor is not rank 2");
    }
  }

  std::vector<std::size_t> shape_;
  std::vector<double> data_;
};

}  // namespace psst::ad
