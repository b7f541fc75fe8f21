#pragma once

#include <algorithm>
#include <array>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "floodrank/errors.hpp"

namespace floodrank::nn {

// Storage aligned to the widest SIMD width so vectorized reductions sum in the
// same order on every run.
template <typename Scalar>
using AlignedVector = std::vector<Scalar, Eigen::aligned_allocator<Scalar>>;

// Dense NCHW tensor. Fully-connected activations use (N, C, 1, 1).
template <typename Scalar>
class Tensor {
 public:
  Tensor() = default;
  Tensor(std::size_t n, std::size_t c, std::size_t h, std::size_t w, Scalar fill = Scalar(0))
      : shape_{n, c, h, w}, data_(n * c * h * w, fill) {}

  void resize(std::size_t n, std::size_t c, std::size_t h, std::size_t w) {
    shape_ = {n, c, h, w};
    data_.assign(n * c * h * w, Scalar(0));
  }

  std::size_t n() const { return shape_[0]; }
  std::size_t c() const { return shape_[1]; }
  std::size_t h() const { return shape_[2]; }
  std::size_t w() const { return shape_[3]; }
  std::size_t size() const { return data_.size(); }
  std::size_t per_sample() const { return shape_[1] * shape_[2] * shape_[3]; }
  const std::array<std::size_t, 4>& shape() const { return shape_; }

  Scalar* data() { return data_.data(); }
  const Scalar* data() const { return data_.data(); }
  std::span<Scalar> values() { return data_; }
  std::span<const Scalar> values() const { return data_; }

  Scalar* plane(std::size_t n, std::size_t c) { return data_.data() + (n * shape_[1] + c) * shape_[2] * shape_[3]; }
  const Scalar* plane(std::size_t n, std::size_t c) const {
    return data_.data() + (n * shape_[1] + c) * shape_[2] * shape_[3];
  }
  Scalar& operator()(std::size_t n, std::size_t c, std::size_t y, std::size_t x) {
    return data_[((n * shape_[1] + c) * shape_[2] + y) * shape_[3] + x];
  }
  Scalar operator()(std::size_t n, std::size_t c, std::size_t y, std::size_t x) const {
    return data_[((n * shape_[1] + c) * shape_[2] + y) * shape_[3] + x];
  }

  void fill(Scalar v) { std::fill(data_.begin(), data_.end(), v); }

 private:
  std::array<std::size_t, 4> shape_{0, 0, 0, 0};
  AlignedVector<Scalar> data_;
};

// A named trainable tensor with its gradient accumulator.
template <typename Scalar>
struct Parameter {
  std::string name;
  std::vector<std::size_t> shape;
  AlignedVector<Scalar> value;
  AlignedVector<Scalar> grad;

  Parameter() = default;
  Parameter(std::string n, std::vector<std::size_t> s) : name(std::move(n)), shape(std::move(s)) {
    std::size_t count = 1;
    for (auto d : shape) count *= d;
    value.assign(count, Scalar(0));
    grad.assign(count, Scalar(0));
  }
  void zero_grad() { std::fill(grad.begin(), grad.end(), Scalar(0)); }
};

}  // namespace floodrank::nn
