#pragma once

#include <cstdint>
#include <initializer_list>
#include <vector>

#include "spe/common.hpp"
#include "spe/rng.hpp"

namespace spe {

// Dense row-major tensor of doubles. Rank 0 (scalar), 1 and 2 are what the
// model actually uses; the shape is kept general anyway.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<int64_t> shape);
  Tensor(std::vector<int64_t> shape, std::vector<double> data);

  static Tensor scalar(double v);
  static Tensor zeros(std::vector<int64_t> shape) { return Tensor(std::move(shape)); }
  static Tensor full(std::vector<int64_t> shape, double v);
  static Tensor uniform(std::vector<int64_t> shape, Rng& rng, double lo, double hi);

  const std::vector<int64_t>& shape() const { return shape_; }
  int64_t numel() const { return static_cast<int64_t>(data_.size()); }
  int rank() const { return static_cast<int>(shape_.size()); }

  // 2-D accessors; rank-1 tensors behave as a single row.
  int64_t rows() const { return rank() == 2 ? shape_[0] : 1; }
  int64_t cols() const { return rank() == 2 ? shape_[1] : numel(); }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }

  double& operator[](int64_t i) { return data_[static_cast<size_t>(i)]; }
  double operator[](int64_t i) const { return data_[static_cast<size_t>(i)]; }
  double& at(int64_t r, int64_t c) { return data_[static_cast<size_t>(r * cols() + c)]; }
  double at(int64_t r, int64_t c) const { return data_[static_cast<size_t>(r * cols() + c)]; }

  double item() const;  // value of a single-element tensor

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }
  bool all_finite() const;

  void fill(double v);
  void add_scaled(const Tensor& other, double s);  // *this += s * other

  double squared_norm() const;

 private:
  std::vector<int64_t> shape_;
  std::vector<double> data_;
};

std::string shape_str(const std::vector<int64_t>& shape);

}  // namespace spe
