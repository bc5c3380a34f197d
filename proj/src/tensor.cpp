#include "spe/tensor.hpp"

#include <cmath>
#include <numeric>
#include <sstream>

namespace spe {

namespace {
int64_t shape_numel(const std::vector<int64_t>& shape) {
  int64_t n = 1;
  for (int64_t e : shape) {
    check(e > 0, "tensor extents must be positive");
    n *= e;
  }
  return n;
}
}  // namespace

Tensor::Tensor(std::vector<int64_t> shape)
    : shape_(std::move(shape)), data_(static_cast<size_t>(shape_numel(shape_)), 0.0) {}

Tensor::Tensor(std::vector<int64_t> shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
  check(shape_numel(shape_) == static_cast<int64_t>(data_.size()), "tensor data length does not match shape");
}

Tensor Tensor::scalar(double v) { return Tensor({1}, {v}); }

Tensor Tensor::full(std::vector<int64_t> shape, double v) {
  Tensor t(std::move(shape));
  t.fill(v);
  return t;
}

Tensor Tensor::uniform(std::vector<int64_t> shape, Rng& rng, double lo, double hi) {
  Tensor t(std::move(shape));
  for (auto& x : t.data_) x = rng.uniform(lo, hi);
  return t;
}

double Tensor::item() const {
  check(numel() == 1, "item() requires a single-element tensor, got shape " + shape_str(shape_));
  return data_[0];
}

bool Tensor::all_finite() const {
  for (double v : data_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

void Tensor::fill(double v) {
  for (auto& x : data_) x = v;
}

void Tensor::add_scaled(const Tensor& other, double s) {
  check(same_shape(other), "add_scaled: shape mismatch");
  const double* o = other.data();
  double* d = data();
  const int64_t n = numel();
  for (int64_t i = 0; i < n; ++i) d[i] += s * o[i];
}

double Tensor::squared_norm() const {
  double s = 0;
  for (double v : data_) s += v * v;
  return s;
}

std::string shape_str(const std::vector<int64_t>& shape) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << "]";
  return os.str();
}

std::string to_hex(uint64_t v) {
  static const char* digits = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i) {
    s[static_cast<size_t>(i)] = digits[v & 0xf];
    v >>= 4;
  }
  return s;
}

}  // namespace spe
