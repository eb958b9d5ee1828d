#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace face {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Dense row-major float32 tensor. Ops that expect a matrix interpret the
/// first extent as rows and the product of the remaining extents as columns.
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(std::vector<int64_t> shape)
      : shape_(std::move(shape)), data_(checked_numel(shape_), 0.0f) {}

  Tensor(std::vector<int64_t> shape, std::vector<float> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    if (checked_numel(shape_) != static_cast<int64_t>(data_.size()))
      throw ShapeError("Tensor: shape/data size mismatch");
  }

  static Tensor scalar(float v) { return Tensor({1, 1}, {v}); }

  static Tensor full(std::vector<int64_t> shape, float v) {
    Tensor t(std::move(shape));
    std::fill(t.data_.begin(), t.data_.end(), v);
    return t;
  }

  static Tensor zeros(std::vector<int64_t> shape) { return Tensor(std::move(shape)); }

  static Tensor identity(int64_t n) {
    Tensor t({n, n});
    for (int64_t i = 0; i < n; ++i) t.data_[i * n + i] = 1.0f;
    return t;
  }

  static Tensor randn(std::vector<int64_t> shape, std::mt19937_64& rng, float stddev = 1.0f) {
    Tensor t(std::move(shape));
    std::normal_distribution<float> d(0.0f, stddev);
    for (auto& v : t.data_) v = d(rng);
    return t;
  }

  static Tensor uniform(std::vector<int64_t> shape, std::mt19937_64& rng, float lo, float hi) {
    Tensor t(std::move(shape));
    std::uniform_real_distribution<float> d(lo, hi);
    for (auto& v : t.data_) v = d(rng);
    return t;
  }

  const std::vector<int64_t>& shape() const { return shape_; }
  int64_t numel() const { return static_cast<int64_t>(data_.size()); }
  int64_t rows() const { return shape_.empty() ? 0 : shape_[0]; }
  int64_t cols() const { return rows() == 0 ? 0 : numel() / rows(); }

  float* data() { return data_.data(); }
  const float* data() const { return data_.data(); }
  float& at(int64_t i) { return data_[i]; }
  float at(int64_t i) const { return data_[i]; }
  std::vector<float>& vec() { return data_; }
  const std::vector<float>& vec() const { return data_; }

  bool all_finite() const {
    for (float v : data_)
      if (!std::isfinite(v)) return false;
    return true;
  }

  /// Index of the first non-finite entry, or -1.
  int64_t first_non_finite() const {
    for (int64_t i = 0; i < numel(); ++i)
      if (!std::isfinite(data_[i])) return i;
    return -1;
  }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  std::string shape_str() const {
    std::string s = "[";
    for (size_t i = 0; i < shape_.size(); ++i) {
      if (i) s += "x";
      s += std::to_string(shape_[i]);
    }
    return s + "]";
  }

 private:
  static int64_t checked_numel(const std::vector<int64_t>& shape) {
    if (shape.empty()) throw ShapeError("Tensor: empty shape");
    int64_t n = 1;
    for (int64_t e : shape) {
      if (e <= 0) throw ShapeError("Tensor: non-positive extent");
      n *= e;
    }
    return n;
  }

  std::vector<int64_t> shape_;
  std::vector<float> data_;
};

}  // namespace face
