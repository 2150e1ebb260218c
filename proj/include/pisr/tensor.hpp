#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace pisr {

// Storage precision tag. All arithmetic runs in double; the tag controls
// serialization width and is preserved through save/load.
enum class DType : std::uint8_t { f32 = 0, f64 = 1 };

class ShapeError : public std::runtime_error {
 public:
  explicit ShapeError(const std::string& msg) : std::runtime_error(msg) {}
};

class IoError : public std::runtime_error {
 public:
  explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// Dense row-major tensor, rank 0..4.
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(std::vector<std::int64_t> shape, DType dt = DType::f64)
      : shape_(std::move(shape)), dtype_(dt) {
    validate_shape();
    data_.assign(static_cast<std::size_t>(count(shape_)), 0.0);
  }

  static Tensor scalar(double v, DType dt = DType::f64) {
    Tensor t(std::vector<std::int64_t>{}, dt);
    t.data_ = {v};
    return t;
  }

  static Tensor full(std::vector<std::int64_t> shape, double v,
                     DType dt = DType::f64) {
    Tensor t(std::move(shape), dt);
    for (double& x : t.data_) x = v;
    return t;
  }

  static Tensor from_data(std::vector<std::int64_t> shape,
                          std::vector<double> values, DType dt = DType::f64) {
    Tensor t;
    t.shape_ = std::move(shape);
    t.dtype_ = dt;
    t.validate_shape();
    if (count(t.shape_) != static_cast<std::int64_t>(values.size())) {
      throw ShapeError("from_data: shape " + shape_string(t.shape_) +
                       " needs " + std::to_string(count(t.shape_)) +
                       " values, got " + std::to_string(values.size()));
    }
    t.data_ = std::move(values);
    return t;
  }

  std::int64_t rank() const { return static_cast<std::int64_t>(shape_.size()); }
  const std::vector<std::int64_t>& shape() const { return shape_; }
  std::int64_t dim(std::int64_t i) const { return shape_.at(static_cast<std::size_t>(i)); }
  std::int64_t size() const { return static_cast<std::int64_t>(data_.size()); }
  bool empty() const { return data_.empty(); }

  DType dtype() const { return dtype_; }
  Tensor& set_dtype(DType dt) { dtype_ = dt; return *this; }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::vector<double>& values() { return data_; }
  const std::vector<double>& values() const { return data_; }

  double& operator[](std::int64_t i) { return data_[static_cast<std::size_t>(i)]; }
  double operator[](std::int64_t i) const { return data_[static_cast<std::size_t>(i)]; }

  double& at(std::int64_t i) { return data_[static_cast<std::size_t>(i)]; }
  double& at(std::int64_t i, std::int64_t j) {
    return data_[static_cast<std::size_t>(i * shape_[1] + j)];
  }
  double& at(std::int64_t i, std::int64_t j, std::int64_t k) {
    return data_[static_cast<std::size_t>((i * shape_[1] + j) * shape_[2] + k)];
  }
  double& at(std::int64_t i, std::int64_t j, std::int64_t k, std::int64_t l) {
    return data_[static_cast<std::size_t>(((i * shape_[1] + j) * shape_[2] + k) * shape_[3] + l)];
  }
  double at(std::int64_t i) const { return data_[static_cast<std::size_t>(i)]; }
  double at(std::int64_t i, std::int64_t j) const {
    return data_[static_cast<std::size_t>(i * shape_[1] + j)];
  }
  double at(std::int64_t i, std::int64_t j, std::int64_t k) const {
    return data_[static_cast<std::size_t>((i * shape_[1] + j) * shape_[2] + k)];
  }
  double at(std::int64_t i, std::int64_t j, std::int64_t k, std::int64_t l) const {
    return data_[static_cast<std::size_t>(((i * shape_[1] + j) * shape_[2] + k) * shape_[3] + l)];
  }

  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

  std::string shape_str() const { return shape_string(shape_); }

  static std::int64_t count(const std::vector<std::int64_t>& shape) {
    std::int64_t n = 1;
    for (std::int64_t d : shape) n *= d;
    return n;
  }

  static std::string shape_string(const std::vector<std::int64_t>& shape) {
    if (shape.empty()) return "scalar";
    std::string s;
    for (std::size_t i = 0; i < shape.size(); ++i) {
      if (i) s += "x";
      s += std::to_string(shape[i]);
    }
    return s;
  }

 private:
  void validate_shape() const {
    if (shape_.size() > 4) {
      throw ShapeError("tensor rank " + std::to_string(shape_.size()) +
                       " exceeds 4 (" + shape_string(shape_) + ")");
    }
    for (std::int64_t d : shape_) {
      if (d <= 0) {
        throw ShapeError("non-positive dimension in shape " + shape_string(shape_));
      }
    }
  }

  std::vector<std::int64_t> shape_;
  DType dtype_ = DType::f64;
  std::vector<double> data_;
};

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (!a.same_shape(b)) {
    throw ShapeError(std::string(op) + ": shape mismatch " + a.shape_str() +
                     " vs " + b.shape_str());
  }
}

}  // namespace pisr
