#pragma once

#include <cstddef>
#include <functional>
#include <new>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "segmil/error.hpp"

namespace segmil {

inline std::size_t ShapeSize(const std::vector<std::size_t>& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string ShapeString(const std::vector<std::size_t>& shape);

// Fixed 64-byte alignment so vectorized reductions take the same path on every run.
template <typename T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlign{64};
  AlignedAllocator() = default;
  template <typename U>
  AlignedAllocator(const AlignedAllocator<U>&) noexcept {}
  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlign)); }
  void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, kAlign); }
  template <typename U>
  bool operator==(const AlignedAllocator<U>&) const noexcept { return true; }
};

// Dense row-major tensor. Data length always equals the product of the shape.
template <typename T>
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> shape, T fill = T(0))
      : shape_(std::move(shape)), data_(ShapeSize(shape_), fill) {}
  Tensor(std::vector<std::size_t> shape, const std::vector<T>& data)
      : shape_(std::move(shape)), data_(data.begin(), data.end()) {
    if (data_.size() != ShapeSize(shape_)) {
      throw Error(ErrorCode::kShapeMismatch, "data length does not match shape " + ShapeString(shape_));
    }
  }

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::span<T> values() { return data_; }
  std::span<const T> values() const { return data_; }
  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  void Resize(std::vector<std::size_t> shape) {
    shape_ = std::move(shape);
    data_.resize(ShapeSize(shape_));
  }
  void Reshape(std::vector<std::size_t> shape) {
    if (ShapeSize(shape) != data_.size()) {
      throw Error(ErrorCode::kShapeMismatch, "cannot reshape " + ShapeString(shape_) + " to " + ShapeString(shape));
    }
    shape_ = std::move(shape);
  }
  void Fill(T value) { std::fill(data_.begin(), data_.end(), value); }

  // Views the tensor as rows x (size / rows).
  auto Matrix(std::size_t rows) {
    return Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
        data_.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(rows ? size() / rows : 0));
  }
  auto Matrix(std::size_t rows) const {
    return Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
        data_.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(rows ? size() / rows : 0));
  }

  template <typename U>
  Tensor<U> Cast() const {
    return Tensor<U>(shape_, std::vector<U>(data_.begin(), data_.end()));
  }

  bool operator==(const Tensor& other) const = default;

 private:
  std::vector<std::size_t> shape_;
  std::vector<T, AlignedAllocator<T>> data_;
};

template <typename T>
struct Param {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;

  Param() = default;
  Param(std::string n, std::vector<std::size_t> shape)
      : name(std::move(n)), value(shape), grad(std::move(shape)) {}
};

}  // namespace segmil
