#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <functional>
#include <initializer_list>
#include <numeric>
#include <string>
#include <vector>

#include "oscdet/error.hpp"

namespace oscdet::nn {

using Index = Eigen::Index;
using Shape = std::vector<Index>;

template <typename Scalar>
using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

inline std::string shape_string(const Shape& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

inline Index shape_size(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), Index{1}, std::multiplies<>{});
}

// Dense rank-1..3 array in row-major order. Activations of sequence layers
// are [length x channels], dense activations are [n], conv kernels are
// [kernel x in_channels x out_channels]. Storage is an Eigen vector so every
// layer can view it as a matrix without copying.
template <typename Scalar>
class BasicTensor {
 public:
  using VectorType = Vector<Scalar>;
  using MatrixMap = Eigen::Map<RowMatrix<Scalar>>;
  using ConstMatrixMap = Eigen::Map<const RowMatrix<Scalar>>;

  BasicTensor() = default;

  explicit BasicTensor(Shape shape) : shape_(std::move(shape)) {
    check_shape(shape_);
    data_ = VectorType::Zero(shape_size(shape_));
  }

  BasicTensor(Shape shape, VectorType data) : shape_(std::move(shape)), data_(std::move(data)) {
    check_shape(shape_);
    if (data_.size() != shape_size(shape_))
      throw ShapeError("tensor data length " + std::to_string(data_.size()) + " does not match shape " +
                       shape_string(shape_));
  }

  BasicTensor(Shape shape, std::initializer_list<Scalar> values)
      : BasicTensor(std::move(shape), VectorType::Map(values.begin(), Index(values.size()))) {}

  static BasicTensor zeros(Shape shape) { return BasicTensor(std::move(shape)); }

  static BasicTensor constant(Shape shape, Scalar value) {
    BasicTensor t(std::move(shape));
    t.data_.setConstant(value);
    return t;
  }

  std::size_t rank() const noexcept { return shape_.size(); }
  const Shape& shape() const noexcept { return shape_; }
  Index dim(std::size_t axis) const { return shape_.at(axis); }
  Index size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return shape_.empty(); }

  VectorType& vec() noexcept { return data_; }
  const VectorType& vec() const noexcept { return data_; }
  Scalar* data() noexcept { return data_.data(); }
  const Scalar* data() const noexcept { return data_.data(); }

  Scalar& operator[](Index i) { return data_[i]; }
  Scalar operator[](Index i) const { return data_[i]; }

  Scalar& operator()(Index i, Index j) { return data_[i * stride0() + j]; }
  Scalar operator()(Index i, Index j) const { return data_[i * stride0() + j]; }
  Scalar& operator()(Index i, Index j, Index k) { return data_[(i * shape_[1] + j) * shape_[2] + k]; }
  Scalar operator()(Index i, Index j, Index k) const { return data_[(i * shape_[1] + j) * shape_[2] + k]; }

  // [dim0 x rest] view.
  MatrixMap matrix() { return MatrixMap(data_.data(), shape_[0], size() / shape_[0]); }
  ConstMatrixMap matrix() const { return ConstMatrixMap(data_.data(), shape_[0], size() / shape_[0]); }

  // [rows x cols] view; rows*cols must equal size().
  MatrixMap matrix(Index rows, Index cols) {
    check_view(rows, cols);
    return MatrixMap(data_.data(), rows, cols);
  }
  ConstMatrixMap matrix(Index rows, Index cols) const {
    check_view(rows, cols);
    return ConstMatrixMap(data_.data(), rows, cols);
  }

  BasicTensor reshaped(Shape shape) const { return BasicTensor(std::move(shape), data_); }

  bool all_finite() const { return data_.allFinite(); }

  void set_zero() { data_.setZero(); }

  friend bool operator==(const BasicTensor& a, const BasicTensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  static void check_shape(const Shape& s) {
    if (s.empty() || s.size() > 3) throw ShapeError("tensor rank must be 1..3, got " + std::to_string(s.size()));
    if (std::any_of(s.begin(), s.end(), [](Index e) { return e <= 0; }))
      throw ShapeError("tensor extents must be positive: " + shape_string(s));
  }

  Index stride0() const { return size() / shape_[0]; }

  void check_view(Index rows, Index cols) const {
    if (rows * cols != size())
      throw ShapeError("cannot view " + shape_string(shape_) + " as " + std::to_string(rows) + "x" +
                       std::to_string(cols));
  }

  Shape shape_;
  VectorType data_;
};

using Tensor = BasicTensor<double>;

}  // namespace oscdet::nn
