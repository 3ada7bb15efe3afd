#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace nnc {

class Matrix;

/// Dense N-way tensor of doubles, N in {1,2,3,4}.
///
/// Linearization: mode 1 varies fastest. The flat offset of element
/// (i1, ..., iN), all 0-based, is i1 + I1*(i2 + I2*(i3 + ...)).
/// Mode numbers in the public API are 1-based; element indices are 0-based.
///
/// Tensors are treated as immutable values once built; every operation below
/// returns a fresh tensor.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<int> shape);
  Tensor(std::vector<int> shape, std::vector<double> data);

  int order() const { return static_cast<int>(shape_.size()); }
  /// Extent of the given 1-based mode.
  int extent(int mode) const;
  const std::vector<int>& shape() const { return shape_; }
  std::int64_t size() const { return static_cast<std::int64_t>(data_.size()); }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::vector<double>& values() { return data_; }
  const std::vector<double>& values() const { return data_; }

  std::int64_t offset_of(std::span<const int> index) const;

  template <class... Ix>
  double operator()(Ix... ix) const {
    const int idx[] = {static_cast<int>(ix)...};
    return data_[offset_of(std::span<const int>(idx, sizeof...(ix)))];
  }
  template <class... Ix>
  double& operator()(Ix... ix) {
    const int idx[] = {static_cast<int>(ix)...};
    return data_[offset_of(std::span<const int>(idx, sizeof...(ix)))];
  }

  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

 private:
  std::vector<int> shape_;
  std::vector<double> data_;
};

/// Dense matrix, column-major. A Matrix converts losslessly to and from a
/// 2-way Tensor: rows are mode 1, columns mode 2, identical memory layout.
class Matrix {
 public:
  Matrix() = default;
  Matrix(int rows, int cols);
  Matrix(int rows, int cols, std::vector<double> data);
  static Matrix identity(int n);

  int rows() const { return rows_; }
  int cols() const { return cols_; }
  std::int64_t size() const { return static_cast<std::int64_t>(data_.size()); }

  double operator()(int r, int c) const {
    return data_[static_cast<std::size_t>(c) * rows_ + r];
  }
  double& operator()(int r, int c) {
    return data_[static_cast<std::size_t>(c) * rows_ + r];
  }

  const double* col(int c) const { return data_.data() + static_cast<std::size_t>(c) * rows_; }
  double* col(int c) { return data_.data() + static_cast<std::size_t>(c) * rows_; }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::vector<double>& values() { return data_; }
  const std::vector<double>& values() const { return data_; }

  Tensor to_tensor() const;
  static Matrix from_tensor(const Tensor& t);

 private:
  int rows_ = 0;
  int cols_ = 0;
  std::vector<double> data_;
};

Matrix matmul(const Matrix& a, const Matrix& b);
Matrix transpose(const Matrix& a);
double frobenius_norm(const Matrix& a);
double frobenius_norm(const Tensor& t);

/// Mode-k unfolding. Row r of the result is the slice with index r along
/// `mode`; columns cycle the remaining modes in increasing mode order, the
/// lowest remaining mode varying fastest. Exact inverse of fold().
Matrix matricize(const Tensor& t, int mode);

/// Inverse of matricize: rebuilds the tensor of the given shape from its
/// mode-k unfolding.
Tensor fold(const Matrix& m, int mode, const std::vector<int>& shape);

/// Mode-k product: contracts the matrix against mode `mode` of the tensor.
/// Result shape equals t.shape() with extent(mode) replaced by m.rows().
Tensor mode_product(const Tensor& t, const Matrix& m, int mode);

/// Kronecker product: block matrix a(i,j) * b.
Matrix kronecker(const Matrix& a, const Matrix& b);

}  // namespace nnc
