#include "nnc/tensor.hpp"

#include <cmath>
#include <cstddef>
#include <string>

#include "nnc/errors.hpp"

namespace nnc {

namespace {

std::int64_t checked_volume(const std::vector<int>& shape) {
  if (shape.empty()) throw InvalidArgument("tensor shape must have at least one mode");
  std::int64_t n = 1;
  for (int e : shape) {
    if (e <= 0) throw InvalidArgument("tensor extents must be positive");
    n *= e;
  }
  return n;
}

}  // namespace

Tensor::Tensor(std::vector<int> shape) : shape_(std::move(shape)) {
  data_.assign(static_cast<std::size_t>(checked_volume(shape_)), 0.0);
}

Tensor::Tensor(std::vector<int> shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  if (checked_volume(shape_) != static_cast<std::int64_t>(data_.size()))
    throw InvalidArgument("tensor data length does not match the shape volume");
}

int Tensor::extent(int mode) const {
  if (mode < 1 || mode > order())
    throw InvalidArgument("mode " + std::to_string(mode) + " out of range for order " +
                          std::to_string(order()));
  return shape_[mode - 1];
}

std::int64_t Tensor::offset_of(std::span<const int> index) const {
  if (static_cast<int>(index.size()) != order())
    throw InvalidArgument("index arity does not match tensor order");
  std::int64_t off = 0;
  std::int64_t stride = 1;
  for (int m = 0; m < order(); ++m) {
    if (index[m] < 0 || index[m] >= shape_[m]) throw InvalidArgument("index out of bounds");
    off += index[m] * stride;
    stride *= shape_[m];
  }
  return off;
}

Matrix::Matrix(int rows, int cols) : rows_(rows), cols_(cols) {
  if (rows <= 0 || cols <= 0) throw InvalidArgument("matrix dimensions must be positive");
  data_.assign(static_cast<std::size_t>(rows) * cols, 0.0);
}

Matrix::Matrix(int rows, int cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (rows <= 0 || cols <= 0) throw InvalidArgument("matrix dimensions must be positive");
  if (static_cast<std::int64_t>(data_.size()) != static_cast<std::int64_t>(rows) * cols)
    throw InvalidArgument("matrix data length does not match dimensions");
}

Matrix Matrix::identity(int n) {
  Matrix m(n, n);
  for (int i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

Tensor Matrix::to_tensor() const { return Tensor({rows_, cols_}, data_); }

Matrix Matrix::from_tensor(const Tensor& t) {
  if (t.order() != 2) throw InvalidArgument("only a 2-way tensor converts to a matrix");
  return Matrix(t.extent(1), t.extent(2), t.values());
}

Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) throw InvalidArgument("matmul inner dimensions do not agree");
  Matrix c(a.rows(), b.cols());
  const int m = a.rows(), k = a.cols(), n = b.cols();
  for (int j = 0; j < n; ++j) {
    double* cj = c.col(j);
    for (int l = 0; l < k; ++l) {
      const double blj = b(l, j);
      if (blj == 0.0) continue;
      const double* al = a.col(l);
      for (int i = 0; i < m; ++i) cj[i] += al[i] * blj;
    }
  }
  return c;
}

Matrix transpose(const Matrix& a) {
  Matrix t(a.cols(), a.rows());
  for (int c = 0; c < a.cols(); ++c)
    for (int r = 0; r < a.rows(); ++r) t(c, r) = a(r, c);
  return t;
}

double frobenius_norm(const Matrix& a) {
  double s = 0.0;
  for (double v : a.values()) s += v * v;
  return std::sqrt(s);
}

double frobenius_norm(const Tensor& t) {
  double s = 0.0;
  for (double v : t.values()) s += v * v;
  return std::sqrt(s);
}

Matrix matricize(const Tensor& t, int mode) {
  const int rows = t.extent(mode);  // validates the mode
  const std::int64_t cols = t.size() / rows;
  Matrix out(rows, static_cast<int>(cols));

  const auto& shape = t.shape();
  const int n = t.order();
  const int k = mode - 1;
  std::vector<int> idx(n, 0);
  const double* src = t.data();
  for (std::int64_t flat = 0; flat < t.size(); ++flat) {
    std::int64_t c = 0, stride = 1;
    for (int m = 0; m < n; ++m) {
      if (m == k) continue;
      c += static_cast<std::int64_t>(idx[m]) * stride;
      stride *= shape[m];
    }
    out(idx[k], static_cast<int>(c)) = src[flat];
    for (int m = 0; m < n; ++m) {
      if (++idx[m] < shape[m]) break;
      idx[m] = 0;
    }
  }
  return out;
}

Tensor fold(const Matrix& m, int mode, const std::vector<int>& shape) {
  Tensor out(shape);
  if (mode < 1 || mode > out.order()) throw InvalidArgument("fold mode out of range");
  const int k = mode - 1;
  if (m.rows() != shape[k]) throw InvalidArgument("fold: matrix rows do not match the mode extent");
  if (static_cast<std::int64_t>(m.rows()) * m.cols() != out.size())
    throw InvalidArgument("fold: matrix size does not match the target shape volume");

  const int n = out.order();
  std::vector<int> idx(n, 0);
  double* dst = out.data();
  for (std::int64_t flat = 0; flat < out.size(); ++flat) {
    std::int64_t c = 0, stride = 1;
    for (int mm = 0; mm < n; ++mm) {
      if (mm == k) continue;
      c += static_cast<std::int64_t>(idx[mm]) * stride;
      stride *= shape[mm];
    }
    dst[flat] = m(idx[k], static_cast<int>(c));
    for (int mm = 0; mm < n; ++mm) {
      if (++idx[mm] < shape[mm]) break;
      idx[mm] = 0;
    }
  }
  return out;
}

Tensor mode_product(const Tensor& t, const Matrix& m, int mode) {
  if (m.cols() != t.extent(mode))
    throw InvalidArgument("mode_product: matrix columns do not match the mode extent");
  std::vector<int> shape = t.shape();
  shape[mode - 1] = m.rows();
  return fold(matmul(m, matricize(t, mode)), mode, shape);
}

Matrix kronecker(const Matrix& a, const Matrix& b) {
  Matrix out(a.rows() * b.rows(), a.cols() * b.cols());
  for (int ja = 0; ja < a.cols(); ++ja)
    for (int ia = 0; ia < a.rows(); ++ia) {
      const double aij = a(ia, ja);
      if (aij == 0.0) continue;
      for (int jb = 0; jb < b.cols(); ++jb)
        for (int ib = 0; ib < b.rows(); ++ib)
          out(ia * b.rows() + ib, ja * b.cols() + jb) = aij * b(ib, jb);
    }
  return out;
}

}  // namespace nnc
