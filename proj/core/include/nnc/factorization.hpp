#pragma once

#include <map>
#include <vector>

#include "nnc/tensor.hpp"

namespace nnc {

/// Rank-p factors of a matrix: a ~ u * diag(s) * v^T.
/// u is m x p and v is n x p, both with orthonormal columns; s is
/// non-negative and non-increasing. Sign convention: the largest-magnitude
/// entry of each column of u is positive (first index wins ties), which makes
/// repeated decompositions of the same input bit-identical.
struct SvdResult {
  Matrix u;
  std::vector<double> s;
  Matrix v;
  int rank = 0;
};

/// Core tensor plus one orthonormal factor per decomposed mode (1-based).
/// Modes without a factor pass through with their original extent.
struct TuckerResult {
  Tensor core;
  std::map<int, Matrix> factors;

  std::vector<int> decomposed_modes() const;
};

/// Full singular value spectrum of `a`, non-increasing, length min(m, n).
std::vector<double> singular_values(const Matrix& a);

/// Best rank-p approximation factors of a finite matrix, 1 <= p <= min(m, n).
/// Ties in the spectrum keep their computed order, so truncation across a tie
/// is non-unique but error-equivalent.
SvdResult truncated_svd(const Matrix& a, int rank);

/// Higher-order SVD: for each entry (mode, rank) the factor is made of the
/// leading left singular vectors of the mode-k unfolding, and the core is the
/// tensor contracted with every factor transposed. Modes absent from `ranks`
/// are not decomposed.
TuckerResult hosvd(const Tensor& t, const std::map<int, int>& ranks);

Matrix reconstruct(const SvdResult& r);
Tensor reconstruct(const TuckerResult& r);

/// ||original - approx||_F / ||original||_F. Throws UndefinedRatio when the
/// original has zero norm, InvalidArgument on shape mismatch.
double relative_error(const Tensor& original, const Tensor& approx);
double relative_error(const Matrix& original, const Matrix& approx);

}  // namespace nnc
