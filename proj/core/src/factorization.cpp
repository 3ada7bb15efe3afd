#include "nnc/factorization.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "nnc/errors.hpp"

namespace nnc {

namespace {

void require_finite(const Matrix& a, const char* who) {
  for (double v : a.values())
    if (!std::isfinite(v)) throw InvalidArgument(std::string(who) + ": input has non-finite entries");
}

struct FullSvd {
  Matrix u;               // m x r
  std::vector<double> s;  // length r = min(m, n)
  Matrix v;               // n x r
};

// One-sided Jacobi on the columns of b (requires rows >= cols). Columns are
// rotated pairwise until they are mutually orthogonal; their norms are then
// the singular values. Jacobi is slower than bidiagonalization but delivers
// high relative accuracy and is simple to make deterministic, which is what
// the kernels here need (a few hundred per side at most).
void one_sided_jacobi(Matrix& b, Matrix& v) {
  const int m = b.rows();
  const int n = b.cols();
  const double tol = 1e-14;
  const int max_sweeps = 64;
  for (int sweep = 0; sweep < max_sweeps; ++sweep) {
    bool rotated = false;
    for (int p = 0; p < n - 1; ++p) {
      for (int q = p + 1; q < n; ++q) {
        double* bp = b.col(p);
        double* bq = b.col(q);
        double app = 0.0, aqq = 0.0, apq = 0.0;
        for (int i = 0; i < m; ++i) {
          app += bp[i] * bp[i];
          aqq += bq[i] * bq[i];
          apq += bp[i] * bq[i];
        }
        if (apq == 0.0 || std::abs(apq) <= tol * std::sqrt(app * aqq)) continue;
        rotated = true;
        const double zeta = (aqq - app) / (2.0 * apq);
        const double t = std::copysign(1.0, zeta) / (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double s = c * t;
        for (int i = 0; i < m; ++i) {
          const double x = bp[i], y = bq[i];
          bp[i] = c * x - s * y;
          bq[i] = s * x + c * y;
        }
        double* vp = v.col(p);
        double* vq = v.col(q);
        for (int i = 0; i < v.rows(); ++i) {
          const double x = vp[i], y = vq[i];
          vp[i] = c * x - s * y;
          vq[i] = s * x + c * y;
        }
      }
    }
    if (!rotated) break;
  }
}

// Replaces u's zero columns (exactly-zero singular values) with unit vectors
// orthogonal to every other column, so u always has orthonormal columns.
void complete_orthonormal(Matrix& u, const std::vector<int>& zero_cols) {
  const int m = u.rows();
  const int r = u.cols();
  int next_basis = 0;
  for (int zc : zero_cols) {
    for (; next_basis < m; ++next_basis) {
      std::vector<double> cand(m, 0.0);
      cand[next_basis] = 1.0;
      for (int pass = 0; pass < 2; ++pass) {
        for (int c = 0; c < r; ++c) {
          if (c == zc) continue;
          const double* uc = u.col(c);
          double dot = 0.0;
          for (int i = 0; i < m; ++i) dot += uc[i] * cand[i];
          for (int i = 0; i < m; ++i) cand[i] -= dot * uc[i];
        }
      }
      double nrm = 0.0;
      for (double x : cand) nrm += x * x;
      nrm = std::sqrt(nrm);
      if (nrm > 0.5) {
        double* uz = u.col(zc);
        for (int i = 0; i < m; ++i) uz[i] = cand[i] / nrm;
        ++next_basis;
        break;
      }
    }
  }
}

FullSvd svd_full(const Matrix& a) {
  const bool swapped = a.rows() < a.cols();
  Matrix b = swapped ? transpose(a) : a;
  const int m = b.rows();
  const int n = b.cols();
  Matrix v = Matrix::identity(n);
  one_sided_jacobi(b, v);

  std::vector<double> norms(n);
  for (int c = 0; c < n; ++c) {
    double s = 0.0;
    const double* bc = b.col(c);
    for (int i = 0; i < m; ++i) s += bc[i] * bc[i];
    norms[c] = std::sqrt(s);
  }
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](int x, int y) { return norms[x] > norms[y]; });

  Matrix u(m, n);
  Matrix vs(n, n);
  std::vector<double> s(n);
  std::vector<int> zero_cols;
  for (int c = 0; c < n; ++c) {
    const int src = order[c];
    s[c] = norms[src];
    const double* bc = b.col(src);
    const double* vc = v.col(src);
    double* uc = u.col(c);
    double* vsc = vs.col(c);
    if (s[c] > 0.0) {
      for (int i = 0; i < m; ++i) uc[i] = bc[i] / s[c];
    } else {
      zero_cols.push_back(c);
    }
    for (int i = 0; i < n; ++i) vsc[i] = vc[i];
  }
  if (!zero_cols.empty()) complete_orthonormal(u, zero_cols);

  FullSvd out;
  if (swapped) {
    out.u = std::move(vs);
    out.v = std::move(u);
  } else {
    out.u = std::move(u);
    out.v = std::move(vs);
  }
  out.s = std::move(s);

  // Sign convention: largest-magnitude entry of each left singular vector is
  // positive; first index wins ties.
  for (int c = 0; c < out.u.cols(); ++c) {
    double* uc = out.u.col(c);
    int arg = 0;
    double best = std::abs(uc[0]);
    for (int i = 1; i < out.u.rows(); ++i) {
      if (std::abs(uc[i]) > best) {
        best = std::abs(uc[i]);
        arg = i;
      }
    }
    if (uc[arg] < 0.0) {
      for (int i = 0; i < out.u.rows(); ++i) uc[i] = -uc[i];
      double* vc = out.v.col(c);
      for (int i = 0; i < out.v.rows(); ++i) vc[i] = -vc[i];
    }
  }
  return out;
}

}  // namespace

std::vector<int> TuckerResult::decomposed_modes() const {
  std::vector<int> modes;
  modes.reserve(factors.size());
  for (const auto& [mode, f] : factors) modes.push_back(mode);
  return modes;
}

std::vector<double> singular_values(const Matrix& a) {
  require_finite(a, "singular_values");
  return svd_full(a).s;
}

SvdResult truncated_svd(const Matrix& a, int rank) {
  const int minmn = std::min(a.rows(), a.cols());
  if (rank < 1 || rank > minmn)
    throw InvalidArgument("truncated_svd: rank " + std::to_string(rank) +
                          " outside [1, " + std::to_string(minmn) + "]");
  require_finite(a, "truncated_svd");

  FullSvd f = svd_full(a);
  SvdResult out;
  out.rank = rank;
  out.u = Matrix(a.rows(), rank);
  out.v = Matrix(a.cols(), rank);
  out.s.assign(f.s.begin(), f.s.begin() + rank);
  for (int c = 0; c < rank; ++c) {
    std::copy(f.u.col(c), f.u.col(c) + a.rows(), out.u.col(c));
    std::copy(f.v.col(c), f.v.col(c) + a.cols(), out.v.col(c));
  }
  return out;
}

TuckerResult hosvd(const Tensor& t, const std::map<int, int>& ranks) {
  if (ranks.empty()) throw InvalidArgument("hosvd: no modes requested");
  TuckerResult out;
  for (const auto& [mode, rank] : ranks) {
    const int extent = t.extent(mode);  // validates the mode
    if (rank < 1 || rank > extent)
      throw InvalidArgument("hosvd: rank " + std::to_string(rank) + " exceeds extent " +
                            std::to_string(extent) + " of mode " + std::to_string(mode));
    const Matrix unfolding = matricize(t, mode);
    SvdResult svd = truncated_svd(unfolding, rank);
    out.factors.emplace(mode, std::move(svd.u));
  }
  Tensor core = t;
  for (const auto& [mode, factor] : out.factors)
    core = mode_product(core, transpose(factor), mode);
  out.core = std::move(core);
  return out;
}

Matrix reconstruct(const SvdResult& r) {
  Matrix us = r.u;
  for (int c = 0; c < r.rank; ++c) {
    double* col = us.col(c);
    for (int i = 0; i < us.rows(); ++i) col[i] *= r.s[c];
  }
  return matmul(us, transpose(r.v));
}

Tensor reconstruct(const TuckerResult& r) {
  Tensor t = r.core;
  for (const auto& [mode, factor] : r.factors) t = mode_product(t, factor, mode);
  return t;
}

double relative_error(const Tensor& original, const Tensor& approx) {
  if (!original.same_shape(approx)) throw InvalidArgument("relative_error: shape mismatch");
  double num = 0.0, den = 0.0;
  const double* a = original.data();
  const double* b = approx.data();
  for (std::int64_t i = 0; i < original.size(); ++i) {
    const double d = a[i] - b[i];
    num += d * d;
    den += a[i] * a[i];
  }
  if (den == 0.0) throw UndefinedRatio("relative_error: original has zero norm");
  return std::sqrt(num / den);
}

double relative_error(const Matrix& original, const Matrix& approx) {
  if (original.rows() != approx.rows() || original.cols() != approx.cols())
    throw InvalidArgument("relative_error: shape mismatch");
  return relative_error(original.to_tensor(), approx.to_tensor());
}

}  // namespace nnc
