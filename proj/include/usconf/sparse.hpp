#pragma once
// CSR matrices, Jacobi-preconditioned conjugate gradient, and a dense
// Gaussian-elimination solver kept around as a reference.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <tuple>
#include <vector>

#include "usconf/error.hpp"

namespace usconf {

struct Triplet {
  std::size_t row;
  std::size_t col;
  double value;
};

struct CsrMatrix {
  std::size_t n = 0;
  std::vector<std::size_t> row_ptr;
  std::vector<std::size_t> col_idx;
  std::vector<double> values;
  bool symmetric = false;

  std::size_t nnz() const noexcept { return values.size(); }

  /// Stored value at (i, j), 0 if absent.
  double at(std::size_t i, std::size_t j) const {
    auto first = col_idx.begin() + static_cast<std::ptrdiff_t>(row_ptr[i]);
    auto last = col_idx.begin() + static_cast<std::ptrdiff_t>(row_ptr[i + 1]);
    auto it = std::lower_bound(first, last, j);
    return (it != last && *it == j) ? values[static_cast<std::size_t>(it - col_idx.begin())] : 0.0;
  }

  std::vector<double> diagonal() const {
    std::vector<double> d(n);
    for (std::size_t i = 0; i < n; ++i) d[i] = at(i, i);
    return d;
  }
};

struct SolverStats {
  std::size_t iterations = 0;
  double final_relative_residual = 0.0;
  bool converged = false;
};

/// `line` is block Jacobi with tridiagonal blocks: unknowns i0, i0+s, i0+2s,
/// ... (s = CgOptions::line_stride) form one block, solved exactly by the
/// Thomas algorithm. On grid systems ordered row-major with s = width this
/// inverts the vertical coupling of each image column.
enum class Preconditioner { none, jacobi, line };

struct CgOptions {
  double tol = 1e-6;
  std::size_t max_iter = 0; // 0 -> 10*n
  Preconditioner preconditioner = Preconditioner::jacobi;
  std::size_t line_stride = 1;
};

struct CgResult {
  std::vector<double> x;
  SolverStats stats;
};

using CgNotConverged = NotConvergedError<std::vector<double>, SolverStats>;

namespace detail {

inline bool stored_symmetric(const CsrMatrix &a) {
  for (std::size_t i = 0; i < a.n; ++i)
    for (std::size_t k = a.row_ptr[i]; k < a.row_ptr[i + 1]; ++k)
      if (a.at(a.col_idx[k], i) != a.values[k]) return false;
  return true;
}

inline double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double norm2(std::span<const double> a) { return std::sqrt(dot(a, a)); }

} // namespace detail

/// Builds an n x n CSR matrix. Duplicate entries are summed in a canonical
/// order, so any permutation of the input yields a bit-identical matrix.
inline CsrMatrix assemble_csr(std::size_t n, std::vector<Triplet> triplets) {
  for (const auto &t : triplets)
    if (t.row >= n || t.col >= n)
      throw InputError("assemble_csr: index (" + std::to_string(t.row) + "," + std::to_string(t.col) +
                       ") out of range for n=" + std::to_string(n));
  std::sort(triplets.begin(), triplets.end(), [](const Triplet &a, const Triplet &b) {
    return std::tie(a.row, a.col, a.value) < std::tie(b.row, b.col, b.value);
  });

  CsrMatrix m;
  m.n = n;
  m.row_ptr.assign(n + 1, 0);
  for (std::size_t k = 0; k < triplets.size();) {
    const auto row = triplets[k].row;
    const auto col = triplets[k].col;
    double sum = 0.0;
    for (; k < triplets.size() && triplets[k].row == row && triplets[k].col == col; ++k) sum += triplets[k].value;
    m.col_idx.push_back(col);
    m.values.push_back(sum);
    ++m.row_ptr[row + 1];
  }
  for (std::size_t i = 0; i < n; ++i) m.row_ptr[i + 1] += m.row_ptr[i];
  m.symmetric = detail::stored_symmetric(m);
  return m;
}

inline void spmv(const CsrMatrix &a, std::span<const double> x, std::span<double> y) {
  if (x.size() != a.n || y.size() != a.n) throw InputError("spmv: dimension mismatch");
  for (std::size_t i = 0; i < a.n; ++i) {
    double s = 0.0;
    for (std::size_t k = a.row_ptr[i]; k < a.row_ptr[i + 1]; ++k) s += a.values[k] * x[a.col_idx[k]];
    y[i] = s;
  }
}

inline std::vector<double> spmv(const CsrMatrix &a, std::span<const double> x) {
  std::vector<double> y(a.n);
  spmv(a, x, y);
  return y;
}

namespace detail {

class PreconditionerOp {
public:
  PreconditionerOp(const CsrMatrix &a, const CgOptions &opt) : kind_(opt.preconditioner), n_(a.n) {
    if (kind_ == Preconditioner::none) return;
    const auto d = a.diagonal();
    for (double v : d)
      if (!(v > 0.0)) throw InputError("cg_solve: non-positive diagonal, matrix is not SPD");
    if (kind_ == Preconditioner::jacobi) {
      inv_diag_.resize(n_);
      for (std::size_t i = 0; i < n_; ++i) inv_diag_[i] = 1.0 / d[i];
      return;
    }
    stride_ = opt.line_stride;
    if (stride_ == 0 || stride_ > n_) throw InputError("cg_solve: line_stride must be in [1, n]");
    // Thomas factorization: lower_[i] = A(i, i-s), inv_pivot_[i], upper_[i] = c'_i
    lower_.assign(n_, 0.0);
    upper_.assign(n_, 0.0);
    inv_pivot_.assign(n_, 0.0);
    for (std::size_t i = 0; i < n_; ++i) {
      const double sub = i >= stride_ ? a.at(i, i - stride_) : 0.0;
      const double sup = i + stride_ < n_ ? a.at(i, i + stride_) : 0.0;
      const double piv = d[i] - (i >= stride_ ? sub * upper_[i - stride_] : 0.0);
      if (!(piv > 0.0)) throw InputError("cg_solve: line block not positive definite");
      lower_[i] = sub;
      inv_pivot_[i] = 1.0 / piv;
      upper_[i] = sup * inv_pivot_[i];
    }
  }

  void apply(std::span<const double> r, std::span<double> z) const {
    switch (kind_) {
    case Preconditioner::none:
      std::copy(r.begin(), r.end(), z.begin());
      return;
    case Preconditioner::jacobi:
      for (std::size_t i = 0; i < n_; ++i) z[i] = inv_diag_[i] * r[i];
      return;
    case Preconditioner::line:
      // all lines advance together, so memory access stays contiguous
      for (std::size_t i = 0; i < n_; ++i)
        z[i] = (r[i] - (i >= stride_ ? lower_[i] * z[i - stride_] : 0.0)) * inv_pivot_[i];
      for (std::size_t i = n_; i-- > 0;)
        if (i + stride_ < n_) z[i] -= upper_[i] * z[i + stride_];
      return;
    }
  }

private:
  Preconditioner kind_;
  std::size_t n_;
  std::size_t stride_ = 1;
  std::vector<double> inv_diag_, lower_, upper_, inv_pivot_;
};

} // namespace detail

/// Preconditioned conjugate gradient for SPD systems. Convergence means
/// ||Ax - b|| / ||b|| <= tol, checked against the true residual. Throws
/// CgNotConverged carrying the last iterate when max_iter is exhausted.
inline CgResult cg_solve(const CsrMatrix &a, std::span<const double> b, const CgOptions &opt = {}) {
  const std::size_t n = a.n;
  if (b.size() != n) throw InputError("cg_solve: rhs length != n");
  for (double v : b)
    if (!std::isfinite(v)) throw InputError("cg_solve: non-finite rhs");

  CgResult res;
  res.x.assign(n, 0.0);
  const double bnorm = detail::norm2(b);
  if (bnorm == 0.0) {
    res.stats = {0, 0.0, true};
    return res;
  }
  const std::size_t max_iter = opt.max_iter ? opt.max_iter : 10 * n;

  const detail::PreconditionerOp precond(a, opt);

  std::vector<double> r(b.begin(), b.end());
  std::vector<double> z(n), p(n), ap(n);
  precond.apply(r, z);
  p = z;
  double rz = detail::dot(r, z);
  double rel = 1.0;

  auto true_residual = [&] {
    spmv(a, res.x, ap);
    for (std::size_t i = 0; i < n; ++i) r[i] = b[i] - ap[i];
    return detail::norm2(r) / bnorm;
  };

  std::size_t it = 0;
  while (it < max_iter) {
    spmv(a, p, ap);
    const double pap = detail::dot(p, ap);
    if (!(pap > 0.0)) break; // breakdown: not SPD or exact solution reached
    const double step = rz / pap;
    for (std::size_t i = 0; i < n; ++i) {
      res.x[i] += step * p[i];
      r[i] -= step * ap[i];
    }
    ++it;
    rel = detail::norm2(r) / bnorm;
    if (rel <= opt.tol) {
      rel = true_residual();
      if (rel <= opt.tol) {
        res.stats = {it, rel, true};
        return res;
      }
      // recurrence drifted; restart from the true residual
      precond.apply(r, z);
      p = z;
      rz = detail::dot(r, z);
      continue;
    }
    precond.apply(r, z);
    const double rz_next = detail::dot(r, z);
    const double beta = rz_next / rz;
    rz = rz_next;
    for (std::size_t i = 0; i < n; ++i) p[i] = z[i] + beta * p[i];
  }

  rel = true_residual();
  res.stats = {it, rel, rel <= opt.tol};
  if (res.stats.converged) return res;
  throw CgNotConverged("cg_solve: no convergence after " + std::to_string(it) +
                           " iterations (relative residual " + std::to_string(rel) + ")",
                       std::move(res.x), res.stats);
}

/// Row-major dense square matrix.
struct DenseMatrix {
  std::size_t n = 0;
  std::vector<double> a;

  explicit DenseMatrix(std::size_t size = 0) : n(size), a(size * size, 0.0) {}
  DenseMatrix(std::size_t size, std::vector<double> values) : n(size), a(std::move(values)) {
    if (a.size() != n * n) throw InputError("DenseMatrix: value count != n*n");
  }
  double &operator()(std::size_t i, std::size_t j) { return a[i * n + j]; }
  double operator()(std::size_t i, std::size_t j) const { return a[i * n + j]; }
};

inline DenseMatrix to_dense(const CsrMatrix &m) {
  DenseMatrix d(m.n);
  for (std::size_t i = 0; i < m.n; ++i)
    for (std::size_t k = m.row_ptr[i]; k < m.row_ptr[i + 1]; ++k) d(i, m.col_idx[k]) = m.values[k];
  return d;
}

inline constexpr std::size_t kDenseSolveMaxN = 4096;

/// Gaussian elimination with partial pivoting.
inline std::vector<double> dense_solve(DenseMatrix m, std::vector<double> b) {
  const std::size_t n = m.n;
  if (b.size() != n) throw InputError("dense_solve: rhs length != n");
  if (n > kDenseSolveMaxN) throw InputError("dense_solve: n exceeds " + std::to_string(kDenseSolveMaxN));

  double scale = 0.0;
  for (double v : m.a) scale = std::max(scale, std::abs(v));
  const double tiny = static_cast<double>(n) * std::numeric_limits<double>::epsilon() * scale;

  for (std::size_t k = 0; k < n; ++k) {
    std::size_t piv = k;
    for (std::size_t i = k + 1; i < n; ++i)
      if (std::abs(m(i, k)) > std::abs(m(piv, k))) piv = i;
    if (!(std::abs(m(piv, k)) > tiny)) throw InputError("dense_solve: matrix is singular");
    if (piv != k) {
      for (std::size_t j = 0; j < n; ++j) std::swap(m(k, j), m(piv, j));
      std::swap(b[k], b[piv]);
    }
    const double inv = 1.0 / m(k, k);
    for (std::size_t i = k + 1; i < n; ++i) {
      const double f = m(i, k) * inv;
      if (f == 0.0) continue;
      m(i, k) = 0.0;
      for (std::size_t j = k + 1; j < n; ++j) m(i, j) -= f * m(k, j);
      b[i] -= f * b[k];
    }
  }
  std::vector<double> x(n);
  for (std::size_t ii = n; ii-- > 0;) {
    double s = b[ii];
    for (std::size_t j = ii + 1; j < n; ++j) s -= m(ii, j) * x[j];
    x[ii] = s / m(ii, ii);
  }
  return x;
}

} // namespace usconf
