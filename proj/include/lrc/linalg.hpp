#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace lrc {

/// Row-major double-precision matrix. The universal numeric carrier of this
/// library; everything larger than a vector travels as a DenseMatrix.
struct DenseMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;  // rows * cols, row-major

  DenseMatrix() = default;
  DenseMatrix(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0) {}

  double& operator()(std::size_t i, std::size_t j) { return data[i * cols + j]; }
  double operator()(std::size_t i, std::size_t j) const { return data[i * cols + j]; }

  double* row(std::size_t i) { return data.data() + i * cols; }
  const double* row(std::size_t i) const { return data.data() + i * cols; }

  std::span<double> row_span(std::size_t i) { return {row(i), cols}; }
  std::span<const double> row_span(std::size_t i) const { return {row(i), cols}; }

  std::vector<double> col(std::size_t j) const {
    std::vector<double> out(rows);
    for (std::size_t i = 0; i < rows; ++i) out[i] = (*this)(i, j);
    return out;
  }

  static DenseMatrix identity(std::size_t n) {
    DenseMatrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
  }

  bool same_shape(const DenseMatrix& o) const { return rows == o.rows && cols == o.cols; }
};

/// Full symmetric eigendecomposition. Eigenvalues sorted descending,
/// eigenvector columns aligned with them and orthonormal.
struct EigenDecomposition {
  std::vector<double> eigenvalues;
  DenseMatrix eigenvectors;  // n x n, column k pairs with eigenvalues[k]
};

/// Cyclic Jacobi eigensolver for symmetric matrices.
///
/// Convergence: off-diagonal Frobenius norm below 1e-12 * ||A||_F, at most
/// 100 sweeps. Eigenvector signs are fixed so the largest-magnitude component
/// is positive (ties broken by lowest index), which makes outputs
/// reproducible. Throws NonSquareError, NotSymmetricError, NoConvergenceError.
EigenDecomposition sym_eig(const DenseMatrix& a);

/// Plain triple-loop matrix product with a fixed summation order (the inner
/// loop runs over the contraction index in ascending order), so results are
/// bit-reproducible. Throws DimMismatchError.
DenseMatrix matmul(const DenseMatrix& a, const DenseMatrix& b);

/// m^T m computed column-against-column; symmetric PSD by construction.
DenseMatrix gram_of_columns(const DenseMatrix& m);

DenseMatrix transpose(const DenseMatrix& m);

/// y = m v
std::vector<double> matvec(const DenseMatrix& m, std::span<const double> v);

/// y = m^T v
std::vector<double> matvec_transposed(const DenseMatrix& m, std::span<const double> v);

/// Solves (symmetric positive definite) a x = rhs by Cholesky; falls back to
/// an eigendecomposition solve if the factorization breaks down in roundoff.
/// Throws SingularGramSystemError if both routes fail.
std::vector<double> solve_spd(const DenseMatrix& a, std::span<const double> rhs);

// Small vector kernels shared across modules.
double dot(std::span<const double> a, std::span<const double> b);
double norm2(std::span<const double> a);
double max_abs(std::span<const double> a);
void axpy(double alpha, std::span<const double> x, std::span<double> y);
void scale(std::span<double> x, double alpha);

double frobenius_norm(const DenseMatrix& m);
double max_abs_diff(const DenseMatrix& a, const DenseMatrix& b);

}  // namespace lrc
