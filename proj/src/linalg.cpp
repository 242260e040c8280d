#include "lrc/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "lrc/errors.hpp"

namespace lrc {

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double norm2(std::span<const double> a) { return std::sqrt(dot(a, a)); }

double max_abs(std::span<const double> a) {
  double m = 0.0;
  for (double x : a) m = std::max(m, std::abs(x));
  return m;
}

void axpy(double alpha, std::span<const double> x, std::span<double> y) {
  for (std::size_t i = 0; i < x.size(); ++i) y[i] += alpha * x[i];
}

void scale(std::span<double> x, double alpha) {
  for (double& v : x) v *= alpha;
}

double frobenius_norm(const DenseMatrix& m) { return norm2(m.data); }

double max_abs_diff(const DenseMatrix& a, const DenseMatrix& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.data.size(); ++i)
    m = std::max(m, std::abs(a.data[i] - b.data[i]));
  return m;
}

DenseMatrix transpose(const DenseMatrix& m) {
  DenseMatrix t(m.cols, m.rows);
  for (std::size_t i = 0; i < m.rows; ++i)
    for (std::size_t j = 0; j < m.cols; ++j) t(j, i) = m(i, j);
  return t;
}

DenseMatrix matmul(const DenseMatrix& a, const DenseMatrix& b) {
  if (a.cols != b.rows)
    throw DimMismatchError("matmul: inner dimensions disagree");
  DenseMatrix c(a.rows, b.cols);
  for (std::size_t i = 0; i < a.rows; ++i) {
    for (std::size_t j = 0; j < b.cols; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < a.cols; ++k) s += a(i, k) * b(k, j);
      c(i, j) = s;
    }
  }
  return c;
}

DenseMatrix gram_of_columns(const DenseMatrix& m) {
  DenseMatrix g(m.cols, m.cols);
  // Accumulate rank-1 row contributions; the sum over rows runs in ascending
  // order, identical to an explicit column-dot-column loop.
  for (std::size_t r = 0; r < m.rows; ++r) {
    const double* mr = m.row(r);
    for (std::size_t i = 0; i < m.cols; ++i) {
      const double mi = mr[i];
      if (mi == 0.0) continue;
      double* gi = g.row(i);
      for (std::size_t j = i; j < m.cols; ++j) gi[j] += mi * mr[j];
    }
  }
  for (std::size_t i = 0; i < m.cols; ++i)
    for (std::size_t j = 0; j < i; ++j) g(i, j) = g(j, i);
  return g;
}

std::vector<double> matvec(const DenseMatrix& m, std::span<const double> v) {
  if (v.size() != m.cols) throw DimMismatchError("matvec: size mismatch");
  std::vector<double> y(m.rows, 0.0);
  for (std::size_t i = 0; i < m.rows; ++i) y[i] = dot(m.row_span(i), v);
  return y;
}

std::vector<double> matvec_transposed(const DenseMatrix& m, std::span<const double> v) {
  if (v.size() != m.rows) throw DimMismatchError("matvec_transposed: size mismatch");
  std::vector<double> y(m.cols, 0.0);
  for (std::size_t i = 0; i < m.rows; ++i) axpy(v[i], m.row_span(i), y);
  return y;
}

namespace {

void check_symmetric(const DenseMatrix& a) {
  if (a.rows != a.cols) throw NonSquareError("sym_eig: matrix is not square");
  const double amax = max_abs(a.data);
  const double tol = 1e-10 * amax;
  for (std::size_t i = 0; i < a.rows; ++i)
    for (std::size_t j = i + 1; j < a.cols; ++j)
      if (std::abs(a(i, j) - a(j, i)) > tol)
        throw NotSymmetricError("sym_eig: matrix is not symmetric");
}

double offdiag_frobenius(const DenseMatrix& a) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.rows; ++i)
    for (std::size_t j = i + 1; j < a.cols; ++j) s += a(i, j) * a(i, j);
  return std::sqrt(2.0 * s);
}

// One Jacobi rotation that zeroes a(p,q), touching only the upper triangle.
// vt holds eigenvectors as rows. Uses the numerically stable update
// x' = x - s (y + tau x), y' = y + s (x - tau y) with tau = s / (1 + c).
void rotate(DenseMatrix& a, DenseMatrix& vt, std::size_t p, std::size_t q) {
  const double apq = a(p, q);
  const double app = a(p, p);
  const double aqq = a(q, q);

  const double theta = (aqq - app) / (2.0 * apq);
  double t;
  if (theta >= 0.0)
    t = 1.0 / (theta + std::sqrt(1.0 + theta * theta));
  else
    t = -1.0 / (-theta + std::sqrt(1.0 + theta * theta));
  const double c = 1.0 / std::sqrt(1.0 + t * t);
  const double s = t * c;
  const double tau = s / (1.0 + c);

  const std::size_t n = a.rows;
  double* __restrict__ base = a.data.data();
  const auto update = [&](std::size_t ip, std::size_t iq) {
    const double g = base[ip];
    const double h = base[iq];
    base[ip] = g - s * (h + g * tau);
    base[iq] = h + s * (g - h * tau);
  };
  for (std::size_t j = 0; j < p; ++j) update(j * n + p, j * n + q);          // (j,p), (j,q)
  for (std::size_t j = p + 1; j < q; ++j) update(p * n + j, j * n + q);      // (p,j), (j,q)
  for (std::size_t j = q + 1; j < n; ++j) update(p * n + j, q * n + j);      // (p,j), (q,j)
  base[p * n + p] = app - t * apq;
  base[q * n + q] = aqq + t * apq;
  base[p * n + q] = 0.0;

  double* __restrict__ vp = vt.row(p);
  double* __restrict__ vq = vt.row(q);
  for (std::size_t j = 0; j < n; ++j) {
    const double xp = vp[j];
    const double xq = vq[j];
    vp[j] = xp - s * (xq + xp * tau);
    vq[j] = xq + s * (xp - xq * tau);
  }
}

}  // namespace

EigenDecomposition sym_eig(const DenseMatrix& input) {
  check_symmetric(input);
  const std::size_t n = input.rows;

  DenseMatrix a = input;
  // Symmetrize exactly so both triangles agree to the last bit.
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      const double v = 0.5 * (a(i, j) + a(j, i));
      a(i, j) = v;
      a(j, i) = v;
    }

  DenseMatrix vt = DenseMatrix::identity(n);  // eigenvectors as rows
  const double fro = frobenius_norm(a);
  const double threshold = 1e-12 * fro;
  // Rotations on entries far below the sweep threshold are numerically
  // no-ops; skipping them makes late sweeps cheap.
  const double skip = n > 0 ? threshold / (16.0 * static_cast<double>(n)) : 0.0;

  constexpr int kMaxSweeps = 100;
  bool converged = (fro == 0.0) || (n < 2);
  for (int sweep = 0; sweep < kMaxSweeps && !converged; ++sweep) {
    const double off = offdiag_frobenius(a);
    if (off <= threshold) {
      converged = true;
      break;
    }
    // Early sweeps skip weak elements (they get dominated again anyway);
    // later sweeps only skip entries that cannot affect the result.
    const double tresh =
        sweep < 3 ? std::max(0.2 * off / static_cast<double>(n * n), skip) : skip;
    for (std::size_t p = 0; p + 1 < n; ++p)
      for (std::size_t q = p + 1; q < n; ++q)
        if (std::abs(a(p, q)) > tresh) rotate(a, vt, p, q);
  }
  if (!converged && offdiag_frobenius(a) > threshold)
    throw NoConvergenceError("sym_eig: Jacobi sweep budget exhausted");

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t i, std::size_t j) { return a(i, i) > a(j, j); });

  EigenDecomposition out;
  out.eigenvalues.resize(n);
  out.eigenvectors = DenseMatrix(n, n);
  for (std::size_t k = 0; k < n; ++k) {
    const std::size_t src = order[k];
    out.eigenvalues[k] = a(src, src);
    const double* v = vt.row(src);
    // Sign convention: largest-magnitude component positive, ties broken by
    // lowest index.
    std::size_t imax = 0;
    double vmax = std::abs(v[0]);
    for (std::size_t i = 1; i < n; ++i) {
      if (std::abs(v[i]) > vmax) {
        vmax = std::abs(v[i]);
        imax = i;
      }
    }
    const double sign = v[imax] < 0.0 ? -1.0 : 1.0;
    for (std::size_t i = 0; i < n; ++i) out.eigenvectors(i, k) = sign * v[i];
  }
  return out;
}

namespace {

// Returns false if the matrix is not numerically positive definite.
bool cholesky_in_place(DenseMatrix& a) {
  const std::size_t n = a.rows;
  for (std::size_t j = 0; j < n; ++j) {
    double d = a(j, j);
    for (std::size_t k = 0; k < j; ++k) d -= a(j, k) * a(j, k);
    if (!(d > 0.0) || !std::isfinite(d)) return false;
    const double l = std::sqrt(d);
    a(j, j) = l;
    for (std::size_t i = j + 1; i < n; ++i) {
      double s = a(i, j);
      for (std::size_t k = 0; k < j; ++k) s -= a(i, k) * a(j, k);
      a(i, j) = s / l;
    }
  }
  return true;
}

}  // namespace

std::vector<double> solve_spd(const DenseMatrix& a, std::span<const double> rhs) {
  if (a.rows != a.cols || rhs.size() != a.rows)
    throw DimMismatchError("solve_spd: shape mismatch");
  const std::size_t n = a.rows;

  DenseMatrix l = a;
  if (cholesky_in_place(l)) {
    std::vector<double> x(rhs.begin(), rhs.end());
    for (std::size_t i = 0; i < n; ++i) {
      double s = x[i];
      for (std::size_t k = 0; k < i; ++k) s -= l(i, k) * x[k];
      x[i] = s / l(i, i);
    }
    for (std::size_t ii = n; ii-- > 0;) {
      double s = x[ii];
      for (std::size_t k = ii + 1; k < n; ++k) s -= l(k, ii) * x[k];
      x[ii] = s / l(ii, ii);
    }
    return x;
  }

  // Cholesky broke down in roundoff; fall back to the eigensolver.
  const EigenDecomposition eig = sym_eig(a);
  const double lmax = eig.eigenvalues.empty() ? 0.0 : std::abs(eig.eigenvalues.front());
  const double cutoff = 1e-14 * lmax;
  std::vector<double> x(n, 0.0);
  bool any = false;
  for (std::size_t k = 0; k < n; ++k) {
    const double lam = eig.eigenvalues[k];
    if (std::abs(lam) <= cutoff) continue;
    any = true;
    const std::vector<double> vk = eig.eigenvectors.col(k);
    axpy(dot(vk, rhs) / lam, vk, x);
  }
  if (!any) throw SingularGramSystemError("solve_spd: system is numerically singular");
  return x;
}

}  // namespace lrc
