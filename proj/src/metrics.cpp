#include "lrc/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "lrc/errors.hpp"

namespace lrc {

namespace {

void check_orthonormal(const DenseMatrix& e) {
  const DenseMatrix g = gram_of_columns(e);
  for (std::size_t i = 0; i < g.rows; ++i)
    for (std::size_t j = 0; j < g.cols; ++j) {
      const double target = i == j ? 1.0 : 0.0;
      if (std::abs(g(i, j) - target) > 1e-8)
        throw NotOrthonormalError("overlap: basis columns are not orthonormal");
    }
}

DenseMatrix first_columns(const DenseMatrix& m, std::size_t c) {
  DenseMatrix out(m.rows, c);
  for (std::size_t i = 0; i < m.rows; ++i)
    std::copy_n(m.row(i), c, out.row(i));
  return out;
}

}  // namespace

double overlap_topc(const DenseMatrix& eigvecs_u, const DenseMatrix& eigvecs_v) {
  if (eigvecs_u.cols != eigvecs_v.cols)
    throw ColumnCountMismatchError("overlap: subspace dimensions differ");
  if (eigvecs_u.rows != eigvecs_v.rows)
    throw DimMismatchError("overlap: ambient dimensions differ");
  if (eigvecs_u.cols == 0) throw ColumnCountMismatchError("overlap: empty basis");
  check_orthonormal(eigvecs_u);
  check_orthonormal(eigvecs_v);

  // Tr(P_U P_V) = |W|_F^2 with W = U^T V; the denominator reduces to C.
  const std::size_t c = eigvecs_u.cols;
  double acc = 0.0;
  for (std::size_t ju = 0; ju < c; ++ju)
    for (std::size_t jv = 0; jv < c; ++jv) {
      double w = 0.0;
      for (std::size_t i = 0; i < eigvecs_u.rows; ++i)
        w += eigvecs_u(i, ju) * eigvecs_v(i, jv);
      acc += w * w;
    }
  return acc / static_cast<double>(c);
}

OverlapResult overlap_effective(const DenseMatrix& eigvecs_u, const DenseMatrix& eigvecs_v) {
  const std::size_t c = std::min(eigvecs_u.cols, eigvecs_v.cols);
  if (c == 0) throw ColumnCountMismatchError("overlap: empty basis");
  OverlapResult r;
  r.effective_c = c;
  r.overlap = overlap_topc(eigvecs_u.cols == c ? eigvecs_u : first_columns(eigvecs_u, c),
                           eigvecs_v.cols == c ? eigvecs_v : first_columns(eigvecs_v, c));
  return r;
}

double snr(std::span<const double> samples) {
  if (samples.size() < 2) throw TooFewSamplesError("snr: need at least two samples");
  const double n = static_cast<double>(samples.size());
  double mean = 0.0;
  for (double x : samples) mean += x;
  mean /= n;
  double var = 0.0;
  for (double x : samples) var += (x - mean) * (x - mean);
  var /= (n - 1.0);
  if (var < 1e-30 * mean * mean) return std::numeric_limits<double>::infinity();
  return mean * mean / var;
}

}  // namespace lrc
