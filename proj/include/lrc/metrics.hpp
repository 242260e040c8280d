#pragma once

#include <span>

#include "lrc/linalg.hpp"

namespace lrc {

/// Overlap of the subspaces spanned by two sets of orthonormal columns:
/// Tr(P_U P_V) / C = |U^T V|_F^2 / C, in [0, 1]. Both inputs must have the
/// same column count and pass an orthonormality check at 1e-8.
double overlap_topc(const DenseMatrix& eigvecs_u, const DenseMatrix& eigvecs_v);

struct OverlapResult {
  double overlap = 0.0;
  std::size_t effective_c = 0;
};

/// Overlap on the first min(C_u, C_v) columns, reporting the column count
/// actually compared. Used when a clipped spectrum retains fewer than C
/// directions.
OverlapResult overlap_effective(const DenseMatrix& eigvecs_u, const DenseMatrix& eigvecs_v);

/// Squared mean over unbiased variance. Needs at least two samples; returns
/// +infinity when the variance vanishes relative to the mean (all samples
/// equal, nonzero).
double snr(std::span<const double> samples);

}  // namespace lrc
