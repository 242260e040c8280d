#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "lrc/net.hpp"

namespace lrc {

/// Matrix-free mean GGN: apply() computes (1/N) sum_n J_n^T H_n J_n v using a
/// forward-mode Jacobian product, the analytic loss Hessian, and one backward
/// pass. The forward trace is built once and reused across applications.
class GgnOperator {
 public:
  GgnOperator(const FeedForwardNet& net, const Batch& batch, Loss loss);

  std::vector<double> apply(std::span<const double> v) const;
  std::size_t dim() const { return dim_; }

 private:
  const FeedForwardNet& net_;
  Loss loss_;
  ForwardTrace trace_;
  std::size_t dim_;
};

/// One-shot GGN-vector product.
std::vector<double> ggn_matvec(const FeedForwardNet& net, const Batch& batch, Loss loss,
                               std::span<const double> v);

struct PowerIterConfig {
  std::size_t max_matvecs_per_eigenvalue = 100;
  double rel_tol = 1e-3;
  std::size_t k = 1;
  std::uint64_t seed = 0;
};

struct PowerEigenpair {
  double eigenvalue = 0.0;
  std::vector<double> eigenvector;
  std::size_t matvecs_used = 0;
  bool converged = false;
};

using MatVec = std::function<std::vector<double>(std::span<const double>)>;

/// Deflated power iteration for a symmetric PSD operator: finds the k leading
/// eigenpairs one at a time, projecting out previously found eigenvectors.
/// Budget exhaustion is reported per pair, never fatal.
std::vector<PowerEigenpair> power_iteration_topk(const MatVec& matvec, std::size_t dim,
                                                 const PowerIterConfig& config);

/// Central finite differences of the analytic mean-loss gradient, symmetrized.
/// Step per coordinate is step * (1 + |theta_j|). Throws DimensionCapError
/// beyond dim_cap parameters.
DenseMatrix finite_difference_hessian(const FeedForwardNet& net, const Batch& batch, Loss loss,
                                      double step = 1e-5, std::size_t dim_cap = 2000);

}  // namespace lrc
