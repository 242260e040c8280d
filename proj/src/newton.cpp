#include "lrc/newton.hpp"

#include <cmath>

#include "lrc/errors.hpp"

namespace lrc {

namespace {

void check_damping(double damping) {
  if (!(damping > 0.0)) throw ConfigError("newton: damping must be > 0");
}

// Lemma step for one factor block: -(delta I + B B^T)^{-1} g
// = -(1/delta) (g - B (delta I + B^T B)^{-1} B^T g).
std::vector<double> lemma_step(const DenseMatrix& block, std::span<const double> grad,
                               double damping) {
  const std::size_t k = block.cols;
  std::vector<double> w(k, 0.0);
  for (std::size_t p = 0; p < block.rows; ++p) axpy(grad[p], block.row_span(p), w);

  DenseMatrix damped = gram_of_columns(block);
  for (std::size_t i = 0; i < k; ++i) damped(i, i) += damping;
  const std::vector<double> x = solve_spd(damped, w);

  std::vector<double> step(grad.begin(), grad.end());
  for (std::size_t p = 0; p < block.rows; ++p) step[p] -= dot(block.row_span(p), x);
  scale(step, -1.0 / damping);
  return step;
}

}  // namespace

std::vector<double> newton_step_eigen(const LowRankFactor& factor, const GramSpectrum& spectrum,
                                      const DenseMatrix& per_sample_grads, double damping) {
  check_damping(damping);
  if (spectrum.retained == 0)
    throw NoRetainedDirectionsError("newton_step_eigen: all directions clipped");
  if (per_sample_grads.cols != factor.param_dim())
    throw GradDimMismatchError("newton_step_eigen: gradient dim mismatch");

  std::vector<double> g(per_sample_grads.cols, 0.0);
  for (std::size_t i = 0; i < per_sample_grads.rows; ++i)
    axpy(1.0, per_sample_grads.row_span(i), g);
  scale(g, 1.0 / static_cast<double>(per_sample_grads.rows));

  const std::vector<double> w = factor.apply_transposed(g);
  std::vector<double> weights(spectrum.retained);
  for (std::size_t k = 0; k < spectrum.retained; ++k) {
    const double lam = spectrum.eigenvalues[k];
    double gk = 0.0;  // gamma_k = e~_k . V^T g / sqrt(l_k)
    for (std::size_t j = 0; j < w.size(); ++j) gk += spectrum.gram_eigenvectors(j, k) * w[j];
    gk /= std::sqrt(lam);
    weights[k] = -gk * std::sqrt(lam) / (lam + damping);
  }
  return weighted_eigvec_sum(factor, spectrum, weights);
}

std::vector<double> newton_step_inversion_lemma(const LowRankFactor& factor,
                                                std::span<const double> grad, double damping) {
  check_damping(damping);
  if (grad.size() != factor.param_dim())
    throw GradDimMismatchError("newton_step_inversion_lemma: gradient dim mismatch");

  const std::vector<double> w = factor.apply_transposed(grad);
  DenseMatrix damped = gram_matrix(factor);
  for (std::size_t i = 0; i < damped.rows; ++i) damped(i, i) += damping;
  const std::vector<double> x = solve_spd(damped, w);
  const std::vector<double> vx = factor.apply(x);

  std::vector<double> step(grad.begin(), grad.end());
  axpy(-1.0, vx, step);
  scale(step, -1.0 / damping);
  return step;
}

std::vector<double> newton_step_blockwise(const FeedForwardNet& net, const Batch& batch,
                                          Loss loss, const CurvatureConfig& config,
                                          double damping, StageStats* stats) {
  check_damping(damping);
  const ForwardTrace trace = forward(net, batch, loss);
  const std::vector<double> g = mean_gradient(net, trace);

  std::vector<double> step(g.size(), 0.0);
  for_each_layer_block(
      net, batch, loss, config,
      [&](std::size_t li, const DenseMatrix& block) {
        const std::size_t off = net.layer_param_offset(li);
        const std::vector<double> part =
            lemma_step(block, {g.data() + off, block.rows}, damping);
        std::copy(part.begin(), part.end(), step.begin() + off);
      },
      stats);
  return step;
}

std::vector<double> newton_step_blockwise_eigen(const FeedForwardNet& net, const Batch& batch,
                                                Loss loss, const CurvatureConfig& config,
                                                double damping, StageStats* stats) {
  check_damping(damping);
  const ForwardTrace trace = forward(net, batch, loss);
  const std::vector<double> g = mean_gradient(net, trace);

  std::vector<double> step(g.size(), 0.0);
  for_each_layer_block(
      net, batch, loss, config,
      [&](std::size_t li, const DenseMatrix& block) {
        const std::size_t off = net.layer_param_offset(li);
        const GramSpectrum spec = spectrum(gram_of_columns(block), config.clip_threshold);
        std::vector<double> w(block.cols, 0.0);
        for (std::size_t p = 0; p < block.rows; ++p)
          axpy(g[off + p], block.row_span(p), w);
        // Gram-space coefficients of sum_k -gamma_k/(l_k + delta) e_k.
        std::vector<double> coeff(block.cols, 0.0);
        for (std::size_t k = 0; k < spec.retained; ++k) {
          const double lam = spec.eigenvalues[k];
          double gk = 0.0;
          for (std::size_t j = 0; j < w.size(); ++j) gk += spec.gram_eigenvectors(j, k) * w[j];
          gk /= std::sqrt(lam);
          const double c = -gk / ((lam + damping) * std::sqrt(lam));
          for (std::size_t j = 0; j < coeff.size(); ++j)
            coeff[j] += c * spec.gram_eigenvectors(j, k);
        }
        for (std::size_t p = 0; p < block.rows; ++p)
          step[off + p] = dot(block.row_span(p), coeff);
      },
      stats);
  return step;
}

}  // namespace lrc
