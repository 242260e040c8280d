#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "lrc/linalg.hpp"
#include "lrc/net.hpp"

namespace lrc {

enum class SampleMode { mb, sub };
enum class BlockMode { full, layerwise };

struct CurvatureConfig {
  SampleMode sample_mode = SampleMode::mb;
  FactorMode factor_mode = FactorMode::exact;
  std::size_t mc_samples = 1;
  std::size_t sub_size = 0;  // 0 means the default floor(N/8)
  BlockMode block_mode = BlockMode::full;
  double clip_threshold = 1e-4;
  std::uint64_t seed = 0;

  std::size_t effective_sub_size(std::size_t batch_size) const;
};

/// Test/diagnostic hook counting the large buffers the factor pipeline keeps
/// alive. Streaming paths must never hold more than one layer block, and the
/// optimized Gram contraction must never allocate an expanded layer factor;
/// both contracts are asserted against these counters.
struct StageStats {
  int live_blocks = 0;
  int peak_live_blocks = 0;
  std::size_t live_elements = 0;
  std::size_t peak_live_elements = 0;
  std::size_t max_single_allocation = 0;

  void on_alloc(std::size_t elements, bool is_layer_block);
  void on_free(std::size_t elements, bool is_layer_block);
};

/// Low-rank curvature factor: per-layer blocks of the scaled matrix whose
/// outer product with itself is the (estimated) GGN. Column (n, j) of the
/// stacked factor is col_scale * (J_theta f_n)^T s_nj, with col_scale
/// 1/sqrt(n_eff * m_div). Layer blocks stack in parameter order.
struct LowRankFactor {
  std::vector<DenseMatrix> blocks;          // blocks[i]: d_i x k_cols
  std::vector<std::size_t> sample_indices;  // ascending positions into the batch
  std::size_t cols_per_sample = 0;          // C (exact) or M (mc)
  std::size_t m_div = 1;                    // 1 (exact) or M (mc)
  double col_scale = 1.0;

  std::size_t n_eff() const { return sample_indices.size(); }
  std::size_t k_cols() const { return n_eff() * cols_per_sample; }
  std::size_t param_dim() const;

  /// y = V x, Gram space to parameter space.
  std::vector<double> apply(std::span<const double> x) const;
  /// y = V^T g, parameter space to Gram space.
  std::vector<double> apply_transposed(std::span<const double> g) const;
};

/// Spectrum of the Gram matrix V^T V. Eigenvalues descending; the first
/// `retained` of them exceed the clip threshold and correspond to the
/// nontrivial curvature directions.
struct GramSpectrum {
  DenseMatrix gram;
  std::vector<double> eigenvalues;
  DenseMatrix gram_eigenvectors;  // columns, aligned with eigenvalues
  double clip_threshold = 0.0;
  std::size_t retained = 0;
};

/// Per-sample first/second-order derivatives along the retained directions.
/// gammas has one row per batch sample; lambdas one row per curvature sample
/// (they differ under sub-sampling, where gradients still use the full
/// batch). Means satisfy gamma_means[k] = mean_n gammas and lambda_means[k]
/// = mean_n lambdas = eigenvalue k.
struct DirectionalDerivs {
  DenseMatrix gammas;   // N x K
  DenseMatrix lambdas;  // n_eff x K
  std::vector<std::size_t> lambda_sample_indices;
  std::vector<double> gamma_means;
  std::vector<double> lambda_means;
};

LowRankFactor build_factor(const FeedForwardNet& net, const Batch& batch, Loss loss,
                           const CurvatureConfig& config);
LowRankFactor build_factor(const FeedForwardNet& net, const ForwardTrace& trace, Loss loss,
                           const CurvatureConfig& config);

/// V^T V accumulated block by block in layer order.
DenseMatrix gram_matrix(const LowRankFactor& factor);

struct FactorWithGram {
  LowRankFactor factor;
  DenseMatrix gram;
};

/// Factor blocks and Gram matrix from a single backward pass. With
/// optimize_linear the Gram contributions come from the layer-input/factor
/// contraction instead of the expanded blocks.
FactorWithGram build_factor_with_gram(const FeedForwardNet& net, const Batch& batch, Loss loss,
                                      const CurvatureConfig& config, bool optimize_linear = true);

/// Same result as gram_matrix(build_factor(...)) but only ever holds one
/// layer block (naive contraction) or no block at all (optimized linear
/// contraction). `stats` observes the allocations.
DenseMatrix gram_matrix_streaming(const FeedForwardNet& net, const Batch& batch, Loss loss,
                                  const CurvatureConfig& config, bool optimize_linear = false,
                                  StageStats* stats = nullptr);

/// Per-layer diagonal Gram blocks (block-diagonal approximation), streamed.
std::vector<DenseMatrix> gram_blocks_layerwise(const FeedForwardNet& net, const Batch& batch,
                                               Loss loss, const CurvatureConfig& config,
                                               bool optimize_linear = false,
                                               StageStats* stats = nullptr);

/// Streams the scaled per-layer factor blocks V^(i) top-down through `visit`
/// (layer index, d_i x k_cols block), holding at most one block at a time.
void for_each_layer_block(const FeedForwardNet& net, const Batch& batch, Loss loss,
                          const CurvatureConfig& config,
                          const std::function<void(std::size_t, const DenseMatrix&)>& visit,
                          StageStats* stats = nullptr);

/// Weight-part Gram contribution of a linear layer computed from the layer
/// inputs z_n and the backpropagated factor vectors s_nc alone:
/// entry ((n,c),(n',c')) = (z_n . z_n') (s_nc . s_n'c') / (n_eff * m_div).
/// The expanded d_i x K factor never exists.
DenseMatrix gram_block_linear_optimized(const DenseMatrix& layer_inputs,
                                        const DenseMatrix& backpropagated_factors,
                                        std::size_t m_div = 1, StageStats* stats = nullptr);

GramSpectrum spectrum(const DenseMatrix& gram, double clip_threshold);

/// Transports Gram eigenvectors to parameter space: e_k = V e~_k / sqrt(l_k).
/// Columns of the result follow `indices`. Throws ClippedEigenvalueError for
/// indices at or beyond the retained count.
DenseMatrix eigenvectors_to_parameter_space(const LowRankFactor& factor,
                                            const GramSpectrum& spectrum,
                                            const std::vector<std::size_t>& indices);

/// sum_k (c_k / sqrt(l_k)) e_k over retained directions with one V
/// application. weights.size() must equal spectrum.retained.
std::vector<double> weighted_eigvec_sum(const LowRankFactor& factor, const GramSpectrum& spectrum,
                                        std::span<const double> weights);

DirectionalDerivs directional_derivatives(const LowRankFactor& factor,
                                          const GramSpectrum& spectrum,
                                          const DenseMatrix& per_sample_grads);

}  // namespace lrc
