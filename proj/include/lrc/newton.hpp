#pragma once

#include <vector>

#include "lrc/lowrank.hpp"

namespace lrc {

enum class NewtonMode { eigen, inversion_lemma };

struct NewtonConfig {
  double damping = 1.0;  // must be > 0
  NewtonMode mode = NewtonMode::inversion_lemma;
  BlockMode block_mode = BlockMode::full;
};

/// Newton step restricted to the retained curvature directions:
/// sum_k -gamma_k / (lambda_k + delta) e_k, evaluated with a single Gram-space
/// weighted sum. Throws NoRetainedDirectionsError if the spectrum is empty.
std::vector<double> newton_step_eigen(const LowRankFactor& factor, const GramSpectrum& spectrum,
                                      const DenseMatrix& per_sample_grads, double damping);

/// Full damped Newton step -(delta I + V V^T)^{-1} g via the matrix inversion
/// lemma; only a K x K system is solved.
std::vector<double> newton_step_inversion_lemma(const LowRankFactor& factor,
                                                std::span<const double> grad, double damping);

/// Per-layer block-diagonal damped Newton step. Each layer's factor is built,
/// inverted through the inversion lemma and discarded before the next layer.
std::vector<double> newton_step_blockwise(const FeedForwardNet& net, const Batch& batch,
                                          Loss loss, const CurvatureConfig& config,
                                          double damping, StageStats* stats = nullptr);

/// Blockwise variant of the eigendecomposition form (retained directions per
/// layer block, clipped at config.clip_threshold).
std::vector<double> newton_step_blockwise_eigen(const FeedForwardNet& net, const Batch& batch,
                                                Loss loss, const CurvatureConfig& config,
                                                double damping, StageStats* stats = nullptr);

}  // namespace lrc
