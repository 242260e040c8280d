#include "lrc/lowrank.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "lrc/errors.hpp"
#include "lrc/rng.hpp"

namespace lrc {

std::size_t CurvatureConfig::effective_sub_size(std::size_t batch_size) const {
  if (sample_mode == SampleMode::mb) return batch_size;
  const std::size_t s = sub_size > 0 ? sub_size : batch_size / 8;
  if (s == 0) throw EmptySubsetError("curvature sub-sample is empty");
  if (s > batch_size) throw ConfigError("sub_size exceeds batch size");
  return s;
}

void StageStats::on_alloc(std::size_t elements, bool is_layer_block) {
  if (is_layer_block) {
    ++live_blocks;
    peak_live_blocks = std::max(peak_live_blocks, live_blocks);
  }
  live_elements += elements;
  peak_live_elements = std::max(peak_live_elements, live_elements);
  max_single_allocation = std::max(max_single_allocation, elements);
}

void StageStats::on_free(std::size_t elements, bool is_layer_block) {
  if (is_layer_block) --live_blocks;
  live_elements -= std::min(live_elements, elements);
}

std::size_t LowRankFactor::param_dim() const {
  std::size_t d = 0;
  for (const DenseMatrix& b : blocks) d += b.rows;
  return d;
}

std::vector<double> LowRankFactor::apply(std::span<const double> x) const {
  if (x.size() != k_cols()) throw DimMismatchError("LowRankFactor::apply: size mismatch");
  std::vector<double> y(param_dim(), 0.0);
  std::size_t off = 0;
  for (const DenseMatrix& b : blocks) {
    for (std::size_t p = 0; p < b.rows; ++p) y[off + p] = dot(b.row_span(p), x);
    off += b.rows;
  }
  return y;
}

std::vector<double> LowRankFactor::apply_transposed(std::span<const double> g) const {
  if (g.size() != param_dim())
    throw GradDimMismatchError("LowRankFactor::apply_transposed: size mismatch");
  std::vector<double> y(k_cols(), 0.0);
  std::size_t off = 0;
  for (const DenseMatrix& b : blocks) {
    for (std::size_t p = 0; p < b.rows; ++p) axpy(g[off + p], b.row_span(p), y);
    off += b.rows;
  }
  return y;
}

namespace {

double activation_deriv_value(Activation a, double x) {
  switch (a) {
    case Activation::identity: return 1.0;
    case Activation::relu: return x > 0.0 ? 1.0 : 0.0;
    case Activation::tanh: {
      const double t = std::tanh(x);
      return 1.0 - t * t;
    }
    case Activation::sigmoid: {
      const double s = 1.0 / (1.0 + std::exp(-x));
      return s * (1.0 - s);
    }
  }
  throw UnknownActivationError("unknown activation tag");
}

struct SeedSplit {
  std::uint64_t subset;
  std::uint64_t factor;
};

SeedSplit split_seed(std::uint64_t seed) {
  Rng r(seed);
  return {r.next_u64(), r.next_u64()};
}

std::vector<std::size_t> pick_subset(std::size_t batch_size, std::size_t take,
                                     std::uint64_t seed) {
  std::vector<std::size_t> idx(batch_size);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  Rng rng(seed);
  for (std::size_t i = batch_size; i-- > 1;)
    std::swap(idx[i], idx[rng.below(i + 1)]);
  idx.resize(take);
  // Ascending order keeps column layout stable; with take == batch_size this
  // reproduces mb mode exactly.
  std::sort(idx.begin(), idx.end());
  return idx;
}

/// What a layer contributes during the joint backward pass: the
/// activation-adjusted factor vectors at its pre-activation (rows are factor
/// columns) and its inputs restricted to the curvature samples.
struct LayerFactorData {
  std::size_t layer_index;
  const DenseMatrix& pre_factors;   // k_cols x h_out
  const DenseMatrix& layer_inputs;  // n_eff x h_in
};

/// One backward pass over all factor columns. For every layer, calls
/// visit(data) top-down; if materialize is set, additionally expands the
/// scaled block V^(i) (d_i x k_cols) and passes it along (may be null).
void backpropagate_factor(const FeedForwardNet& net, const ForwardTrace& trace,
                          const LossHessianFactor& lhf,
                          const std::vector<std::size_t>& subset, double col_scale,
                          bool materialize, StageStats* stats,
                          const std::function<void(const LayerFactorData&, DenseMatrix*)>& visit) {
  const std::size_t cps = lhf.cols_per_sample;
  const std::size_t k_cols = subset.size() * cps;
  const std::size_t c = trace.outputs.cols;

  // Start vectors: factor columns of the curvature samples at the output.
  DenseMatrix cur(k_cols, c);
  for (std::size_t r = 0; r < subset.size(); ++r)
    for (std::size_t j = 0; j < cps; ++j)
      std::copy_n(lhf.s.row(subset[r] * cps + j), c, cur.row(r * cps + j));

  for (std::size_t li = net.layers.size(); li-- > 0;) {
    const Layer& layer = net.layers[li];
    const DenseMatrix& pre = trace.pre_activations[li];
    const std::size_t h_out = layer.out_dim();
    const std::size_t h_in = layer.in_dim();

    // Through the activation: u = phi'(a_n) .* cur, row-wise per sample.
    if (layer.activation != Activation::identity) {
      for (std::size_t col = 0; col < k_cols; ++col) {
        const double* a = pre.row(subset[col / cps]);
        double* u = cur.row(col);
        for (std::size_t r = 0; r < h_out; ++r)
          u[r] *= activation_deriv_value(layer.activation, a[r]);
      }
    }

    DenseMatrix z_sub(subset.size(), h_in);
    for (std::size_t r = 0; r < subset.size(); ++r)
      std::copy_n(trace.layer_inputs[li].row(subset[r]), h_in, z_sub.row(r));

    if (materialize) {
      const std::size_t d_i = layer.param_count();
      if (stats) stats->on_alloc(d_i * k_cols, true);
      DenseMatrix block(d_i, k_cols);
      for (std::size_t col = 0; col < k_cols; ++col) {
        const double* z = z_sub.row(col / cps);
        const double* u = cur.row(col);
        for (std::size_t r = 0; r < h_out; ++r) {
          const double v = col_scale * u[r];
          if (layer.has_bias()) block.data[(h_out * h_in + r) * k_cols + col] = v;
          if (v == 0.0) continue;
          for (std::size_t w = 0; w < h_in; ++w)
            block.data[(w * h_out + r) * k_cols + col] = v * z[w];
        }
      }
      visit({li, cur, z_sub}, &block);
      if (stats) stats->on_free(d_i * k_cols, true);
    } else {
      visit({li, cur, z_sub}, nullptr);
    }

    if (li > 0) {
      // Continue to the layer below: cur <- cur W.
      DenseMatrix next(k_cols, h_in);
      for (std::size_t col = 0; col < k_cols; ++col) {
        const double* u = cur.row(col);
        double* out = next.row(col);
        for (std::size_t r = 0; r < h_out; ++r) {
          const double ur = u[r];
          if (ur == 0.0) continue;
          const double* wr = layer.weight.row(r);
          for (std::size_t w = 0; w < h_in; ++w) out[w] += ur * wr[w];
        }
      }
      cur = std::move(next);
    }
  }
}

struct FactorSetup {
  LossHessianFactor lhf;
  std::vector<std::size_t> subset;
  double col_scale;
  std::size_t m_div;
};

FactorSetup prepare_factor(const ForwardTrace& trace, Loss loss, const CurvatureConfig& config) {
  const std::size_t n = trace.batch_size();
  const SeedSplit seeds = split_seed(config.seed);
  const std::size_t n_eff = config.effective_sub_size(n);

  FactorSetup setup;
  if (config.sample_mode == SampleMode::sub) {
    setup.subset = pick_subset(n, n_eff, seeds.subset);
  } else {
    setup.subset.resize(n);
    std::iota(setup.subset.begin(), setup.subset.end(), std::size_t{0});
  }

  if (config.factor_mode == FactorMode::exact) {
    setup.lhf = loss_hessian_factor_exact(trace, loss);
    setup.m_div = 1;
  } else {
    if (config.mc_samples < 1) throw ConfigError("mc_samples must be >= 1");
    setup.lhf = loss_hessian_factor_mc(trace, loss, config.mc_samples, seeds.factor);
    setup.m_div = config.mc_samples;
  }
  setup.col_scale = 1.0 / std::sqrt(static_cast<double>(n_eff * setup.m_div));
  return setup;
}

// Gram of the rows of a: a a^T, accumulated column-index-ascending.
DenseMatrix gram_of_rows(const DenseMatrix& a) {
  DenseMatrix g(a.rows, a.rows);
  for (std::size_t i = 0; i < a.rows; ++i) {
    for (std::size_t j = i; j < a.rows; ++j) g(i, j) = dot(a.row_span(i), a.row_span(j));
    for (std::size_t j = 0; j < i; ++j) g(i, j) = g(j, i);
  }
  return g;
}

// Optimized per-layer Gram contribution, with the bias part folded in as a
// "+1" on the input Gram: ((z_n . z_n') + 1) (u_nc . u_n'c') * scale^2.
DenseMatrix layer_gram_optimized(const LayerFactorData& data, std::size_t cps,
                                 double col_scale2, bool add_bias, StageStats* stats) {
  const std::size_t k = data.pre_factors.rows;
  if (stats) {
    stats->on_alloc(data.layer_inputs.rows * data.layer_inputs.rows, false);
    stats->on_alloc(k * k, false);
  }
  const DenseMatrix zg = gram_of_rows(data.layer_inputs);
  DenseMatrix ug = gram_of_rows(data.pre_factors);
  const double bias_term = add_bias ? 1.0 : 0.0;
  for (std::size_t i = 0; i < k; ++i)
    for (std::size_t j = 0; j < k; ++j)
      ug(i, j) *= (zg(i / cps, j / cps) + bias_term) * col_scale2;
  if (stats) stats->on_free(data.layer_inputs.rows * data.layer_inputs.rows, false);
  return ug;
}

}  // namespace

LowRankFactor build_factor(const FeedForwardNet& net, const Batch& batch, Loss loss,
                           const CurvatureConfig& config) {
  return build_factor(net, forward(net, batch, loss), loss, config);
}

LowRankFactor build_factor(const FeedForwardNet& net, const ForwardTrace& trace, Loss loss,
                           const CurvatureConfig& config) {
  FactorSetup setup = prepare_factor(trace, loss, config);

  LowRankFactor factor;
  factor.sample_indices = setup.subset;
  factor.cols_per_sample = setup.lhf.cols_per_sample;
  factor.m_div = setup.m_div;
  factor.col_scale = setup.col_scale;
  factor.blocks.resize(net.layers.size());

  backpropagate_factor(net, trace, setup.lhf, setup.subset, setup.col_scale,
                       /*materialize=*/true, nullptr,
                       [&](const LayerFactorData& data, DenseMatrix* block) {
                         factor.blocks[data.layer_index] = std::move(*block);
                       });
  return factor;
}

DenseMatrix gram_matrix(const LowRankFactor& factor) {
  const std::size_t k = factor.k_cols();
  DenseMatrix g(k, k);
  for (const DenseMatrix& b : factor.blocks) {
    const DenseMatrix part = gram_of_columns(b);
    for (std::size_t i = 0; i < g.data.size(); ++i) g.data[i] += part.data[i];
  }
  return g;
}

FactorWithGram build_factor_with_gram(const FeedForwardNet& net, const Batch& batch, Loss loss,
                                      const CurvatureConfig& config, bool optimize_linear) {
  const ForwardTrace trace = forward(net, batch, loss);
  FactorSetup setup = prepare_factor(trace, loss, config);
  const std::size_t k = setup.subset.size() * setup.lhf.cols_per_sample;
  const double scale2 = setup.col_scale * setup.col_scale;

  FactorWithGram out;
  out.factor.sample_indices = setup.subset;
  out.factor.cols_per_sample = setup.lhf.cols_per_sample;
  out.factor.m_div = setup.m_div;
  out.factor.col_scale = setup.col_scale;
  out.factor.blocks.resize(net.layers.size());
  out.gram = DenseMatrix(k, k);

  backpropagate_factor(net, trace, setup.lhf, setup.subset, setup.col_scale,
                       /*materialize=*/true, nullptr,
                       [&](const LayerFactorData& data, DenseMatrix* block) {
                         const DenseMatrix part =
                             optimize_linear
                                 ? layer_gram_optimized(data, setup.lhf.cols_per_sample, scale2,
                                                        net.layers[data.layer_index].has_bias(),
                                                        nullptr)
                                 : gram_of_columns(*block);
                         for (std::size_t i = 0; i < out.gram.data.size(); ++i)
                           out.gram.data[i] += part.data[i];
                         out.factor.blocks[data.layer_index] = std::move(*block);
                       });
  return out;
}

DenseMatrix gram_matrix_streaming(const FeedForwardNet& net, const Batch& batch, Loss loss,
                                  const CurvatureConfig& config, bool optimize_linear,
                                  StageStats* stats) {
  const ForwardTrace trace = forward(net, batch, loss);
  FactorSetup setup = prepare_factor(trace, loss, config);
  const std::size_t k = setup.subset.size() * setup.lhf.cols_per_sample;
  const double scale2 = setup.col_scale * setup.col_scale;

  DenseMatrix g(k, k);
  backpropagate_factor(
      net, trace, setup.lhf, setup.subset, setup.col_scale,
      /*materialize=*/!optimize_linear, stats,
      [&](const LayerFactorData& data, DenseMatrix* block) {
        const DenseMatrix part =
            optimize_linear
                ? layer_gram_optimized(data, setup.lhf.cols_per_sample, scale2,
                                       net.layers[data.layer_index].has_bias(), stats)
                : gram_of_columns(*block);
        for (std::size_t i = 0; i < g.data.size(); ++i) g.data[i] += part.data[i];
        if (optimize_linear && stats) stats->on_free(part.data.size(), false);
      });
  return g;
}

std::vector<DenseMatrix> gram_blocks_layerwise(const FeedForwardNet& net, const Batch& batch,
                                               Loss loss, const CurvatureConfig& config,
                                               bool optimize_linear, StageStats* stats) {
  const ForwardTrace trace = forward(net, batch, loss);
  FactorSetup setup = prepare_factor(trace, loss, config);
  const double scale2 = setup.col_scale * setup.col_scale;

  std::vector<DenseMatrix> out(net.layers.size());
  backpropagate_factor(
      net, trace, setup.lhf, setup.subset, setup.col_scale,
      /*materialize=*/!optimize_linear, stats,
      [&](const LayerFactorData& data, DenseMatrix* block) {
        out[data.layer_index] =
            optimize_linear
                ? layer_gram_optimized(data, setup.lhf.cols_per_sample, scale2,
                                       net.layers[data.layer_index].has_bias(), stats)
                : gram_of_columns(*block);
        if (optimize_linear && stats) stats->on_free(out[data.layer_index].data.size(), false);
      });
  return out;
}

void for_each_layer_block(const FeedForwardNet& net, const Batch& batch, Loss loss,
                          const CurvatureConfig& config,
                          const std::function<void(std::size_t, const DenseMatrix&)>& visit,
                          StageStats* stats) {
  const ForwardTrace trace = forward(net, batch, loss);
  FactorSetup setup = prepare_factor(trace, loss, config);
  backpropagate_factor(net, trace, setup.lhf, setup.subset, setup.col_scale,
                       /*materialize=*/true, stats,
                       [&](const LayerFactorData& data, DenseMatrix* block) {
                         visit(data.layer_index, *block);
                       });
}

DenseMatrix gram_block_linear_optimized(const DenseMatrix& layer_inputs,
                                        const DenseMatrix& backpropagated_factors,
                                        std::size_t m_div, StageStats* stats) {
  const std::size_t n = layer_inputs.rows;
  const std::size_t k = backpropagated_factors.rows;
  if (n == 0 || k % n != 0)
    throw DimMismatchError("gram_block_linear_optimized: factor rows must be a multiple of N");
  const std::size_t cps = k / n;
  const double scale2 = 1.0 / static_cast<double>(n * m_div);

  if (stats) {
    stats->on_alloc(n * n, false);
    stats->on_alloc(k * k, false);
  }
  const DenseMatrix zg = gram_of_rows(layer_inputs);
  DenseMatrix sg = gram_of_rows(backpropagated_factors);
  for (std::size_t i = 0; i < k; ++i)
    for (std::size_t j = 0; j < k; ++j) sg(i, j) *= zg(i / cps, j / cps) * scale2;
  if (stats) {
    stats->on_free(n * n, false);
    stats->on_free(k * k, false);
  }
  return sg;
}

GramSpectrum spectrum(const DenseMatrix& gram, double clip_threshold) {
  if (clip_threshold < 0.0) throw ConfigError("clip_threshold must be >= 0");
  EigenDecomposition eig = sym_eig(gram);
  GramSpectrum s;
  s.gram = gram;
  s.eigenvalues = std::move(eig.eigenvalues);
  s.gram_eigenvectors = std::move(eig.eigenvectors);
  s.clip_threshold = clip_threshold;
  s.retained = 0;
  while (s.retained < s.eigenvalues.size() && s.eigenvalues[s.retained] > clip_threshold)
    ++s.retained;
  return s;
}

DenseMatrix eigenvectors_to_parameter_space(const LowRankFactor& factor,
                                            const GramSpectrum& spectrum,
                                            const std::vector<std::size_t>& indices) {
  for (std::size_t k : indices)
    if (k >= spectrum.retained)
      throw ClippedEigenvalueError("eigenvector index beyond retained spectrum");

  DenseMatrix out(factor.param_dim(), indices.size());
  for (std::size_t c = 0; c < indices.size(); ++c) {
    const std::size_t k = indices[c];
    const std::vector<double> ek_gram = spectrum.gram_eigenvectors.col(k);
    std::vector<double> e = factor.apply(ek_gram);
    scale(e, 1.0 / std::sqrt(spectrum.eigenvalues[k]));
    for (std::size_t i = 0; i < e.size(); ++i) out(i, c) = e[i];
  }
  return out;
}

std::vector<double> weighted_eigvec_sum(const LowRankFactor& factor, const GramSpectrum& spectrum,
                                        std::span<const double> weights) {
  if (weights.size() != spectrum.retained)
    throw ClippedEigenvalueError("weighted_eigvec_sum: one weight per retained direction");
  std::vector<double> gram_vec(factor.k_cols(), 0.0);
  for (std::size_t k = 0; k < weights.size(); ++k) {
    if (weights[k] == 0.0) continue;
    const double coeff = weights[k] / spectrum.eigenvalues[k];
    for (std::size_t i = 0; i < gram_vec.size(); ++i)
      gram_vec[i] += coeff * spectrum.gram_eigenvectors(i, k);
  }
  return factor.apply(gram_vec);
}

DirectionalDerivs directional_derivatives(const LowRankFactor& factor,
                                          const GramSpectrum& spectrum,
                                          const DenseMatrix& per_sample_grads) {
  if (per_sample_grads.cols != factor.param_dim())
    throw GradDimMismatchError("directional_derivatives: gradient dim mismatch");
  const std::size_t k_count = spectrum.retained;
  if (k_count == 0)
    throw ClippedEigenvalueError("directional_derivatives: no retained directions");

  const std::size_t n = per_sample_grads.rows;
  const std::size_t n_eff = factor.n_eff();
  const std::size_t cps = factor.cols_per_sample;

  DirectionalDerivs d;
  d.gammas = DenseMatrix(n, k_count);
  d.lambdas = DenseMatrix(n_eff, k_count);
  d.lambda_sample_indices = factor.sample_indices;

  std::vector<double> inv_sqrt(k_count);
  for (std::size_t k = 0; k < k_count; ++k) inv_sqrt[k] = 1.0 / std::sqrt(spectrum.eigenvalues[k]);

  // gamma_nk = e~_k . (V^T g_n) / sqrt(l_k)
  for (std::size_t i = 0; i < n; ++i) {
    const std::vector<double> w = factor.apply_transposed(per_sample_grads.row_span(i));
    for (std::size_t k = 0; k < k_count; ++k) {
      double s = 0.0;
      for (std::size_t j = 0; j < w.size(); ++j) s += spectrum.gram_eigenvectors(j, k) * w[j];
      d.gammas(i, k) = s * inv_sqrt[k];
    }
  }

  // lambda_nk = n_eff * l_k * |e~_k restricted to sample n's columns|^2;
  // the per-sample blocks are read off the Gram eigenvectors directly.
  for (std::size_t r = 0; r < n_eff; ++r) {
    for (std::size_t k = 0; k < k_count; ++k) {
      double s = 0.0;
      for (std::size_t j = 0; j < cps; ++j) {
        const double x = spectrum.gram_eigenvectors(r * cps + j, k);
        s += x * x;
      }
      d.lambdas(r, k) = static_cast<double>(n_eff) * spectrum.eigenvalues[k] * s;
    }
  }

  d.gamma_means.assign(k_count, 0.0);
  d.lambda_means.assign(k_count, 0.0);
  for (std::size_t k = 0; k < k_count; ++k) {
    double gs = 0.0;
    for (std::size_t i = 0; i < n; ++i) gs += d.gammas(i, k);
    d.gamma_means[k] = gs / static_cast<double>(n);
    double ls = 0.0;
    for (std::size_t r = 0; r < n_eff; ++r) ls += d.lambdas(r, k);
    d.lambda_means[k] = ls / static_cast<double>(n_eff);
  }
  return d;
}

}  // namespace lrc
