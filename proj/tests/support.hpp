#pragma once

// Shared test oracles: dense GGN assembly routes, finite differences, and
// random problem generators. Everything here deliberately goes through plain
// dense algebra so the low-rank pipeline has an independent route to agree
// with.

#include <cmath>
#include <cstdint>
#include <vector>

#include "lrc/baseline.hpp"
#include "lrc/linalg.hpp"
#include "lrc/lowrank.hpp"
#include "lrc/net.hpp"
#include "lrc/rng.hpp"

namespace testsupport {

using lrc::Activation;
using lrc::Batch;
using lrc::DenseMatrix;
using lrc::FeedForwardNet;
using lrc::ForwardTrace;
using lrc::Loss;

inline DenseMatrix random_matrix(std::size_t r, std::size_t c, lrc::Rng& rng,
                                 double scale = 1.0) {
  DenseMatrix m(r, c);
  for (double& x : m.data) x = scale * rng.normal();
  return m;
}

inline DenseMatrix random_symmetric(std::size_t n, lrc::Rng& rng) {
  DenseMatrix a = random_matrix(n, n, rng);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      const double v = 0.5 * (a(i, j) + a(j, i));
      a(i, j) = v;
      a(j, i) = v;
    }
  return a;
}

inline FeedForwardNet random_net(const std::vector<std::size_t>& dims,
                                 const std::vector<Activation>& acts, std::uint64_t seed) {
  return lrc::make_net(dims, acts, seed);
}

/// Single-parameter model f(theta, x) = theta * x: one bias-free 1x1 layer.
inline FeedForwardNet scalar_model(double theta) {
  FeedForwardNet net;
  lrc::Layer l;
  l.weight = DenseMatrix(1, 1);
  l.weight(0, 0) = theta;
  l.activation = Activation::identity;
  net.layers.push_back(l);
  return net;
}

inline Batch scalar_regression(double x, double y) {
  DenseMatrix in(1, 1), t(1, 1);
  in(0, 0) = x;
  t(0, 0) = y;
  return Batch::regression(std::move(in), std::move(t));
}

/// Stacks the per-layer factor blocks into the dense D x K matrix.
inline DenseMatrix stack_factor(const lrc::LowRankFactor& f) {
  DenseMatrix v(f.param_dim(), f.k_cols());
  std::size_t off = 0;
  for (const DenseMatrix& b : f.blocks) {
    for (std::size_t p = 0; p < b.rows; ++p)
      std::copy_n(b.row(p), b.cols, v.row(off + p));
    off += b.rows;
  }
  return v;
}

/// Random batch for the given net; cross-entropy labels cycle the classes.
inline Batch random_batch(const FeedForwardNet& net, Loss loss, std::size_t n,
                          std::uint64_t seed) {
  lrc::Rng rng(seed);
  DenseMatrix inputs = random_matrix(n, net.input_dim(), rng);
  if (loss == Loss::cross_entropy) {
    std::vector<int> labels(n);
    for (std::size_t i = 0; i < n; ++i)
      labels[i] = static_cast<int>(rng.below(net.output_dim()));
    return Batch::classification(std::move(inputs), std::move(labels));
  }
  DenseMatrix targets = random_matrix(n, net.output_dim(), rng);
  return Batch::regression(std::move(inputs), std::move(targets));
}

/// Classification batch with strongly anisotropic inputs (coordinate j scaled
/// by 8/3^j plus a shared component). Pushes the GGN toward a well-separated
/// leading spectrum, which power iteration needs to converge tightly.
inline Batch anisotropic_batch(const FeedForwardNet& net, std::size_t n, std::uint64_t seed) {
  lrc::Rng rng(seed);
  DenseMatrix in(n, net.input_dim());
  for (std::size_t i = 0; i < n; ++i) {
    const double shared = rng.normal();
    for (std::size_t j = 0; j < net.input_dim(); ++j)
      in(i, j) = 8.0 / std::pow(3.0, static_cast<double>(j)) * rng.normal() + 2.0 * shared;
  }
  std::vector<int> labels(n);
  for (std::size_t i = 0; i < n; ++i) labels[i] = static_cast<int>(rng.below(net.output_dim()));
  return Batch::classification(std::move(in), std::move(labels));
}

/// True when the top (count+1) retained eigenvalues decay by at least the
/// given ratio between neighbours.
inline bool leading_spectrum_separated(const std::vector<double>& eigenvalues,
                                       std::size_t retained, std::size_t count,
                                       double max_ratio = 0.7) {
  if (retained < count + 1) return false;
  for (std::size_t k = 0; k + 1 <= count; ++k)
    if (eigenvalues[k + 1] / eigenvalues[k] > max_ratio) return false;
  return true;
}

/// C x D Jacobian of sample n's output w.r.t. the parameters, assembled row
/// by row from unit-vector backprops on a single-sample forward.
inline DenseMatrix param_jacobian(const FeedForwardNet& net, const Batch& batch, Loss loss,
                                  std::size_t n) {
  DenseMatrix one_input(1, batch.inputs.cols);
  std::copy_n(batch.inputs.row(n), batch.inputs.cols, one_input.row(0));
  Batch one = loss == Loss::cross_entropy
                  ? Batch::classification(std::move(one_input), {batch.labels[n]})
                  : [&] {
                      DenseMatrix t(1, batch.targets.cols);
                      std::copy_n(batch.targets.row(n), batch.targets.cols, t.row(0));
                      return Batch::regression(std::move(one_input), std::move(t));
                    }();
  const ForwardTrace trace = lrc::forward(net, one, loss);

  const std::size_t c = net.output_dim();
  const std::size_t d = net.param_count();
  DenseMatrix jac(c, d);
  for (std::size_t row = 0; row < c; ++row) {
    DenseMatrix v(1, c);
    v(0, row) = 1.0;
    for (std::size_t li = net.layers.size(); li-- > 0;) {
      const DenseMatrix part = lrc::jtv_layer(net, trace, li, v);
      std::copy_n(part.row(0), part.cols, jac.row(row) + net.layer_param_offset(li));
      if (li > 0) v = lrc::backprop_through_layer(net, trace, li, v);
    }
  }
  return jac;
}

/// Per-sample GGN J_n^T H_n J_n (no 1/N).
inline DenseMatrix dense_per_sample_ggn(const FeedForwardNet& net, const Batch& batch,
                                        Loss loss, std::size_t n) {
  const ForwardTrace trace = lrc::forward(net, batch, loss);
  const DenseMatrix jac = param_jacobian(net, batch, loss, n);
  const DenseMatrix h = lrc::loss_output_hessian(trace, loss, n);
  return lrc::matmul(lrc::matmul(lrc::transpose(jac), h), jac);
}

/// Mean GGN (1/N) sum_n J_n^T H_n J_n assembled densely.
inline DenseMatrix dense_ggn(const FeedForwardNet& net, const Batch& batch, Loss loss) {
  const std::size_t d = net.param_count();
  DenseMatrix g(d, d);
  for (std::size_t n = 0; n < batch.size(); ++n) {
    const DenseMatrix gn = dense_per_sample_ggn(net, batch, loss, n);
    for (std::size_t i = 0; i < g.data.size(); ++i) g.data[i] += gn.data[i];
  }
  const double inv = 1.0 / static_cast<double>(batch.size());
  for (double& x : g.data) x *= inv;
  return g;
}

/// Central finite differences of per-sample losses: N x D.
inline DenseMatrix fd_per_sample_gradients(const FeedForwardNet& net, const Batch& batch,
                                           Loss loss, double step = 1e-5) {
  FeedForwardNet work = net;
  std::vector<double> theta = net.flatten_params();
  const std::size_t d = theta.size();
  DenseMatrix out(batch.size(), d);
  for (std::size_t j = 0; j < d; ++j) {
    const double saved = theta[j];
    theta[j] = saved + step;
    work.unflatten_params(theta);
    const std::vector<double> lp = lrc::forward(work, batch, loss).per_sample_losses;
    theta[j] = saved - step;
    work.unflatten_params(theta);
    const std::vector<double> lm = lrc::forward(work, batch, loss).per_sample_losses;
    theta[j] = saved;
    for (std::size_t i = 0; i < batch.size(); ++i)
      out(i, j) = (lp[i] - lm[i]) / (2.0 * step);
  }
  work.unflatten_params(theta);
  return out;
}

inline double max_abs_diff_spans(std::span<const double> a, std::span<const double> b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

/// |a - b| <= tol * max(1, |b|), elementwise max over vectors.
inline bool close_rel(double a, double b, double tol) {
  return std::abs(a - b) <= tol * std::max(1.0, std::abs(b));
}

}  // namespace testsupport
