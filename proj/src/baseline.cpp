#include "lrc/baseline.hpp"

#include <cmath>

#include "lrc/errors.hpp"
#include "lrc/rng.hpp"

namespace lrc {

namespace {

double act(Activation a, double x) {
  switch (a) {
    case Activation::identity: return x;
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

}  // namespace

GgnOperator::GgnOperator(const FeedForwardNet& net, const Batch& batch, Loss loss)
    : net_(net), loss_(loss), trace_(forward(net, batch, loss)), dim_(net.param_count()) {}

std::vector<double> GgnOperator::apply(std::span<const double> v) const {
  if (v.size() != dim_) throw DimMismatchError("ggn_matvec: vector has wrong dimension");
  const std::size_t n = trace_.batch_size();
  const std::size_t c = trace_.outputs.cols;

  // Forward mode: propagate the directional derivative of every sample's
  // output along the parameter direction v.
  DenseMatrix dz(n, net_.layers.front().in_dim());
  std::size_t off = 0;
  for (std::size_t li = 0; li < net_.layers.size(); ++li) {
    const Layer& l = net_.layers[li];
    const std::size_t h_out = l.out_dim();
    const std::size_t h_in = l.in_dim();
    const double* dw = v.data() + off;                    // column-stacked
    const double* db = v.data() + off + h_out * h_in;
    const DenseMatrix& z = trace_.layer_inputs[li];
    const DenseMatrix& a = trace_.pre_activations[li];

    DenseMatrix da(n, h_out);
    for (std::size_t i = 0; i < n; ++i) {
      const double* zi = z.row(i);
      const double* dzi = dz.row(i);
      double* dai = da.row(i);
      for (std::size_t r = 0; r < h_out; ++r) {
        double s = l.has_bias() ? db[r] : 0.0;
        const double* wr = l.weight.row(r);
        for (std::size_t w = 0; w < h_in; ++w)
          s += dw[w * h_out + r] * zi[w] + wr[w] * dzi[w];
        dai[r] = s;
      }
      if (l.activation != Activation::identity)
        for (std::size_t r = 0; r < h_out; ++r)
          dai[r] *= act(l.activation, a.row(i)[r]);
    }
    dz = std::move(da);
    off += l.param_count();
  }

  // Multiply by the loss Hessian at the output.
  DenseMatrix w(n, c);
  if (loss_ == Loss::square) {
    for (std::size_t i = 0; i < w.data.size(); ++i) w.data[i] = 2.0 * dz.data[i];
  } else {
    for (std::size_t i = 0; i < n; ++i) {
      const double* p = trace_.softmax.row(i);
      const double* d = dz.row(i);
      double pd = 0.0;
      for (std::size_t j = 0; j < c; ++j) pd += p[j] * d[j];
      for (std::size_t j = 0; j < c; ++j) w(i, j) = p[j] * d[j] - p[j] * pd;
    }
  }

  // Reverse pass: accumulate (1/N) sum_n J_n^T w_n.
  std::vector<double> out(dim_, 0.0);
  DenseMatrix cur = std::move(w);
  for (std::size_t li = net_.layers.size(); li-- > 0;) {
    const DenseMatrix part = jtv_layer(net_, trace_, li, cur);
    const std::size_t o = net_.layer_param_offset(li);
    for (std::size_t i = 0; i < n; ++i) axpy(1.0, part.row_span(i), {out.data() + o, part.cols});
    if (li > 0) cur = backprop_through_layer(net_, trace_, li, cur);
  }
  scale(out, 1.0 / static_cast<double>(n));
  return out;
}

std::vector<double> ggn_matvec(const FeedForwardNet& net, const Batch& batch, Loss loss,
                               std::span<const double> v) {
  return GgnOperator(net, batch, loss).apply(v);
}

std::vector<PowerEigenpair> power_iteration_topk(const MatVec& matvec, std::size_t dim,
                                                 const PowerIterConfig& config) {
  std::vector<PowerEigenpair> found;
  found.reserve(config.k);
  Rng rng(config.seed);

  auto deflate = [&](std::vector<double>& v) {
    for (const PowerEigenpair& pair : found)
      axpy(-dot(pair.eigenvector, v), pair.eigenvector, v);
  };

  for (std::size_t pair_idx = 0; pair_idx < config.k && pair_idx < dim; ++pair_idx) {
    std::vector<double> v(dim);
    for (double& x : v) x = rng.normal();
    deflate(v);
    double nrm = norm2(v);
    if (nrm == 0.0) break;
    scale(v, 1.0 / nrm);

    PowerEigenpair pair;
    double lambda_prev = 0.0;
    bool have_prev = false;
    while (pair.matvecs_used < config.max_matvecs_per_eigenvalue) {
      std::vector<double> w = matvec(v);
      ++pair.matvecs_used;
      deflate(w);
      const double lambda = dot(v, w);
      const double wn = norm2(w);
      if (wn == 0.0) {
        // Operator annihilates the deflated subspace; eigenvalue is zero.
        pair.eigenvalue = 0.0;
        pair.converged = true;
        break;
      }
      scale(w, 1.0 / wn);
      v = std::move(w);
      if (have_prev && std::abs(lambda - lambda_prev) < config.rel_tol * std::abs(lambda_prev)) {
        pair.eigenvalue = lambda;
        pair.converged = true;
        break;
      }
      lambda_prev = lambda;
      have_prev = true;
      pair.eigenvalue = lambda;
    }
    pair.eigenvector = std::move(v);
    found.push_back(std::move(pair));
  }
  return found;
}

DenseMatrix finite_difference_hessian(const FeedForwardNet& net, const Batch& batch, Loss loss,
                                      double step, std::size_t dim_cap) {
  const std::size_t d = net.param_count();
  if (d > dim_cap)
    throw DimensionCapError("finite_difference_hessian: parameter count exceeds cap");

  FeedForwardNet work = net;
  std::vector<double> theta = net.flatten_params();
  DenseMatrix h(d, d);
  for (std::size_t j = 0; j < d; ++j) {
    const double hj = step * (1.0 + std::abs(theta[j]));
    const double saved = theta[j];

    theta[j] = saved + hj;
    work.unflatten_params(theta);
    const std::vector<double> gp = mean_gradient(work, forward(work, batch, loss));
    theta[j] = saved - hj;
    work.unflatten_params(theta);
    const std::vector<double> gm = mean_gradient(work, forward(work, batch, loss));
    theta[j] = saved;

    const double inv = 1.0 / (2.0 * hj);
    for (std::size_t i = 0; i < d; ++i) h(i, j) = (gp[i] - gm[i]) * inv;
  }
  // Symmetrize.
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = i + 1; j < d; ++j) {
      const double v = 0.5 * (h(i, j) + h(j, i));
      h(i, j) = v;
      h(j, i) = v;
    }
  return h;
}

}  // namespace lrc
