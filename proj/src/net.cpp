#include "lrc/net.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <nlohmann/json.hpp>

#include "lrc/errors.hpp"
#include "lrc/rng.hpp"

namespace lrc {

std::string to_string(Activation a) {
  switch (a) {
    case Activation::identity: return "identity";
    case Activation::relu: return "relu";
    case Activation::tanh: return "tanh";
    case Activation::sigmoid: return "sigmoid";
  }
  throw UnknownActivationError("unknown activation tag");
}

std::string to_string(Loss l) {
  switch (l) {
    case Loss::square: return "square";
    case Loss::cross_entropy: return "cross_entropy";
  }
  throw UnknownLossError("unknown loss tag");
}

Activation activation_from_string(const std::string& s) {
  if (s == "identity") return Activation::identity;
  if (s == "relu") return Activation::relu;
  if (s == "tanh") return Activation::tanh;
  if (s == "sigmoid") return Activation::sigmoid;
  throw UnknownActivationError("unknown activation: " + s);
}

Loss loss_from_string(const std::string& s) {
  if (s == "square") return Loss::square;
  if (s == "cross_entropy") return Loss::cross_entropy;
  throw UnknownLossError("unknown loss: " + s);
}

namespace {

double activate(Activation a, double x) {
  switch (a) {
    case Activation::identity: return x;
    case Activation::relu: return x > 0.0 ? x : 0.0;
    case Activation::tanh: return std::tanh(x);
    case Activation::sigmoid: return 1.0 / (1.0 + std::exp(-x));
  }
  throw UnknownActivationError("unknown activation tag");
}

// Derivative in terms of the pre-activation. ReLU'(0) is defined as 0.
double activate_deriv(Activation a, double x) {
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

}  // namespace

std::size_t FeedForwardNet::param_count() const {
  std::size_t d = 0;
  for (const Layer& l : layers) d += l.param_count();
  return d;
}

std::size_t FeedForwardNet::layer_param_offset(std::size_t i) const {
  std::size_t off = 0;
  for (std::size_t k = 0; k < i; ++k) off += layers[k].param_count();
  return off;
}

std::vector<double> FeedForwardNet::flatten_params() const {
  std::vector<double> theta;
  theta.reserve(param_count());
  for (const Layer& l : layers) {
    // Column-stacked weights, then bias.
    for (std::size_t c = 0; c < l.weight.cols; ++c)
      for (std::size_t r = 0; r < l.weight.rows; ++r) theta.push_back(l.weight(r, c));
    theta.insert(theta.end(), l.bias.begin(), l.bias.end());
  }
  return theta;
}

void FeedForwardNet::unflatten_params(std::span<const double> theta) {
  if (theta.size() != param_count())
    throw DimMismatchError("unflatten_params: wrong parameter count");
  std::size_t p = 0;
  for (Layer& l : layers) {
    for (std::size_t c = 0; c < l.weight.cols; ++c)
      for (std::size_t r = 0; r < l.weight.rows; ++r) l.weight(r, c) = theta[p++];
    for (double& b : l.bias) b = theta[p++];
  }
}

FeedForwardNet make_net(const std::vector<std::size_t>& dims,
                        const std::vector<Activation>& activations,
                        std::uint64_t seed) {
  if (dims.size() < 2) throw ConfigError("make_net: need at least input and output dims");
  if (activations.size() != dims.size() - 1)
    throw ConfigError("make_net: one activation per layer required");
  Rng rng(seed);
  FeedForwardNet net;
  net.layers.resize(dims.size() - 1);
  for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
    Layer& l = net.layers[i];
    l.weight = DenseMatrix(dims[i + 1], dims[i]);
    l.bias.assign(dims[i + 1], 0.0);
    l.activation = activations[i];
    const double bound = std::sqrt(6.0 / static_cast<double>(dims[i] + dims[i + 1]));
    for (double& w : l.weight.data) w = rng.uniform(-bound, bound);
  }
  return net;
}

Batch Batch::regression(DenseMatrix inputs, DenseMatrix targets) {
  if (inputs.rows != targets.rows || inputs.rows == 0)
    throw DimMismatchError("Batch::regression: need matching non-empty inputs/targets");
  Batch b;
  b.inputs = std::move(inputs);
  b.targets = std::move(targets);
  return b;
}

Batch Batch::classification(DenseMatrix inputs, std::vector<int> labels) {
  if (inputs.rows != labels.size() || inputs.rows == 0)
    throw DimMismatchError("Batch::classification: need matching non-empty inputs/labels");
  Batch b;
  b.inputs = std::move(inputs);
  b.labels = std::move(labels);
  return b;
}

ForwardTrace forward(const FeedForwardNet& net, const Batch& batch, Loss loss) {
  const std::size_t n = batch.size();
  const std::size_t c = net.output_dim();
  if (batch.inputs.cols != net.input_dim())
    throw DimMismatchError("forward: input dim mismatch");
  if (loss == Loss::square) {
    if (batch.targets.rows != n || batch.targets.cols != c)
      throw DimMismatchError("forward: square loss needs N x C targets");
  } else {
    if (batch.labels.size() != n)
      throw DimMismatchError("forward: cross-entropy needs one label per sample");
    for (int y : batch.labels)
      if (y < 0 || static_cast<std::size_t>(y) >= c)
        throw DimMismatchError("forward: class index out of range");
  }

  ForwardTrace trace;
  trace.net_params = net.param_count();
  trace.layer_inputs.reserve(net.layers.size());
  trace.pre_activations.reserve(net.layers.size());

  DenseMatrix z = batch.inputs;
  for (const Layer& l : net.layers) {
    trace.layer_inputs.push_back(z);
    DenseMatrix a(n, l.out_dim());
    for (std::size_t i = 0; i < n; ++i) {
      const double* zi = z.row(i);
      double* ai = a.row(i);
      for (std::size_t r = 0; r < l.out_dim(); ++r) {
        double s = l.has_bias() ? l.bias[r] : 0.0;
        const double* wr = l.weight.row(r);
        for (std::size_t k = 0; k < l.in_dim(); ++k) s += wr[k] * zi[k];
        ai[r] = s;
      }
    }
    trace.pre_activations.push_back(a);
    DenseMatrix out(n, l.out_dim());
    for (std::size_t i = 0; i < a.data.size(); ++i)
      out.data[i] = activate(l.activation, a.data[i]);
    z = std::move(out);
  }
  trace.outputs = std::move(z);

  trace.per_sample_losses.resize(n);
  trace.output_grads = DenseMatrix(n, c);
  if (loss == Loss::square) {
    for (std::size_t i = 0; i < n; ++i) {
      double acc = 0.0;
      for (std::size_t j = 0; j < c; ++j) {
        const double d = trace.outputs(i, j) - batch.targets(i, j);
        acc += d * d;
        trace.output_grads(i, j) = 2.0 * d;
      }
      trace.per_sample_losses[i] = acc;
    }
  } else {
    trace.softmax = DenseMatrix(n, c);
    for (std::size_t i = 0; i < n; ++i) {
      const double* f = trace.outputs.row(i);
      const double fmax = *std::max_element(f, f + c);
      double sum = 0.0;
      for (std::size_t j = 0; j < c; ++j) sum += std::exp(f[j] - fmax);
      const double lse = fmax + std::log(sum);
      const int y = batch.labels[i];
      trace.per_sample_losses[i] = lse - f[y];
      for (std::size_t j = 0; j < c; ++j) {
        const double p = std::exp(f[j] - lse);
        trace.softmax(i, j) = p;
        trace.output_grads(i, j) = p - (static_cast<int>(j) == y ? 1.0 : 0.0);
      }
    }
  }
  double total = 0.0;
  for (double l : trace.per_sample_losses) total += l;
  trace.mean_loss = total / static_cast<double>(n);
  return trace;
}

namespace {

void check_trace(const FeedForwardNet& net, const ForwardTrace& trace) {
  if (trace.net_params != net.param_count() ||
      trace.layer_inputs.size() != net.layers.size() ||
      trace.outputs.cols != net.output_dim())
    throw StaleTraceError("trace does not match this net");
}

}  // namespace

DenseMatrix backprop_through_layer(const FeedForwardNet& net, const ForwardTrace& trace,
                                   std::size_t layer_index, const DenseMatrix& vectors) {
  check_trace(net, trace);
  if (layer_index >= net.layers.size())
    throw BadLayerIndexError("backprop_through_layer: index out of range");
  const Layer& l = net.layers[layer_index];
  if (vectors.rows != trace.batch_size() || vectors.cols != l.out_dim())
    throw DimMismatchError("backprop_through_layer: vectors have wrong shape");

  const DenseMatrix& a = trace.pre_activations[layer_index];
  DenseMatrix u = vectors;
  if (l.activation != Activation::identity)
    for (std::size_t i = 0; i < u.data.size(); ++i)
      u.data[i] *= activate_deriv(l.activation, a.data[i]);
  DenseMatrix next(vectors.rows, l.in_dim());
  for (std::size_t i = 0; i < vectors.rows; ++i) {
    const double* ui = u.row(i);
    double* ni = next.row(i);
    for (std::size_t r = 0; r < l.out_dim(); ++r) {
      const double ur = ui[r];
      if (ur == 0.0) continue;
      const double* wr = l.weight.row(r);
      for (std::size_t k = 0; k < l.in_dim(); ++k) ni[k] += ur * wr[k];
    }
  }
  return next;
}

DenseMatrix backprop_to_layer(const FeedForwardNet& net, const ForwardTrace& trace,
                              std::size_t layer_index, const DenseMatrix& output_vectors) {
  check_trace(net, trace);
  const std::size_t num_layers = net.layers.size();
  if (layer_index > num_layers)
    throw BadLayerIndexError("backprop_to_layer: index out of range");
  if (output_vectors.rows != trace.batch_size() || output_vectors.cols != net.output_dim())
    throw DimMismatchError("backprop_to_layer: output vectors have wrong shape");

  DenseMatrix v = output_vectors;
  for (std::size_t li = num_layers; li-- > layer_index;)
    v = backprop_through_layer(net, trace, li, v);
  return v;
}

DenseMatrix jtv_layer(const FeedForwardNet& net, const ForwardTrace& trace,
                      std::size_t layer_index, const DenseMatrix& upstream) {
  check_trace(net, trace);
  if (layer_index >= net.layers.size())
    throw BadLayerIndexError("jtv_layer: index out of range");
  const Layer& l = net.layers[layer_index];
  if (upstream.rows != trace.batch_size() || upstream.cols != l.out_dim())
    throw DimMismatchError("jtv_layer: upstream vectors have wrong shape");

  const DenseMatrix& z = trace.layer_inputs[layer_index];
  const DenseMatrix& a = trace.pre_activations[layer_index];
  const std::size_t h_out = l.out_dim();
  const std::size_t h_in = l.in_dim();

  DenseMatrix out(upstream.rows, l.param_count());
  for (std::size_t i = 0; i < upstream.rows; ++i) {
    const double* zi = z.row(i);
    const double* ai = a.row(i);
    const double* si = upstream.row(i);
    double* oi = out.row(i);
    // u = phi'(a) .* s; weight part is z (x) u column-stacked, bias part is u.
    for (std::size_t r = 0; r < h_out; ++r) {
      const double u = si[r] * activate_deriv(l.activation, ai[r]);
      if (l.has_bias()) oi[h_out * h_in + r] = u;
      if (u == 0.0) continue;
      for (std::size_t col = 0; col < h_in; ++col) oi[col * h_out + r] = u * zi[col];
    }
  }
  return out;
}

DenseMatrix per_sample_gradients(const FeedForwardNet& net, const ForwardTrace& trace) {
  check_trace(net, trace);
  const std::size_t n = trace.batch_size();
  const std::size_t d = net.param_count();
  DenseMatrix grads(n, d);

  DenseMatrix v = trace.output_grads;
  for (std::size_t li = net.layers.size(); li-- > 0;) {
    const DenseMatrix part = jtv_layer(net, trace, li, v);
    const std::size_t off = net.layer_param_offset(li);
    for (std::size_t i = 0; i < n; ++i)
      std::copy(part.row(i), part.row(i) + part.cols, grads.row(i) + off);
    if (li > 0) v = backprop_through_layer(net, trace, li, v);
  }
  return grads;
}

std::vector<double> mean_gradient(const FeedForwardNet& net, const ForwardTrace& trace) {
  const DenseMatrix grads = per_sample_gradients(net, trace);
  std::vector<double> g(grads.cols, 0.0);
  for (std::size_t i = 0; i < grads.rows; ++i) axpy(1.0, grads.row_span(i), g);
  scale(g, 1.0 / static_cast<double>(grads.rows));
  return g;
}

DenseMatrix loss_output_hessian(const ForwardTrace& trace, Loss loss, std::size_t n) {
  const std::size_t c = trace.outputs.cols;
  DenseMatrix h(c, c);
  if (loss == Loss::square) {
    for (std::size_t j = 0; j < c; ++j) h(j, j) = 2.0;
  } else {
    const double* p = trace.softmax.row(n);
    for (std::size_t i = 0; i < c; ++i)
      for (std::size_t j = 0; j < c; ++j) h(i, j) = (i == j ? p[i] : 0.0) - p[i] * p[j];
  }
  return h;
}

LossHessianFactor loss_hessian_factor_exact(const ForwardTrace& trace, Loss loss) {
  const std::size_t n = trace.batch_size();
  const std::size_t c = trace.outputs.cols;
  LossHessianFactor f;
  f.n_samples = n;
  f.cols_per_sample = c;
  f.mode = FactorMode::exact;
  f.s = DenseMatrix(n * c, c);

  if (loss == Loss::square) {
    const double r = std::sqrt(2.0);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < c; ++j) f.s(i * c + j, j) = r;
  } else if (loss == Loss::cross_entropy) {
    // Column j of diag(sqrt(p)) - p sqrt(p)^T is sqrt(p_j) (e_j - p).
    for (std::size_t i = 0; i < n; ++i) {
      const double* p = trace.softmax.row(i);
      for (std::size_t j = 0; j < c; ++j) {
        const double rp = std::sqrt(p[j]);
        double* row = f.s.row(i * c + j);
        for (std::size_t k = 0; k < c; ++k) row[k] = rp * ((k == j ? 1.0 : 0.0) - p[k]);
      }
    }
  } else {
    throw UnknownLossError("loss_hessian_factor_exact: unsupported loss");
  }
  return f;
}

LossHessianFactor loss_hessian_factor_mc(const ForwardTrace& trace, Loss loss,
                                         std::size_t m, std::uint64_t seed) {
  if (m < 1) throw ConfigError("loss_hessian_factor_mc: m must be >= 1");
  const std::size_t n = trace.batch_size();
  const std::size_t c = trace.outputs.cols;
  LossHessianFactor f;
  f.n_samples = n;
  f.cols_per_sample = m;
  f.mode = FactorMode::mc;
  f.s = DenseMatrix(n * m, c);

  Rng rng(seed);
  if (loss == Loss::square) {
    const double r = std::sqrt(2.0);
    for (double& x : f.s.data) x = r * rng.normal();
  } else if (loss == Loss::cross_entropy) {
    for (std::size_t i = 0; i < n; ++i) {
      const double* p = trace.softmax.row(i);
      for (std::size_t j = 0; j < m; ++j) {
        // yhat ~ Categorical(p), s~ = p - e_yhat.
        const double u = rng.uniform();
        std::size_t pick = c - 1;
        double cdf = 0.0;
        for (std::size_t k = 0; k < c; ++k) {
          cdf += p[k];
          if (u < cdf) {
            pick = k;
            break;
          }
        }
        double* row = f.s.row(i * m + j);
        for (std::size_t k = 0; k < c; ++k) row[k] = p[k] - (k == pick ? 1.0 : 0.0);
      }
    }
  } else {
    throw UnknownLossError("loss_hessian_factor_mc: unsupported loss");
  }
  return f;
}

namespace {

nlohmann::ordered_json layer_to_json(const Layer& l) {
  nlohmann::ordered_json j;
  j["rows"] = l.weight.rows;
  j["cols"] = l.weight.cols;
  j["activation"] = to_string(l.activation);
  j["weights"] = l.weight.data;
  j["bias"] = l.bias;
  return j;
}

}  // namespace

void save_checkpoint(const FeedForwardNet& net, Loss loss, const std::filesystem::path& path) {
  nlohmann::ordered_json j;
  j["version"] = 1;
  j["loss"] = to_string(loss);
  j["layers"] = nlohmann::ordered_json::array();
  for (const Layer& l : net.layers) j["layers"].push_back(layer_to_json(l));

  std::ofstream out(path);
  if (!out) throw IoError("cannot open checkpoint for writing: " + path.string());
  out << j.dump(2) << '\n';
  if (!out) throw IoError("failed writing checkpoint: " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open checkpoint: " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw IoError("malformed checkpoint " + path.string() + ": " + e.what());
  }

  Checkpoint ck;
  ck.loss = loss_from_string(j.at("loss").get<std::string>());
  for (const auto& lj : j.at("layers")) {
    Layer l;
    l.weight = DenseMatrix(lj.at("rows").get<std::size_t>(), lj.at("cols").get<std::size_t>());
    l.weight.data = lj.at("weights").get<std::vector<double>>();
    if (l.weight.data.size() != l.weight.rows * l.weight.cols)
      throw IoError("checkpoint weight size mismatch in " + path.string());
    l.bias = lj.at("bias").get<std::vector<double>>();
    if (!l.bias.empty() && l.bias.size() != l.weight.rows)
      throw IoError("checkpoint bias size mismatch in " + path.string());
    l.activation = activation_from_string(lj.at("activation").get<std::string>());
    ck.net.layers.push_back(std::move(l));
  }
  if (ck.net.layers.empty()) throw IoError("checkpoint has no layers: " + path.string());
  for (std::size_t i = 1; i < ck.net.layers.size(); ++i)
    if (ck.net.layers[i].in_dim() != ck.net.layers[i - 1].out_dim())
      throw IoError("checkpoint layer dims do not chain: " + path.string());
  return ck;
}

}  // namespace lrc
