#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "lrc/linalg.hpp"

namespace lrc {

enum class Activation { identity, relu, tanh, sigmoid };
enum class Loss { square, cross_entropy };

std::string to_string(Activation a);
std::string to_string(Loss l);
Activation activation_from_string(const std::string& s);
Loss loss_from_string(const std::string& s);

struct Layer {
  DenseMatrix weight;        // h_out x h_in
  std::vector<double> bias;  // h_out, or empty for a bias-free layer
  Activation activation = Activation::identity;

  std::size_t in_dim() const { return weight.cols; }
  std::size_t out_dim() const { return weight.rows; }
  bool has_bias() const { return !bias.empty(); }
  std::size_t param_count() const { return weight.data.size() + bias.size(); }
};

/// Fully-connected network. The flat parameter vector is laid out layer by
/// layer, weights column-stacked then bias, and every routine that produces
/// or consumes parameter-space vectors follows this order.
struct FeedForwardNet {
  std::vector<Layer> layers;

  std::size_t input_dim() const { return layers.front().in_dim(); }
  std::size_t output_dim() const { return layers.back().out_dim(); }
  std::size_t param_count() const;
  std::size_t layer_param_offset(std::size_t i) const;

  std::vector<double> flatten_params() const;
  void unflatten_params(std::span<const double> theta);
};

/// Xavier-uniform initialization: weights uniform in
/// +-sqrt(6 / (fan_in + fan_out)), biases zero.
FeedForwardNet make_net(const std::vector<std::size_t>& dims,
                        const std::vector<Activation>& activations,
                        std::uint64_t seed);

struct Batch {
  DenseMatrix inputs;       // N x input_dim
  DenseMatrix targets;      // N x C (square loss)
  std::vector<int> labels;  // N (cross-entropy)

  std::size_t size() const { return inputs.rows; }

  static Batch regression(DenseMatrix inputs, DenseMatrix targets);
  static Batch classification(DenseMatrix inputs, std::vector<int> labels);
};

/// Everything forward() computes that backward passes need later: per-layer
/// inputs, pre-activations, outputs, per-sample losses, and the loss gradient
/// and softmax probabilities at the output.
struct ForwardTrace {
  std::vector<DenseMatrix> layer_inputs;     // layer_inputs[i]: N x h_{i-1}, input to layer i
  std::vector<DenseMatrix> pre_activations;  // pre_activations[i]: N x h_i
  DenseMatrix outputs;                       // N x C
  std::vector<double> per_sample_losses;     // N
  double mean_loss = 0.0;
  DenseMatrix output_grads;  // N x C, rows are grad_f loss(f_n, y_n)
  DenseMatrix softmax;       // N x C for cross-entropy, empty otherwise
  std::size_t net_params = 0;

  std::size_t batch_size() const { return outputs.rows; }
};

ForwardTrace forward(const FeedForwardNet& net, const Batch& batch, Loss loss);

/// N x D matrix; row n is the gradient of the n-th per-sample loss. The mean
/// over rows is the gradient of the mean loss.
DenseMatrix per_sample_gradients(const FeedForwardNet& net, const ForwardTrace& trace);

std::vector<double> mean_gradient(const FeedForwardNet& net, const ForwardTrace& trace);

enum class FactorMode { exact, mc };

/// Symmetric square-root factorization of the loss Hessian at the network
/// output: row (n, j) holds the j-th factor column s_nj of sample n, with
/// sum_j s_nj s_nj^T equal to the Hessian (exact mode) or an unbiased
/// M-sample estimate (1/M sum_m s~_nm s~_nm^T) of it (mc mode).
struct LossHessianFactor {
  DenseMatrix s;  // (N * cols_per_sample) x C, row-major per (sample, column)
  std::size_t n_samples = 0;
  std::size_t cols_per_sample = 0;  // C (exact) or M (mc)
  FactorMode mode = FactorMode::exact;

  std::span<const double> column(std::size_t n, std::size_t j) const {
    return s.row_span(n * cols_per_sample + j);
  }
};

LossHessianFactor loss_hessian_factor_exact(const ForwardTrace& trace, Loss loss);
LossHessianFactor loss_hessian_factor_mc(const ForwardTrace& trace, Loss loss,
                                         std::size_t m, std::uint64_t seed);

/// Analytic Hessian of the loss w.r.t. the network output of sample n.
DenseMatrix loss_output_hessian(const ForwardTrace& trace, Loss loss, std::size_t n);

/// Applies (J_{theta_i} z_i)^T to per-sample vectors sitting at layer i's
/// output. Input: N x h_i, output: N x d_i with the layer's column-stacked
/// weight part first, bias part last.
DenseMatrix jtv_layer(const FeedForwardNet& net, const ForwardTrace& trace,
                      std::size_t layer_index, const DenseMatrix& upstream);

/// Applies (J_{z_i} f)^T to per-sample output vectors, i.e. backpropagates
/// them from the network output down to the output of layer i (i == layers
/// returns the vectors unchanged, i == 0 lands at the network input).
DenseMatrix backprop_to_layer(const FeedForwardNet& net, const ForwardTrace& trace,
                              std::size_t layer_index, const DenseMatrix& output_vectors);

/// One reverse step: diag(phi'(a_i)) then W_i^T, mapping per-sample vectors at
/// layer i's output to vectors at its input.
DenseMatrix backprop_through_layer(const FeedForwardNet& net, const ForwardTrace& trace,
                                   std::size_t layer_index, const DenseMatrix& vectors);

// Checkpoint serialization (JSON, shortest round-trip doubles; reading back
// reproduces the net bit-exactly).
void save_checkpoint(const FeedForwardNet& net, Loss loss, const std::filesystem::path& path);
struct Checkpoint {
  FeedForwardNet net;
  Loss loss;
};
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace lrc
