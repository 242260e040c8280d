#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "lrc/lowrank.hpp"
#include "lrc/net.hpp"
#include "lrc/newton.hpp"

namespace lrc {

struct DatasetSpec {
  // Synthetic blob parameters (used by gen-data and as defaults).
  std::size_t classes = 2;
  std::size_t dim = 4;
  std::size_t n_per_class = 16;
  double spread = 0.5;
  // File locations; when present they take precedence for loading.
  std::filesystem::path features;
  std::filesystem::path labels;
};

struct NetSpec {
  std::vector<std::size_t> hidden;
  std::vector<std::string> activations;  // one per layer; empty = tanh..., identity last
  Loss loss = Loss::cross_entropy;
};

struct TrainSpec {
  std::size_t batch_size = 16;
  double learning_rate = 0.05;
  double momentum = 0.9;
  std::size_t epochs = 10;
  std::size_t checkpoints = 20;
};

struct OverlapSpec {
  std::string reference = "mini_batch_ggn";  // full_batch_ggn | mini_batch_ggn | fd_hessian
  std::size_t draws = 5;
};

struct BenchSpec {
  std::vector<std::size_t> ks = {1, 2, 3, 4, 5, 6, 7, 8, 9, 10};
  std::size_t repetitions = 20;
  // Bench network shape (input, hidden..., output follows from classes).
  std::size_t input_dim = 50;
  std::vector<std::size_t> hidden = {80, 60};
  std::size_t classes = 10;
  std::size_t batch_size = 64;
};

struct ExperimentConfig {
  DatasetSpec dataset;
  NetSpec net;
  TrainSpec train;
  CurvatureConfig curvature;
  NewtonConfig newton;
  OverlapSpec overlap;
  BenchSpec bench;
  std::uint64_t seed = 0;
};

/// Loads a config JSON; missing keys keep their defaults. Throws ConfigError.
ExperimentConfig load_config(const std::filesystem::path& path);

/// Re-derives the per-component sub-seeds after config.seed changed.
void apply_seed(ExperimentConfig& config);

struct Dataset {
  DenseMatrix features;     // n x dim
  std::vector<int> labels;  // n
  std::size_t classes = 0;

  std::size_t size() const { return features.rows; }
  /// Batch for the given sample positions; square loss gets one-hot targets.
  Batch make_batch(const std::vector<std::size_t>& idx, Loss loss) const;
};

/// Gaussian blobs around seeded class means; writes features.csv/labels.csv.
void gen_synthetic(std::size_t classes, std::size_t dim, std::size_t n_per_class, double spread,
                   std::uint64_t seed, const std::filesystem::path& out_dir);

Dataset load_dataset(const DatasetSpec& spec);

/// Deterministic mini-batch draw: sample positions for draw number `draw`.
std::vector<std::size_t> draw_batch_indices(std::size_t dataset_size, std::size_t batch_size,
                                            std::uint64_t seed, std::size_t draw);

struct TrainResult {
  std::vector<std::filesystem::path> checkpoints;
  std::filesystem::path metrics_csv;
};

/// SGD with momentum on the mean loss; saves a checkpoint at every grid step
/// (log-spaced over optimizer steps, shifted by -1) and a metrics CSV.
TrainResult train(const ExperimentConfig& config, const std::filesystem::path& out_dir);

void run_spectrum(const ExperimentConfig& config, const std::filesystem::path& checkpoint,
                  const std::filesystem::path& out_dir);
void run_overlap(const ExperimentConfig& config,
                 const std::vector<std::filesystem::path>& checkpoints,
                 const std::filesystem::path& out_dir);
void run_derivs(const ExperimentConfig& config, const std::filesystem::path& checkpoint,
                const std::filesystem::path& out_dir);
void run_newton(const ExperimentConfig& config, const std::filesystem::path& checkpoint,
                const std::filesystem::path& out_dir);

struct BenchRow {
  std::string method;
  std::size_t k = 0;
  double seconds = 0.0;
};

/// Times Gram-method and power-iteration top-k eigenpair extraction on the
/// bench network (minimum over `repetitions` runs each) and writes bench.csv.
std::vector<BenchRow> run_bench(const ExperimentConfig& config,
                                const std::filesystem::path& out_dir);

}  // namespace lrc
