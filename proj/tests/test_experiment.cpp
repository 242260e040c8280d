#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "lrc/csv.hpp"
#include "lrc/errors.hpp"
#include "lrc/experiment.hpp"
#include "support.hpp"

using namespace lrc;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in);
  return std::string(std::istreambuf_iterator<char>(in), {});
}

ExperimentConfig small_config(const fs::path& data_dir) {
  ExperimentConfig cfg;
  cfg.seed = 12;
  cfg.dataset.classes = 3;
  cfg.dataset.dim = 5;
  cfg.dataset.n_per_class = 12;
  cfg.dataset.spread = 0.4;
  cfg.dataset.features = data_dir / "features.csv";
  cfg.dataset.labels = data_dir / "labels.csv";
  cfg.net.hidden = {6};
  cfg.net.loss = Loss::cross_entropy;
  cfg.train.batch_size = 9;
  cfg.train.learning_rate = 0.05;
  cfg.train.epochs = 3;
  cfg.train.checkpoints = 5;
  apply_seed(cfg);
  return cfg;
}

}  // namespace

TEST_CASE("gen_synthetic: shapes, determinism, degenerate cases") {
  const fs::path dir_a = fresh_dir("lrc_gen_a");
  const fs::path dir_b = fresh_dir("lrc_gen_b");
  gen_synthetic(3, 4, 5, 0.2, 77, dir_a);
  gen_synthetic(3, 4, 5, 0.2, 77, dir_b);
  CHECK(slurp(dir_a / "features.csv") == slurp(dir_b / "features.csv"));
  CHECK(slurp(dir_a / "labels.csv") == slurp(dir_b / "labels.csv"));

  const auto feats = read_numeric_csv(dir_a / "features.csv");
  const auto labels = read_numeric_csv(dir_a / "labels.csv");
  REQUIRE(feats.size() == 15);
  REQUIRE(labels.size() == 15);
  CHECK(feats.front().size() == 4);

  // classes = 1: all labels zero.
  const fs::path dir_c = fresh_dir("lrc_gen_c");
  gen_synthetic(1, 3, 4, 0.5, 1, dir_c);
  for (const auto& row : read_numeric_csv(dir_c / "labels.csv")) CHECK(row.at(0) == 0.0);

  // spread = 0: all samples of a class identical.
  const fs::path dir_d = fresh_dir("lrc_gen_d");
  gen_synthetic(2, 3, 3, 0.0, 2, dir_d);
  const auto f0 = read_numeric_csv(dir_d / "features.csv");
  for (std::size_t i = 1; i < 3; ++i) CHECK(f0[i] == f0[0]);
  CHECK(f0[4] == f0[3]);

  CHECK_THROWS_AS(gen_synthetic(0, 3, 3, 0.1, 1, dir_d), ConfigError);
}

TEST_CASE("train: checkpoints, metrics, determinism, lr = 0") {
  const fs::path data = fresh_dir("lrc_train_data");
  gen_synthetic(3, 5, 12, 0.4, 12, data);
  ExperimentConfig cfg = small_config(data);

  const fs::path run_a = fresh_dir("lrc_train_a");
  const TrainResult res_a = train(cfg, run_a);
  REQUIRE(!res_a.checkpoints.empty());
  CHECK(fs::exists(res_a.metrics_csv));

  // First checkpoint is the initialization (step 0), last is the final step.
  CHECK(res_a.checkpoints.front().filename() == "checkpoint_000000.json");

  // Metrics CSV parses and has the declared header.
  std::ifstream metrics(res_a.metrics_csv);
  std::string header;
  std::getline(metrics, header);
  CHECK(header == "step,train_loss,train_accuracy");

  // Deterministic re-run.
  const fs::path run_b = fresh_dir("lrc_train_b");
  const TrainResult res_b = train(cfg, run_b);
  REQUIRE(res_a.checkpoints.size() == res_b.checkpoints.size());
  for (std::size_t i = 0; i < res_a.checkpoints.size(); ++i)
    CHECK(slurp(res_a.checkpoints[i]) == slurp(res_b.checkpoints[i]));
  CHECK(slurp(res_a.metrics_csv) == slurp(res_b.metrics_csv));

  // lr = 0 keeps the weights at initialization.
  ExperimentConfig frozen = cfg;
  frozen.train.learning_rate = 0.0;
  const fs::path run_c = fresh_dir("lrc_train_c");
  const TrainResult res_c = train(frozen, run_c);
  const Checkpoint first = load_checkpoint(res_c.checkpoints.front());
  const Checkpoint last = load_checkpoint(res_c.checkpoints.back());
  for (std::size_t i = 0; i < first.net.layers.size(); ++i) {
    CHECK(first.net.layers[i].weight.data == last.net.layers[i].weight.data);
    CHECK(first.net.layers[i].bias == last.net.layers[i].bias);
  }
}

TEST_CASE("train: convex descent on a linear net with square loss") {
  const fs::path data = fresh_dir("lrc_train_convex");
  gen_synthetic(2, 1, 10, 0.3, 5, data);
  ExperimentConfig cfg;
  cfg.seed = 3;
  cfg.dataset.features = data / "features.csv";
  cfg.dataset.labels = data / "labels.csv";
  cfg.dataset.classes = 2;
  cfg.net.hidden = {};
  cfg.net.activations = {"identity"};
  cfg.net.loss = Loss::square;
  cfg.train.batch_size = 20;  // full batch
  cfg.train.learning_rate = 1e-3;
  cfg.train.momentum = 0.0;
  cfg.train.epochs = 30;
  cfg.train.checkpoints = 30;
  apply_seed(cfg);

  const fs::path run = fresh_dir("lrc_train_convex_run");
  const TrainResult res = train(cfg, run);
  std::ifstream in(res.metrics_csv);
  std::string line;
  std::getline(in, line);  // header
  std::vector<double> losses;
  while (std::getline(in, line)) {
    const auto first = line.find(',');
    const auto second = line.find(',', first + 1);
    losses.push_back(std::stod(line.substr(first + 1, second - first - 1)));
  }
  REQUIRE(losses.size() >= 3);
  for (std::size_t i = 1; i < losses.size(); ++i) CHECK(losses[i] <= losses[i - 1] + 1e-12);
}

TEST_CASE("config: load, defaults, overrides, errors") {
  const fs::path dir = fresh_dir("lrc_cfg");
  {
    std::ofstream out(dir / "cfg.json");
    out << R"({"seed": 5, "net": {"hidden": [7, 3], "loss": "square"},
               "curvature": {"samples": "sub", "factor": "mc", "mc_samples": 4},
               "train": {"batch_size": 8}})";
  }
  const ExperimentConfig cfg = load_config(dir / "cfg.json");
  CHECK(cfg.seed == 5);
  CHECK(cfg.net.hidden == std::vector<std::size_t>{7, 3});
  CHECK(cfg.net.loss == Loss::square);
  CHECK(cfg.curvature.sample_mode == SampleMode::sub);
  CHECK(cfg.curvature.factor_mode == FactorMode::mc);
  CHECK(cfg.curvature.mc_samples == 4);
  CHECK(cfg.train.batch_size == 8);
  CHECK(cfg.train.momentum == 0.9);          // default kept
  CHECK(cfg.curvature.clip_threshold == 1e-4);  // default kept

  {
    std::ofstream out(dir / "bad.json");
    out << R"({"curvature": {"samples": "nope"}})";
  }
  CHECK_THROWS_AS(load_config(dir / "bad.json"), ConfigError);
  CHECK_THROWS_AS(load_config(dir / "missing.json"), ConfigError);
}

TEST_CASE("run_spectrum: scalar checkpoint gives the single eigenvalue 2") {
  const fs::path dir = fresh_dir("lrc_spec_scalar");
  // Dataset: one sample x = 1, label 0 written as square-loss target 1-hot...
  // Use a 1-class dataset so the one-hot target is (1) and f = theta x.
  {
    std::ofstream f(dir / "features.csv");
    f << "1\n";
    std::ofstream l(dir / "labels.csv");
    l << "0\n";
  }
  // theta = 3 scalar model; square loss with target one-hot(0) = 1...
  // loss = (f - 1)^2, Hessian 2, J = 1 -> eigenvalue 2.
  const auto net = testsupport::scalar_model(3.0);
  save_checkpoint(net, Loss::square, dir / "checkpoint_000000.json");

  ExperimentConfig cfg;
  cfg.seed = 1;
  cfg.dataset.features = dir / "features.csv";
  cfg.dataset.labels = dir / "labels.csv";
  cfg.dataset.classes = 1;
  cfg.train.batch_size = 1;
  apply_seed(cfg);

  run_spectrum(cfg, dir / "checkpoint_000000.json", dir);
  std::ifstream in(dir / "spectrum.csv");
  std::string header, row, extra;
  std::getline(in, header);
  std::getline(in, row);
  const bool more = static_cast<bool>(std::getline(in, extra));
  CHECK(header == "k,eigenvalue");
  REQUIRE(row.rfind("1,", 0) == 0);
  CHECK(std::stod(row.substr(2)) == doctest::Approx(2.0).epsilon(1e-12));
  CHECK_FALSE(more);
}

TEST_CASE("run_overlap: identical approximation and reference give 1.0") {
  const fs::path data = fresh_dir("lrc_overlap_data");
  gen_synthetic(3, 5, 12, 0.4, 12, data);
  ExperimentConfig cfg = small_config(data);
  cfg.overlap.reference = "mini_batch_ggn";
  cfg.overlap.draws = 3;

  const fs::path run = fresh_dir("lrc_overlap_run");
  const TrainResult res = train(cfg, run);
  run_overlap(cfg, {res.checkpoints.front()}, run);

  std::ifstream in(run / "overlap.csv");
  std::string header;
  std::getline(in, header);
  CHECK(header == "checkpoint,overlap,effective_C");
  std::size_t rows = 0;
  for (std::string line; std::getline(in, line);) {
    ++rows;
    const auto comma = line.find(',');
    const auto second = line.find(',', comma + 1);
    const double overlap = std::stod(line.substr(comma + 1, second - comma - 1));
    CHECK(overlap == doctest::Approx(1.0).epsilon(1e-12));
  }
  CHECK(rows == 3);

  ExperimentConfig bad = cfg;
  bad.overlap.reference = "nonsense";
  CHECK_THROWS_AS(run_overlap(bad, {res.checkpoints.front()}, run), UnknownReferenceError);
}

TEST_CASE("run_derivs and run_newton: outputs exist and parse") {
  const fs::path data = fresh_dir("lrc_derivs_data");
  gen_synthetic(3, 5, 12, 0.4, 12, data);
  ExperimentConfig cfg = small_config(data);

  const fs::path run = fresh_dir("lrc_derivs_run");
  const TrainResult res = train(cfg, run);

  run_derivs(cfg, res.checkpoints.back(), run);
  {
    std::ifstream in(run / "derivs.csv");
    std::string header;
    std::getline(in, header);
    CHECK(header == "n,k,gamma_nk,lambda_nk");
    std::size_t rows = 0;
    for (std::string line; std::getline(in, line);) ++rows;
    CHECK(rows > 0);
    CHECK(rows % cfg.train.batch_size == 0);
  }
  {
    std::ifstream in(run / "snr.csv");
    std::string header;
    std::getline(in, header);
    CHECK(header == "k,snr_gamma,snr_lambda");
  }

  run_newton(cfg, res.checkpoints.back(), run);
  CHECK(fs::exists(run / "newton.json"));
  const std::string j = slurp(run / "newton.json");
  CHECK(j.find("loss_before") != std::string::npos);
  CHECK(j.find("step_norm") != std::string::npos);
}

TEST_CASE("draw_batch_indices: deterministic, sorted, distinct per draw") {
  const auto a = draw_batch_indices(50, 10, 3, 0);
  const auto b = draw_batch_indices(50, 10, 3, 0);
  const auto c = draw_batch_indices(50, 10, 3, 1);
  CHECK(a == b);
  CHECK(a != c);
  CHECK(std::is_sorted(a.begin(), a.end()));
  CHECK_THROWS_AS(draw_batch_indices(5, 10, 3, 0), ConfigError);
}
