#include <algorithm>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "lrc/errors.hpp"
#include "lrc/experiment.hpp"
#include "lrc/rng.hpp"

namespace fs = std::filesystem;

namespace {

struct SharedFlags {
  std::string config_path;
  std::string out_dir = ".";
  std::uint64_t seed = 0;
  bool seed_set = false;
  std::string curvature;
  std::string samples;
  std::size_t sub_size = 0;
  bool sub_size_set = false;
  std::size_t mc_samples = 0;
  std::string block;
  double clip = -1.0;
  double damping = 0.0;
};

void add_shared(CLI::App* cmd, SharedFlags& f) {
  cmd->add_option("--config", f.config_path, "experiment config JSON");
  cmd->add_option("--out", f.out_dir, "output directory");
  cmd->add_option("--seed", f.seed, "experiment seed")->each([&](const std::string&) {
    f.seed_set = true;
  });
  cmd->add_option("--curvature", f.curvature, "loss-Hessian factorization: exact|mc")
      ->check(CLI::IsMember({"exact", "mc"}));
  cmd->add_option("--samples", f.samples, "curvature samples: mb|sub")
      ->check(CLI::IsMember({"mb", "sub"}));
  cmd->add_option("--sub-size", f.sub_size, "curvature sub-sample size (0 = N/8)")
      ->each([&](const std::string&) { f.sub_size_set = true; });
  cmd->add_option("--mc-samples", f.mc_samples, "MC samples per data point");
  cmd->add_option("--block", f.block, "GGN blocks: full|layerwise")
      ->check(CLI::IsMember({"full", "layerwise"}));
  cmd->add_option("--clip", f.clip, "Gram eigenvalue clip threshold");
  cmd->add_option("--damping", f.damping, "Newton damping delta");
}

lrc::ExperimentConfig make_config(const SharedFlags& f) {
  lrc::ExperimentConfig cfg;
  if (!f.config_path.empty()) cfg = lrc::load_config(f.config_path);
  // Flags override file values.
  if (f.seed_set) cfg.seed = f.seed;
  if (!f.curvature.empty())
    cfg.curvature.factor_mode =
        f.curvature == "mc" ? lrc::FactorMode::mc : lrc::FactorMode::exact;
  if (!f.samples.empty())
    cfg.curvature.sample_mode = f.samples == "sub" ? lrc::SampleMode::sub : lrc::SampleMode::mb;
  if (f.sub_size_set) cfg.curvature.sub_size = f.sub_size;
  if (f.mc_samples > 0) cfg.curvature.mc_samples = f.mc_samples;
  if (!f.block.empty()) {
    const lrc::BlockMode m =
        f.block == "layerwise" ? lrc::BlockMode::layerwise : lrc::BlockMode::full;
    cfg.curvature.block_mode = m;
    cfg.newton.block_mode = m;
  }
  if (f.clip >= 0.0) cfg.curvature.clip_threshold = f.clip;
  if (f.damping > 0.0) cfg.newton.damping = f.damping;
  lrc::apply_seed(cfg);
  return cfg;
}

std::vector<fs::path> collect_checkpoints(const std::vector<std::string>& args) {
  std::vector<fs::path> out;
  for (const std::string& a : args) {
    const fs::path p(a);
    if (fs::is_directory(p)) {
      for (const auto& e : fs::directory_iterator(p)) {
        const std::string name = e.path().filename().string();
        if (name.rfind("checkpoint_", 0) == 0 && e.path().extension() == ".json")
          out.push_back(e.path());
      }
    } else {
      out.push_back(p);
    }
  }
  std::sort(out.begin(), out.end());
  if (out.empty()) throw lrc::ConfigError("no checkpoints found");
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"low-rank GGN curvature toolkit"};
  app.require_subcommand(1);

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "generate a synthetic blob dataset");
  SharedFlags gen_flags;
  std::size_t classes = 2, dim = 4, n_per_class = 16;
  double spread = 0.5;
  bool gen_overrides[4] = {false, false, false, false};
  add_shared(gen, gen_flags);
  gen->add_option("--classes", classes)->each([&](const std::string&) { gen_overrides[0] = true; });
  gen->add_option("--dim", dim)->each([&](const std::string&) { gen_overrides[1] = true; });
  gen->add_option("--n-per-class", n_per_class)->each([&](const std::string&) {
    gen_overrides[2] = true;
  });
  gen->add_option("--spread", spread)->each([&](const std::string&) { gen_overrides[3] = true; });

  // train
  auto* tr = app.add_subcommand("train", "SGD training with checkpoints");
  SharedFlags tr_flags;
  add_shared(tr, tr_flags);

  // analysis subcommands
  auto* sp = app.add_subcommand("spectrum", "GGN eigenvalues of a checkpoint");
  SharedFlags sp_flags;
  std::vector<std::string> sp_ckpts;
  add_shared(sp, sp_flags);
  sp->add_option("--checkpoint", sp_ckpts, "checkpoint file")->required();

  auto* ov = app.add_subcommand("overlap", "top-C eigenspace overlap vs a reference");
  SharedFlags ov_flags;
  std::vector<std::string> ov_ckpts;
  std::string ov_reference;
  std::size_t ov_draws = 0;
  add_shared(ov, ov_flags);
  ov->add_option("--checkpoint", ov_ckpts, "checkpoint file(s) or directory")->required();
  ov->add_option("--reference", ov_reference,
                 "reference curvature: full_batch_ggn|mini_batch_ggn|fd_hessian");
  ov->add_option("--draws", ov_draws, "number of mini-batch draws");

  auto* dv = app.add_subcommand("derivs", "per-sample directional derivatives and SNR");
  SharedFlags dv_flags;
  std::vector<std::string> dv_ckpts;
  add_shared(dv, dv_flags);
  dv->add_option("--checkpoint", dv_ckpts, "checkpoint file")->required();

  auto* nw = app.add_subcommand("newton", "damped Newton step diagnostics");
  SharedFlags nw_flags;
  std::vector<std::string> nw_ckpts;
  std::string nw_mode;
  add_shared(nw, nw_flags);
  nw->add_option("--checkpoint", nw_ckpts, "checkpoint file")->required();
  nw->add_option("--mode", nw_mode, "eigen|inversion_lemma")
      ->check(CLI::IsMember({"eigen", "inversion_lemma"}));

  auto* be = app.add_subcommand("bench", "Gram method vs power iteration runtime");
  SharedFlags be_flags;
  std::vector<std::size_t> be_ks;
  std::size_t be_reps = 0;
  add_shared(be, be_flags);
  be->add_option("--k", be_ks, "eigenpair counts to time");
  be->add_option("--reps", be_reps, "timing repetitions (minimum is reported)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;  // bad flags are config errors; --help stays 0
  }

  try {
    if (gen->parsed()) {
      lrc::ExperimentConfig cfg = make_config(gen_flags);
      if (gen_overrides[0]) cfg.dataset.classes = classes;
      if (gen_overrides[1]) cfg.dataset.dim = dim;
      if (gen_overrides[2]) cfg.dataset.n_per_class = n_per_class;
      if (gen_overrides[3]) cfg.dataset.spread = spread;
      lrc::gen_synthetic(cfg.dataset.classes, cfg.dataset.dim, cfg.dataset.n_per_class,
                         cfg.dataset.spread, cfg.seed, gen_flags.out_dir);
    } else if (tr->parsed()) {
      lrc::ExperimentConfig cfg = make_config(tr_flags);
      lrc::train(cfg, tr_flags.out_dir);
    } else if (sp->parsed()) {
      lrc::ExperimentConfig cfg = make_config(sp_flags);
      lrc::run_spectrum(cfg, collect_checkpoints(sp_ckpts).front(), sp_flags.out_dir);
    } else if (ov->parsed()) {
      lrc::ExperimentConfig cfg = make_config(ov_flags);
      if (!ov_reference.empty()) cfg.overlap.reference = ov_reference;
      if (ov_draws > 0) cfg.overlap.draws = ov_draws;
      lrc::run_overlap(cfg, collect_checkpoints(ov_ckpts), ov_flags.out_dir);
    } else if (dv->parsed()) {
      lrc::ExperimentConfig cfg = make_config(dv_flags);
      lrc::run_derivs(cfg, collect_checkpoints(dv_ckpts).front(), dv_flags.out_dir);
    } else if (nw->parsed()) {
      lrc::ExperimentConfig cfg = make_config(nw_flags);
      if (!nw_mode.empty())
        cfg.newton.mode =
            nw_mode == "eigen" ? lrc::NewtonMode::eigen : lrc::NewtonMode::inversion_lemma;
      lrc::run_newton(cfg, collect_checkpoints(nw_ckpts).front(), nw_flags.out_dir);
    } else if (be->parsed()) {
      lrc::ExperimentConfig cfg = make_config(be_flags);
      if (!be_ks.empty()) cfg.bench.ks = be_ks;
      if (be_reps > 0) cfg.bench.repetitions = be_reps;
      lrc::run_bench(cfg, be_flags.out_dir);
    }
  } catch (const lrc::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const lrc::IoError& e) {
    std::cerr << "io error: " << e.what() << '\n';
    return 4;
  } catch (const lrc::Error& e) {
    std::cerr << "numerical failure: " << e.what() << '\n';
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 3;
  }
  return 0;
}
