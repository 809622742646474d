// SPDX-License-Identifier: Apache-2.0
#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>

#include "fat/error.hpp"
#include "fat/harness.hpp"
#include "fat/ops.hpp"
#include "fat/random.hpp"

namespace fat {
namespace {

struct CommonOpts {
  std::string config_path;
  std::string out_dir;
  std::int64_t seed = -1;  // < 0: keep the config's seeds
  std::string forced;
  std::int64_t epochs = -1;
  std::int64_t dataset_size = -1;
};

void add_common(CLI::App* cmd, CommonOpts& opts) {
  cmd->add_option("--config", opts.config_path, "experiment config (INI)");
  cmd->add_option("--out", opts.out_dir, "output directory");
  cmd->add_option("--seed", opts.seed,
                  "overrides model and training seeds together");
  cmd->add_option("--forced-variant", opts.forced,
                  "foreground-bias variant (off, a..e or their names)");
  cmd->add_option("--epochs", opts.epochs, "training epochs");
  cmd->add_option("--dataset-size", opts.dataset_size, "samples to generate");
}

ExperimentConfig resolve(const CommonOpts& opts) {
  ExperimentConfig cfg;
  if (!opts.config_path.empty()) cfg = load_experiment_file(opts.config_path);
  if (opts.seed >= 0) {
    cfg.model_seed = static_cast<std::uint64_t>(opts.seed);
    cfg.train_seed = static_cast<std::uint64_t>(opts.seed);
  }
  if (!opts.forced.empty()) cfg.model.forced = parse_forced_variant(opts.forced);
  if (opts.epochs >= 0) cfg.optim.epochs = opts.epochs;
  if (opts.dataset_size >= 0) cfg.dataset_size = opts.dataset_size;
  if (!opts.out_dir.empty()) cfg.out_dir = opts.out_dir;
  return cfg;
}

// Restoring a checkpoint needs the parameters to exist first, so run one
// untracked forward pass on a real sample before copying values in.
void materialize_and_restore(const ExperimentConfig& cfg, const Dataset& ds,
                             ParamStore& ps, const CheckpointData& ckpt) {
  NoGradGuard guard;
  model_forward(assemble_inputs(ds, {ds.val.empty() ? 0 : ds.val.front()}),
                cfg.model, ps);
  restore_params(ps, ckpt);
}

int run_generate(const CommonOpts& opts) {
  ExperimentConfig cfg = resolve(opts);
  if (cfg.out_dir.empty()) throw ConfigError("generate needs --out");
  const Dataset ds =
      generate_dataset(cfg.dataset_size, cfg.data_seed, cfg.data);
  export_dataset(ds, cfg.out_dir);
  std::cout << "wrote " << ds.samples.size() << " samples ("
            << ds.train.size() << " train, " << ds.val.size() << " val) to "
            << cfg.out_dir << "\n";
  return 0;
}

int run_train(const CommonOpts& opts) {
  const ExperimentConfig cfg = resolve(opts);
  const RunRecord rec = train(cfg);
  std::cout << record_csv(rec);
  std::cout << "best epoch " << (rec.train_loss.empty() ? 0 : rec.best_epoch + 1)
            << ", wall " << rec.wall_seconds << " s\n";
  if (!cfg.out_dir.empty()) {
    std::cout << "artifacts in " << cfg.out_dir << "\n";
  }
  return 0;
}

int run_ablate(const CommonOpts& opts, const std::string& rows_csv,
               std::int64_t seeds) {
  const ExperimentConfig cfg = resolve(opts);
  std::vector<std::string> rows;
  std::stringstream ss(rows_csv);
  std::string cell;
  while (std::getline(ss, cell, ',')) {
    if (!cell.empty()) rows.push_back(cell);
  }
  if (rows.empty()) rows = ablation_rows();
  const AblationResult res = run_ablation(cfg, rows, seeds);
  std::cout << res.csv;
  if (!cfg.out_dir.empty()) {
    std::filesystem::create_directories(cfg.out_dir);
    std::ofstream out(cfg.out_dir + "/ablation.csv", std::ios::binary);
    out << res.csv;
    if (!out) throw DataError("cannot write " + cfg.out_dir + "/ablation.csv");
    std::cout << "wrote " << cfg.out_dir << "/ablation.csv\n";
  }
  return 0;
}

// Checkpoint-driven commands rebuild the experiment from the embedded config
// text unless --config points elsewhere.
ExperimentConfig config_for_checkpoint(const CommonOpts& opts,
                                       const CheckpointData& ckpt) {
  if (!opts.config_path.empty()) return load_experiment_file(opts.config_path);
  return parse_experiment(ckpt.config_text);
}

int run_eval(const CommonOpts& opts, const std::string& ckpt_path) {
  const CheckpointData ckpt = load_checkpoint(ckpt_path);
  ExperimentConfig cfg = config_for_checkpoint(opts, ckpt);
  cfg.optim.epochs = 0;
  cfg.out_dir.clear();
  const Dataset ds =
      generate_dataset(cfg.dataset_size, cfg.data_seed, cfg.data);
  ParamStore ps(cfg.model_seed);
  materialize_and_restore(cfg, ds, ps, ckpt);
  const RunRecord rec = train_on(cfg, ds, ps);
  std::cout << record_csv(rec);
  std::cout << report_table(rec.best_report);
  return 0;
}

int run_export_attention(const CommonOpts& opts, const std::string& ckpt_path,
                         std::int64_t sample_index) {
  const CheckpointData ckpt = load_checkpoint(ckpt_path);
  ExperimentConfig cfg = config_for_checkpoint(opts, ckpt);
  if (cfg.out_dir.empty() && opts.out_dir.empty()) {
    throw ConfigError("export-attention needs --out");
  }
  if (!opts.out_dir.empty()) cfg.out_dir = opts.out_dir;
  const Dataset ds =
      generate_dataset(cfg.dataset_size, cfg.data_seed, cfg.data);
  if (sample_index < 0 ||
      sample_index >= static_cast<std::int64_t>(ds.samples.size())) {
    throw ConfigError("sample index outside the generated dataset");
  }
  ParamStore ps(cfg.model_seed);
  materialize_and_restore(cfg, ds, ps, ckpt);
  const ModelInputs one = assemble_inputs(ds, {sample_index});
  const auto paths = export_attention(cfg, ps, one, cfg.out_dir);
  for (const auto& p : paths) std::cout << p << "\n";
  return 0;
}

// Spot-check the reverse pass against central differences on a few
// representative closures, including a tiny end-to-end model.
int run_grad_check(const CommonOpts& opts) {
  const double threshold = 1e-4;
  RandomStream rng(opts.seed >= 0 ? static_cast<std::uint64_t>(opts.seed) : 7);
  struct Case {
    std::string name;
    std::function<Tensor(const Tensor&)> f;
    Tensor x;
  };
  std::vector<Case> cases;
  cases.push_back({"matmul-gelu",
                   [](const Tensor& x) {
                     Tensor y = matmul(x, transpose(x, {1, 0}));
                     return sum_all(gelu(y));
                   },
                   Tensor::randn({3, 4}, rng, 0.5)});
  cases.push_back({"softmax-mse",
                   [](const Tensor& x) {
                     Tensor s = softmax(x, -1);
                     return mse_loss(s, Tensor::full(s.shape(), 0.25));
                   },
                   Tensor::randn({2, 4}, rng, 1.0)});
  Tensor gamma = Tensor::ones({6});
  Tensor beta = Tensor::zeros({6});
  cases.push_back({"layer-norm",
                   [gamma, beta](const Tensor& x) {
                     return sum_all(layer_norm(x, gamma, beta));
                   },
                   Tensor::randn({2, 6}, rng, 1.0)});

  ExperimentConfig tiny;
  tiny.model.task = TaskKind::regression_ocean;
  tiny.model.channels = 2;
  tiny.model.frames = 4;
  tiny.model.height = 16;
  tiny.model.width = 16;
  tiny.model.patch = 4;
  tiny.model.backbone.stem_channels = 4;
  tiny.model.backbone.block_count = 1;
  tiny.model.backbone.downsample = {1, 2, 2};
  tiny.model.stages = 1;
  tiny.model.blocks_per_stage = 1;
  tiny.model.embed = 8;
  tiny.model.heads = 2;
  tiny.model.window = {2, 2, 2};
  tiny.model.sides = {"audio"};
  tiny.data.channels = 2;
  tiny.data.frames = 4;
  tiny.data.height = 16;
  tiny.data.width = 16;
  tiny.data.audio_tokens = 3;
  tiny.data.audio_channels = 5;
  tiny.data.train_fraction = 0.5;
  const Dataset ds = generate_dataset(2, 11, tiny.data);
  ParamStore ps(5);
  ModelInputs in = assemble_inputs(ds, {0});
  const Tensor target = assemble_targets(ds, {0});
  cases.push_back({"tiny-model-video",
                   [&](const Tensor& x) {
                     ModelInputs probe = in;
                     probe.face_video = x;
                     return mse_loss(
                         model_forward(probe, tiny.model, ps), target);
                   },
                   in.face_video});

  bool ok = true;
  for (auto& c : cases) {
    const double err = grad_check(c.f, c.x);
    const bool pass = err < threshold;
    ok = ok && pass;
    std::printf("%-18s max rel err %.3e  %s\n", c.name.c_str(), err,
                pass ? "ok" : "FAIL");
  }
  if (!ok) throw NumericError("gradient check exceeded threshold");
  std::cout << "all gradient checks passed\n";
  return 0;
}

}  // namespace

int cli_main(const std::vector<std::string>& args) {
  CLI::App app{"forced-attention trainer on synthetic multimodal clips"};
  app.name("fat");
  app.require_subcommand(1);

  CommonOpts opts;
  std::string rows_csv;
  std::int64_t seeds = 1;
  std::string ckpt_path;
  std::int64_t sample_index = 0;

  CLI::App* gen = app.add_subcommand("generate", "write a dataset to disk");
  add_common(gen, opts);

  CLI::App* tr = app.add_subcommand("train", "train one configuration");
  add_common(tr, opts);

  CLI::App* ab = app.add_subcommand("ablate", "run the ablation grid");
  add_common(ab, opts);
  ab->add_option("--rows", rows_csv, "comma-separated row names");
  ab->add_option("--seeds", seeds, "seeds per row");

  CLI::App* ev = app.add_subcommand("eval", "evaluate a checkpoint");
  add_common(ev, opts);
  ev->add_option("checkpoint", ckpt_path, "checkpoint file")->required();

  CLI::App* ex = app.add_subcommand("export-attention",
                                    "write attention maps for one sample");
  add_common(ex, opts);
  ex->add_option("checkpoint", ckpt_path, "checkpoint file")->required();
  ex->add_option("--sample", sample_index, "dataset sample index");

  CLI::App* gc = app.add_subcommand("grad-check",
                                    "verify gradients by finite differences");
  add_common(gc, opts);

  try {
    std::vector<std::string> rev(args.rbegin(), args.rend());
    app.parse(rev);
    if (gen->parsed()) return run_generate(opts);
    if (tr->parsed()) return run_train(opts);
    if (ab->parsed()) return run_ablate(opts, rows_csv, seeds);
    if (ev->parsed()) return run_eval(opts, ckpt_path);
    if (ex->parsed()) return run_export_attention(opts, ckpt_path, sample_index);
    if (gc->parsed()) return run_grad_check(opts);
    return 0;
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 3;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return 4;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace fat
