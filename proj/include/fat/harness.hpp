// SPDX-License-Identifier: Apache-2.0
// Experiment harness: config files, the two-group AdamW optimizer, the
// training loop, the ablation grid, and attention-map export.
#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "fat/data.hpp"
#include "fat/metrics.hpp"
#include "fat/model.hpp"
#include "fat/params.hpp"

namespace fat {

struct OptimizerConfig {
  double lr_transformer = 3e-4;
  double lr_backbone = -1.0;  // < 0: defaults to lr_transformer / 10
  double weight_decay = 0.02;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::int64_t epochs = 10;
  std::int64_t batch_size = 8;
};

double effective_backbone_lr(const OptimizerConfig& cfg);

struct ExperimentConfig {
  ModelConfig model;
  GenerationSpec data;  // video extents mirror the model plan
  std::int64_t dataset_size = 40;
  std::uint64_t data_seed = 1;
  std::uint64_t model_seed = 1;   // parameter initialization
  std::uint64_t train_seed = 1;   // batch order and stochastic depth
  OptimizerConfig optim;
  std::string ablation = "full";
  std::string out_dir;  // empty: keep results in memory only
};

// Decoupled-weight-decay Adam with two learning-rate groups selected by
// Parameter.group ("backbone" vs everything else). Decay touches matrices
// and filters only (rank >= 2); biases, gains, and scalar gates are exempt.
// Parameters without a gradient are left untouched.
class AdamW {
 public:
  explicit AdamW(const OptimizerConfig& cfg) : cfg_(cfg) {}
  void step(ParamStore& ps);
  std::int64_t steps() const { return t_; }

 private:
  struct Slot {
    std::vector<double> m, v;
  };
  OptimizerConfig cfg_;
  std::map<std::string, Slot> state_;
  std::int64_t t_ = 0;
};

struct RunRecord {
  std::vector<double> train_loss;         // one entry per epoch
  std::vector<MetricReport> val_reports;  // per epoch; single entry if epochs=0
  std::int64_t best_epoch = 0;            // index into val_reports
  MetricReport best_report;
  double wall_seconds = 0.0;  // never serialized (determinism)
  std::uint64_t model_seed = 0;
  std::uint64_t train_seed = 0;
  std::string config_hash;
};

// Trains on cfg's own freshly generated dataset. When out_dir is set, writes
// checkpoint.fat (best validation epoch), record.csv, and config.ini there.
RunRecord train(const ExperimentConfig& cfg);
// Same loop on a shared dataset (ablation grids reuse one dataset). The
// param store is the caller's, so initial state can be inspected or seeded;
// on return it holds the best-epoch weights.
RunRecord train_on(const ExperimentConfig& cfg, const Dataset& ds,
                   ParamStore& ps);

std::string record_csv(const RunRecord& rec);

// Table-style ablation grid.
const std::vector<std::string>& ablation_rows();  // 7 known row names
// Returns base with exactly one documented dimension changed.
ModelConfig apply_ablation(const ModelConfig& base, const std::string& row);

struct AblationResult {
  std::vector<std::string> rows;
  std::int64_t seeds = 0;
  std::vector<RunRecord> records;  // records[r * seeds + s]
  std::string csv;                 // per-seed lines plus per-row mean lines
};

// Runs every row for `seeds` consecutive seeds on one shared dataset.
// Per-run seeds are base.model_seed + s / base.train_seed + s.
AblationResult run_ablation(const ExperimentConfig& base,
                            const std::vector<std::string>& rows,
                            std::int64_t seeds);

// Mean received attention of the first block of every face-branch stage,
// one map per head, upsampled to frame resolution; writes <name>.pgm and
// <name>.csv per map and returns the written paths. Linear-attention trunks
// have no explicit weights and are rejected.
std::vector<std::string> export_attention(const ExperimentConfig& cfg,
                                          ParamStore& ps,
                                          const ModelInputs& sample,
                                          const std::string& out_dir);

// Flat INI round trip: sections [model], [data], [optimizer], [run].
std::string serialize_experiment(const ExperimentConfig& cfg);
ExperimentConfig parse_experiment(const std::string& text);
ExperimentConfig load_experiment_file(const std::string& path);
std::string config_hash(const ExperimentConfig& cfg);

// Batches rows of sample tensors into the model's input layout.
ModelInputs assemble_inputs(const Dataset& ds,
                            const std::vector<std::int64_t>& indices);
// Stacked (B, 5) regression targets for the chosen samples.
Tensor assemble_targets(const Dataset& ds,
                        const std::vector<std::int64_t>& indices);

int cli_main(const std::vector<std::string>& args);

}  // namespace fat
