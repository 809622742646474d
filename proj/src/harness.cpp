// SPDX-License-Identifier: Apache-2.0
#include "fat/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>

#include "fat/error.hpp"
#include "fat/ops.hpp"
#include "fat/random.hpp"

namespace fat {
namespace {

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path);
  out << text;
  if (!out) throw DataError("failed while writing " + path);
}

Tensor stack_rows(const std::vector<const Tensor*>& rows) {
  const Shape& per = rows.front()->shape();
  Shape sh;
  sh.push_back(static_cast<std::int64_t>(rows.size()));
  sh.insert(sh.end(), per.begin(), per.end());
  Tensor out = Tensor::zeros(sh);
  const std::int64_t stride = rows.front()->numel();
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i]->shape() != per) {
      throw DimensionError("samples disagree on tensor extents: " +
                           shape_str(per) + " vs " +
                           shape_str(rows[i]->shape()));
    }
    std::copy(rows[i]->data().begin(), rows[i]->data().end(),
              out.data().begin() + static_cast<std::int64_t>(i) * stride);
  }
  return out;
}

void validate_run(const ExperimentConfig& cfg) {
  const OptimizerConfig& o = cfg.optim;
  if (o.epochs < 0) throw ConfigError("epochs must be >= 0");
  if (o.batch_size < 1) throw ConfigError("batch size must be >= 1");
  if (o.lr_transformer < 0.0) {
    throw ConfigError("transformer learning rate must be >= 0");
  }
  if (o.weight_decay < 0.0) throw ConfigError("weight decay must be >= 0");
  if (o.beta1 < 0.0 || o.beta1 >= 1.0 || o.beta2 < 0.0 || o.beta2 >= 1.0) {
    throw ConfigError("Adam betas must lie in [0, 1)");
  }
  if (o.eps <= 0.0) throw ConfigError("Adam epsilon must be positive");
  if (cfg.data.channels != cfg.model.channels ||
      cfg.data.frames != cfg.model.frames ||
      cfg.data.height != cfg.model.height ||
      cfg.data.width != cfg.model.width) {
    throw ConfigError("dataset geometry differs from the model plan");
  }
  if (cfg.model.task == TaskKind::classification &&
      cfg.data.classes != cfg.model.class_count) {
    throw ConfigError("dataset provides " + std::to_string(cfg.data.classes) +
                      " classes but the head expects " +
                      std::to_string(cfg.model.class_count));
  }
}

std::vector<std::vector<std::int64_t>> plain_batches(
    const std::vector<std::int64_t>& pool, std::int64_t batch_size,
    std::uint64_t seed) {
  std::vector<std::int64_t> order = pool;
  RandomStream rs(seed);
  for (std::size_t i = order.size(); i > 1; --i) {
    std::swap(order[i - 1], order[rs.uniform_index(i)]);
  }
  std::vector<std::vector<std::int64_t>> batches;
  for (std::size_t start = 0; start < order.size();
       start += static_cast<std::size_t>(batch_size)) {
    const std::size_t stop =
        std::min(order.size(), start + static_cast<std::size_t>(batch_size));
    batches.emplace_back(order.begin() + static_cast<std::int64_t>(start),
                         order.begin() + static_cast<std::int64_t>(stop));
  }
  return batches;
}

std::vector<std::int64_t> class_targets(const Dataset& ds,
                                        const std::vector<std::int64_t>& idx) {
  std::vector<std::int64_t> out;
  out.reserve(idx.size());
  for (std::int64_t i : idx) {
    out.push_back(ds.samples[static_cast<std::size_t>(i)].class_index);
  }
  return out;
}

MetricReport evaluate(const ExperimentConfig& cfg, const Dataset& ds,
                      ParamStore& ps) {
  NoGradGuard guard;
  if (ds.val.empty()) {
    throw ConfigError("validation split is empty; lower train_fraction");
  }
  const bool classify = cfg.model.task == TaskKind::classification;
  std::vector<std::vector<std::int64_t>> batches;
  for (std::size_t start = 0; start < ds.val.size();
       start += static_cast<std::size_t>(cfg.optim.batch_size)) {
    const std::size_t stop = std::min(
        ds.val.size(), start + static_cast<std::size_t>(cfg.optim.batch_size));
    batches.emplace_back(ds.val.begin() + static_cast<std::int64_t>(start),
                         ds.val.begin() + static_cast<std::int64_t>(stop));
  }
  if (classify) {
    std::vector<std::int64_t> truth, pred;
    for (const auto& batch : batches) {
      const Tensor logits =
          model_forward(assemble_inputs(ds, batch), cfg.model, ps);
      const std::int64_t k = logits.dim(1);
      for (std::size_t i = 0; i < batch.size(); ++i) {
        std::int64_t arg = 0;
        for (std::int64_t c = 1; c < k; ++c) {
          if (logits.at(static_cast<std::int64_t>(i) * k + c) >
              logits.at(static_cast<std::int64_t>(i) * k + arg)) {
            arg = c;
          }
        }
        pred.push_back(arg);
      }
      const auto t = class_targets(ds, batch);
      truth.insert(truth.end(), t.begin(), t.end());
    }
    return classification_report(truth, pred, cfg.model.class_count);
  }
  const auto n = static_cast<std::int64_t>(ds.val.size());
  Tensor truth = Tensor::zeros({n, 5});
  Tensor pred = Tensor::zeros({n, 5});
  std::int64_t row = 0;
  for (const auto& batch : batches) {
    const Tensor out =
        model_forward(assemble_inputs(ds, batch), cfg.model, ps);
    const Tensor want = assemble_targets(ds, batch);
    std::copy(out.data().begin(), out.data().end(),
              pred.data().begin() + row * 5);
    std::copy(want.data().begin(), want.data().end(),
              truth.data().begin() + row * 5);
    row += static_cast<std::int64_t>(batch.size());
  }
  return regression_report(truth, pred);
}

double report_score(const ExperimentConfig& cfg, const MetricReport& rep) {
  return cfg.model.task == TaskKind::classification
             ? rep.classification_accuracy
             : rep.mean_accuracy;
}

}  // namespace

double effective_backbone_lr(const OptimizerConfig& cfg) {
  return cfg.lr_backbone < 0.0 ? cfg.lr_transformer / 10.0 : cfg.lr_backbone;
}

void AdamW::step(ParamStore& ps) {
  ++t_;
  const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (auto& [name, param] : ps.all()) {
    if (!param.value.has_grad()) continue;
    const double lr = param.group == "backbone" ? effective_backbone_lr(cfg_)
                                                : cfg_.lr_transformer;
    if (lr == 0.0) continue;
    const double decay =
        param.value.shape().size() >= 2 ? cfg_.weight_decay : 0.0;
    const std::vector<double>& g = param.value.grad();
    std::vector<double>& p = param.value.data();
    Slot& slot = state_[name];
    if (slot.m.empty()) {
      slot.m.assign(p.size(), 0.0);
      slot.v.assign(p.size(), 0.0);
    }
    for (std::size_t i = 0; i < p.size(); ++i) {
      slot.m[i] = cfg_.beta1 * slot.m[i] + (1.0 - cfg_.beta1) * g[i];
      slot.v[i] = cfg_.beta2 * slot.v[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
      const double mhat = slot.m[i] / c1;
      const double vhat = slot.v[i] / c2;
      p[i] -= lr * (mhat / (std::sqrt(vhat) + cfg_.eps) + decay * p[i]);
    }
  }
}

ModelInputs assemble_inputs(const Dataset& ds,
                            const std::vector<std::int64_t>& indices) {
  if (indices.empty()) throw ContractError("cannot assemble an empty batch");
  std::vector<const Tensor*> face, seg, full, audio, transcript;
  for (std::int64_t i : indices) {
    if (i < 0 || i >= static_cast<std::int64_t>(ds.samples.size())) {
      throw BoundsError("sample index " + std::to_string(i) +
                        " outside the dataset");
    }
    const SyntheticSample& s = ds.samples[static_cast<std::size_t>(i)];
    face.push_back(&s.face_video);
    seg.push_back(&s.seg_map);
    full.push_back(&s.fullframe_video);
    audio.push_back(&s.audio_tokens);
    transcript.push_back(&s.transcript_tokens);
  }
  ModelInputs in;
  in.face_video = stack_rows(face);
  in.seg_map = stack_rows(seg);
  in.fullframe_video = stack_rows(full);
  in.audio_tokens = stack_rows(audio);
  in.transcript_tokens = stack_rows(transcript);
  return in;
}

Tensor assemble_targets(const Dataset& ds,
                        const std::vector<std::int64_t>& indices) {
  std::vector<const Tensor*> rows;
  for (std::int64_t i : indices) {
    rows.push_back(&ds.samples[static_cast<std::size_t>(i)].label);
  }
  return stack_rows(rows);
}

RunRecord train_on(const ExperimentConfig& cfg, const Dataset& ds,
                   ParamStore& ps) {
  validate_run(cfg);
  const auto start = std::chrono::steady_clock::now();
  const bool classify = cfg.model.task == TaskKind::classification;

  RunRecord rec;
  rec.model_seed = ps.global_seed();
  rec.train_seed = cfg.train_seed;
  rec.config_hash = config_hash(cfg);

  AdamW opt(cfg.optim);
  RandomStream depth_rng(seed_for(cfg.train_seed, "stochastic-depth"));

  std::map<std::string, std::vector<double>> best_params;
  double best_score = 0.0;

  if (cfg.optim.epochs == 0) {
    rec.val_reports.push_back(evaluate(cfg, ds, ps));
    rec.best_epoch = 0;
    rec.best_report = rec.val_reports.front();
  }
  for (std::int64_t epoch = 0; epoch < cfg.optim.epochs; ++epoch) {
    const std::uint64_t epoch_seed =
        seed_for(cfg.train_seed, "epoch-" + std::to_string(epoch));
    const auto batches =
        classify ? balanced_batches(ds, cfg.optim.batch_size, epoch_seed)
                 : plain_batches(ds.train, cfg.optim.batch_size, epoch_seed);
    double loss_sum = 0.0;
    std::int64_t seen = 0;
    for (std::size_t bi = 0; bi < batches.size(); ++bi) {
      const auto& batch = batches[bi];
      const ModelInputs in = assemble_inputs(ds, batch);
      const Tensor out =
          model_forward(in, cfg.model, ps, /*training=*/true, &depth_rng);
      Tensor loss = classify
                        ? cross_entropy(out, class_targets(ds, batch))
                        : mse_loss(out, assemble_targets(ds, batch));
      const double lv = loss.value();
      loss.backward();
      if (!std::isfinite(lv)) {
        double max_grad = 0.0;
        std::int64_t bad = 0;
        for (const auto& [name, param] : ps.all()) {
          if (!param.value.has_grad()) continue;
          for (double g : param.value.grad()) {
            if (std::isfinite(g)) {
              max_grad = std::max(max_grad, std::abs(g));
            } else {
              ++bad;
            }
          }
        }
        throw NumericError(
            "non-finite training loss at epoch " + std::to_string(epoch + 1) +
            ", batch " + std::to_string(bi + 1) + "; max finite |grad| = " +
            fmt(max_grad) + ", non-finite gradient entries: " +
            std::to_string(bad));
      }
      opt.step(ps);
      ps.zero_grad();
      loss_sum += lv * static_cast<double>(batch.size());
      seen += static_cast<std::int64_t>(batch.size());
    }
    rec.train_loss.push_back(loss_sum / static_cast<double>(seen));
    rec.val_reports.push_back(evaluate(cfg, ds, ps));
    const double score = report_score(cfg, rec.val_reports.back());
    if (epoch == 0 || score > best_score) {
      best_score = score;
      rec.best_epoch = epoch;
      best_params.clear();
      for (const auto& [name, param] : ps.all()) {
        best_params[name] = param.value.data();
      }
    }
  }
  if (!best_params.empty()) {
    for (auto& [name, param] : ps.all()) {
      param.value.data() = best_params.at(name);
    }
  }
  rec.best_report = rec.val_reports[static_cast<std::size_t>(rec.best_epoch)];
  rec.wall_seconds = std::chrono::duration<double>(
                         std::chrono::steady_clock::now() - start)
                         .count();

  if (!cfg.out_dir.empty()) {
    std::filesystem::create_directories(cfg.out_dir);
    const std::string config_text = serialize_experiment(cfg);
    write_text_file(cfg.out_dir + "/config.ini", config_text);
    save_checkpoint(ps, config_text, cfg.out_dir + "/checkpoint.fat");
    write_text_file(cfg.out_dir + "/record.csv", record_csv(rec));
  }
  return rec;
}

RunRecord train(const ExperimentConfig& cfg) {
  validate_run(cfg);
  const Dataset ds =
      generate_dataset(cfg.dataset_size, cfg.data_seed, cfg.data);
  ParamStore ps(cfg.model_seed);
  return train_on(cfg, ds, ps);
}

std::string record_csv(const RunRecord& rec) {
  std::ostringstream out;
  const bool classify = !rec.val_reports.empty() &&
                        rec.val_reports.front().per_trait_mse.empty();
  if (classify) {
    out << "epoch,train_loss,val_accuracy,val_weighted_f1,best\n";
  } else {
    out << "epoch,train_loss";
    for (int j = 0; j < 5; ++j) out << ",val_mse_" << j;
    out << ",val_mse_mean";
    for (int j = 0; j < 5; ++j) out << ",val_acc_" << j;
    out << ",val_acc_mean,best\n";
  }
  const bool init_only = rec.train_loss.empty();
  for (std::size_t e = 0; e < rec.val_reports.size(); ++e) {
    const MetricReport& rep = rec.val_reports[e];
    out << (init_only ? 0 : e + 1) << ',';
    if (!init_only) out << fmt(rec.train_loss[e]);
    if (classify) {
      out << ',' << fmt(rep.classification_accuracy) << ','
          << fmt(rep.weighted_f1);
    } else {
      for (double v : rep.per_trait_mse) out << ',' << fmt(v);
      out << ',' << fmt(rep.mean_mse);
      for (double v : rep.per_trait_accuracy) out << ',' << fmt(v);
      out << ',' << fmt(rep.mean_accuracy);
    }
    out << ',' << (static_cast<std::int64_t>(e) == rec.best_epoch ? 1 : 0)
        << '\n';
  }
  return out.str();
}

const std::vector<std::string>& ablation_rows() {
  static const std::vector<std::string> rows{
      "full",     "wo_forced",      "wo_backbone", "wo_cross",
      "wo_late_fusion", "wo_audio", "wo_transcript"};
  return rows;
}

ModelConfig apply_ablation(const ModelConfig& base, const std::string& row) {
  ModelConfig out = base;
  if (row == "full") {
    return out;
  } else if (row == "wo_forced") {
    out.forced = ForcedVariant::off;
  } else if (row == "wo_backbone") {
    out.use_backbone = false;
  } else if (row == "wo_cross") {
    out.use_fusion = false;
  } else if (row == "wo_late_fusion") {
    out.late_fusion = LateFusion::face_only;
  } else if (row == "wo_audio" || row == "wo_transcript") {
    const std::string side = row == "wo_audio" ? "audio" : "transcript";
    out.sides.erase(std::remove(out.sides.begin(), out.sides.end(), side),
                    out.sides.end());
  } else {
    std::string valid;
    for (const auto& r : ablation_rows()) {
      if (!valid.empty()) valid += ", ";
      valid += r;
    }
    throw ConfigError("unknown ablation row '" + row + "'; valid rows: " +
                      valid);
  }
  return out;
}

AblationResult run_ablation(const ExperimentConfig& base,
                            const std::vector<std::string>& rows,
                            std::int64_t seeds) {
  if (rows.empty()) throw ConfigError("ablation needs at least one row");
  if (seeds < 1) throw ConfigError("ablation needs at least one seed");
  for (const auto& row : rows) apply_ablation(base.model, row);  // validate

  const Dataset ds =
      generate_dataset(base.dataset_size, base.data_seed, base.data);
  const bool classify = base.model.task == TaskKind::classification;

  AblationResult result;
  result.rows = rows;
  result.seeds = seeds;
  std::ostringstream csv;
  if (classify) {
    csv << "row,seed,val_accuracy,val_weighted_f1\n";
  } else {
    csv << "row,seed";
    for (int j = 0; j < 5; ++j) csv << ",val_mse_" << j;
    csv << ",val_mse_mean\n";
  }
  for (const auto& row : rows) {
    std::vector<double> acc(classify ? 2 : 6, 0.0);
    for (std::int64_t s = 0; s < seeds; ++s) {
      ExperimentConfig rc = base;
      rc.model = apply_ablation(base.model, row);
      rc.ablation = row;
      rc.model_seed = base.model_seed + static_cast<std::uint64_t>(s);
      rc.train_seed = base.train_seed + static_cast<std::uint64_t>(s);
      rc.out_dir.clear();  // the grid emits exactly one artifact: this CSV
      ParamStore ps(rc.model_seed);
      RunRecord rec = train_on(rc, ds, ps);
      const MetricReport& rep = rec.best_report;
      csv << row << ',' << rc.model_seed;
      if (classify) {
        csv << ',' << fmt(rep.classification_accuracy) << ','
            << fmt(rep.weighted_f1);
        acc[0] += rep.classification_accuracy;
        acc[1] += rep.weighted_f1;
      } else {
        for (std::size_t j = 0; j < 5; ++j) {
          csv << ',' << fmt(rep.per_trait_mse[j]);
          acc[j] += rep.per_trait_mse[j];
        }
        csv << ',' << fmt(rep.mean_mse);
        acc[5] += rep.mean_mse;
      }
      csv << '\n';
      result.records.push_back(std::move(rec));
    }
    csv << row << ",mean";
    for (double v : acc) csv << ',' << fmt(v / static_cast<double>(seeds));
    csv << '\n';
  }
  result.csv = csv.str();
  return result;
}

namespace {

void write_pgm(const std::vector<double>& values, std::int64_t h,
               std::int64_t w, const std::string& path) {
  double maxv = 0.0;
  for (double v : values) maxv = std::max(maxv, v);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path);
  out << "P5\n" << w << ' ' << h << "\n255\n";
  for (double v : values) {
    const double unit = maxv > 0.0 ? v / maxv : 0.0;
    out.put(static_cast<char>(
        static_cast<unsigned char>(std::lround(unit * 255.0))));
  }
  if (!out) throw DataError("failed while writing " + path);
}

void write_grid_csv(const std::vector<double>& values, std::int64_t h,
                    std::int64_t w, const std::string& path) {
  std::ostringstream text;
  for (std::int64_t y = 0; y < h; ++y) {
    for (std::int64_t x = 0; x < w; ++x) {
      if (x) text << ',';
      text << fmt(values[static_cast<std::size_t>(y * w + x)]);
    }
    text << '\n';
  }
  write_text_file(path, text.str());
}

}  // namespace

std::vector<std::string> export_attention(const ExperimentConfig& cfg,
                                          ParamStore& ps,
                                          const ModelInputs& sample,
                                          const std::string& out_dir) {
  if (cfg.model.performer_blocks) {
    throw UnsupportedError(
        "the linear-attention trunk stores no explicit attention weights; "
        "restore a softmax-attention checkpoint to export maps");
  }
  if (!sample.face_video.defined() || sample.face_video.rank() != 5 ||
      sample.face_video.dim(0) != 1) {
    throw ContractError("attention export expects a single-sample batch");
  }
  ForwardTrace trace;
  {
    NoGradGuard guard;
    model_forward(sample, cfg.model, ps, false, nullptr, &trace);
  }
  std::filesystem::create_directories(out_dir);
  const std::int64_t H = cfg.model.height, W = cfg.model.width;
  std::vector<std::string> paths;
  for (std::int64_t s = 0; s < cfg.model.stages; ++s) {
    const std::string key = "face.s" + std::to_string(s) + ".b0";
    const auto it = trace.attention.find(key);
    if (it == trace.attention.end()) {
      throw UnsupportedError("no attention weights recorded for " + key);
    }
    const AttnRecord& rec = it->second;
    const auto [gd, gh, gw] = rec.grid;
    const auto [pd, ph, pw] = rec.padded;
    const auto [wd, wh, ww] = rec.window;
    const std::int64_t heads = rec.attn.dim(1), T = rec.attn.dim(2);
    const std::int64_t nh = ph / wh, nw = pw / ww;
    for (std::int64_t head = 0; head < heads; ++head) {
      // Mean attention received by each real token, averaged over depth.
      std::vector<double> grid_map(static_cast<std::size_t>(gh * gw), 0.0);
      for (std::int64_t win = 0; win < rec.attn.dim(0); ++win) {
        const std::int64_t wz = win / (nh * nw);
        const std::int64_t wy = (win / nw) % nh;
        const std::int64_t wx = win % nw;
        for (std::int64_t j = 0; j < T; ++j) {
          const std::int64_t z = wz * wd + j / (wh * ww);
          const std::int64_t y = wy * wh + (j / ww) % wh;
          const std::int64_t x = wx * ww + j % ww;
          if (z >= gd || y >= gh || x >= gw) continue;  // padding
          double received = 0.0;
          for (std::int64_t i = 0; i < T; ++i) {
            received += rec.attn.at({win, head, i, j});
          }
          grid_map[static_cast<std::size_t>(y * gw + x)] +=
              received / static_cast<double>(T);
        }
      }
      for (double& v : grid_map) v /= static_cast<double>(gd);
      // Nearest upsample to frame resolution.
      std::vector<double> frame(static_cast<std::size_t>(H * W));
      for (std::int64_t y = 0; y < H; ++y) {
        for (std::int64_t x = 0; x < W; ++x) {
          const std::int64_t sy = y * gh / H, sx = x * gw / W;
          frame[static_cast<std::size_t>(y * W + x)] =
              grid_map[static_cast<std::size_t>(sy * gw + sx)];
        }
      }
      const std::string stem = out_dir + "/attention_s" + std::to_string(s) +
                               "_h" + std::to_string(head);
      write_pgm(frame, H, W, stem + ".pgm");
      write_grid_csv(frame, H, W, stem + ".csv");
      paths.push_back(stem + ".pgm");
      paths.push_back(stem + ".csv");
    }
  }
  return paths;
}

namespace {

std::string bool_str(bool b) { return b ? "true" : "false"; }

std::string join3(const std::array<std::int64_t, 3>& a) {
  return std::to_string(a[0]) + "," + std::to_string(a[1]) + "," +
         std::to_string(a[2]);
}

bool parse_bool(const std::string& v, const std::string& key) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError("key '" + key + "' wants true/false, got '" + v + "'");
}

std::int64_t parse_i64(const std::string& v, const std::string& key) {
  try {
    std::size_t used = 0;
    const std::int64_t out = std::stoll(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return out;
  } catch (const std::exception&) {
    throw ConfigError("key '" + key + "' wants an integer, got '" + v + "'");
  }
}

std::uint64_t parse_u64(const std::string& v, const std::string& key) {
  try {
    std::size_t used = 0;
    const std::uint64_t out = std::stoull(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return out;
  } catch (const std::exception&) {
    throw ConfigError("key '" + key + "' wants an unsigned integer, got '" +
                      v + "'");
  }
}

double parse_f64(const std::string& v, const std::string& key) {
  try {
    std::size_t used = 0;
    const double out = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return out;
  } catch (const std::exception&) {
    throw ConfigError("key '" + key + "' wants a number, got '" + v + "'");
  }
}

std::array<std::int64_t, 3> parse_i3(const std::string& v,
                                     const std::string& key) {
  std::array<std::int64_t, 3> out{};
  std::stringstream ss(v);
  std::string cell;
  int n = 0;
  while (std::getline(ss, cell, ',')) {
    if (n >= 3) break;
    out[static_cast<std::size_t>(n++)] = parse_i64(cell, key);
  }
  if (n != 3) {
    throw ConfigError("key '" + key + "' wants three comma-separated values");
  }
  return out;
}

std::vector<std::string> split_csv(const std::string& v) {
  std::vector<std::string> out;
  std::stringstream ss(v);
  std::string cell;
  while (std::getline(ss, cell, ',')) {
    if (!cell.empty()) out.push_back(cell);
  }
  return out;
}

std::string trim(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t\r");
  std::size_t b = s.find_last_not_of(" \t\r");
  return a == std::string::npos ? "" : s.substr(a, b - a + 1);
}

}  // namespace

std::string serialize_experiment(const ExperimentConfig& cfg) {
  const ModelConfig& m = cfg.model;
  const GenerationSpec& d = cfg.data;
  const OptimizerConfig& o = cfg.optim;
  std::ostringstream out;
  out << "[model]\n";
  out << "task = " << task_name(m.task) << "\n";
  out << "classes = " << m.class_count << "\n";
  out << "forced = " << forced_variant_name(m.forced) << "\n";
  out << "late_fusion = " << late_fusion_name(m.late_fusion) << "\n";
  out << "use_backbone = " << bool_str(m.use_backbone) << "\n";
  out << "use_fusion = " << bool_str(m.use_fusion) << "\n";
  out << "sides = ";
  for (std::size_t i = 0; i < m.sides.size(); ++i) {
    out << (i ? "," : "") << m.sides[i];
  }
  out << "\n";
  out << "channels = " << m.channels << "\n";
  out << "frames = " << m.frames << "\n";
  out << "height = " << m.height << "\n";
  out << "width = " << m.width << "\n";
  out << "patch = " << m.patch << "\n";
  out << "stem_channels = " << m.backbone.stem_channels << "\n";
  out << "backbone_blocks = " << m.backbone.block_count << "\n";
  out << "downsample = " << join3(m.backbone.downsample) << "\n";
  out << "stages = " << m.stages << "\n";
  out << "blocks_per_stage = " << m.blocks_per_stage << "\n";
  out << "embed = " << m.embed << "\n";
  out << "heads = " << m.heads << "\n";
  out << "window = " << join3(m.window) << "\n";
  out << "drop_path = " << fmt(m.drop_path) << "\n";
  out << "mlp_hidden = " << m.mlp_hidden << "\n";
  out << "performer_blocks = " << bool_str(m.performer_blocks) << "\n";
  out << "performer_features = " << m.performer_features << "\n";
  out << "fusion_stage = " << m.fusion_stage << "\n";
  out << "fusion_heads = " << m.fusion.heads << "\n";
  out << "fusion_zero_init = " << bool_str(m.fusion.zero_init) << "\n";
  out << "fusion_performer = " << bool_str(m.fusion.performer) << "\n";
  out << "fusion_features = " << m.fusion.performer_features << "\n";
  out << "chunk = " << m.chunk_d << "," << m.chunk_h << "," << m.chunk_w
      << "\n";
  out << "[data]\n";
  out << "audio_tokens = " << d.audio_tokens << "\n";
  out << "audio_channels = " << d.audio_channels << "\n";
  out << "transcript_tokens = " << d.transcript_tokens << "\n";
  out << "transcript_channels = " << d.transcript_channels << "\n";
  out << "noise_amplitude = " << fmt(d.noise_amplitude) << "\n";
  out << "side_redundancy = " << fmt(d.side_redundancy) << "\n";
  out << "train_fraction = " << fmt(d.train_fraction) << "\n";
  if (!d.class_weights.empty()) {
    out << "class_weights = ";
    for (std::size_t i = 0; i < d.class_weights.size(); ++i) {
      out << (i ? "," : "") << fmt(d.class_weights[i]);
    }
    out << "\n";
  }
  out << "[optimizer]\n";
  out << "lr_transformer = " << fmt(o.lr_transformer) << "\n";
  out << "lr_backbone = " << fmt(o.lr_backbone) << "\n";
  out << "weight_decay = " << fmt(o.weight_decay) << "\n";
  out << "beta1 = " << fmt(o.beta1) << "\n";
  out << "beta2 = " << fmt(o.beta2) << "\n";
  out << "eps = " << fmt(o.eps) << "\n";
  out << "epochs = " << o.epochs << "\n";
  out << "batch_size = " << o.batch_size << "\n";
  out << "[run]\n";
  out << "dataset_size = " << cfg.dataset_size << "\n";
  out << "data_seed = " << cfg.data_seed << "\n";
  out << "model_seed = " << cfg.model_seed << "\n";
  out << "train_seed = " << cfg.train_seed << "\n";
  out << "ablation = " << cfg.ablation << "\n";
  if (!cfg.out_dir.empty()) out << "out = " << cfg.out_dir << "\n";
  return out.str();
}

ExperimentConfig parse_experiment(const std::string& text) {
  ExperimentConfig cfg;
  std::istringstream in(text);
  std::string line, section;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#' || t[0] == ';') continue;
    if (t.front() == '[' && t.back() == ']') {
      section = t.substr(1, t.size() - 2);
      if (section != "model" && section != "data" && section != "optimizer" &&
          section != "run") {
        throw ConfigError("unknown config section [" + section + "]");
      }
      continue;
    }
    const auto eq = t.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config line " + std::to_string(line_no) +
                        " is not key = value: " + t);
    }
    const std::string key = trim(t.substr(0, eq));
    const std::string value = trim(t.substr(eq + 1));
    ModelConfig& m = cfg.model;
    GenerationSpec& d = cfg.data;
    OptimizerConfig& o = cfg.optim;
    bool known = true;
    if (section == "model") {
      if (key == "task") m.task = parse_task(value);
      else if (key == "classes") m.class_count = parse_i64(value, key);
      else if (key == "forced") m.forced = parse_forced_variant(value);
      else if (key == "late_fusion") m.late_fusion = parse_late_fusion(value);
      else if (key == "use_backbone") m.use_backbone = parse_bool(value, key);
      else if (key == "use_fusion") m.use_fusion = parse_bool(value, key);
      else if (key == "sides") m.sides = split_csv(value);
      else if (key == "channels") m.channels = parse_i64(value, key);
      else if (key == "frames") m.frames = parse_i64(value, key);
      else if (key == "height") m.height = parse_i64(value, key);
      else if (key == "width") m.width = parse_i64(value, key);
      else if (key == "patch") m.patch = parse_i64(value, key);
      else if (key == "stem_channels") m.backbone.stem_channels = parse_i64(value, key);
      else if (key == "backbone_blocks") m.backbone.block_count = parse_i64(value, key);
      else if (key == "downsample") m.backbone.downsample = parse_i3(value, key);
      else if (key == "stages") m.stages = parse_i64(value, key);
      else if (key == "blocks_per_stage") m.blocks_per_stage = parse_i64(value, key);
      else if (key == "embed") m.embed = parse_i64(value, key);
      else if (key == "heads") m.heads = parse_i64(value, key);
      else if (key == "window") m.window = parse_i3(value, key);
      else if (key == "drop_path") m.drop_path = parse_f64(value, key);
      else if (key == "mlp_hidden") m.mlp_hidden = parse_i64(value, key);
      else if (key == "performer_blocks") m.performer_blocks = parse_bool(value, key);
      else if (key == "performer_features") m.performer_features = parse_i64(value, key);
      else if (key == "fusion_stage") m.fusion_stage = parse_i64(value, key);
      else if (key == "fusion_heads") m.fusion.heads = parse_i64(value, key);
      else if (key == "fusion_zero_init") m.fusion.zero_init = parse_bool(value, key);
      else if (key == "fusion_performer") m.fusion.performer = parse_bool(value, key);
      else if (key == "fusion_features") m.fusion.performer_features = parse_i64(value, key);
      else if (key == "chunk") {
        const auto c = parse_i3(value, key);
        m.chunk_d = c[0];
        m.chunk_h = c[1];
        m.chunk_w = c[2];
      } else known = false;
    } else if (section == "data") {
      if (key == "audio_tokens") d.audio_tokens = parse_i64(value, key);
      else if (key == "audio_channels") d.audio_channels = parse_i64(value, key);
      else if (key == "transcript_tokens") d.transcript_tokens = parse_i64(value, key);
      else if (key == "transcript_channels") d.transcript_channels = parse_i64(value, key);
      else if (key == "noise_amplitude") d.noise_amplitude = parse_f64(value, key);
      else if (key == "side_redundancy") d.side_redundancy = parse_f64(value, key);
      else if (key == "train_fraction") d.train_fraction = parse_f64(value, key);
      else if (key == "class_weights") {
        d.class_weights.clear();
        for (const auto& cell : split_csv(value)) {
          d.class_weights.push_back(parse_f64(cell, key));
        }
      } else known = false;
    } else if (section == "optimizer") {
      if (key == "lr_transformer") o.lr_transformer = parse_f64(value, key);
      else if (key == "lr_backbone") o.lr_backbone = parse_f64(value, key);
      else if (key == "weight_decay") o.weight_decay = parse_f64(value, key);
      else if (key == "beta1") o.beta1 = parse_f64(value, key);
      else if (key == "beta2") o.beta2 = parse_f64(value, key);
      else if (key == "eps") o.eps = parse_f64(value, key);
      else if (key == "epochs") o.epochs = parse_i64(value, key);
      else if (key == "batch_size") o.batch_size = parse_i64(value, key);
      else known = false;
    } else if (section == "run") {
      if (key == "dataset_size") cfg.dataset_size = parse_i64(value, key);
      else if (key == "data_seed") cfg.data_seed = parse_u64(value, key);
      else if (key == "model_seed") cfg.model_seed = parse_u64(value, key);
      else if (key == "train_seed") cfg.train_seed = parse_u64(value, key);
      else if (key == "ablation") cfg.ablation = value;
      else if (key == "out") cfg.out_dir = value;
      else known = false;
    } else {
      throw ConfigError("key '" + key + "' appears before any section");
    }
    if (!known) {
      throw ConfigError("unknown config key '" + key + "' in section [" +
                        section + "]");
    }
  }
  // The dataset geometry always mirrors the model plan.
  cfg.data.channels = cfg.model.channels;
  cfg.data.frames = cfg.model.frames;
  cfg.data.height = cfg.model.height;
  cfg.data.width = cfg.model.width;
  cfg.data.classes =
      cfg.model.task == TaskKind::classification ? cfg.model.class_count : 0;
  cfg.model.backbone.out_channels = cfg.model.embed;
  return cfg;
}

ExperimentConfig load_experiment_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open config file " + path);
  std::ostringstream text;
  text << in.rdbuf();
  return parse_experiment(text.str());
}

std::string config_hash(const ExperimentConfig& cfg) {
  char buf[24];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(
                    fnv1a(serialize_experiment(cfg))));
  return buf;
}

}  // namespace fat
