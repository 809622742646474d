// SPDX-License-Identifier: Apache-2.0
#include "fat/model.hpp"

#include <cmath>
#include <utility>

#include "fat/error.hpp"
#include "fat/random.hpp"
#include "fat/ops.hpp"

namespace fat {
namespace {

std::string stage_prefix(const std::string& branch, std::int64_t s) {
  return branch + ".s" + std::to_string(s);
}

void check_stage(const ModelConfig& cfg, std::int64_t stage) {
  if (stage < 0 || stage >= cfg.stages)
    throw ConfigError("stage index " + std::to_string(stage) +
                      " outside [0, " + std::to_string(cfg.stages) + ")");
}

void validate_config(const ModelConfig& cfg) {
  if (cfg.channels < 1 || cfg.frames < 1 || cfg.height < 1 || cfg.width < 1)
    throw ConfigError("video extents must be positive");
  if (cfg.patch < 1 || cfg.height % cfg.patch != 0 || cfg.width % cfg.patch != 0)
    throw ConfigError("patch size " + std::to_string(cfg.patch) +
                      " must divide height and width");
  if (cfg.stages < 1 || cfg.blocks_per_stage < 1)
    throw ConfigError("need at least one stage and one block per stage");
  if (cfg.embed < 1 || cfg.heads < 1 || cfg.embed % cfg.heads != 0)
    throw ConfigError("head count must divide the stage width");
  const auto& ds = cfg.backbone.downsample;
  if (cfg.frames % ds[0] != 0 || cfg.height % ds[1] != 0 ||
      cfg.width % ds[2] != 0)
    throw ConfigError("downsample factors must divide the video extents");
  if (cfg.use_backbone && cfg.backbone.out_channels != cfg.embed)
    throw ConfigError("first stage width " + std::to_string(cfg.embed) +
                      " differs from backbone output channels " +
                      std::to_string(cfg.backbone.out_channels));
  const std::int64_t halvings = cfg.stages - 1;
  const std::int64_t h0 = cfg.height / ds[1], w0 = cfg.width / ds[2];
  if (h0 % (std::int64_t{1} << halvings) != 0 ||
      w0 % (std::int64_t{1} << halvings) != 0)
    throw ConfigError("spatial token extents cannot halve across " +
                      std::to_string(cfg.stages) + " stages");
  if (cfg.task == TaskKind::classification && cfg.class_count < 2)
    throw ConfigError("classification needs at least 2 classes");
  if (cfg.fusion_stage >= cfg.stages)
    throw ConfigError("fusion stage " + std::to_string(cfg.fusion_stage) +
                      " outside the " + std::to_string(cfg.stages) +
                      "-stage plan");
}

void check_video(const Tensor& v, const ModelConfig& cfg, const char* what) {
  if (!v.defined())
    throw DataError(std::string("sample lacks modality '") + what + "'");
  if (v.rank() != 5 || v.dim(1) != cfg.channels || v.dim(2) != cfg.frames ||
      v.dim(3) != cfg.height || v.dim(4) != cfg.width)
    throw DimensionError(std::string(what) + " video must be (B, " +
                         std::to_string(cfg.channels) + ", " +
                         std::to_string(cfg.frames) + ", " +
                         std::to_string(cfg.height) + ", " +
                         std::to_string(cfg.width) + "), got " + shape_str(v.shape()));
}

// Per-chunk foreground flags for a batch of static maps: (B, cd, ch, cw, 1).
Tensor chunk_flags(const Tensor& seg, const ModelConfig& cfg) {
  if (seg.rank() != 3 || seg.dim(1) != cfg.height || seg.dim(2) != cfg.width)
    throw DimensionError("segmentation maps must be (B, " +
                         std::to_string(cfg.height) + ", " +
                         std::to_string(cfg.width) + "), got " +
                         shape_str(seg.shape()));
  ChunkLayout lay;
  lay.grid_d = cfg.chunk_d > 0 ? cfg.chunk_d : 1;
  lay.grid_h = cfg.chunk_h > 0 ? cfg.chunk_h : cfg.height / cfg.patch;
  lay.grid_w = cfg.chunk_w > 0 ? cfg.chunk_w : cfg.width / cfg.patch;
  std::vector<Tensor> rows;
  rows.reserve(static_cast<size_t>(seg.dim(0)));
  for (std::int64_t b = 0; b < seg.dim(0); ++b) {
    Tensor map = reshape(slice(seg, 0, b, 1), {cfg.height, cfg.width});
    rows.push_back(m1_flag_grid(patchify_segmap(map, lay, 1)));
  }
  return rows.size() == 1 ? rows[0] : concat(rows, 0);
}

// Patch features via the shared backbone, or one strided affine embedding
// when the backbone is ablated. Either way: (B, D', H', W', embed).
Tensor embed_tokens(const Tensor& video, const ModelConfig& cfg,
                    ParamStore& ps) {
  const auto& ds = cfg.backbone.downsample;
  const std::int64_t bsz = video.dim(0), c = video.dim(1);
  const std::int64_t d0 = cfg.frames / ds[0], h0 = cfg.height / ds[1],
                     w0 = cfg.width / ds[2];
  if (!cfg.use_backbone) {
    Tensor x = reshape(video, {bsz, c, d0, ds[0], h0, ds[1], w0, ds[2]});
    x = transpose(x, {0, 2, 4, 6, 1, 3, 5, 7});
    x = reshape(x, {bsz, d0, h0, w0, c * ds[0] * ds[1] * ds[2]});
    Tensor w = ps.normal(cfg.backbone.param_prefix + ".tubelet.w",
                         {cfg.embed, c * ds[0] * ds[1] * ds[2]}, "backbone",
                         0.02);
    Tensor b = ps.zeros(cfg.backbone.param_prefix + ".tubelet.b", {cfg.embed},
                        "backbone");
    return linear(x, w, b);
  }
  std::vector<Tensor> per;
  per.reserve(static_cast<size_t>(bsz));
  for (std::int64_t b = 0; b < bsz; ++b) {
    Tensor sample = reshape(slice(video, 0, b, 1),
                            {c, cfg.frames, cfg.height, cfg.width});
    PatchGrid g = partition_patches(sample, cfg.patch);
    Tensor feat = assemble_feature_grid(backbone_forward(g, cfg.backbone, ps));
    per.push_back(
        reshape(feat, {1, feat.dim(0), feat.dim(1), feat.dim(2), feat.dim(3)}));
  }
  Tensor grid = per.size() == 1 ? per[0] : concat(per, 0);
  return transpose(grid, {0, 2, 3, 4, 1});
}

// Encoder stages with optional foreground hooks and the fusion block at the
// configured stage's entry. flags may be undefined when no variant needs it.
Tensor trunk_forward(Tensor x, const Tensor& flags,
                     const std::vector<SideInput>& sides, ForcedVariant v,
                     bool fuse, const ModelConfig& cfg, ParamStore& ps,
                     const std::string& branch, bool training,
                     RandomStream* rng, ForwardTrace* trace) {
  const auto g0 = token_grid_extents(cfg, 0);
  x = add(x, sinusoidal_encoding(g0[0], g0[1], g0[2], cfg.embed));
  if (v == ForcedVariant::pos_encoding)
    x = forced_token_encoding(x, expand_flag_grid(flags, g0[0], g0[1], g0[2]),
                              v, ps, branch + ".forced");
  const std::int64_t fs =
      cfg.fusion_stage < 0 ? cfg.stages - 1 : cfg.fusion_stage;
  const std::int64_t total = cfg.stages * cfg.blocks_per_stage;
  for (std::int64_t s = 0; s < cfg.stages; ++s) {
    const auto gs = token_grid_extents(cfg, s);
    const std::int64_t es = stage_width(cfg, s), hs = stage_heads(cfg, s);
    if (fuse && s == fs && !sides.empty()) {
      FusionConfig fc = cfg.fusion;
      fc.channels = es;
      Tensor flat = reshape(x, {x.dim(0), gs[0] * gs[1] * gs[2], es});
      flat = fusion_block(flat, sides, fc, ps, stage_prefix(branch, s) + ".fuse");
      x = reshape(flat, {x.dim(0), gs[0], gs[1], gs[2], es});
    }
    for (std::int64_t b = 0; b < cfg.blocks_per_stage; ++b) {
      const std::int64_t depth = s * cfg.blocks_per_stage + b;
      EncoderBlockConfig bc;
      bc.win.window = cfg.window;
      bc.win.heads = hs;
      bc.win.embed_dim = es;
      if (b % 2 == 1)
        bc.win.shift = {cfg.window[0] / 2, cfg.window[1] / 2,
                        cfg.window[2] / 2};
      bc.mlp_hidden = cfg.mlp_hidden;
      bc.drop_path =
          total > 1 ? cfg.drop_path * double(depth) / double(total - 1) : 0.0;
      const std::string name = stage_prefix(branch, s) + ".b" + std::to_string(b);
      bc.performer = cfg.performer_blocks;
      bc.performer_features = cfg.performer_features;
      bc.performer_seed = fnv1a(name);
      BlockExtras ex;
      if (v == ForcedVariant::linear_bias || v == ForcedVariant::attn_bias)
        ex = forced_block_hooks(v, expand_flag_grid(flags, gs[0], gs[1], gs[2]),
                                es, hs, ps, name + ".forced");
      ex.training = training;
      ex.rng = rng;
      Tensor attn;
      if (trace && !cfg.performer_blocks) ex.attn_export = &attn;
      x = encoder_block(x, bc, ps, name, ex);
      if (trace && !cfg.performer_blocks) {
        AttnRecord rec;
        rec.attn = attn;
        rec.grid = gs;
        rec.window = cfg.window;
        for (int a = 0; a < 3; ++a) {
          rec.padded[a] =
              (gs[a] + cfg.window[a] - 1) / cfg.window[a] * cfg.window[a];
          rec.shift[a] =
              rec.padded[a] == cfg.window[a] ? 0 : bc.win.shift[a];
        }
        trace->attention[name] = std::move(rec);
      }
    }
    if (s + 1 < cfg.stages)
      x = patch_merging(x, ps, stage_prefix(branch, s) + ".merge");
  }
  return x;
}

Tensor grid_from_tokens(const Tensor& tokens) {
  return transpose(tokens, {0, 4, 1, 2, 3});
}

// Flattens a branch's feature grid into a token sequence (B, D*H*W, C).
Tensor branch_tokens(const BranchOutput& bo) {
  const Tensor& f = bo.features;
  Tensor t = transpose(f, {0, 2, 3, 4, 1});
  return reshape(t, {f.dim(0), f.dim(2) * f.dim(3) * f.dim(4), f.dim(1)});
}

}  // namespace

TaskKind parse_task(const std::string& name) {
  if (name == "regression_ocean") return TaskKind::regression_ocean;
  if (name == "classification") return TaskKind::classification;
  throw ConfigError("unknown task '" + name +
                    "' (regression_ocean | classification)");
}

const char* task_name(TaskKind t) {
  return t == TaskKind::regression_ocean ? "regression_ocean"
                                         : "classification";
}

LateFusion parse_late_fusion(const std::string& name) {
  if (name == "face_only") return LateFusion::face_only;
  if (name == "concat_all") return LateFusion::concat_all;
  throw ConfigError("unknown late-fusion mode '" + name +
                    "' (face_only | concat_all)");
}

const char* late_fusion_name(LateFusion f) {
  return f == LateFusion::face_only ? "face_only" : "concat_all";
}

Tensor sinusoidal_encoding(std::int64_t d, std::int64_t h, std::int64_t w,
                           std::int64_t e) {
  if (d < 1 || h < 1 || w < 1 || e < 1)
    throw DimensionError("sinusoidal encoding needs positive extents");
  const std::int64_t t = d * h * w;
  std::vector<double> pe(static_cast<size_t>(t * e));
  for (std::int64_t i = 0; i < t; ++i)
    for (std::int64_t c = 0; c < e; ++c) {
      const double freq =
          std::exp(-std::log(10000.0) * double(2 * (c / 2)) / double(e));
      const double arg = double(i) * freq;
      pe[static_cast<size_t>(i * e + c)] =
          c % 2 == 0 ? std::sin(arg) : std::cos(arg);
    }
  return Tensor::from_data({1, d, h, w, e}, std::move(pe));
}

std::array<std::int64_t, 3> token_grid_extents(const ModelConfig& cfg,
                                               std::int64_t stage) {
  check_stage(cfg, stage);
  const auto& ds = cfg.backbone.downsample;
  return {cfg.frames / ds[0], (cfg.height / ds[1]) >> stage,
          (cfg.width / ds[2]) >> stage};
}

std::int64_t stage_width(const ModelConfig& cfg, std::int64_t stage) {
  check_stage(cfg, stage);
  return cfg.embed << stage;
}

std::int64_t stage_heads(const ModelConfig& cfg, std::int64_t stage) {
  check_stage(cfg, stage);
  return cfg.heads << stage;
}

std::int64_t output_width(const ModelConfig& cfg) {
  return cfg.task == TaskKind::regression_ocean ? 5 : cfg.class_count;
}

BranchOutput face_branch_forward(const Tensor& video, const Tensor& seg_map,
                                 const std::vector<SideInput>& sides,
                                 const ModelConfig& cfg, ParamStore& ps,
                                 bool training, RandomStream* rng,
                                 ForwardTrace* trace) {
  validate_config(cfg);
  check_video(video, cfg, "face_video");
  Tensor x = video;
  Tensor flags;
  if (cfg.forced != ForcedVariant::off) {
    if (!seg_map.defined())
      throw ConfigError(std::string("forced variant '") +
                        forced_variant_name(cfg.forced) +
                        "' needs a segmentation map");
    flags = chunk_flags(seg_map, cfg);
    if (cfg.forced == ForcedVariant::channel_concat ||
        cfg.forced == ForcedVariant::input_add) {
      // Tile the static map across frames into a (B, 1, D, H, W) volume.
      Tensor vol = reshape(seg_map, {seg_map.dim(0), 1, 1, cfg.height,
                                     cfg.width});
      vol = mul(vol, Tensor::ones({1, 1, cfg.frames, 1, 1}));
      x = forced_input_transform(x, vol, cfg.forced, ps, "face.forced");
    }
  }
  Tensor tokens = embed_tokens(x, cfg, ps);
  tokens = trunk_forward(tokens, flags, sides, cfg.forced, cfg.use_fusion,
                         cfg, ps, "face", training, rng, trace);
  return {grid_from_tokens(tokens)};
}

BranchOutput fullframe_branch_forward(const Tensor& video,
                                      const ModelConfig& cfg, ParamStore& ps,
                                      const std::string& branch, bool training,
                                      RandomStream* rng, ForwardTrace* trace) {
  validate_config(cfg);
  if (branch.empty())
    throw ConfigError("branch prefix must not be empty");
  check_video(video, cfg, branch.c_str());
  Tensor tokens = embed_tokens(video, cfg, ps);
  tokens = trunk_forward(tokens, Tensor(), {}, ForcedVariant::off, false, cfg,
                         ps, branch, training, rng, trace);
  return {grid_from_tokens(tokens)};
}

Tensor classification_head(const std::vector<BranchOutput>& outputs,
                           const ModelConfig& cfg, ParamStore& ps) {
  if (outputs.empty())
    throw ContractError("the prediction head needs at least one branch");
  std::vector<Tensor> pooled;
  pooled.reserve(outputs.size());
  for (const auto& o : outputs) {
    if (!o.features.defined() || o.features.rank() != 5)
      throw DimensionError("branch features must be (B, C, D, H, W), got " +
                           (o.features.defined() ? shape_str(o.features.shape())
                                                 : std::string("undefined")));
    Tensor p = adaptive_avg_pool3d(o.features);
    pooled.push_back(reshape(p, {o.features.dim(0), o.features.dim(1)}));
  }
  Tensor cat = pooled.size() == 1 ? pooled[0] : concat(pooled, 1);
  Tensor w = ps.normal("head.w", {output_width(cfg), cat.dim(1)},
                       "transformer", 0.02);
  Tensor b = ps.zeros("head.b", {output_width(cfg)}, "transformer");
  return linear(cat, w, b);
}

Tensor model_forward(const ModelInputs& in, const ModelConfig& cfg,
                     ParamStore& ps, bool training, RandomStream* rng,
                     ForwardTrace* trace) {
  validate_config(cfg);
  check_video(in.face_video, cfg, "face_video");
  const std::int64_t bsz = in.face_video.dim(0);
  // Video side branches also feed the head under concat_all, so they run
  // even when cross-attention is ablated; token sides are read only when
  // the fusion block will consume them.
  const bool need_video =
      cfg.use_fusion || cfg.late_fusion == LateFusion::concat_all;
  std::vector<SideInput> sides;
  std::vector<BranchOutput> video_branches;
  for (const auto& name : cfg.sides) {
    if (name == "fullframe_target" || name == "fullframe_interlocutor") {
      if (!need_video) continue;
      const bool inter = name == "fullframe_interlocutor";
      const Tensor& vid = inter ? in.interlocutor_video : in.fullframe_video;
      if (!vid.defined())
        throw DataError("sample lacks modality '" + name + "'");
      BranchOutput bo = fullframe_branch_forward(
          vid, cfg, ps, inter ? "ff_interloc" : "ff_target", training, rng,
          trace);
      if (cfg.use_fusion) sides.push_back({name, branch_tokens(bo)});
      video_branches.push_back(std::move(bo));
    } else if (name == "audio" || name == "transcript") {
      if (!cfg.use_fusion) continue;
      const Tensor& tok = name == "audio" ? in.audio_tokens
                                          : in.transcript_tokens;
      if (!tok.defined())
        throw DataError("sample lacks modality '" + name + "'");
      if (tok.rank() != 3 || tok.dim(0) != bsz)
        throw DimensionError(name + " tokens must be (B, T, C), got " +
                             shape_str(tok.shape()));
      sides.push_back({name, tok});
    } else if (name == "metadata") {
      if (!cfg.use_fusion) continue;
      if (!in.metadata.defined())
        throw DataError("sample lacks modality 'metadata'");
      Tensor m = in.metadata;
      if (m.rank() == 1) m = mul(Tensor::ones({bsz, 1, 1}),
                                 reshape(m, {1, 1, m.dim(0)}));
      else if (m.rank() == 2 && m.dim(0) == bsz)
        m = reshape(m, {bsz, 1, m.dim(1)});
      else
        throw DimensionError("metadata must be (M) or (B, M), got " +
                             shape_str(m.shape()));
      sides.push_back({name, m});
    } else {
      throw ConfigError("unknown side input '" + name + "'");
    }
  }
  BranchOutput face = face_branch_forward(in.face_video, in.seg_map, sides,
                                          cfg, ps, training, rng, trace);
  std::vector<BranchOutput> head_in;
  head_in.push_back(std::move(face));
  if (cfg.late_fusion == LateFusion::concat_all)
    for (auto& bo : video_branches) head_in.push_back(std::move(bo));
  return classification_head(head_in, cfg, ps);
}

}  // namespace fat
