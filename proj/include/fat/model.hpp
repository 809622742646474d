// SPDX-License-Identifier: Apache-2.0
// Whole-model assembly: the main face branch (foreground-biased windowed
// transformer with mid-stage fusion), optional full-frame branches, side
// modalities, and the pooled prediction head.
#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "fat/attention.hpp"
#include "fat/backbone.hpp"
#include "fat/forced.hpp"
#include "fat/fusion.hpp"
#include "fat/params.hpp"
#include "fat/random.hpp"
#include "fat/tensor.hpp"

namespace fat {

enum class TaskKind {
  regression_ocean,  // five traits in [0, 1]
  classification,    // class_count logits
};

enum class LateFusion {
  face_only,   // head reads the face branch alone
  concat_all,  // head reads all video branches, channel-concatenated
};

TaskKind parse_task(const std::string& name);
const char* task_name(TaskKind t);
LateFusion parse_late_fusion(const std::string& name);
const char* late_fusion_name(LateFusion f);

struct ModelConfig {
  TaskKind task = TaskKind::regression_ocean;
  std::int64_t class_count = 15;
  ForcedVariant forced = ForcedVariant::linear_bias;
  LateFusion late_fusion = LateFusion::concat_all;
  bool use_backbone = true;  // false: single strided tubelet embedding
  bool use_fusion = true;    // false: cross-attention block skipped
  // Auxiliary inputs feeding the face branch, in fusion order. Valid names:
  // fullframe_target, fullframe_interlocutor, audio, transcript, metadata.
  std::vector<std::string> sides = {"fullframe_target", "audio", "transcript"};

  // Input extents (every video branch shares them).
  std::int64_t channels = 3;
  std::int64_t frames = 8;
  std::int64_t height = 32;
  std::int64_t width = 32;
  std::int64_t patch = 8;
  BackboneConfig backbone;

  // Transformer plan: stage s runs blocks_per_stage blocks at width
  // (embed << s) with (heads << s) heads; spatial extents halve between
  // stages via patch merging. Blocks alternate unshifted / half-shifted.
  std::int64_t stages = 2;
  std::int64_t blocks_per_stage = 2;
  std::int64_t embed = 32;
  std::int64_t heads = 2;
  std::array<std::int64_t, 3> window = {2, 4, 4};
  double drop_path = 0.0;  // peak rate; ramps linearly over block depth
  std::int64_t mlp_hidden = 0;  // 0 -> 4x stage width

  // Linear-attention trunk blocks. No explicit attention matrices exist on
  // this path, so traces stay empty and only unshifted, exactly tiling
  // window plans without logit biases are accepted.
  bool performer_blocks = false;
  std::int64_t performer_features = 32;

  // Stage whose entry hosts the fusion block; -1 means the last stage.
  std::int64_t fusion_stage = -1;
  FusionConfig fusion;  // channels are overridden by the stage width

  // Chunk tiling for the foreground matrix; 0 -> (1, height/patch,
  // width/patch), one chunk per spatial patch.
  std::int64_t chunk_d = 0;
  std::int64_t chunk_h = 0;
  std::int64_t chunk_w = 0;
};

// Everything one forward pass may consume; undefined tensors mark absent
// modalities.
struct ModelInputs {
  Tensor face_video;          // (B, C, D, H, W)
  Tensor seg_map;             // (B, H, W) of exact 0/1
  Tensor fullframe_video;     // (B, C, D, H, W)
  Tensor interlocutor_video;  // (B, C, D, H, W)
  Tensor audio_tokens;        // (B, Ta, Ca)
  Tensor transcript_tokens;   // (B, Tt, Ct)
  Tensor metadata;            // (M) or (B, M)
};

struct BranchOutput {
  Tensor features;  // (B, C, D, H, W)
};

// Attention weights captured during a forward pass, with enough geometry to
// map window-local weights back onto the token grid.
struct AttnRecord {
  Tensor attn;  // (B*nW, heads, T, T), detached
  std::array<std::int64_t, 3> grid;    // token extents before padding
  std::array<std::int64_t, 3> padded;  // extents the windows tile
  std::array<std::int64_t, 3> window;
  std::array<std::int64_t, 3> shift;   // effective (tight axes zeroed)
};

struct ForwardTrace {
  std::map<std::string, AttnRecord> attention;  // keyed by block name
};

// Fixed sine/cosine table over the flattened token index: (1, D, H, W, E).
// Even channels carry sines, odd channels cosines of the same frequency.
Tensor sinusoidal_encoding(std::int64_t d, std::int64_t h, std::int64_t w,
                           std::int64_t e);

// Derived geometry. Stage index must lie in [0, stages).
std::array<std::int64_t, 3> token_grid_extents(const ModelConfig& cfg,
                                               std::int64_t stage);
std::int64_t stage_width(const ModelConfig& cfg, std::int64_t stage);
std::int64_t stage_heads(const ModelConfig& cfg, std::int64_t stage);
std::int64_t output_width(const ModelConfig& cfg);

// Main branch: patches -> shared backbone (or tubelet embedding) -> token
// grid + sinusoidal encoding -> encoder stages with foreground hooks ->
// fusion block at the configured stage -> feature grid.
BranchOutput face_branch_forward(const Tensor& video, const Tensor& seg_map,
                                 const std::vector<SideInput>& sides,
                                 const ModelConfig& cfg, ParamStore& ps,
                                 bool training = false,
                                 RandomStream* rng = nullptr,
                                 ForwardTrace* trace = nullptr);

// Context branch: the same trunk without foreground biasing or fusion.
// Backbone parameters are shared across branches; transformer parameters
// live under the branch's own prefix.
BranchOutput fullframe_branch_forward(const Tensor& video,
                                      const ModelConfig& cfg, ParamStore& ps,
                                      const std::string& branch,
                                      bool training = false,
                                      RandomStream* rng = nullptr,
                                      ForwardTrace* trace = nullptr);

// Pool each branch to (B, C), concatenate along channels, and apply one
// affine map to the task's output width.
Tensor classification_head(const std::vector<BranchOutput>& outputs,
                           const ModelConfig& cfg, ParamStore& ps);

// Full forward: runs the configured branches, wires side inputs into the
// face branch, and applies the head. Throws DataError naming any modality
// the config needs but the inputs lack.
Tensor model_forward(const ModelInputs& in, const ModelConfig& cfg,
                     ParamStore& ps, bool training = false,
                     RandomStream* rng = nullptr,
                     ForwardTrace* trace = nullptr);

}  // namespace fat
