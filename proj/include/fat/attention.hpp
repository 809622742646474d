// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <string>

#include "fat/params.hpp"
#include "fat/random.hpp"
#include "fat/tensor.hpp"

namespace fat {

// Local 3D attention geometry. Token grids are (B, D, H, W, E).
struct WindowConfig {
  std::array<std::int64_t, 3> window = {2, 4, 4};
  std::int64_t heads = 2;
  std::int64_t embed_dim = 32;
  std::array<std::int64_t, 3> shift = {0, 0, 0};
};

// Learnable per-head bias over relative token offsets within a window,
// with the precomputed pair -> table-entry index map.
struct RelPosBias {
  Tensor table;                    // (heads, (2d-1)(2h-1)(2w-1))
  std::vector<std::int64_t> index;  // T*T entries
  std::int64_t tokens = 0;
};

RelPosBias make_rel_pos_bias(ParamStore& ps, const std::string& name,
                             const std::array<std::int64_t, 3>& window,
                             std::int64_t heads);

// Token regrouping: grid (B, D, H, W, E) -> windows (B*nW, T, E) where
// T = wd*wh*ww and windows are enumerated row-major over (d, h, w).
struct WindowPartition {
  Tensor tokens;  // (B*nW, T, E)
  std::int64_t batch = 0;
  std::int64_t nd = 0, nh = 0, nw = 0;
  std::array<std::int64_t, 3> extent = {0, 0, 0};  // grid D,H,W seen by partition
  std::array<std::int64_t, 3> window = {0, 0, 0};
  std::int64_t window_count() const { return nd * nh * nw; }
};

// Requires each grid extent divisible by the window extent (pad first).
WindowPartition window_partition(const Tensor& x,
                                 const std::array<std::int64_t, 3>& window);
Tensor window_reverse(const WindowPartition& wp);

// Zero-pads D/H/W up to multiples of the window extents. `original` receives
// the pre-pad extents (for cropping after window_reverse).
Tensor pad_token_grid(const Tensor& x, const std::array<std::int64_t, 3>& window,
                      std::array<std::int64_t, 3>& original);
Tensor crop_token_grid(const Tensor& x, const std::array<std::int64_t, 3>& original);

// Additive attention mask for shifted windows over a possibly padded grid:
// (nW, 1, T, T) of {0, -1e9}. Entry 0 iff the key/query pair may attend.
// Wrapped-around regions and padding cells are isolated. Returns an
// undefined tensor when nothing needs masking (no shift, no padding).
Tensor build_window_mask(const std::array<std::int64_t, 3>& original,
                         const std::array<std::int64_t, 3>& padded,
                         const std::array<std::int64_t, 3>& window,
                         const std::array<std::int64_t, 3>& shift);

// Optional attention inputs. pair_bias is any tensor broadcastable to the
// per-window logits grouped as (B, nW, heads, T, T); shift masks and
// foreground key biases are folded into it additively by the caller.
struct AttentionExtras {
  Tensor pair_bias;
  std::int64_t windows_per_sample = 1;
  // When set, receives the detached softmax weights (B*nW, heads, T, T).
  Tensor* attn_out = nullptr;
};

// Per-window multi-head self-attention: logits = QK^T/sqrt(d_head)
// + relative position bias + pair_bias; softmax over keys; heads merged by
// a linear projection. The residual is added by the caller.
Tensor mhsa_window(const Tensor& tokens, const WindowConfig& cfg, const RelPosBias& bias,
                   ParamStore& ps, const std::string& prefix,
                   const AttentionExtras& extras = {});

// Head bookkeeping: (B, T, E) <-> (B, heads, T, E/heads).
Tensor split_heads(const Tensor& x, std::int64_t heads);
Tensor merge_heads(const Tensor& x);

// Positive-random-feature linear attention core: q (B, H, Tq, d) against
// k/v (B, H, Tk, d), both q and k pre-scaled by d^-1/4. feature_count is m,
// feature_seed fixes the (non-learnable) projection draw.
Tensor favor_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                       std::int64_t feature_count, std::uint64_t feature_seed);

// Positive-random-feature linear attention over the same projections
// (parameters shared with mhsa_window by prefix). Pairwise terms (relative
// position bias, masks, forced key biases) cannot be represented here.
Tensor performer_attention(const Tensor& tokens, const WindowConfig& cfg, ParamStore& ps,
                           const std::string& prefix, std::int64_t feature_count,
                           std::uint64_t feature_seed,
                           const AttentionExtras& extras = {});

// One pre-norm encoder block: LN -> windowed attention (+ optional foreground
// hooks) -> residual, LN -> 2-layer feedforward -> residual, with stochastic
// depth on both branches.
struct EncoderBlockConfig {
  WindowConfig win;
  std::int64_t mlp_hidden = 0;  // 0 -> 4 * embed_dim
  double drop_path = 0.0;
  bool performer = false;
  std::int64_t performer_features = 64;
  std::uint64_t performer_seed = 1;
};

struct BlockExtras {
  // Foreground flags (1, D, H, W, 1); gates both hooks below.
  Tensor flags;
  // Added to the attention output at flagged tokens, pre-residual: (E).
  Tensor token_bias;
  // Per-head key-side logit scales: bias[h, :, k] = head_scales[h] * flag_k.
  Tensor head_scales;
  Tensor* attn_export = nullptr;
  bool training = false;
  RandomStream* rng = nullptr;
};

Tensor encoder_block(const Tensor& x, const EncoderBlockConfig& cfg, ParamStore& ps,
                     const std::string& prefix, const BlockExtras& extras = {});

// Downsampling between stages: concatenates 2x2 spatial neighbours,
// normalizes, and linearly reduces 4E -> 2E.
Tensor patch_merging(const Tensor& x, ParamStore& ps, const std::string& prefix);

}  // namespace fat
