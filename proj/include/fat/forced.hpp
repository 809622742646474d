// SPDX-License-Identifier: Apache-2.0
// Segmentation-map injection: five strategies for steering the network
// toward foreground regions, selectable per experiment.
#pragma once

#include <string>

#include "fat/attention.hpp"
#include "fat/params.hpp"
#include "fat/tensor.hpp"

namespace fat {

// Exactly one strategy is active per run.
//   off            no injection
//   pos_encoding   (a) learned per-channel shift added to foreground tokens
//   linear_bias    (b) learned bias after the attention output projection
//   attn_bias      (c) per-head logit bonus on foreground keys
//   channel_concat (d) map appended as an input channel, reduced back by 1x1 conv
//   input_add      (e) map added to every input channel, scaled by a learned gamma
enum class ForcedVariant {
  off,
  pos_encoding,
  linear_bias,
  attn_bias,
  channel_concat,
  input_add,
};

// Config-key spelling: off, a, b, c, d, e. Throws ConfigError otherwise.
ForcedVariant parse_forced_variant(const std::string& name);
const char* forced_variant_name(ForcedVariant v);

// Raw-input injections (channel_concat, input_add); other variants return x
// untouched and register nothing. x is (B, C, D, H, W); seg is (B, 1, D, H, W)
// of 0/1 values with matching extents.
//   channel_concat: parameters start as a pass-through of the original
//   channels, so the transform is an identity at initialization.
//   input_add: gamma starts at 1, so the map is added at full strength.
Tensor forced_input_transform(const Tensor& x, const Tensor& seg, ForcedVariant v,
                              ParamStore& ps, const std::string& prefix);

// Token-grid injection (pos_encoding); other variants return the grid
// untouched. grid is (B, D, H, W, E); flags is (1 or B, D, H, W, 1) chunk
// foreground flags. The learned shift starts at zero.
Tensor forced_token_encoding(const Tensor& grid, const Tensor& flags, ForcedVariant v,
                             ParamStore& ps, const std::string& prefix);

// Attention hooks (linear_bias, attn_bias); other variants yield empty extras.
// The learnable pieces start at zero, so a freshly initialized model matches
// the unforced baseline bit for bit.
BlockExtras forced_block_hooks(ForcedVariant v, const Tensor& flags,
                               std::int64_t embed_dim, std::int64_t heads,
                               ParamStore& ps, const std::string& prefix);

}  // namespace fat
