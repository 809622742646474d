// SPDX-License-Identifier: Apache-2.0
// Multi-side-input cross-attention: sequential layers that let the main
// token sequence query full-frame, audio, and transcript features, with
// zero-started output paths so fusion switches on gradually.
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fat/params.hpp"
#include "fat/tensor.hpp"

namespace fat {

// One auxiliary modality: a token sequence in its native width plus the
// name that selects its projection parameters and its slot in the order.
struct SideInput {
  std::string name;  // fullframe_target | fullframe_interlocutor | audio |
                     // transcript | metadata
  Tensor features;   // (B, T_side, native_channels)
};

struct FusionConfig {
  std::int64_t channels = 0;  // fused width; must equal the main sequence's E
  std::int64_t heads = 1;
  bool zero_init = true;  // start cross output projections at zero
  bool performer = true;  // linear-attention kernel for the cross layers
  std::int64_t performer_features = 64;
  std::uint64_t performer_seed = 1;
};

// Per-token affine map (1x1 convolution over channels) from a side input's
// native width to the fused width. Throws ContractError on an empty
// sequence, ConfigError on an unknown side name.
Tensor channel_project(const SideInput& side, std::int64_t fusion_channels,
                       ParamStore& ps, const std::string& prefix);

// Queries from main, keys/values from side (both already at the fused
// width), attention, output projection, residual around the whole layer.
// With zero_init the output projection starts at zero, so the layer is an
// identity at initialization.
Tensor cross_attention_layer(const Tensor& main, const Tensor& side,
                             const FusionConfig& cfg, ParamStore& ps,
                             const std::string& prefix);

// Full fusion step: pre-norm self-attention on the main sequence, then one
// cross-attention layer per side in order. Paired sides (fullframe_target +
// fullframe_interlocutor, audio + transcript) that appear adjacently share
// an outer skip: the second layer's residual reaches back to the pair's
// input. Side features are projected to the fused width internally.
Tensor fusion_block(const Tensor& main, const std::vector<SideInput>& sides,
                    const FusionConfig& cfg, ParamStore& ps,
                    const std::string& prefix);

// Appends a fixed-width metadata vector to every token of a side input and
// maps the widened tokens back to the native width. The map starts as a
// pass-through, so zero metadata changes nothing. meta is (M) shared across
// the batch or (B, M) per sample; M = 0 returns the features untouched.
Tensor concat_metadata(const Tensor& features, const Tensor& meta,
                       ParamStore& ps, const std::string& prefix);

}  // namespace fat
