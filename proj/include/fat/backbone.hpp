// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <string>

#include "fat/params.hpp"
#include "fat/patching.hpp"
#include "fat/tensor.hpp"

namespace fat {

// Shared-weight (2+1)D convolutional front-end applied to every patch.
// Layout: stem conv (carries up to stride 2 per axis) -> block_count
// residual blocks -> projection conv (carries any remaining stride).
struct BackboneConfig {
  std::int64_t stem_channels = 16;
  std::int64_t block_count = 2;
  // Per-axis (d, h, w) total reduction; each entry must be 1, 2 or 4 and
  // divide the matching patch extent exactly.
  std::array<std::int64_t, 3> downsample = {2, 4, 4};
  std::int64_t out_channels = 32;
  // Smooth nonlinearity inside every conv pair; off gives a purely linear
  // stack (with Dirac weights the identity — see tests).
  bool nonlinearity = true;
  // Parameter name prefix; reuse one prefix across branches to share weights.
  std::string param_prefix = "backbone";
};

// Runs the stack on a batch (B, C, D, H, W) -> (B, out, D', H', W').
// Parameters are created in `params` on first use and reused afterwards.
Tensor backbone_stack(const Tensor& x, const BackboneConfig& cfg, ParamStore& params);

// Applies the identical parameter set to every patch of the grid (patches
// are batched through one stack invocation) and returns the feature grid in
// the same row-major arrangement.
PatchGrid backbone_forward(const PatchGrid& g, const BackboneConfig& cfg,
                           ParamStore& params);

// Tiles a complete, homogeneous feature grid back into C' x D' x H' x W'.
Tensor assemble_feature_grid(const PatchGrid& g);

}  // namespace fat
