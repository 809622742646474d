// SPDX-License-Identifier: Apache-2.0
#include "fat/forced.hpp"

#include <vector>

#include "fat/error.hpp"
#include "fat/ops.hpp"

namespace fat {

ForcedVariant parse_forced_variant(const std::string& name) {
  if (name == "off") return ForcedVariant::off;
  if (name == "a") return ForcedVariant::pos_encoding;
  if (name == "b") return ForcedVariant::linear_bias;
  if (name == "c") return ForcedVariant::attn_bias;
  if (name == "d") return ForcedVariant::channel_concat;
  if (name == "e") return ForcedVariant::input_add;
  throw ConfigError("forced_variant must be one of off, a, b, c, d, e; got '" +
                    name + "'");
}

const char* forced_variant_name(ForcedVariant v) {
  switch (v) {
    case ForcedVariant::off: return "off";
    case ForcedVariant::pos_encoding: return "a";
    case ForcedVariant::linear_bias: return "b";
    case ForcedVariant::attn_bias: return "c";
    case ForcedVariant::channel_concat: return "d";
    case ForcedVariant::input_add: return "e";
  }
  throw ContractError("unhandled forced variant");
}

namespace {

void check_seg_extents(const Tensor& x, const Tensor& seg) {
  if (x.rank() != 5) throw DimensionError("input must be (B, C, D, H, W)");
  if (seg.rank() != 5 || seg.dim(1) != 1 || seg.dim(0) != x.dim(0) ||
      seg.dim(2) != x.dim(2) || seg.dim(3) != x.dim(3) || seg.dim(4) != x.dim(4)) {
    throw DimensionError("segmentation map must be (B, 1, D, H, W) matching the input, got " +
                         shape_str(seg.shape()) + " for input " + shape_str(x.shape()));
  }
}

}  // namespace

Tensor forced_input_transform(const Tensor& x, const Tensor& seg, ForcedVariant v,
                              ParamStore& ps, const std::string& prefix) {
  if (v == ForcedVariant::channel_concat) {
    check_seg_extents(x, seg);
    const std::int64_t C = x.dim(1);
    // 1x1 conv back to C channels; starts as a pass-through of channels 0..C-1.
    std::vector<double> w(static_cast<size_t>(C * (C + 1)), 0.0);
    for (std::int64_t c = 0; c < C; ++c) w[c * (C + 1) + c] = 1.0;
    Tensor kernel = ps.constant(prefix + ".reduce.w", {C, C + 1, 1, 1}, "backbone", w);
    Tensor bias = ps.zeros(prefix + ".reduce.b", {C}, "backbone");
    Tensor cat = concat({x, seg}, 1);
    return conv_spatial2d(cat, kernel, bias, 1, 1);
  }
  if (v == ForcedVariant::input_add) {
    check_seg_extents(x, seg);
    Tensor gamma = ps.constant(prefix + ".gamma", {1}, "backbone", {1.0});
    return add(x, mul(seg, gamma));
  }
  return x;
}

Tensor forced_token_encoding(const Tensor& grid, const Tensor& flags, ForcedVariant v,
                             ParamStore& ps, const std::string& prefix) {
  if (v != ForcedVariant::pos_encoding) return grid;
  if (grid.rank() != 5) throw DimensionError("token grid must be (B, D, H, W, E)");
  if (flags.rank() != 5 || flags.dim(4) != 1 ||
      (flags.dim(0) != 1 && flags.dim(0) != grid.dim(0)) ||
      flags.dim(1) != grid.dim(1) || flags.dim(2) != grid.dim(2) ||
      flags.dim(3) != grid.dim(3)) {
    throw DimensionError("foreground flags " + shape_str(flags.shape()) +
                         " do not cover token grid " + shape_str(grid.shape()));
  }
  Tensor w1 = ps.zeros(prefix + ".w1", {grid.dim(4)}, "transformer");
  return add(grid, mul(flags, w1));
}

BlockExtras forced_block_hooks(ForcedVariant v, const Tensor& flags,
                               std::int64_t embed_dim, std::int64_t heads,
                               ParamStore& ps, const std::string& prefix) {
  BlockExtras extras;
  if (v == ForcedVariant::linear_bias) {
    Tensor lb = ps.zeros(prefix + ".learned_bias", {embed_dim}, "transformer");
    Tensor w2 = ps.ones(prefix + ".w2", {embed_dim}, "transformer");
    extras.flags = flags;
    extras.token_bias = mul(lb, w2);
  } else if (v == ForcedVariant::attn_bias) {
    extras.flags = flags;
    extras.head_scales = ps.zeros(prefix + ".w2", {heads}, "transformer");
  }
  return extras;
}

}  // namespace fat
