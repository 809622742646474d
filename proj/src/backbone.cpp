// SPDX-License-Identifier: Apache-2.0
#include "fat/backbone.hpp"

#include <cmath>

#include "fat/error.hpp"
#include "fat/ops.hpp"

namespace fat {

namespace {

// Registers (or re-fetches) one factorized conv pair. Mid width equals the
// output width; kernels are 3x3 spatial and 3 temporal.
Conv2Plus1dParams make_conv(ParamStore& ps, const std::string& name, std::int64_t cin,
                            std::int64_t cout, int sd, int sh, int sw, bool nonlin) {
  const std::string group = "backbone";
  const Shape sw_shape{cout, cin, 3, 3};
  if (ps.has(name + ".spatial.w") &&
      ps.get(name + ".spatial.w").value.shape() != sw_shape) {
    throw DimensionError("conv '" + name + "' already registered for " +
                         shape_str(ps.get(name + ".spatial.w").value.shape()) +
                         ", input wants " + shape_str(sw_shape));
  }
  Conv2Plus1dParams p;
  p.spatial_weight = ps.normal(name + ".spatial.w", sw_shape, group,
                               std::sqrt(2.0 / static_cast<double>(cin * 9)));
  p.spatial_bias = ps.zeros(name + ".spatial.b", {cout}, group);
  p.temporal_weight = ps.normal(name + ".temporal.w", {cout, cout, 3}, group,
                                std::sqrt(2.0 / static_cast<double>(cout * 3)));
  p.temporal_bias = ps.zeros(name + ".temporal.b", {cout}, group);
  p.stride_d = sd;
  p.stride_h = sh;
  p.stride_w = sw;
  p.nonlinearity = nonlin;
  return p;
}

void check_factor(std::int64_t f, std::int64_t extent, const char* axis) {
  if (f != 1 && f != 2 && f != 4) {
    throw ConfigError(std::string("downsample on ") + axis +
                      " must be 1, 2 or 4, got " + std::to_string(f));
  }
  if (extent % f != 0) {
    throw DimensionError(std::string("extent ") + std::to_string(extent) + " on " +
                         axis + " not divisible by downsample " + std::to_string(f));
  }
}

}  // namespace

Tensor backbone_stack(const Tensor& x, const BackboneConfig& cfg, ParamStore& params) {
  if (x.rank() != 5) throw DimensionError("backbone_stack wants (B, C, D, H, W)");
  if (cfg.stem_channels <= 0 || cfg.out_channels <= 0 || cfg.block_count < 0) {
    throw ConfigError("backbone channel/block counts must be positive");
  }
  const std::int64_t C = x.dim(1);
  const auto [fd, fh, fw] = cfg.downsample;
  check_factor(fd, x.dim(2), "d");
  check_factor(fh, x.dim(3), "h");
  check_factor(fw, x.dim(4), "w");

  const std::string pre = cfg.param_prefix;
  const int sd0 = fd >= 2 ? 2 : 1, sh0 = fh >= 2 ? 2 : 1, sw0 = fw >= 2 ? 2 : 1;
  Tensor h = conv_2plus1d(
      x, make_conv(params, pre + ".stem", C, cfg.stem_channels, sd0, sh0, sw0,
                   cfg.nonlinearity));
  for (std::int64_t i = 0; i < cfg.block_count; ++i) {
    Conv2Plus1dParams bp =
        make_conv(params, pre + ".block" + std::to_string(i), cfg.stem_channels,
                  cfg.stem_channels, 1, 1, 1, cfg.nonlinearity);
    h = add(h, conv_2plus1d(h, bp));
  }
  Tensor out = conv_2plus1d(
      h, make_conv(params, pre + ".proj", cfg.stem_channels, cfg.out_channels,
                   static_cast<int>(fd / sd0), static_cast<int>(fh / sh0),
                   static_cast<int>(fw / sw0), cfg.nonlinearity));
  return out;
}

PatchGrid backbone_forward(const PatchGrid& g, const BackboneConfig& cfg,
                           ParamStore& params) {
  if (g.patches.empty()) throw ContractError("backbone_forward on empty grid");
  const Shape ps = g.patches[0].shape();
  for (const auto& t : g.patches) {
    if (!t.defined() || t.shape() != ps) {
      throw ContractError("backbone_forward: grid patches must share one shape");
    }
  }
  // One batched pass keeps weight sharing trivial and the GEMMs large.
  std::vector<Tensor> rows;
  rows.reserve(g.patches.size());
  Shape lifted = ps;
  lifted.insert(lifted.begin(), 1);
  for (const auto& t : g.patches) rows.push_back(reshape(t, lifted));
  Tensor batch = rows.size() == 1 ? rows[0] : concat(rows, 0);
  Tensor feat = backbone_stack(batch, cfg, params);

  PatchGrid out;
  out.rows = g.rows;
  out.cols = g.cols;
  out.patch_size = feat.dim(3);
  out.source_shape = g.source_shape;
  const Shape fs{feat.dim(1), feat.dim(2), feat.dim(3), feat.dim(4)};
  out.patches.reserve(g.patches.size());
  for (std::int64_t i = 0; i < static_cast<std::int64_t>(g.patches.size()); ++i) {
    out.patches.push_back(reshape(slice(feat, 0, i, 1), fs));
  }
  return out;
}

Tensor assemble_feature_grid(const PatchGrid& g) { return merge_patches(g); }

}  // namespace fat
