// SPDX-License-Identifier: Apache-2.0
#include "fat/fusion.hpp"

#include <array>
#include <cmath>
#include <set>

#include "fat/attention.hpp"
#include "fat/error.hpp"
#include "fat/ops.hpp"

namespace fat {

namespace {

const std::array<const char*, 5> kSideNames{
    "fullframe_target", "fullframe_interlocutor", "audio", "transcript",
    "metadata"};

void check_side_name(const std::string& name) {
  for (const char* n : kSideNames) {
    if (name == n) return;
  }
  throw ConfigError("unknown side input '" + name + "'");
}

struct CrossParams {
  Tensor wq, bq, wk, bk, wv, bv, wo, bo;
};

CrossParams cross_params(ParamStore& ps, const std::string& prefix,
                         std::int64_t e, bool zero_init) {
  const std::string g = "transformer";
  CrossParams p;
  p.wq = ps.normal(prefix + ".q.w", {e, e}, g, 0.02);
  p.bq = ps.zeros(prefix + ".q.b", {e}, g);
  p.wk = ps.normal(prefix + ".k.w", {e, e}, g, 0.02);
  p.bk = ps.zeros(prefix + ".k.b", {e}, g);
  p.wv = ps.normal(prefix + ".v.w", {e, e}, g, 0.02);
  p.bv = ps.zeros(prefix + ".v.b", {e}, g);
  p.wo = zero_init ? ps.zeros(prefix + ".o.w", {e, e}, g)
                   : ps.normal(prefix + ".o.w", {e, e}, g, 0.02);
  p.bo = ps.zeros(prefix + ".o.b", {e}, g);
  return p;
}

void check_tokens(const Tensor& t, std::int64_t e, const char* what) {
  if (t.rank() != 3 || t.dim(2) != e) {
    throw DimensionError(std::string(what) + " must be (B, T, " +
                         std::to_string(e) + "), got " + shape_str(t.shape()));
  }
}

// Attention body without the outer residual: Wo(Attn(Q(main), K(side), V(side))).
Tensor cross_core(const Tensor& main, const Tensor& side, const FusionConfig& cfg,
                  ParamStore& ps, const std::string& prefix) {
  check_tokens(main, cfg.channels, "main tokens");
  check_tokens(side, cfg.channels, "side tokens");
  if (main.dim(0) != side.dim(0)) {
    throw DimensionError("main and side batches differ");
  }
  if (cfg.channels % cfg.heads != 0) {
    throw ConfigError("fused width must divide evenly into heads");
  }
  CrossParams p = cross_params(ps, prefix, cfg.channels, cfg.zero_init);
  const std::int64_t dh = cfg.channels / cfg.heads;

  Tensor ctx;
  if (cfg.performer) {
    const double s = std::pow(static_cast<double>(dh), -0.25);
    Tensor q = scale(split_heads(linear(main, p.wq, p.bq), cfg.heads), s);
    Tensor k = scale(split_heads(linear(side, p.wk, p.bk), cfg.heads), s);
    Tensor v = split_heads(linear(side, p.wv, p.bv), cfg.heads);
    ctx = favor_attention(q, k, v, cfg.performer_features, cfg.performer_seed);
  } else {
    Tensor q = split_heads(linear(main, p.wq, p.bq), cfg.heads);
    Tensor k = split_heads(linear(side, p.wk, p.bk), cfg.heads);
    Tensor v = split_heads(linear(side, p.wv, p.bv), cfg.heads);
    Tensor logits = scale(matmul(q, transpose(k, {0, 1, 3, 2})),
                          1.0 / std::sqrt(static_cast<double>(dh)));
    ctx = matmul(softmax(logits, -1), v);
  }
  return linear(merge_heads(ctx), p.wo, p.bo);
}

}  // namespace

Tensor channel_project(const SideInput& side, std::int64_t fusion_channels,
                       ParamStore& ps, const std::string& prefix) {
  check_side_name(side.name);
  if (!side.features.defined() || side.features.rank() != 3 ||
      side.features.dim(1) < 1) {
    throw ContractError("side input '" + side.name + "' has no token sequence");
  }
  const std::int64_t native = side.features.dim(2);
  const std::string name = prefix + "." + side.name + ".proj";
  Tensor w = ps.normal(name + ".w", {fusion_channels, native}, "transformer", 0.02);
  Tensor b = ps.zeros(name + ".b", {fusion_channels}, "transformer");
  return linear(side.features, w, b);
}

Tensor cross_attention_layer(const Tensor& main, const Tensor& side,
                             const FusionConfig& cfg, ParamStore& ps,
                             const std::string& prefix) {
  return add(main, cross_core(main, side, cfg, ps, prefix));
}

Tensor fusion_block(const Tensor& main, const std::vector<SideInput>& sides,
                    const FusionConfig& cfg, ParamStore& ps,
                    const std::string& prefix) {
  check_tokens(main, cfg.channels, "main tokens");
  std::set<std::string> seen;
  for (const SideInput& s : sides) {
    check_side_name(s.name);
    if (!seen.insert(s.name).second) {
      throw ConfigError("side input '" + s.name + "' listed twice");
    }
  }
  for (size_t i = 0; i < sides.size(); ++i) {
    if (sides[i].name == "fullframe_interlocutor" &&
        (i == 0 || sides[i - 1].name != "fullframe_target")) {
      throw ConfigError(
          "fullframe_interlocutor must immediately follow fullframe_target");
    }
  }

  // Self-attention over the whole main sequence (pre-norm, residual).
  const std::string g = "transformer";
  Tensor gma = ps.ones(prefix + ".self.ln.g", {cfg.channels}, g);
  Tensor bta = ps.zeros(prefix + ".self.ln.b", {cfg.channels}, g);
  // The whole block is an inserted path: with zero_init its self-attention
  // output projection also starts at zero, so the block is an identity.
  FusionConfig self_cfg = cfg;
  Tensor n = layer_norm(main, gma, bta);
  Tensor h = add(main, cross_core(n, n, self_cfg, ps, prefix + ".self"));

  auto is_pair_start = [&](size_t i) {
    if (i + 1 >= sides.size()) return false;
    const std::string &a = sides[i].name, &b = sides[i + 1].name;
    return (a == "fullframe_target" && b == "fullframe_interlocutor") ||
           (a == "audio" && b == "transcript");
  };

  for (size_t i = 0; i < sides.size();) {
    if (is_pair_start(i)) {
      // Outer skip spans the pair: the second residual reaches back to the
      // pair input instead of the first layer's output.
      Tensor pair_in = h;
      Tensor p1 = channel_project(sides[i], cfg.channels, ps, prefix);
      Tensor y = cross_attention_layer(pair_in, p1, cfg, ps,
                                       prefix + "." + sides[i].name);
      Tensor p2 = channel_project(sides[i + 1], cfg.channels, ps, prefix);
      h = add(pair_in, cross_core(y, p2, cfg, ps, prefix + "." + sides[i + 1].name));
      i += 2;
    } else {
      Tensor p = channel_project(sides[i], cfg.channels, ps, prefix);
      h = cross_attention_layer(h, p, cfg, ps, prefix + "." + sides[i].name);
      i += 1;
    }
  }
  return h;
}

Tensor concat_metadata(const Tensor& features, const Tensor& meta,
                       ParamStore& ps, const std::string& prefix) {
  if (features.rank() != 3) {
    throw ContractError("side features must be (B, T, C)");
  }
  if (!meta.defined() || meta.numel() == 0) return features;
  const std::int64_t B = features.dim(0), T = features.dim(1), C = features.dim(2);
  Tensor m = meta;
  if (m.rank() == 1) {
    m = reshape(m, {1, 1, m.dim(0)});
  } else if (m.rank() == 2) {
    if (m.dim(0) != B) throw DimensionError("metadata batch differs from features");
    m = reshape(m, {B, 1, m.dim(1)});
  } else {
    throw DimensionError("metadata must be (M) or (B, M)");
  }
  const std::int64_t M = m.dim(2);
  Tensor tiled = mul(Tensor::ones({B, T, 1}), m);  // broadcast across tokens
  Tensor cat = concat({features, tiled}, 2);

  // Pass-through start: identity on the original channels, zero on metadata.
  std::vector<double> w(static_cast<size_t>(C * (C + M)), 0.0);
  for (std::int64_t c = 0; c < C; ++c) w[c * (C + M) + c] = 1.0;
  Tensor kernel = ps.constant(prefix + ".meta.w", {C, C + M}, "transformer", w);
  Tensor bias = ps.zeros(prefix + ".meta.b", {C}, "transformer");
  return linear(cat, kernel, bias);
}

}  // namespace fat
