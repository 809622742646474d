// SPDX-License-Identifier: Apache-2.0
#include "fat/attention.hpp"

#include <cmath>

#include "fat/error.hpp"
#include "fat/ops.hpp"

namespace fat {

namespace {

constexpr double kMaskOff = -1e9;

struct Projections {
  Tensor wq, bq, wk, bk, wv, bv, wo, bo;
};

Projections attention_projections(ParamStore& ps, const std::string& prefix,
                                  std::int64_t e) {
  const std::string g = "transformer";
  Projections p;
  p.wq = ps.normal(prefix + ".q.w", {e, e}, g, 0.02);
  p.bq = ps.zeros(prefix + ".q.b", {e}, g);
  p.wk = ps.normal(prefix + ".k.w", {e, e}, g, 0.02);
  p.bk = ps.zeros(prefix + ".k.b", {e}, g);
  p.wv = ps.normal(prefix + ".v.w", {e, e}, g, 0.02);
  p.bv = ps.zeros(prefix + ".v.b", {e}, g);
  p.wo = ps.normal(prefix + ".o.w", {e, e}, g, 0.02);
  p.bo = ps.zeros(prefix + ".o.b", {e}, g);
  return p;
}


void check_window_embed(const WindowConfig& cfg) {
  if (cfg.heads <= 0 || cfg.embed_dim <= 0 || cfg.embed_dim % cfg.heads != 0) {
    throw ConfigError("embed width " + std::to_string(cfg.embed_dim) +
                      " must be a positive multiple of " + std::to_string(cfg.heads) +
                      " heads");
  }
}

// Adds bias (broadcastable to (B, nW, heads, T, T)) onto per-window logits.
Tensor add_grouped_bias(const Tensor& logits, const Tensor& bias, std::int64_t n_windows) {
  const std::int64_t bw = logits.dim(0), h = logits.dim(1), t = logits.dim(2);
  if (n_windows <= 0 || bw % n_windows != 0) {
    throw DimensionError("windows_per_sample " + std::to_string(n_windows) +
                         " does not divide batch " + std::to_string(bw));
  }
  const Shape grouped_shape{bw / n_windows, n_windows, h, t, t};
  Tensor grouped = reshape(logits, grouped_shape);
  if (detail::broadcast_shapes(grouped_shape, bias.shape()) != grouped_shape) {
    throw DimensionError("pair bias " + shape_str(bias.shape()) +
                         " does not broadcast onto logits " + shape_str(grouped_shape));
  }
  return reshape(add(grouped, bias), logits.shape());
}

}  // namespace

Tensor split_heads(const Tensor& x, std::int64_t heads) {
  const std::int64_t b = x.dim(0), t = x.dim(1), e = x.dim(2);
  return transpose(reshape(x, {b, t, heads, e / heads}), {0, 2, 1, 3});
}

Tensor merge_heads(const Tensor& x) {
  const std::int64_t b = x.dim(0), h = x.dim(1), t = x.dim(2), d = x.dim(3);
  return reshape(transpose(x, {0, 2, 1, 3}), {b, t, h * d});
}

Tensor favor_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                       std::int64_t feature_count, std::uint64_t feature_seed) {
  if (feature_count < 1) throw ConfigError("feature_count must be >= 1");
  if (q.rank() != 4 || k.rank() != 4 || v.rank() != 4 || q.dim(3) != k.dim(3) ||
      k.dim(2) != v.dim(2) || q.dim(0) != k.dim(0) || q.dim(1) != k.dim(1)) {
    throw DimensionError("favor_attention wants q (B,H,Tq,d), k/v (B,H,Tk,d)");
  }
  const std::int64_t dh = q.dim(3), m = feature_count;

  // Shared random feature directions, fixed by the seed (not learnable).
  Tensor proj;
  {
    NoGradGuard no_grad;
    RandomStream rng(feature_seed);
    std::vector<double> w(static_cast<size_t>(m * dh));
    for (auto& x : w) x = rng.normal();
    proj = Tensor::from_data({dh, m}, std::move(w));
  }

  // u = x W - |x|^2 / 2, then phi = exp(u - stabilizer) / sqrt(m) with
  // detached stabilizers (per query; one global value for keys). The output
  // is mathematically constant in the stabilizers, so their gradient is 0
  // and detaching is exact.
  auto features = [&](const Tensor& x, bool per_row) {
    Tensor u = sub(matmul(x, proj), scale(reduce_sum(mul(x, x), {-1}, true), 0.5));
    Tensor c;
    {
      NoGradGuard no_grad;
      const auto& ud = u.data();
      if (per_row) {
        const std::int64_t rows = u.numel() / m;
        std::vector<double> cv(static_cast<size_t>(rows));
        for (std::int64_t r = 0; r < rows; ++r) {
          double best = ud[r * m];
          for (std::int64_t j = 1; j < m; ++j) best = std::max(best, ud[r * m + j]);
          cv[r] = best;
        }
        Shape cs = u.shape();
        cs.back() = 1;
        c = Tensor::from_data(std::move(cs), std::move(cv));
      } else {
        double best = ud[0];
        for (double uv : ud) best = std::max(best, uv);
        c = Tensor::scalar(best);
      }
    }
    return scale(exp(sub(u, c)), 1.0 / std::sqrt(static_cast<double>(m)));
  };

  Tensor phi_q = features(q, true);   // (B, H, Tq, m)
  Tensor phi_k = features(k, false);  // (B, H, Tk, m)

  Tensor kv = matmul(transpose(phi_k, {0, 1, 3, 2}), v);        // (B, H, m, d)
  Tensor num = matmul(phi_q, kv);                               // (B, H, Tq, d)
  Tensor ksum = reshape(reduce_sum(phi_k, {2}, false),
                        {phi_k.dim(0), phi_k.dim(1), m, 1});    // (B, H, m, 1)
  Tensor den = matmul(phi_q, ksum);                             // (B, H, Tq, 1)
  return div(num, den);
}

RelPosBias make_rel_pos_bias(ParamStore& ps, const std::string& name,
                             const std::array<std::int64_t, 3>& window,
                             std::int64_t heads) {
  const auto [wd, wh, ww] = window;
  if (wd <= 0 || wh <= 0 || ww <= 0) throw ConfigError("window extents must be positive");
  const std::int64_t sd = 2 * wd - 1, sh = 2 * wh - 1, sw = 2 * ww - 1;
  RelPosBias b;
  b.table = ps.normal(name + ".table", {heads, sd * sh * sw}, "transformer", 0.02);
  b.tokens = wd * wh * ww;
  b.index.resize(static_cast<size_t>(b.tokens * b.tokens));
  std::int64_t q = 0;
  for (std::int64_t qd = 0; qd < wd; ++qd) {
    for (std::int64_t qh = 0; qh < wh; ++qh) {
      for (std::int64_t qw = 0; qw < ww; ++qw, ++q) {
        std::int64_t k = 0;
        for (std::int64_t kd = 0; kd < wd; ++kd) {
          for (std::int64_t kh = 0; kh < wh; ++kh) {
            for (std::int64_t kw = 0; kw < ww; ++kw, ++k) {
              const std::int64_t dd = qd - kd + wd - 1;
              const std::int64_t dh = qh - kh + wh - 1;
              const std::int64_t dw = qw - kw + ww - 1;
              b.index[q * b.tokens + k] = (dd * sh + dh) * sw + dw;
            }
          }
        }
      }
    }
  }
  return b;
}

WindowPartition window_partition(const Tensor& x,
                                 const std::array<std::int64_t, 3>& window) {
  if (x.rank() != 5) throw DimensionError("window_partition wants (B, D, H, W, E)");
  const auto [wd, wh, ww] = window;
  const std::int64_t B = x.dim(0), D = x.dim(1), H = x.dim(2), W = x.dim(3),
                     E = x.dim(4);
  if (wd <= 0 || wh <= 0 || ww <= 0 || D % wd != 0 || H % wh != 0 || W % ww != 0) {
    throw DimensionError("grid (" + std::to_string(D) + "," + std::to_string(H) + "," +
                         std::to_string(W) + ") not tiled by window (" +
                         std::to_string(wd) + "," + std::to_string(wh) + "," +
                         std::to_string(ww) + "); pad the grid first");
  }
  WindowPartition wp;
  wp.batch = B;
  wp.nd = D / wd;
  wp.nh = H / wh;
  wp.nw = W / ww;
  wp.extent = {D, H, W};
  wp.window = window;
  Tensor t = reshape(x, {B, wp.nd, wd, wp.nh, wh, wp.nw, ww, E});
  t = transpose(t, {0, 1, 3, 5, 2, 4, 6, 7});
  wp.tokens = reshape(t, {B * wp.window_count(), wd * wh * ww, E});
  return wp;
}

Tensor window_reverse(const WindowPartition& wp) {
  const auto [wd, wh, ww] = wp.window;
  const auto [D, H, W] = wp.extent;
  const std::int64_t E = wp.tokens.dim(2);
  Tensor t = reshape(wp.tokens, {wp.batch, wp.nd, wp.nh, wp.nw, wd, wh, ww, E});
  t = transpose(t, {0, 1, 4, 2, 5, 3, 6, 7});
  return reshape(t, {wp.batch, D, H, W, E});
}

Tensor pad_token_grid(const Tensor& x, const std::array<std::int64_t, 3>& window,
                      std::array<std::int64_t, 3>& original) {
  if (x.rank() != 5) throw DimensionError("pad_token_grid wants (B, D, H, W, E)");
  original = {x.dim(1), x.dim(2), x.dim(3)};
  Tensor out = x;
  for (int axis = 1; axis <= 3; ++axis) {
    const std::int64_t w = window[axis - 1];
    if (w <= 0) throw ConfigError("window extents must be positive");
    const std::int64_t extent = out.dim(axis);
    const std::int64_t pad = (w - extent % w) % w;
    if (pad == 0) continue;
    Shape ps = out.shape();
    ps[axis] = pad;
    out = concat({out, Tensor::zeros(ps)}, axis);
  }
  return out;
}

Tensor crop_token_grid(const Tensor& x, const std::array<std::int64_t, 3>& original) {
  Tensor out = x;
  for (int axis = 1; axis <= 3; ++axis) {
    if (out.dim(axis) != original[axis - 1]) {
      out = slice(out, axis, 0, original[axis - 1]);
    }
  }
  return out;
}

Tensor build_window_mask(const std::array<std::int64_t, 3>& original,
                         const std::array<std::int64_t, 3>& padded,
                         const std::array<std::int64_t, 3>& window,
                         const std::array<std::int64_t, 3>& shift) {
  const auto [D, H, W] = original;
  const auto [Dp, Hp, Wp] = padded;
  const auto [wd, wh, ww] = window;
  const auto [sd, sh, sw] = shift;
  const bool any_shift = sd != 0 || sh != 0 || sw != 0;
  const bool any_pad = Dp != D || Hp != H || Wp != W;
  if (!any_shift && !any_pad) return Tensor();

  // Region label along one axis of the rolled canvas: the Swin three-slice
  // pattern [0, n-w), [n-w, n-s), [n-s, n).
  auto region = [](std::int64_t p, std::int64_t n, std::int64_t w, std::int64_t s) {
    if (s == 0) return std::int64_t{0};
    if (p < n - w) return std::int64_t{0};
    if (p < n - s) return std::int64_t{1};
    return std::int64_t{2};
  };

  // id per rolled cell; padding cells (tracked through the roll) get unique
  // negative ids so nothing attends to or from them.
  std::vector<std::int64_t> ids(static_cast<size_t>(Dp * Hp * Wp));
  for (std::int64_t d = 0; d < Dp; ++d) {
    for (std::int64_t h = 0; h < Hp; ++h) {
      for (std::int64_t w = 0; w < Wp; ++w) {
        const std::int64_t lin = (d * Hp + h) * Wp + w;
        const std::int64_t src_d = (d + sd) % Dp, src_h = (h + sh) % Hp,
                           src_w = (w + sw) % Wp;
        if (src_d >= D || src_h >= H || src_w >= W) {
          ids[lin] = -(1 + lin);
        } else {
          ids[lin] = region(d, Dp, wd, sd) * 9 + region(h, Hp, wh, sh) * 3 +
                     region(w, Wp, ww, sw);
        }
      }
    }
  }

  const std::int64_t nd = Dp / wd, nh = Hp / wh, nw = Wp / ww;
  const std::int64_t n_win = nd * nh * nw, t = wd * wh * ww;
  std::vector<double> mask(static_cast<size_t>(n_win * t * t), 0.0);
  std::vector<std::int64_t> wid(static_cast<size_t>(t));
  for (std::int64_t a = 0; a < nd; ++a) {
    for (std::int64_t b = 0; b < nh; ++b) {
      for (std::int64_t c = 0; c < nw; ++c) {
        const std::int64_t win = (a * nh + b) * nw + c;
        std::int64_t ti = 0;
        for (std::int64_t td = 0; td < wd; ++td) {
          for (std::int64_t th = 0; th < wh; ++th) {
            for (std::int64_t tw = 0; tw < ww; ++tw, ++ti) {
              wid[ti] = ids[((a * wd + td) * Hp + b * wh + th) * Wp + c * ww + tw];
            }
          }
        }
        double* mw = mask.data() + win * t * t;
        for (std::int64_t qi = 0; qi < t; ++qi) {
          for (std::int64_t ki = 0; ki < t; ++ki) {
            if (wid[qi] != wid[ki]) mw[qi * t + ki] = kMaskOff;
          }
        }
      }
    }
  }
  return Tensor::from_data({n_win, 1, t, t}, std::move(mask));
}

Tensor mhsa_window(const Tensor& tokens, const WindowConfig& cfg, const RelPosBias& bias,
                   ParamStore& ps, const std::string& prefix,
                   const AttentionExtras& extras) {
  check_window_embed(cfg);
  if (tokens.rank() != 3 || tokens.dim(2) != cfg.embed_dim) {
    throw DimensionError("attention tokens must be (B, T, " +
                         std::to_string(cfg.embed_dim) + ")");
  }
  const std::int64_t T = tokens.dim(1);
  if (T != bias.tokens) {
    throw DimensionError("window holds " + std::to_string(T) +
                         " tokens but the relative bias was built for " +
                         std::to_string(bias.tokens));
  }
  const std::int64_t heads = cfg.heads, dh = cfg.embed_dim / heads;
  Projections p = attention_projections(ps, prefix, cfg.embed_dim);

  Tensor q = split_heads(linear(tokens, p.wq, p.bq), heads);
  Tensor k = split_heads(linear(tokens, p.wk, p.bk), heads);
  Tensor v = split_heads(linear(tokens, p.wv, p.bv), heads);

  Tensor logits = scale(matmul(q, transpose(k, {0, 1, 3, 2})),
                        1.0 / std::sqrt(static_cast<double>(dh)));
  logits = add(logits, rel_pos_lookup(bias.table, bias.index, T));
  if (extras.pair_bias.defined()) {
    logits = add_grouped_bias(logits, extras.pair_bias, extras.windows_per_sample);
  }
  Tensor attn = softmax(logits, -1);
  if (extras.attn_out) *extras.attn_out = attn.detach();
  return linear(merge_heads(matmul(attn, v)), p.wo, p.bo);
}

Tensor performer_attention(const Tensor& tokens, const WindowConfig& cfg, ParamStore& ps,
                           const std::string& prefix, std::int64_t feature_count,
                           std::uint64_t feature_seed, const AttentionExtras& extras) {
  check_window_embed(cfg);
  if (extras.pair_bias.defined()) {
    throw UnsupportedError(
        "pairwise logit terms (masks, relative or forced biases) cannot be "
        "expressed in linear attention; use the softmax path");
  }
  if (tokens.rank() != 3 || tokens.dim(2) != cfg.embed_dim) {
    throw DimensionError("attention tokens must be (B, T, " +
                         std::to_string(cfg.embed_dim) + ")");
  }
  const std::int64_t heads = cfg.heads, dh = cfg.embed_dim / heads;
  Projections p = attention_projections(ps, prefix, cfg.embed_dim);

  const double qk_scale = std::pow(static_cast<double>(dh), -0.25);
  Tensor q = scale(split_heads(linear(tokens, p.wq, p.bq), heads), qk_scale);
  Tensor k = scale(split_heads(linear(tokens, p.wk, p.bk), heads), qk_scale);
  Tensor v = split_heads(linear(tokens, p.wv, p.bv), heads);
  Tensor out = favor_attention(q, k, v, feature_count, feature_seed);
  return linear(merge_heads(out), p.wo, p.bo);
}

Tensor encoder_block(const Tensor& x, const EncoderBlockConfig& cfg, ParamStore& ps,
                     const std::string& prefix, const BlockExtras& extras) {
  if (x.rank() != 5) throw DimensionError("encoder_block wants (B, D, H, W, E)");
  const std::int64_t E = x.dim(4);
  if (E != cfg.win.embed_dim) {
    throw DimensionError("grid carries E=" + std::to_string(E) + ", block configured for " +
                         std::to_string(cfg.win.embed_dim));
  }
  check_window_embed(cfg.win);
  const std::string g = "transformer";
  Tensor g1 = ps.ones(prefix + ".ln1.g", {E}, g);
  Tensor b1 = ps.zeros(prefix + ".ln1.b", {E}, g);
  Tensor g2 = ps.ones(prefix + ".ln2.g", {E}, g);
  Tensor b2 = ps.zeros(prefix + ".ln2.b", {E}, g);

  // Shift only where the (padded) grid is strictly wider than the window;
  // on a tight axis a cyclic shift merely rotates tokens inside the single
  // window and forces a mask for no benefit.
  std::array<std::int64_t, 3> original;
  Tensor normed = layer_norm(x, g1, b1);
  Tensor padded = pad_token_grid(normed, cfg.win.window, original);
  const std::array<std::int64_t, 3> pd{padded.dim(1), padded.dim(2), padded.dim(3)};
  std::array<std::int64_t, 3> shift{};
  for (int i = 0; i < 3; ++i) {
    shift[i] = pd[i] > cfg.win.window[i] ? cfg.win.shift[i] % cfg.win.window[i] : 0;
  }
  const bool shifted = shift[0] != 0 || shift[1] != 0 || shift[2] != 0;

  Tensor rolled = shifted ? roll3d(padded, -shift[0], -shift[1], -shift[2]) : padded;
  WindowPartition wp = window_partition(rolled, cfg.win.window);
  const std::int64_t n_win = wp.window_count(), T = wp.tokens.dim(1);

  Tensor mask = build_window_mask(original, pd, cfg.win.window, shift);
  Tensor pair_bias;
  if (mask.defined()) pair_bias = reshape(mask, {1, n_win, 1, T, T});
  if (extras.flags.defined() &&
      (extras.flags.rank() != 5 ||
       (extras.flags.dim(0) != 1 && extras.flags.dim(0) != x.dim(0)) ||
       extras.flags.dim(4) != 1)) {
    throw DimensionError("foreground flags must be (1 or B, D, H, W, 1)");
  }
  if (extras.flags.defined() && extras.head_scales.defined()) {
    std::array<std::int64_t, 3> fo;
    Tensor fl = pad_token_grid(extras.flags, cfg.win.window, fo);
    if (fo != original) {
      throw DimensionError("foreground flag grid does not match the token grid");
    }
    if (shifted) fl = roll3d(fl, -shift[0], -shift[1], -shift[2]);
    const std::int64_t fb = extras.flags.dim(0);
    Tensor flw = window_partition(fl, cfg.win.window).tokens;  // (fb*nW, T, 1)
    Tensor key_flags = reshape(transpose(flw, {0, 2, 1}), {fb, n_win, 1, 1, T});
    Tensor scales = reshape(extras.head_scales, {1, 1, cfg.win.heads, 1, 1});
    Tensor forced = mul(key_flags, scales);
    pair_bias = pair_bias.defined() ? add(pair_bias, forced) : forced;
  }

  AttentionExtras att;
  att.pair_bias = pair_bias;
  att.windows_per_sample = n_win;
  att.attn_out = extras.attn_export;
  Tensor attn_tokens =
      cfg.performer
          ? performer_attention(wp.tokens, cfg.win, ps, prefix + ".attn",
                                cfg.performer_features, cfg.performer_seed, att)
          : mhsa_window(wp.tokens, cfg.win,
                        make_rel_pos_bias(ps, prefix + ".attn.relpos", cfg.win.window,
                                          cfg.win.heads),
                        ps, prefix + ".attn", att);

  wp.tokens = attn_tokens;
  Tensor grid = window_reverse(wp);
  if (shifted) grid = roll3d(grid, shift[0], shift[1], shift[2]);
  grid = crop_token_grid(grid, original);
  if (extras.flags.defined() && extras.token_bias.defined()) {
    grid = add(grid, mul(extras.flags, extras.token_bias));
  }
  Tensor h = add(x, drop_path(grid, cfg.drop_path, extras.training, extras.rng));

  const std::int64_t hidden = cfg.mlp_hidden > 0 ? cfg.mlp_hidden : 4 * E;
  Tensor f1w = ps.normal(prefix + ".mlp.fc1.w", {hidden, E}, g, 0.02);
  Tensor f1b = ps.zeros(prefix + ".mlp.fc1.b", {hidden}, g);
  Tensor f2w = ps.normal(prefix + ".mlp.fc2.w", {E, hidden}, g, 0.02);
  Tensor f2b = ps.zeros(prefix + ".mlp.fc2.b", {E}, g);
  Tensor mlp = linear(gelu(linear(layer_norm(h, g2, b2), f1w, f1b)), f2w, f2b);
  return add(h, drop_path(mlp, cfg.drop_path, extras.training, extras.rng));
}

Tensor patch_merging(const Tensor& x, ParamStore& ps, const std::string& prefix) {
  if (x.rank() != 5) throw DimensionError("patch_merging wants (B, D, H, W, E)");
  const std::int64_t B = x.dim(0), D = x.dim(1), H = x.dim(2), W = x.dim(3),
                     E = x.dim(4);
  if (H % 2 != 0 || W % 2 != 0) {
    throw DimensionError("patch_merging needs even spatial extents, got " +
                         std::to_string(H) + "x" + std::to_string(W));
  }
  Tensor t = reshape(x, {B, D, H / 2, 2, W / 2, 2, E});
  t = transpose(t, {0, 1, 2, 4, 3, 5, 6});
  t = reshape(t, {B, D, H / 2, W / 2, 4 * E});
  const std::string g = "transformer";
  Tensor gamma = ps.ones(prefix + ".norm.g", {4 * E}, g);
  Tensor beta = ps.zeros(prefix + ".norm.b", {4 * E}, g);
  Tensor w = ps.normal(prefix + ".reduce.w", {2 * E, 4 * E}, g, 0.02);
  return linear(layer_norm(t, gamma, beta), w, Tensor());
}

}  // namespace fat
