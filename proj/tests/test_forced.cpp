// SPDX-License-Identifier: Apache-2.0
// Segmentation-map injection strategies: per-variant identities at
// initialization, background no-ops, direct-formula oracles, and gradient
// flow into every learnable piece.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "fat/error.hpp"
#include "fat/forced.hpp"
#include "fat/ops.hpp"
#include "fat/patching.hpp"
#include "fat/random.hpp"

using namespace fat;

namespace {

Tensor rand_t(Shape shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  RandomStream rng(seed);
  std::vector<double> v(static_cast<size_t>(shape_numel(shape)));
  for (auto& x : v) x = rng.uniform(lo, hi);
  return Tensor::from_data(std::move(shape), std::move(v));
}

Tensor binary_t(Shape shape, std::uint64_t seed, double p = 0.4) {
  RandomStream rng(seed);
  std::vector<double> v(static_cast<size_t>(shape_numel(shape)));
  for (auto& x : v) x = rng.uniform(0.0, 1.0) < p ? 1.0 : 0.0;
  return Tensor::from_data(std::move(shape), std::move(v));
}

// Central difference of f() w.r.t. one coordinate of a store parameter.
double central_diff(const std::function<double()>& f, Tensor param, std::int64_t i,
                    double eps = 1e-5) {
  NoGradGuard ng;
  const double saved = param.data()[i];
  param.data()[i] = saved + eps;
  const double up = f();
  param.data()[i] = saved - eps;
  const double dn = f();
  param.data()[i] = saved;
  return (up - dn) / (2 * eps);
}

}  // namespace

TEST_CASE("variant names round trip and bad keys are rejected") {
  for (const char* n : {"off", "a", "b", "c", "d", "e"}) {
    CHECK(forced_variant_name(parse_forced_variant(n)) == std::string(n));
  }
  CHECK_THROWS_AS(parse_forced_variant("f"), ConfigError);
  CHECK_THROWS_AS(parse_forced_variant(""), ConfigError);
  CHECK_THROWS_AS(parse_forced_variant("B"), ConfigError);
}

TEST_CASE("token encoding: background map and zero weights are no-ops") {
  ParamStore ps(1);
  Tensor grid = rand_t({2, 2, 4, 4, 8}, 2);

  Tensor zero_flags = Tensor::zeros({1, 2, 4, 4, 1});
  Tensor out = forced_token_encoding(grid, zero_flags, ForcedVariant::pos_encoding,
                                     ps, "fa");
  CHECK(out.data() == grid.data());

  // Freshly created shift is zero, so even full-foreground flags change nothing.
  Tensor ones_flags = Tensor::full({1, 2, 4, 4, 1}, 1.0);
  out = forced_token_encoding(grid, ones_flags, ForcedVariant::pos_encoding, ps, "fa");
  CHECK(out.data() == grid.data());
}

TEST_CASE("token encoding shifts every foreground token by the weight vector") {
  ParamStore ps(3);
  std::vector<double> w1(8);
  for (int i = 0; i < 8; ++i) w1[i] = 0.5 + i;
  ps.constant("fa.w1", {8}, "transformer", w1);
  Tensor grid = rand_t({2, 1, 2, 2, 8}, 4);
  Tensor flags = binary_t({2, 1, 2, 2, 1}, 5);
  Tensor out = forced_token_encoding(grid, flags, ForcedVariant::pos_encoding, ps, "fa");
  for (std::int64_t b = 0; b < 2; ++b)
    for (std::int64_t h = 0; h < 2; ++h)
      for (std::int64_t w = 0; w < 2; ++w)
        for (std::int64_t e = 0; e < 8; ++e) {
          const double want = grid.at({b, 0, h, w, e}) +
                              flags.at({b, 0, h, w, 0}) * w1[static_cast<size_t>(e)];
          CHECK(out.at({b, 0, h, w, e}) == doctest::Approx(want).epsilon(1e-12));
        }
}

TEST_CASE("token encoding leaves the grid alone for every other variant") {
  ParamStore ps(6);
  Tensor grid = rand_t({1, 1, 2, 2, 4}, 7);
  Tensor flags = Tensor::full({1, 1, 2, 2, 1}, 1.0);
  for (ForcedVariant v : {ForcedVariant::off, ForcedVariant::linear_bias,
                          ForcedVariant::attn_bias, ForcedVariant::channel_concat,
                          ForcedVariant::input_add}) {
    Tensor out = forced_token_encoding(grid, flags, v, ps, "fa");
    CHECK(out.data() == grid.data());
  }
  CHECK(ps.count() == 0);  // nothing registered on the inactive paths
}

TEST_CASE("token encoding rejects mismatched flag grids") {
  ParamStore ps(8);
  Tensor grid = rand_t({2, 2, 4, 4, 8}, 9);
  CHECK_THROWS_AS(forced_token_encoding(grid, Tensor::zeros({1, 2, 4, 3, 1}),
                                        ForcedVariant::pos_encoding, ps, "fa"),
                  DimensionError);
  CHECK_THROWS_AS(forced_token_encoding(grid, Tensor::zeros({3, 2, 4, 4, 1}),
                                        ForcedVariant::pos_encoding, ps, "fa"),
                  DimensionError);
  CHECK_THROWS_AS(forced_token_encoding(grid, Tensor::zeros({1, 2, 4, 4, 2}),
                                        ForcedVariant::pos_encoding, ps, "fa"),
                  DimensionError);
}

TEST_CASE("channel concat starts as an exact pass-through") {
  ParamStore ps(10);
  Tensor x = rand_t({2, 3, 2, 4, 4}, 11);
  Tensor seg = binary_t({2, 1, 2, 4, 4}, 12);
  Tensor out = forced_input_transform(x, seg, ForcedVariant::channel_concat, ps, "fa");
  REQUIRE(out.shape() == x.shape());
  for (std::int64_t i = 0; i < x.numel(); ++i) {
    CHECK(out.at(i) == doctest::Approx(x.at(i)).epsilon(1e-12));
  }
}

TEST_CASE("channel concat ignores the map channel when the map is zero") {
  ParamStore ps(13);
  // Seed a random reduction kernel; its 4th-channel column must not matter.
  ps.constant("fa.reduce.w", {3, 4, 1, 1}, "backbone",
              rand_t({3 * 4}, 14).data());
  ps.constant("fa.reduce.b", {3}, "backbone", {0.1, -0.2, 0.3});
  Tensor x = rand_t({1, 3, 2, 4, 4}, 15);
  Tensor zero_seg = Tensor::zeros({1, 1, 2, 4, 4});
  Tensor out = forced_input_transform(x, zero_seg, ForcedVariant::channel_concat,
                                      ps, "fa");

  ParamStore ps2(13);
  auto w = ps.get("fa.reduce.w").value.data();
  for (int c = 0; c < 3; ++c) w[c * 4 + 3] = -7.5;  // rewrite the map column
  ps2.constant("fa.reduce.w", {3, 4, 1, 1}, "backbone", w);
  ps2.constant("fa.reduce.b", {3}, "backbone", {0.1, -0.2, 0.3});
  Tensor out2 = forced_input_transform(x, zero_seg, ForcedVariant::channel_concat,
                                       ps2, "fa");
  CHECK(out.data() == out2.data());
}

TEST_CASE("channel concat matches the per-pixel affine oracle") {
  ParamStore ps(16);
  ps.constant("fa.reduce.w", {3, 4, 1, 1}, "backbone", rand_t({12}, 17).data());
  ps.constant("fa.reduce.b", {3}, "backbone", {0.4, 0.0, -0.6});
  Tensor x = rand_t({2, 3, 2, 3, 3}, 18);
  Tensor seg = binary_t({2, 1, 2, 3, 3}, 19);
  Tensor out = forced_input_transform(x, seg, ForcedVariant::channel_concat, ps, "fa");
  const auto& w = ps.get("fa.reduce.w").value.data();
  const auto& bias = ps.get("fa.reduce.b").value.data();
  for (std::int64_t b = 0; b < 2; ++b)
    for (std::int64_t c = 0; c < 3; ++c)
      for (std::int64_t d = 0; d < 2; ++d)
        for (std::int64_t hh = 0; hh < 3; ++hh)
          for (std::int64_t ww = 0; ww < 3; ++ww) {
            double want = bias[c];
            for (std::int64_t i = 0; i < 3; ++i) {
              want += w[c * 4 + i] * x.at({b, i, d, hh, ww});
            }
            want += w[c * 4 + 3] * seg.at({b, 0, d, hh, ww});
            CHECK(out.at({b, c, d, hh, ww}) == doctest::Approx(want).epsilon(1e-10));
          }
}

TEST_CASE("input add obeys the broadcast formula and its limits") {
  ParamStore ps(20);
  Tensor x = rand_t({2, 3, 2, 4, 4}, 21);

  // Zero map: unchanged for the default gamma.
  Tensor out = forced_input_transform(x, Tensor::zeros({2, 1, 2, 4, 4}),
                                      ForcedVariant::input_add, ps, "fa");
  CHECK(out.data() == x.data());

  // gamma = 0: unchanged for any map.
  ParamStore ps0(22);
  ps0.constant("fa.gamma", {1}, "backbone", {0.0});
  Tensor seg = binary_t({2, 1, 2, 4, 4}, 23);
  out = forced_input_transform(x, seg, ForcedVariant::input_add, ps0, "fa");
  CHECK(out.data() == x.data());

  // gamma = 2: foreground pixels shift by exactly 2 in every channel.
  ParamStore ps2(24);
  ps2.constant("fa.gamma", {1}, "backbone", {2.0});
  out = forced_input_transform(x, seg, ForcedVariant::input_add, ps2, "fa");
  for (std::int64_t b = 0; b < 2; ++b)
    for (std::int64_t c = 0; c < 3; ++c)
      for (std::int64_t i = 0; i < 2 * 4 * 4; ++i) {
        const std::int64_t d = i / 16, hh = (i / 4) % 4, ww = i % 4;
        const double want = x.at({b, c, d, hh, ww}) + 2.0 * seg.at({b, 0, d, hh, ww});
        CHECK(out.at({b, c, d, hh, ww}) == doctest::Approx(want).epsilon(1e-12));
      }
}

TEST_CASE("raw-input transforms reject extent mismatches and skip other variants") {
  ParamStore ps(25);
  Tensor x = rand_t({2, 3, 2, 4, 4}, 26);
  CHECK_THROWS_AS(forced_input_transform(x, Tensor::zeros({2, 1, 2, 4, 5}),
                                         ForcedVariant::channel_concat, ps, "fa"),
                  DimensionError);
  CHECK_THROWS_AS(forced_input_transform(x, Tensor::zeros({1, 1, 2, 4, 4}),
                                         ForcedVariant::input_add, ps, "fa"),
                  DimensionError);
  Tensor seg = binary_t({2, 1, 2, 4, 4}, 27);
  for (ForcedVariant v : {ForcedVariant::off, ForcedVariant::pos_encoding,
                          ForcedVariant::linear_bias, ForcedVariant::attn_bias}) {
    CHECK(forced_input_transform(x, seg, v, ps, "fa").data() == x.data());
  }
  CHECK(ps.count() == 0);
}

TEST_CASE("linear-bias hooks at initialization match the unforced block exactly") {
  ParamStore a(30), b(30);
  EncoderBlockConfig cfg;
  cfg.win.window = {1, 2, 2};
  cfg.win.heads = 2;
  cfg.win.embed_dim = 8;
  Tensor x = rand_t({2, 1, 4, 4, 8}, 31);
  Tensor flags = binary_t({2, 1, 4, 4, 1}, 32);

  Tensor base = encoder_block(x, cfg, a, "blk");
  BlockExtras hooks = forced_block_hooks(ForcedVariant::linear_bias, flags, 8, 2,
                                         b, "blk.fa");
  Tensor out = encoder_block(x, cfg, b, "blk", hooks);
  CHECK(out.data() == base.data());  // learned bias starts at zero
}

TEST_CASE("attn-bias hooks at initialization match the unforced block exactly") {
  ParamStore a(33), b(33);
  EncoderBlockConfig cfg;
  cfg.win.window = {1, 2, 2};
  cfg.win.heads = 2;
  cfg.win.embed_dim = 8;
  cfg.win.shift = {0, 1, 1};
  Tensor x = rand_t({2, 1, 4, 4, 8}, 34);
  Tensor flags = binary_t({2, 1, 4, 4, 1}, 35);

  Tensor base = encoder_block(x, cfg, a, "blk");
  BlockExtras hooks = forced_block_hooks(ForcedVariant::attn_bias, flags, 8, 2,
                                         b, "blk.fa");
  Tensor out = encoder_block(x, cfg, b, "blk", hooks);
  REQUIRE(out.shape() == base.shape());
  for (std::int64_t i = 0; i < out.numel(); ++i) {
    CHECK(out.at(i) == doctest::Approx(base.at(i)).epsilon(1e-12));
  }
}

TEST_CASE("linear bias shifts exactly the foreground tokens after attention") {
  EncoderBlockConfig cfg;
  cfg.win.window = {1, 2, 2};
  cfg.win.heads = 1;
  cfg.win.embed_dim = 4;
  Tensor x = rand_t({1, 1, 2, 2, 4}, 37);
  std::vector<double> fl{1, 0, 0, 1};
  Tensor flags = Tensor::from_data({1, 1, 2, 2, 1}, fl);

  // learned_bias = ones, w2 = ones (its default): bias vector is all ones.
  // The +1 on flagged tokens would also feed the MLP branch, so isolate the
  // direct shift with an MLP whose second layer is zeroed.
  EncoderBlockConfig thin = cfg;
  thin.mlp_hidden = 1;
  ParamStore a2(38), b2(38);
  a2.constant("blk.mlp.fc2.w", {4, 1}, "transformer", {0, 0, 0, 0});
  b2.constant("blk.mlp.fc2.w", {4, 1}, "transformer", {0, 0, 0, 0});
  b2.constant("blk.fa.learned_bias", {4}, "transformer", {1, 1, 1, 1});
  Tensor base2 = encoder_block(x, thin, a2, "blk");
  BlockExtras hooks2 = forced_block_hooks(ForcedVariant::linear_bias, flags, 4, 1,
                                          b2, "blk.fa");
  Tensor out2 = encoder_block(x, thin, b2, "blk", hooks2);
  for (std::int64_t t = 0; t < 4; ++t) {
    for (std::int64_t e = 0; e < 4; ++e) {
      const double got = out2.at({0, 0, t / 2, t % 2, e});
      const double want = base2.at({0, 0, t / 2, t % 2, e}) + fl[static_cast<size_t>(t)];
      CHECK(got == doctest::Approx(want).epsilon(1e-10));
    }
  }
}

TEST_CASE("attention bias moves mass toward foreground keys") {
  // Dense check via the exported weights: with a positive per-head scale,
  // every foreground key's column grows, every background key's shrinks.
  ParamStore a(40), b(40);
  EncoderBlockConfig cfg;
  cfg.win.window = {1, 2, 2};
  cfg.win.heads = 2;
  cfg.win.embed_dim = 8;
  Tensor x = rand_t({1, 1, 2, 2, 8}, 41);
  std::vector<double> fl{1, 0, 1, 0};
  Tensor flags = Tensor::from_data({1, 1, 2, 2, 1}, fl);

  Tensor base_attn, forced_attn;
  BlockExtras plain;
  plain.attn_export = &base_attn;
  (void)encoder_block(x, cfg, a, "blk", plain);

  b.constant("blk.fa.w2", {2}, "transformer", {0.9, 1.7});
  BlockExtras hooks = forced_block_hooks(ForcedVariant::attn_bias, flags, 8, 2,
                                         b, "blk.fa");
  hooks.attn_export = &forced_attn;
  (void)encoder_block(x, cfg, b, "blk", hooks);

  REQUIRE(base_attn.shape() == forced_attn.shape());  // (nW, H, T, T)
  const std::int64_t H = 2, T = 4;
  for (std::int64_t h = 0; h < H; ++h)
    for (std::int64_t q = 0; q < T; ++q)
      for (std::int64_t k = 0; k < T; ++k) {
        const double before = base_attn.at({0, h, q, k});
        const double after = forced_attn.at({0, h, q, k});
        if (fl[static_cast<size_t>(k)] > 0) {
          CHECK(after > before);
        } else {
          CHECK(after < before);
        }
      }

  // And the exact logit relationship: bias = flag_k * scale_h on every pair.
  for (std::int64_t h = 0; h < H; ++h) {
    const double s = h == 0 ? 0.9 : 1.7;
    for (std::int64_t q = 0; q < T; ++q) {
      // softmax(l + flag*s) vs softmax(l): reconstruct unnormalized ratio.
      double z = 0;
      for (std::int64_t k = 0; k < T; ++k) {
        z += base_attn.at({0, h, q, k}) * std::exp(fl[static_cast<size_t>(k)] * s);
      }
      for (std::int64_t k = 0; k < T; ++k) {
        const double want = base_attn.at({0, h, q, k}) *
                            std::exp(fl[static_cast<size_t>(k)] * s) / z;
        CHECK(forced_attn.at({0, h, q, k}) == doctest::Approx(want).epsilon(1e-9));
      }
    }
  }
}

TEST_CASE("all variants are no-ops on an all-background map") {
  // Raw-input variants with a zero map, token/bias variants with zero flags:
  // outputs must match the untouched pipeline to machine precision.
  Tensor x = rand_t({1, 3, 2, 8, 8}, 50);
  Tensor zero_seg = Tensor::zeros({1, 1, 2, 8, 8});
  for (ForcedVariant v : {ForcedVariant::channel_concat, ForcedVariant::input_add}) {
    ParamStore ps(51);
    Tensor out = forced_input_transform(x, zero_seg, v, ps, "fa");
    REQUIRE(out.shape() == x.shape());
    for (std::int64_t i = 0; i < x.numel(); ++i) {
      CHECK(std::abs(out.at(i) - x.at(i)) <= 1e-12);
    }
  }

  Tensor grid = rand_t({1, 2, 4, 4, 8}, 52);
  Tensor zero_flags = Tensor::zeros({1, 2, 4, 4, 1});
  EncoderBlockConfig cfg;
  cfg.win.window = {2, 2, 2};
  cfg.win.heads = 2;
  cfg.win.embed_dim = 8;
  ParamStore a(53);
  Tensor base = encoder_block(grid, cfg, a, "blk");
  for (ForcedVariant v : {ForcedVariant::linear_bias, ForcedVariant::attn_bias}) {
    ParamStore b(53);
    // Nonzero learnables: the zero map alone must gate everything off.
    b.constant("blk.fa.learned_bias", {8}, "transformer", rand_t({8}, 54).data());
    b.constant("blk.fa.w2", v == ForcedVariant::linear_bias ? Shape{8} : Shape{2},
               "transformer",
               v == ForcedVariant::linear_bias ? rand_t({8}, 55).data()
                                               : rand_t({2}, 55).data());
    BlockExtras hooks = forced_block_hooks(v, zero_flags, 8, 2, b, "blk.fa");
    Tensor out = encoder_block(grid, cfg, b, "blk", hooks);
    REQUIRE(out.shape() == base.shape());
    for (std::int64_t i = 0; i < out.numel(); ++i) {
      CHECK(std::abs(out.at(i) - base.at(i)) <= 1e-12);
    }
  }

  ParamStore c(53);
  Tensor enc = forced_token_encoding(grid, zero_flags, ForcedVariant::pos_encoding,
                                     c, "fa");
  for (std::int64_t i = 0; i < grid.numel(); ++i) {
    CHECK(std::abs(enc.at(i) - grid.at(i)) <= 1e-12);
  }
}

TEST_CASE("gradients reach every learnable piece of every variant") {
  // A loss that depends on foreground placement: squared sum of the result.
  Tensor x = rand_t({1, 3, 2, 4, 4}, 60);
  Tensor seg = binary_t({1, 1, 2, 4, 4}, 61, 0.5);
  Tensor grid = rand_t({1, 2, 4, 4, 8}, 62);
  Tensor flags = binary_t({1, 2, 4, 4, 1}, 63, 0.5);

  auto check_param_grad = [](const std::function<Tensor()>& loss_fn, ParamStore& ps,
                             const std::string& pname, std::int64_t coord) {
    ps.zero_grad();
    Tensor loss = loss_fn();
    loss.backward();
    Tensor p = ps.get(pname).value;
    REQUIRE(p.has_grad());
    const double analytic = p.grad()[coord];
    const double numeric = central_diff(
        [&] {
          return loss_fn().at(0);
        },
        p, coord);
    CHECK(std::abs(analytic - numeric) / std::max(1.0, std::abs(numeric)) <= 1e-6);
    CHECK(std::abs(analytic) > 1e-12);  // the piece actually matters
  };

  // (a) w1
  {
    ParamStore ps(64);
    auto loss = [&] {
      Tensor out = forced_token_encoding(grid, flags, ForcedVariant::pos_encoding,
                                         ps, "fa");
      return mean_all(mul(out, out));
    };
    loss();  // materialize
    check_param_grad(loss, ps, "fa.w1", 3);
  }
  // (b) learned_bias and w2
  {
    ParamStore ps(65);
    EncoderBlockConfig cfg;
    cfg.win.window = {2, 2, 2};
    cfg.win.heads = 2;
    cfg.win.embed_dim = 8;
    ps.constant("blk.fa.learned_bias", {8}, "transformer", rand_t({8}, 66).data());
    auto loss = [&] {
      BlockExtras hooks = forced_block_hooks(ForcedVariant::linear_bias, flags, 8, 2,
                                             ps, "blk.fa");
      Tensor out = encoder_block(grid, cfg, ps, "blk", hooks);
      return mean_all(mul(out, out));
    };
    loss();
    check_param_grad(loss, ps, "blk.fa.learned_bias", 1);
    check_param_grad(loss, ps, "blk.fa.w2", 2);
  }
  // (c) per-head scales
  {
    ParamStore ps(67);
    EncoderBlockConfig cfg;
    cfg.win.window = {2, 2, 2};
    cfg.win.heads = 2;
    cfg.win.embed_dim = 8;
    ps.constant("blk.fa.w2", {2}, "transformer", {0.3, -0.4});
    auto loss = [&] {
      BlockExtras hooks = forced_block_hooks(ForcedVariant::attn_bias, flags, 8, 2,
                                             ps, "blk.fa");
      Tensor out = encoder_block(grid, cfg, ps, "blk", hooks);
      return mean_all(mul(out, out));
    };
    loss();
    check_param_grad(loss, ps, "blk.fa.w2", 0);
    check_param_grad(loss, ps, "blk.fa.w2", 1);
  }
  // (d) reduction kernel, including the map column
  {
    ParamStore ps(68);
    auto loss = [&] {
      Tensor out = forced_input_transform(x, seg, ForcedVariant::channel_concat,
                                          ps, "fa");
      return mean_all(mul(out, out));
    };
    loss();
    check_param_grad(loss, ps, "fa.reduce.w", 3);   // channel-3 (map) weight
    check_param_grad(loss, ps, "fa.reduce.w", 5);
    check_param_grad(loss, ps, "fa.reduce.b", 0);
  }
  // (e) gamma
  {
    ParamStore ps(69);
    auto loss = [&] {
      Tensor out = forced_input_transform(x, seg, ForcedVariant::input_add, ps, "fa");
      return mean_all(mul(out, out));
    };
    loss();
    check_param_grad(loss, ps, "fa.gamma", 0);
  }
}

TEST_CASE("variant selection changes no shapes anywhere") {
  Tensor x = rand_t({2, 3, 2, 8, 8}, 70);
  Tensor seg = binary_t({2, 1, 2, 8, 8}, 71);
  Tensor grid = rand_t({2, 2, 4, 4, 8}, 72);
  Tensor flags = binary_t({2, 2, 4, 4, 1}, 73);
  EncoderBlockConfig cfg;
  cfg.win.window = {2, 2, 2};
  cfg.win.heads = 2;
  cfg.win.embed_dim = 8;
  for (const char* name : {"off", "a", "b", "c", "d", "e"}) {
    ParamStore ps(74);
    ForcedVariant v = parse_forced_variant(name);
    Tensor xin = forced_input_transform(x, seg, v, ps, "fa");
    CHECK(xin.shape() == x.shape());
    Tensor enc = forced_token_encoding(grid, flags, v, ps, "fa.pe");
    CHECK(enc.shape() == grid.shape());
    BlockExtras hooks = forced_block_hooks(v, flags, 8, 2, ps, "blk.fa");
    Tensor out = encoder_block(enc, cfg, ps, "blk", hooks);
    CHECK(out.shape() == grid.shape());
  }
}

TEST_CASE("chunk flags plug in straight from a patchified map") {
  // End-to-end path: pixel map -> chunk matrix -> flag grid -> hooks.
  Tensor seg = binary_t({8, 8}, 80, 0.2);
  ChunkLayout layout;
  layout.grid_d = 2;
  layout.grid_h = 4;
  layout.grid_w = 4;
  SegPatchMatrix m = patchify_segmap(seg, layout, 4);
  Tensor flags = m1_flag_grid(m);
  REQUIRE(flags.shape() == Shape{1, 2, 4, 4, 1});

  ParamStore ps(81);
  EncoderBlockConfig cfg;
  cfg.win.window = {2, 2, 2};
  cfg.win.heads = 2;
  cfg.win.embed_dim = 8;
  Tensor grid = rand_t({3, 2, 4, 4, 8}, 82);
  BlockExtras hooks = forced_block_hooks(ForcedVariant::attn_bias, flags, 8, 2,
                                         ps, "blk.fa");
  Tensor out = encoder_block(grid, cfg, ps, "blk", hooks);
  CHECK(out.shape() == grid.shape());
}
