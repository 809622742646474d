// SPDX-License-Identifier: Apache-2.0
// Patch partition/merge, chunk-foreground matrices, and segmentation-map IO.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cstdio>
#include <vector>

#include <doctest.h>
#include "fat/error.hpp"
#include "fat/patching.hpp"
#include "fat/random.hpp"

using namespace fat;

namespace {

Tensor random_binary_map(std::int64_t h, std::int64_t w, RandomStream& rng,
                         double p_fg) {
  std::vector<double> v(static_cast<size_t>(h * w));
  for (auto& x : v) x = rng.uniform() < p_fg ? 1.0 : 0.0;
  return Tensor::from_data({h, w}, std::move(v));
}

// Independent oracle: chunk (h,w) of an (H,W) map is on iff any pixel in its
// block is foreground, checked pixel-by-pixel without the chunk arithmetic
// used by the implementation.
bool chunk_has_foreground(const Tensor& seg, std::int64_t gh, std::int64_t gw,
                          std::int64_t h, std::int64_t w) {
  const std::int64_t H = seg.dim(0), W = seg.dim(1);
  const std::int64_t ch = H / gh, cw = W / gw;
  for (std::int64_t i = 0; i < H; ++i) {
    for (std::int64_t j = 0; j < W; ++j) {
      if (i / ch == h && j / cw == w && seg.at({i, j}) != 0.0) return true;
    }
  }
  return false;
}

}  // namespace

TEST_CASE("partition and merge round trip bit-exact") {
  RandomStream rng(404);
  for (int trial = 0; trial < 5; ++trial) {
    const std::int64_t C = 3, D = 2, H = 16, W = 24, p = 8;
    std::vector<double> v(static_cast<size_t>(C * D * H * W));
    for (auto& x : v) x = rng.uniform(-3.0, 3.0);
    Tensor x = Tensor::from_data({C, D, H, W}, v);
    PatchGrid g = partition_patches(x, p);
    CHECK(g.rows == 2);
    CHECK(g.cols == 3);
    CHECK(g.patches.size() == 6);
    for (const auto& t : g.patches) {
      CHECK(t.shape() == Shape{C, D, p, p});
    }
    Tensor back = merge_patches(g);
    REQUIRE(back.shape() == x.shape());
    for (size_t i = 0; i < v.size(); ++i) {
      CHECK(back.data()[i] == v[i]);  // bit-exact, not approx
    }
  }
}

TEST_CASE("partition places pixels in row-major patch order") {
  // 1x1x4x4 input with values = flat index; patch size 2.
  std::vector<double> v(16);
  for (int i = 0; i < 16; ++i) v[i] = i;
  Tensor x = Tensor::from_data({1, 1, 4, 4}, v);
  PatchGrid g = partition_patches(x, 2);
  // Patch (0,0) holds rows 0-1, cols 0-1: 0 1 4 5.
  CHECK(g.patches[0].data() == std::vector<double>{0, 1, 4, 5});
  // Patch (0,1): cols 2-3.
  CHECK(g.patches[1].data() == std::vector<double>{2, 3, 6, 7});
  // Patch (1,0): rows 2-3.
  CHECK(g.patches[2].data() == std::vector<double>{8, 9, 12, 13});
  CHECK(g.patches[3].data() == std::vector<double>{10, 11, 14, 15});
}

TEST_CASE("partition rejects non-divisible extents") {
  Tensor x = Tensor::zeros({3, 2, 15, 16});
  CHECK_THROWS_AS(partition_patches(x, 8), DimensionError);
  CHECK_THROWS_AS(partition_patches(Tensor::zeros({3, 15, 16}), 8), DimensionError);
}

TEST_CASE("patchify matches any-pixel oracle on 200 random maps") {
  RandomStream rng(1234);
  for (int trial = 0; trial < 200; ++trial) {
    const std::int64_t gh = 2 + static_cast<std::int64_t>(rng.uniform_index(3));
    const std::int64_t gw = 2 + static_cast<std::int64_t>(rng.uniform_index(3));
    const std::int64_t H = gh * (1 + static_cast<std::int64_t>(rng.uniform_index(6)));
    const std::int64_t W = gw * (1 + static_cast<std::int64_t>(rng.uniform_index(6)));
    const double p_fg = rng.uniform(0.0, 0.3);
    Tensor seg = random_binary_map(H, W, rng, p_fg);
    ChunkLayout layout{1, gh, gw, 0.0};
    const std::int64_t e = 1 + static_cast<std::int64_t>(rng.uniform_index(8));
    SegPatchMatrix m = patchify_segmap(seg, layout, e);
    REQUIRE(m.nc == gh * gw);
    REQUIRE(m.e == e);
    REQUIRE(m.m1.shape() == Shape{m.nc, e});
    for (std::int64_t h = 0; h < gh; ++h) {
      for (std::int64_t w = 0; w < gw; ++w) {
        const double want = chunk_has_foreground(seg, gh, gw, h, w) ? 1.0 : 0.0;
        for (std::int64_t k = 0; k < e; ++k) {
          CHECK(m.m1.at({h * gw + w, k}) == want);
        }
      }
    }
  }
}

TEST_CASE("single foreground pixel lights exactly one row") {
  std::vector<double> v(64, 0.0);
  v[3 * 8 + 5] = 1.0;  // row 3, col 5 -> chunk (0,2) of a 2x4 grid over 8x8
  Tensor seg = Tensor::from_data({8, 8}, v);
  SegPatchMatrix m = patchify_segmap(seg, ChunkLayout{1, 2, 4, 0.0}, 3);
  for (std::int64_t r = 0; r < m.nc; ++r) {
    const double want = r == 2 ? 1.0 : 0.0;  // 8x8 / (2x4) -> col 5 / 2 = chunk col 2
    for (std::int64_t k = 0; k < 3; ++k) CHECK(m.m1.at({r, k}) == want);
  }
}

TEST_CASE("min_fraction gates chunks by coverage") {
  // 4x4 map, single 2x2 grid chunk quartering: chunk (0,0) fully lit,
  // chunk (0,1) one pixel of four.
  std::vector<double> v(16, 0.0);
  v[0] = v[1] = v[4] = v[5] = 1.0;  // chunk (0,0): all 4 pixels
  v[2] = 1.0;                       // chunk (0,1): 1 of 4 pixels
  Tensor seg = Tensor::from_data({4, 4}, v);
  SegPatchMatrix any = patchify_segmap(seg, ChunkLayout{1, 2, 2, 0.0}, 2);
  CHECK(any.m1.at({0, 0}) == 1.0);
  CHECK(any.m1.at({1, 0}) == 1.0);
  CHECK(any.m1.at({2, 0}) == 0.0);
  CHECK(any.m1.at({3, 0}) == 0.0);
  SegPatchMatrix half = patchify_segmap(seg, ChunkLayout{1, 2, 2, 0.5}, 2);
  CHECK(half.m1.at({0, 0}) == 1.0);
  CHECK(half.m1.at({1, 0}) == 0.0);  // 25% <= 50% threshold
}

TEST_CASE("static map replicates across temporal chunks") {
  std::vector<double> v(16, 0.0);
  v[0] = 1.0;
  Tensor seg = Tensor::from_data({4, 4}, v);
  SegPatchMatrix m = patchify_segmap(seg, ChunkLayout{3, 2, 2, 0.0}, 2);
  REQUIRE(m.nc == 12);
  for (std::int64_t d = 0; d < 3; ++d) {
    CHECK(m.m1.at({d * 4 + 0, 0}) == 1.0);
    CHECK(m.m1.at({d * 4 + 1, 0}) == 0.0);
    CHECK(m.m1.at({d * 4 + 2, 0}) == 0.0);
    CHECK(m.m1.at({d * 4 + 3, 0}) == 0.0);
  }
}

TEST_CASE("per-frame maps gate temporal chunks independently") {
  // 2 frames, 2x2 pixels, 2x1x1 grid: frame 0 lit, frame 1 dark.
  std::vector<double> v{1, 0, 0, 0, /* frame 1 */ 0, 0, 0, 0};
  Tensor seg = Tensor::from_data({2, 2, 2}, v);
  SegPatchMatrix m = patchify_segmap(seg, ChunkLayout{2, 1, 1, 0.0}, 4);
  REQUIRE(m.nc == 2);
  CHECK(sample_m1(m, 0) == std::vector<double>{1, 1, 1, 1});
  CHECK(sample_m1(m, 1) == std::vector<double>{0, 0, 0, 0});
}

TEST_CASE("patchify validates inputs") {
  Tensor bad = Tensor::from_data({2, 2}, {0.0, 0.5, 1.0, 0.0});
  CHECK_THROWS_AS(patchify_segmap(bad, ChunkLayout{1, 2, 2, 0.0}, 2), ContractError);
  Tensor ok = Tensor::zeros({6, 6});
  CHECK_THROWS_AS(patchify_segmap(ok, ChunkLayout{1, 4, 2, 0.0}, 2), DimensionError);
  CHECK_THROWS_AS(patchify_segmap(ok, ChunkLayout{1, 2, 2, 0.0}, 0), ContractError);
}

TEST_CASE("sample_m1 returns rows and bounds-checks") {
  Tensor seg = Tensor::from_data({2, 2}, {1.0, 0.0, 0.0, 0.0});
  SegPatchMatrix m = patchify_segmap(seg, ChunkLayout{1, 2, 2, 0.0}, 3);
  CHECK(sample_m1(m, 0) == std::vector<double>{1, 1, 1});
  CHECK(sample_m1(m, 3) == std::vector<double>{0, 0, 0});
  CHECK_THROWS_AS(sample_m1(m, -1), BoundsError);
  CHECK_THROWS_AS(sample_m1(m, 4), BoundsError);
}

TEST_CASE("rescale merges chunks by OR and re-broadcasts width") {
  // 4x4 grid over an 8x8 map, one lit pixel -> one lit chunk.
  std::vector<double> v(64, 0.0);
  v[2 * 8 + 3] = 1.0;  // chunk (1,1) in the 4x4 tiling
  Tensor seg = Tensor::from_data({8, 8}, v);
  SegPatchMatrix fine = patchify_segmap(seg, ChunkLayout{1, 4, 4, 0.0}, 2);
  CHECK(fine.m1.at({1 * 4 + 1, 0}) == 1.0);

  SegPatchMatrix coarse = rescale_m1(fine, 4, 5);
  REQUIRE(coarse.nc == 4);
  REQUIRE(coarse.e == 5);
  REQUIRE(coarse.grid_h == 2);
  REQUIRE(coarse.grid_w == 2);
  // Fine chunk (1,1) folds into coarse chunk (0,0); everything else dark.
  CHECK(sample_m1(coarse, 0) == std::vector<double>(5, 1.0));
  CHECK(sample_m1(coarse, 1) == std::vector<double>(5, 0.0));
  CHECK(sample_m1(coarse, 2) == std::vector<double>(5, 0.0));
  CHECK(sample_m1(coarse, 3) == std::vector<double>(5, 0.0));

  // Coarsening must agree with patchifying directly at the coarse grid.
  SegPatchMatrix direct = patchify_segmap(seg, ChunkLayout{1, 2, 2, 0.0}, 5);
  for (std::int64_t i = 0; i < 4; ++i) {
    CHECK(sample_m1(coarse, i) == sample_m1(direct, i));
  }
}

TEST_CASE("rescale agrees with direct patchify on random maps") {
  RandomStream rng(77);
  for (int trial = 0; trial < 50; ++trial) {
    Tensor seg = random_binary_map(16, 16, rng, 0.1);
    SegPatchMatrix fine = patchify_segmap(seg, ChunkLayout{1, 8, 8, 0.0}, 4);
    SegPatchMatrix coarse = rescale_m1(fine, 16, 8);
    SegPatchMatrix direct = patchify_segmap(seg, ChunkLayout{1, 4, 4, 0.0}, 8);
    REQUIRE(coarse.nc == direct.nc);
    for (std::int64_t i = 0; i < coarse.nc; ++i) {
      CHECK(sample_m1(coarse, i) == sample_m1(direct, i));
    }
  }
}

TEST_CASE("rescale rejects non-nested tilings") {
  Tensor seg = Tensor::zeros({6, 6});
  SegPatchMatrix m = patchify_segmap(seg, ChunkLayout{1, 3, 3, 0.0}, 2);
  CHECK_THROWS_AS(rescale_m1(m, 5, 2), ContractError);
}

TEST_CASE("flag grid exposes chunk bits in (1,d,h,w,1) layout") {
  std::vector<double> v(16, 0.0);
  v[0] = 1.0;
  v[15] = 1.0;
  Tensor seg = Tensor::from_data({4, 4}, v);
  SegPatchMatrix m = patchify_segmap(seg, ChunkLayout{2, 2, 2, 0.0}, 3);
  Tensor g = m1_flag_grid(m);
  REQUIRE(g.shape() == Shape{1, 2, 2, 2, 1});
  // Corner chunks lit in both temporal replicas.
  CHECK(g.at({0, 0, 0, 0, 0}) == 1.0);
  CHECK(g.at({0, 0, 1, 1, 0}) == 1.0);
  CHECK(g.at({0, 0, 0, 1, 0}) == 0.0);
  CHECK(g.at({0, 1, 0, 0, 0}) == 1.0);
  CHECK(g.at({0, 1, 1, 1, 0}) == 1.0);
}

TEST_CASE("graymap save/load round trip") {
  RandomStream rng(9);
  Tensor seg = random_binary_map(12, 10, rng, 0.4);
  const std::string path = "test_seg_roundtrip.pgm";
  save_segmap_pgm(seg, path);
  Tensor back = load_segmap_pgm(path);
  REQUIRE(back.shape() == seg.shape());
  CHECK(back.data() == seg.data());
  std::remove(path.c_str());
}

TEST_CASE("P2 graymaps with comments load and threshold") {
  const std::string path = "test_seg_p2.pgm";
  {
    std::FILE* f = std::fopen(path.c_str(), "w");
    std::fputs("P2\n# a comment\n3 2\n255\n0 128 255\n255 0 127\n", f);
    std::fclose(f);
  }
  Tensor seg = load_segmap_pgm(path);
  REQUIRE(seg.shape() == Shape{2, 3});
  CHECK(seg.data() == std::vector<double>{0, 1, 1, 1, 0, 0});
  std::remove(path.c_str());
}

TEST_CASE("graymap loader rejects junk") {
  const std::string path = "test_seg_bad.pgm";
  {
    std::FILE* f = std::fopen(path.c_str(), "w");
    std::fputs("P6\n2 2\n255\n", f);
    std::fclose(f);
  }
  CHECK_THROWS_AS(load_segmap_pgm(path), DataError);
  std::remove(path.c_str());
  CHECK_THROWS_AS(load_segmap_pgm("no_such_file.pgm"), DataError);
}

TEST_CASE("CSV maps load with validation") {
  const std::string path = "test_seg.csv";
  {
    std::FILE* f = std::fopen(path.c_str(), "w");
    std::fputs("0,1,0\n1,1,0\n", f);
    std::fclose(f);
  }
  Tensor seg = load_segmap_csv(path);
  REQUIRE(seg.shape() == Shape{2, 3});
  CHECK(seg.data() == std::vector<double>{0, 1, 0, 1, 1, 0});
  std::remove(path.c_str());

  {
    std::FILE* f = std::fopen(path.c_str(), "w");
    std::fputs("0,1\n1\n", f);
    std::fclose(f);
  }
  CHECK_THROWS_AS(load_segmap_csv(path), DataError);
  {
    std::FILE* f = std::fopen(path.c_str(), "w");
    std::fputs("0,2\n", f);
    std::fclose(f);
  }
  CHECK_THROWS_AS(load_segmap_csv(path), DataError);
  std::remove(path.c_str());
}

TEST_CASE("flag grids expand to token resolution by nearest repeat") {
  // 1x2x2 chunk grid with distinct values per chunk.
  Tensor flags = Tensor::from_data({1, 1, 2, 2, 1}, {1, 0, 0, 1});
  Tensor up = expand_flag_grid(flags, 2, 4, 4);
  REQUIRE(up.shape() == Shape{1, 2, 4, 4, 1});
  for (std::int64_t z = 0; z < 2; ++z)
    for (std::int64_t y = 0; y < 4; ++y)
      for (std::int64_t x = 0; x < 4; ++x) {
        double want = flags.at({0, 0, y / 2, x / 2, 0});
        CHECK(up.at({0, z, y, x, 0}) == want);
      }

  // Identity expansion leaves values untouched.
  Tensor same = expand_flag_grid(flags, 1, 2, 2);
  CHECK(same.data() == flags.data());

  // Batched grids expand per sample.
  Tensor two = Tensor::from_data({2, 1, 1, 1, 1}, {1, 0});
  Tensor up2 = expand_flag_grid(two, 1, 2, 1);
  CHECK(up2.at({0, 0, 0, 0, 0}) == 1);
  CHECK(up2.at({0, 0, 1, 0, 0}) == 1);
  CHECK(up2.at({1, 0, 0, 0, 0}) == 0);
  CHECK(up2.at({1, 0, 1, 0, 0}) == 0);

  CHECK_THROWS_AS(expand_flag_grid(flags, 2, 3, 4), DimensionError);
  CHECK_THROWS_AS(expand_flag_grid(Tensor::zeros({2, 2}), 2, 2, 2),
                  DimensionError);
}
