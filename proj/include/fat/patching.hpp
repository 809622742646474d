// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fat/tensor.hpp"

namespace fat {

// Row-major spatial grid of fixed-size video patches.
struct PatchGrid {
  std::vector<Tensor> patches;  // each C x D x p x p (or feature shape)
  std::int64_t rows = 0;
  std::int64_t cols = 0;
  std::int64_t patch_size = 0;
  Shape source_shape;  // original C x D x H x W
};

// Chunk-level foreground matrix: one row per chunk, each row all ones
// (chunk touches foreground) or all zeros, broadcast to width e.
struct SegPatchMatrix {
  Tensor m1;            // (nc, e) of 0/1, non-trainable
  std::int64_t nc = 0;
  std::int64_t e = 0;
  // Chunk tiling this matrix was built over, row-major (d, h, w).
  std::int64_t grid_d = 0, grid_h = 0, grid_w = 0;
};

// Splits C x D x H x W into p x p spatial patches, row-major order.
PatchGrid partition_patches(const Tensor& x, std::int64_t p);

// Exact inverse of partition_patches.
Tensor merge_patches(const PatchGrid& g);

struct ChunkLayout {
  std::int64_t grid_d = 1;  // temporal chunk count
  std::int64_t grid_h = 0;
  std::int64_t grid_w = 0;
  // Foreground rule: a chunk is "on" when the foreground fraction of its
  // pixels exceeds this (default 0: any pixel).
  double min_fraction = 0.0;
};

// seg is (H, W) for a static per-video map or (D, H, W) for per-frame maps;
// values must be exactly 0 or 1.
SegPatchMatrix patchify_segmap(const Tensor& seg, const ChunkLayout& layout,
                               std::int64_t e);

// Row accessor: the sampler over M1 (returns a copy of row chunk_index).
std::vector<double> sample_m1(const SegPatchMatrix& m, std::int64_t chunk_index);

// Coarsens the chunk tiling by merging whole chunks (OR) and re-broadcasts
// rows to width new_e. new_nc must factor the existing grid exactly.
SegPatchMatrix rescale_m1(const SegPatchMatrix& m, std::int64_t new_nc,
                          std::int64_t new_e);

// Per-chunk 0/1 flags as a (1, d, h, w, 1) tensor for broadcasting against
// token grids.
Tensor m1_flag_grid(const SegPatchMatrix& m);

// Nearest-repeat upsample of a (N, d, h, w, 1) flag grid to token resolution
// (N, td, th, tw, 1). Every token inherits the flag of the chunk it lies in;
// target extents must be whole multiples of the chunk grid.
Tensor expand_flag_grid(const Tensor& flags, std::int64_t td, std::int64_t th,
                        std::int64_t tw);

// Segmentation-map IO: portable graymap (P2/P5) thresholded at 0.5, and CSV
// of 0/1 values. All return (H, W) tensors of exact 0/1.
Tensor load_segmap_pgm(const std::string& path);
Tensor load_segmap_csv(const std::string& path);
void save_segmap_pgm(const Tensor& seg, const std::string& path);

}  // namespace fat
