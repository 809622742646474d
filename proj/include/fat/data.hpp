// SPDX-License-Identifier: Apache-2.0
// Synthetic multimodal samples: a moving, flickering disc over background
// noise. The disc's velocity, intensity, radius, and flicker pattern ARE the
// label, each exactly recoverable from foreground pixels alone, and a
// configurable share of the same signal rides inside the audio/transcript
// tokens. Background noise never influences the label.
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fat/tensor.hpp"

namespace fat {

struct GenerationSpec {
  std::int64_t channels = 3;
  std::int64_t frames = 8;
  std::int64_t height = 32;
  std::int64_t width = 32;
  std::int64_t audio_tokens = 6;
  std::int64_t audio_channels = 5;
  std::int64_t transcript_tokens = 6;
  std::int64_t transcript_channels = 4;
  // Background pixels are uniform in [0, noise_amplitude); must stay below
  // the 0.25 foreground decode threshold.
  double noise_amplitude = 0.2;
  // Side-token values are redundancy * label + (1 - redundancy) * noise.
  double side_redundancy = 0.5;
  double train_fraction = 0.8;
  std::int64_t classes = 0;           // 0: regression labels; >= 2: classes
  std::vector<double> class_weights;  // relative ratios; empty: uniform
};

struct SyntheticSample {
  Tensor face_video;         // (C, D, H, W)
  Tensor fullframe_video;    // (C, D, H, W) — same disc, other position
  Tensor seg_map;            // (H, W) 0/1, union of per-frame disc support
  Tensor audio_tokens;       // (Ta, Ca)
  Tensor transcript_tokens;  // (Tt, Ct)
  Tensor label;              // (5) in [0, 1]
  std::int64_t class_index = -1;  // first label binned, classification only
  std::uint64_t seed = 0;
};

// Label layout: (x-velocity, y-velocity, intensity, radius, flicker), each
// min-max normalized to [0, 1].
SyntheticSample generate_sample(std::uint64_t seed, const GenerationSpec& spec);

// Inverse generator: recovers the label from the face video alone (per-frame
// disc support, centroids, pixel counts, and frame intensities). Throws
// DataError when no decodable disc is present.
Tensor decode_sample(const Tensor& face_video, const GenerationSpec& spec);

// Bins the first label component into `classes` equal bins.
std::int64_t class_of_label(const Tensor& label, std::int64_t classes);

struct Dataset {
  GenerationSpec spec;
  std::vector<SyntheticSample> samples;
  std::vector<std::int64_t> train;  // indices into samples, disjoint from val
  std::vector<std::int64_t> val;
  std::vector<std::int64_t> class_counts;  // empty for regression
};

// Deterministic dataset with an exact largest-remainder class allocation and
// a disjoint train/val split.
Dataset generate_dataset(std::int64_t n, std::uint64_t seed,
                         const GenerationSpec& spec);

// One epoch of training batches over the train split with per-batch class
// counts within 1 of uniform: rare classes cycle (oversampling), frequent
// classes subsample. Classification datasets only.
std::vector<std::vector<std::int64_t>> balanced_batches(
    const Dataset& ds, std::int64_t batch_size, std::uint64_t seed);

// Directory layout: manifest.txt plus per-sample binary tensors, a P5
// graymap for the segmentation, and CSV token/label files. Reloads
// bit-exactly.
void export_dataset(const Dataset& ds, const std::string& dir);
Dataset load_dataset(const std::string& dir);

}  // namespace fat
