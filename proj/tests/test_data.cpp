// SPDX-License-Identifier: Apache-2.0
// Synthetic sample generation: exact label decode, dataset assembly,
// balanced batching, and round-trip export.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <doctest.h>
#include "fat/data.hpp"
#include "fat/error.hpp"
#include "fat/random.hpp"

using namespace fat;

namespace {

GenerationSpec tiny_spec() {
  GenerationSpec sp;
  sp.channels = 2;
  sp.frames = 4;
  sp.height = 16;
  sp.width = 16;
  sp.audio_tokens = 3;
  sp.audio_channels = 5;
  sp.transcript_tokens = 2;
  sp.transcript_channels = 4;
  return sp;
}

bool bit_equal(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) return false;
  for (std::int64_t i = 0; i < a.numel(); ++i) {
    if (a.at(i) != b.at(i)) return false;
  }
  return true;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  REQUIRE(a.shape() == b.shape());
  double m = 0.0;
  for (std::int64_t i = 0; i < a.numel(); ++i) {
    m = std::max(m, std::abs(a.at(i) - b.at(i)));
  }
  return m;
}

}  // namespace

TEST_CASE("same seed reproduces a sample bit for bit") {
  const GenerationSpec sp = tiny_spec();
  const SyntheticSample a = generate_sample(99, sp);
  const SyntheticSample b = generate_sample(99, sp);
  CHECK(bit_equal(a.face_video, b.face_video));
  CHECK(bit_equal(a.fullframe_video, b.fullframe_video));
  CHECK(bit_equal(a.seg_map, b.seg_map));
  CHECK(bit_equal(a.audio_tokens, b.audio_tokens));
  CHECK(bit_equal(a.transcript_tokens, b.transcript_tokens));
  CHECK(bit_equal(a.label, b.label));

  const SyntheticSample c = generate_sample(100, sp);
  CHECK_FALSE(bit_equal(a.face_video, c.face_video));
}

TEST_CASE("zero noise amplitude leaves the background exactly zero") {
  GenerationSpec sp = tiny_spec();
  sp.noise_amplitude = 0.0;
  const SyntheticSample s = generate_sample(5, sp);
  // Every voxel is either exact zero or a foreground intensity >= 0.3.
  for (std::int64_t i = 0; i < s.face_video.numel(); ++i) {
    const double v = s.face_video.at(i);
    CHECK((v == 0.0 || v >= 0.3));
  }
  // Pixels outside the union support are zero across all frames/channels.
  const std::int64_t c = sp.channels, d = sp.frames, h = sp.height,
                     w = sp.width;
  for (std::int64_t y = 0; y < h; ++y) {
    for (std::int64_t x = 0; x < w; ++x) {
      if (s.seg_map.at({y, x}) != 0.0) continue;
      for (std::int64_t ch = 0; ch < c; ++ch) {
        for (std::int64_t t = 0; t < d; ++t) {
          CHECK(s.face_video.at({ch, t, y, x}) == 0.0);
        }
      }
    }
  }
}

TEST_CASE("hand-built disc video decodes to its exact parameters") {
  GenerationSpec sp = tiny_spec();
  // Disc: start (x=7, y=8), velocity (+0.5, -1), intensity 0.85,
  // radius 2.5, flicker pattern 2 (dims frames where t % 3 == 2).
  const double vx = 0.5, vy = -1.0, base = 0.85, r = 2.5;
  Tensor video = Tensor::zeros({sp.channels, sp.frames, sp.height, sp.width});
  for (std::int64_t t = 0; t < sp.frames; ++t) {
    const double cx = 7.0 + vx * static_cast<double>(t);
    const double cy = 8.0 + vy * static_cast<double>(t);
    const double val = (t % 3 == 2) ? base * 0.6 : base;
    for (std::int64_t y = 0; y < sp.height; ++y) {
      for (std::int64_t x = 0; x < sp.width; ++x) {
        const double dx = static_cast<double>(x) - cx;
        const double dy = static_cast<double>(y) - cy;
        if (dx * dx + dy * dy > r * r) continue;
        for (std::int64_t ch = 0; ch < sp.channels; ++ch) {
          video.data()[((ch * sp.frames + t) * sp.height + y) * sp.width + x] =
              val;
        }
      }
    }
  }
  const Tensor label = decode_sample(video, sp);
  CHECK(label.at(static_cast<std::int64_t>(0)) == (vx + 2.0) / 4.0);
  CHECK(label.at(1) == (vy + 2.0) / 4.0);
  CHECK(label.at(2) == (base - 0.5) * 2.0);
  CHECK(label.at(3) == (r - 1.5) / 2.0);
  CHECK(label.at(4) == 2.0 / 3.0);
}

TEST_CASE("forty generated samples decode back to their labels") {
  GenerationSpec sp;  // full-size default geometry
  for (std::uint64_t seed = 1; seed <= 40; ++seed) {
    const SyntheticSample s = generate_sample(seed, sp);
    const Tensor dec = decode_sample(s.face_video, sp);
    CHECK(max_abs_diff(dec, s.label) <= 1e-9);
    for (std::int64_t i = 0; i < 5; ++i) {
      CHECK(s.label.at(i) >= 0.0);
      CHECK(s.label.at(i) <= 1.0);
    }
  }
}

TEST_CASE("decode ignores any rearrangement of background pixels") {
  GenerationSpec sp;
  const SyntheticSample s = generate_sample(7, sp);
  Tensor shuffled = s.face_video.detach();
  const std::int64_t c = sp.channels, d = sp.frames, h = sp.height,
                     w = sp.width;
  // Rotate the background (outside the union support) within each frame.
  for (std::int64_t ch = 0; ch < c; ++ch) {
    for (std::int64_t t = 0; t < d; ++t) {
      std::vector<std::int64_t> bg;
      for (std::int64_t y = 0; y < h; ++y) {
        for (std::int64_t x = 0; x < w; ++x) {
          if (s.seg_map.at({y, x}) == 0.0) {
            bg.push_back(((ch * d + t) * h + y) * w + x);
          }
        }
      }
      const double first = shuffled.at(bg.front());
      for (std::size_t i = 0; i + 1 < bg.size(); ++i) {
        shuffled.data()[bg[i]] = shuffled.at(bg[i + 1]);
      }
      shuffled.data()[bg.back()] = first;
    }
  }
  CHECK_FALSE(bit_equal(shuffled, s.face_video));
  const Tensor dec = decode_sample(shuffled, sp);
  CHECK(bit_equal(dec, decode_sample(s.face_video, sp)));
}

TEST_CASE("undersized frames are rejected before any drawing") {
  GenerationSpec sp = tiny_spec();
  sp.height = 8;  // cannot host the largest disc plus its travel
  CHECK_THROWS_AS(generate_sample(1, sp), ConfigError);
  sp = tiny_spec();
  sp.frames = 3;
  CHECK_THROWS_AS(generate_sample(1, sp), ConfigError);
  sp = tiny_spec();
  sp.noise_amplitude = 0.4;  // would cross the foreground threshold
  CHECK_THROWS_AS(generate_sample(1, sp), ConfigError);
}

TEST_CASE("full redundancy copies the label into every side token") {
  GenerationSpec sp = tiny_spec();
  sp.side_redundancy = 1.0;
  const SyntheticSample s = generate_sample(11, sp);
  for (std::int64_t j = 0; j < sp.audio_tokens; ++j) {
    for (std::int64_t ch = 0; ch < sp.audio_channels; ++ch) {
      CHECK(s.audio_tokens.at({j, ch}) == s.label.at(ch % 5));
    }
  }
  for (std::int64_t j = 0; j < sp.transcript_tokens; ++j) {
    for (std::int64_t ch = 0; ch < sp.transcript_channels; ++ch) {
      CHECK(s.transcript_tokens.at({j, ch}) == s.label.at(ch % 5));
    }
  }
}

TEST_CASE("datasets split deterministically and disjointly") {
  const GenerationSpec sp = tiny_spec();
  const Dataset a = generate_dataset(10, 42, sp);
  const Dataset b = generate_dataset(10, 42, sp);
  CHECK(a.samples.size() == 10);
  CHECK(a.train.size() == 8);
  CHECK(a.val.size() == 2);
  std::set<std::int64_t> seen(a.train.begin(), a.train.end());
  seen.insert(a.val.begin(), a.val.end());
  CHECK(seen.size() == 10);
  CHECK(*seen.begin() == 0);
  CHECK(*seen.rbegin() == 9);

  CHECK(a.train == b.train);
  CHECK(a.val == b.val);
  for (std::size_t i = 0; i < a.samples.size(); ++i) {
    CHECK(a.samples[i].seed == b.samples[i].seed);
    CHECK(bit_equal(a.samples[i].face_video, b.samples[i].face_video));
    CHECK(bit_equal(a.samples[i].label, b.samples[i].label));
  }
  // Samples differ from one another.
  CHECK_FALSE(bit_equal(a.samples[0].face_video, a.samples[1].face_video));

  CHECK_THROWS_AS(generate_dataset(1, 42, sp), ContractError);
}

TEST_CASE("class quotas realize the requested imbalance exactly") {
  GenerationSpec sp = tiny_spec();
  sp.classes = 3;
  sp.class_weights = {50.0, 30.0, 5.0};
  const Dataset ds = generate_dataset(85, 3, sp);
  CHECK(ds.class_counts == std::vector<std::int64_t>{50, 30, 5});
  std::vector<std::int64_t> hist(3, 0);
  for (const auto& s : ds.samples) {
    REQUIRE(s.class_index >= 0);
    REQUIRE(s.class_index < 3);
    ++hist[static_cast<std::size_t>(s.class_index)];
    // The drawn label must actually fall inside the assigned bin.
    CHECK(class_of_label(s.label, 3) == s.class_index);
  }
  CHECK(hist == ds.class_counts);

  GenerationSpec sp2 = tiny_spec();
  sp2.classes = 2;
  sp2.class_weights = {2.0, 1.0};
  const Dataset ds2 = generate_dataset(9, 3, sp2);
  CHECK(ds2.class_counts == std::vector<std::int64_t>{6, 3});

  sp2.class_weights = {1.0, 2.0, 3.0};
  CHECK_THROWS_AS(generate_dataset(9, 3, sp2), ConfigError);
}

TEST_CASE("balanced batches oversample rare classes to per-batch parity") {
  GenerationSpec sp = tiny_spec();
  sp.classes = 2;
  sp.class_weights = {9.0, 1.0};
  sp.train_fraction = 1.0;
  const Dataset ds = generate_dataset(100, 8, sp);
  CHECK(ds.class_counts == std::vector<std::int64_t>{90, 10});

  const auto batches = balanced_batches(ds, 10, 21);
  REQUIRE(batches.size() == 10);
  std::map<std::int64_t, std::int64_t> uses_rare, uses_common;
  for (const auto& batch : batches) {
    REQUIRE(batch.size() == 10);
    std::int64_t rare = 0;
    for (std::int64_t idx : batch) {
      const auto& s = ds.samples[static_cast<std::size_t>(idx)];
      if (s.class_index == 1) {
        ++rare;
        ++uses_rare[idx];
      } else {
        ++uses_common[idx];
      }
    }
    CHECK(rare == 5);  // exact parity: 5 rare + 5 common per batch
  }
  // Every rare sample recurs (50 draws cycle through 10 samples)...
  CHECK(uses_rare.size() == 10);
  for (const auto& [idx, n] : uses_rare) CHECK(n == 5);
  // ...while common samples are subsampled without repetition.
  for (const auto& [idx, n] : uses_common) CHECK(n == 1);

  // Repeatable for a fixed seed.
  CHECK(balanced_batches(ds, 10, 21) == batches);
}

TEST_CASE("balanced batches split remainders by rotation") {
  GenerationSpec sp = tiny_spec();
  sp.classes = 3;
  sp.class_weights = {50.0, 30.0, 5.0};
  sp.train_fraction = 1.0;
  const Dataset ds = generate_dataset(85, 3, sp);
  const auto batches = balanced_batches(ds, 9, 4);
  REQUIRE(batches.size() == 10);
  std::set<std::int64_t> rare_seen;
  for (const auto& batch : batches) {
    std::vector<std::int64_t> hist(3, 0);
    for (std::int64_t idx : batch) {
      const auto c = ds.samples[static_cast<std::size_t>(idx)].class_index;
      ++hist[static_cast<std::size_t>(c)];
      if (c == 2) rare_seen.insert(idx);
    }
    CHECK(hist == std::vector<std::int64_t>{3, 3, 3});
  }
  // 30 rare draws cycling 5 samples: every rare sample participates.
  CHECK(rare_seen.size() == 5);
}

TEST_CASE("an already balanced epoch is a permutation of the train split") {
  GenerationSpec sp = tiny_spec();
  sp.classes = 2;
  sp.train_fraction = 1.0;
  const Dataset ds = generate_dataset(12, 17, sp);
  CHECK(ds.class_counts == std::vector<std::int64_t>{6, 6});
  const auto batches = balanced_batches(ds, 4, 5);
  REQUIRE(batches.size() == 3);
  std::vector<std::int64_t> flat;
  for (const auto& b : batches) flat.insert(flat.end(), b.begin(), b.end());
  std::sort(flat.begin(), flat.end());
  std::vector<std::int64_t> want(12);
  for (std::int64_t i = 0; i < 12; ++i) want[static_cast<std::size_t>(i)] = i;
  CHECK(flat == want);
}

TEST_CASE("balanced batching rejects unusable setups") {
  GenerationSpec sp = tiny_spec();
  sp.classes = 3;
  sp.train_fraction = 1.0;
  const Dataset ds = generate_dataset(9, 2, sp);
  CHECK_THROWS_AS(balanced_batches(ds, 2, 1), ConfigError);

  const Dataset reg = generate_dataset(4, 2, tiny_spec());
  CHECK_THROWS_AS(balanced_batches(reg, 4, 1), ContractError);
}

TEST_CASE("export and reload round trip a dataset bit for bit") {
  GenerationSpec sp = tiny_spec();
  sp.classes = 2;
  sp.class_weights = {3.0, 1.0};
  const Dataset ds = generate_dataset(4, 77, sp);
  const std::string dir =
      (std::filesystem::temp_directory_path() / "fat_data_roundtrip").string();
  std::filesystem::remove_all(dir);
  export_dataset(ds, dir);
  const Dataset back = load_dataset(dir);

  CHECK(back.spec.channels == sp.channels);
  CHECK(back.spec.frames == sp.frames);
  CHECK(back.spec.height == sp.height);
  CHECK(back.spec.width == sp.width);
  CHECK(back.spec.noise_amplitude == sp.noise_amplitude);
  CHECK(back.spec.side_redundancy == sp.side_redundancy);
  CHECK(back.spec.train_fraction == sp.train_fraction);
  CHECK(back.spec.classes == sp.classes);
  CHECK(back.spec.class_weights == sp.class_weights);
  CHECK(back.train == ds.train);
  CHECK(back.val == ds.val);
  CHECK(back.class_counts == ds.class_counts);
  REQUIRE(back.samples.size() == ds.samples.size());
  for (std::size_t i = 0; i < ds.samples.size(); ++i) {
    const auto& a = ds.samples[i];
    const auto& b = back.samples[i];
    CHECK(a.seed == b.seed);
    CHECK(a.class_index == b.class_index);
    CHECK(bit_equal(a.face_video, b.face_video));
    CHECK(bit_equal(a.fullframe_video, b.fullframe_video));
    CHECK(bit_equal(a.seg_map, b.seg_map));
    CHECK(bit_equal(a.audio_tokens, b.audio_tokens));
    CHECK(bit_equal(a.transcript_tokens, b.transcript_tokens));
    CHECK(bit_equal(a.label, b.label));
  }
  std::filesystem::remove_all(dir);

  CHECK_THROWS_AS(load_dataset(dir), DataError);
}

TEST_CASE("segmentation map is the union of per-frame disc supports") {
  const GenerationSpec sp = tiny_spec();
  const SyntheticSample s = generate_sample(31, sp);
  // Every frame's foreground pixels lie inside the map...
  std::int64_t fg = 0;
  for (std::int64_t t = 0; t < sp.frames; ++t) {
    for (std::int64_t y = 0; y < sp.height; ++y) {
      for (std::int64_t x = 0; x < sp.width; ++x) {
        if (s.face_video.at({0, t, y, x}) > 0.25) {
          ++fg;
          CHECK(s.seg_map.at({y, x}) == 1.0);
        }
      }
    }
  }
  CHECK(fg > 0);
  // ...and every map pixel is foreground in at least one frame.
  for (std::int64_t y = 0; y < sp.height; ++y) {
    for (std::int64_t x = 0; x < sp.width; ++x) {
      if (s.seg_map.at({y, x}) == 0.0) continue;
      bool hit = false;
      for (std::int64_t t = 0; t < sp.frames && !hit; ++t) {
        hit = s.face_video.at({0, t, y, x}) > 0.25;
      }
      CHECK(hit);
    }
  }
}

TEST_CASE("decode validates the clip shape") {
  const GenerationSpec sp = tiny_spec();
  CHECK_THROWS_AS(decode_sample(Tensor::zeros({2, 4, 16, 15}), sp), DimensionError);
  CHECK_THROWS_AS(
      decode_sample(Tensor::zeros({sp.channels, sp.frames, sp.height, sp.width}), sp),
      DataError);
}
