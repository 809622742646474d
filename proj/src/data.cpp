// SPDX-License-Identifier: Apache-2.0
#include "fat/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>

#include "fat/error.hpp"
#include "fat/patching.hpp"
#include "fat/random.hpp"

namespace fat {
namespace {

// Velocities live on a half-pixel lattice so that integer start centers give
// exactly representable (integer or half-integer) centers in every frame.
constexpr double kVelocityStep = 0.5;
constexpr std::int64_t kVelocityCount = 9;  // -2 .. 2
constexpr double kVelocityMax = 2.0;
constexpr std::int64_t kRadiusCount = 3;  // 1.5, 2.5, 3.5
constexpr std::int64_t kFlickerCount = 4;
constexpr double kDimFactor = 0.6;
// Foreground intensity is 0.5 + 0.5u >= 0.5; dimmed frames stay >= 0.3.
constexpr double kDecodeThreshold = 0.25;

double velocity_value(std::int64_t idx) {
  return -kVelocityMax + kVelocityStep * static_cast<double>(idx);
}

double radius_value(std::int64_t idx) {
  return 1.5 + static_cast<double>(idx);
}

// Flicker pattern f > 0 dims frames with t % (5 - f) == 4 - f; frame 0 is
// never dimmed, so it always carries the undimmed intensity.
bool frame_dimmed(std::int64_t flicker, std::int64_t t) {
  if (flicker <= 0) return false;
  const std::int64_t period = 5 - flicker;
  return t % period == period - 1;
}

void validate_spec(const GenerationSpec& spec) {
  if (spec.channels < 1 || spec.frames < 4 || spec.height < 1 ||
      spec.width < 1) {
    throw ConfigError("generation spec needs channels >= 1, frames >= 4, "
                      "and positive height/width");
  }
  const double max_r = radius_value(kRadiusCount - 1);
  const double travel = kVelocityMax * static_cast<double>(spec.frames - 1);
  const double need = 2.0 * max_r + travel + 1.0;
  if (static_cast<double>(std::min(spec.height, spec.width)) < need) {
    throw ConfigError(
        "frame " + std::to_string(spec.height) + "x" +
        std::to_string(spec.width) +
        " cannot contain the largest disc and its motion; need at least " +
        std::to_string(static_cast<std::int64_t>(std::ceil(need))) +
        " pixels per side for " + std::to_string(spec.frames) + " frames");
  }
  if (spec.audio_tokens < 1 || spec.audio_channels < 1 ||
      spec.transcript_tokens < 1 || spec.transcript_channels < 1) {
    throw ConfigError("generation spec needs at least one token and channel "
                      "per side modality");
  }
  if (spec.noise_amplitude < 0.0 || spec.noise_amplitude > kDecodeThreshold) {
    throw ConfigError("noise amplitude must lie in [0, 0.25] so background "
                      "never crosses the foreground threshold");
  }
  if (spec.side_redundancy < 0.0 || spec.side_redundancy > 1.0) {
    throw ConfigError("side redundancy must lie in [0, 1]");
  }
  if (spec.train_fraction < 0.0 || spec.train_fraction > 1.0) {
    throw ConfigError("train fraction must lie in [0, 1]");
  }
  if (spec.classes != 0 && (spec.classes < 2 || spec.classes > kVelocityCount)) {
    throw ConfigError("classes must be 0 (regression) or between 2 and " +
                      std::to_string(kVelocityCount));
  }
  if (!spec.class_weights.empty()) {
    if (spec.classes < 2) {
      throw ConfigError("class weights given for a regression spec");
    }
    if (static_cast<std::int64_t>(spec.class_weights.size()) != spec.classes) {
      throw ConfigError("expected " + std::to_string(spec.classes) +
                        " class weights, got " +
                        std::to_string(spec.class_weights.size()));
    }
    for (double w : spec.class_weights) {
      if (!(w > 0.0)) throw ConfigError("class weights must be positive");
    }
  }
}

bool in_disc(std::int64_t y, std::int64_t x, double cy, double cx, double r) {
  const double dx = static_cast<double>(x) - cx;
  const double dy = static_cast<double>(y) - cy;
  return dx * dx + dy * dy <= r * r;
}

// Integer start position such that the full disc stays inside the frame in
// every frame of the clip.
std::int64_t draw_start(RandomStream& rs, std::int64_t extent, double v,
                        double r, std::int64_t frames) {
  const double travel = v * static_cast<double>(frames - 1);
  const double lo = r + std::max(0.0, -travel);
  const double hi = static_cast<double>(extent - 1) - r - std::max(0.0, travel);
  const auto lo_i = static_cast<std::int64_t>(std::ceil(lo));
  const auto hi_i = static_cast<std::int64_t>(std::floor(hi));
  if (hi_i < lo_i) {
    throw ConfigError("disc larger than frame: no feasible start position");
  }
  return lo_i + static_cast<std::int64_t>(
                    rs.uniform_index(static_cast<std::uint64_t>(hi_i - lo_i + 1)));
}

// Renders one clip: background noise first (one draw per voxel, so the
// stream advance never depends on the disc), then the disc overwrites its
// support in every channel.
Tensor render_clip(RandomStream& rs, const GenerationSpec& spec, double cx0,
                   double cy0, double vx, double vy, double base_intensity,
                   double r, std::int64_t flicker) {
  const std::int64_t c = spec.channels, d = spec.frames, h = spec.height,
                     w = spec.width;
  Tensor video = Tensor::zeros({c, d, h, w});
  std::vector<double>& out = video.data();
  for (double& v : out) {
    v = spec.noise_amplitude * rs.uniform();
  }
  for (std::int64_t t = 0; t < d; ++t) {
    const double cx = cx0 + vx * static_cast<double>(t);
    const double cy = cy0 + vy * static_cast<double>(t);
    const double val =
        frame_dimmed(flicker, t) ? base_intensity * kDimFactor : base_intensity;
    for (std::int64_t y = 0; y < h; ++y) {
      for (std::int64_t x = 0; x < w; ++x) {
        if (!in_disc(y, x, cy, cx, r)) continue;
        for (std::int64_t ch = 0; ch < c; ++ch) {
          out[((ch * d + t) * h + y) * w + x] = val;
        }
      }
    }
  }
  return video;
}

Tensor side_tokens(RandomStream& rs, std::int64_t tokens, std::int64_t channels,
                   double redundancy, const Tensor& label) {
  Tensor out = Tensor::zeros({tokens, channels});
  std::vector<double>& o = out.data();
  for (std::int64_t j = 0; j < tokens; ++j) {
    for (std::int64_t ch = 0; ch < channels; ++ch) {
      o[j * channels + ch] =
          redundancy * label.at(ch % 5) + (1.0 - redundancy) * rs.uniform();
    }
  }
  return out;
}

std::int64_t class_of_first(double first_label, std::int64_t classes) {
  const auto idx = static_cast<std::int64_t>(
      std::floor(first_label * static_cast<double>(classes)));
  return std::min(classes - 1, std::max<std::int64_t>(0, idx));
}

// force_class < 0: unconstrained draw.
SyntheticSample gen_impl(std::uint64_t seed, const GenerationSpec& spec,
                         std::int64_t force_class) {
  RandomStream rs(seed);
  std::int64_t ivx;
  if (force_class >= 0) {
    std::vector<std::int64_t> pool;
    for (std::int64_t j = 0; j < kVelocityCount; ++j) {
      const double l0 = (velocity_value(j) + kVelocityMax) / (2.0 * kVelocityMax);
      if (class_of_first(l0, spec.classes) == force_class) pool.push_back(j);
    }
    if (pool.empty()) {
      throw ConfigError("class " + std::to_string(force_class) +
                        " has no reachable velocity bin");
    }
    ivx = pool[rs.uniform_index(pool.size())];
  } else {
    ivx = static_cast<std::int64_t>(rs.uniform_index(kVelocityCount));
  }
  const auto ivy = static_cast<std::int64_t>(rs.uniform_index(kVelocityCount));
  const double vx = velocity_value(ivx);
  const double vy = velocity_value(ivy);
  const double u = rs.uniform();
  const double intensity = 0.5 + 0.5 * u;
  const auto ir = static_cast<std::int64_t>(rs.uniform_index(kRadiusCount));
  const double r = radius_value(ir);
  const auto flicker = static_cast<std::int64_t>(rs.uniform_index(kFlickerCount));

  SyntheticSample s;
  s.seed = seed;
  s.label = Tensor::zeros({5});
  s.label.data()[0] = (vx + kVelocityMax) / (2.0 * kVelocityMax);
  s.label.data()[1] = (vy + kVelocityMax) / (2.0 * kVelocityMax);
  s.label.data()[2] = u;
  s.label.data()[3] = static_cast<double>(ir) * 0.5;
  s.label.data()[4] = static_cast<double>(flicker) / 3.0;
  if (spec.classes >= 2) {
    s.class_index = class_of_first(s.label.at(0), spec.classes);
  }

  const auto fcx = static_cast<double>(
      draw_start(rs, spec.width, vx, r, spec.frames));
  const auto fcy = static_cast<double>(
      draw_start(rs, spec.height, vy, r, spec.frames));
  s.face_video = render_clip(rs, spec, fcx, fcy, vx, vy, intensity, r, flicker);

  s.seg_map = Tensor::zeros({spec.height, spec.width});
  for (std::int64_t t = 0; t < spec.frames; ++t) {
    const double cx = fcx + vx * static_cast<double>(t);
    const double cy = fcy + vy * static_cast<double>(t);
    for (std::int64_t y = 0; y < spec.height; ++y) {
      for (std::int64_t x = 0; x < spec.width; ++x) {
        if (in_disc(y, x, cy, cx, r)) s.seg_map.data()[y * spec.width + x] = 1.0;
      }
    }
  }

  const auto gcx = static_cast<double>(
      draw_start(rs, spec.width, vx, r, spec.frames));
  const auto gcy = static_cast<double>(
      draw_start(rs, spec.height, vy, r, spec.frames));
  s.fullframe_video =
      render_clip(rs, spec, gcx, gcy, vx, vy, intensity, r, flicker);

  s.audio_tokens = side_tokens(rs, spec.audio_tokens, spec.audio_channels,
                               spec.side_redundancy, s.label);
  s.transcript_tokens =
      side_tokens(rs, spec.transcript_tokens, spec.transcript_channels,
                  spec.side_redundancy, s.label);
  return s;
}

// Number of integer lattice points inside a disc of radius r whose center
// has the given fractional offsets (0 or 0.5 per axis). Distinct for the
// three radii at every parity, which is what makes the radius decodable.
std::int64_t support_count(double r, bool half_x, bool half_y) {
  const double ox = half_x ? 0.5 : 0.0;
  const double oy = half_y ? 0.5 : 0.0;
  std::int64_t n = 0;
  for (std::int64_t a = -8; a <= 8; ++a) {
    for (std::int64_t b = -8; b <= 8; ++b) {
      const double dx = static_cast<double>(a) - ox;
      const double dy = static_cast<double>(b) - oy;
      if (dx * dx + dy * dy <= r * r) ++n;
    }
  }
  return n;
}

}  // namespace

SyntheticSample generate_sample(std::uint64_t seed, const GenerationSpec& spec) {
  validate_spec(spec);
  return gen_impl(seed, spec, -1);
}

Tensor decode_sample(const Tensor& face_video, const GenerationSpec& spec) {
  validate_spec(spec);
  const Shape want{spec.channels, spec.frames, spec.height, spec.width};
  if (face_video.shape() != want) {
    throw DimensionError("decode expects a video shaped " + shape_str(want) +
                         ", got " + shape_str(face_video.shape()));
  }
  const std::int64_t d = spec.frames, h = spec.height, w = spec.width;
  std::vector<double> cx(d), cy(d), intensity(d);
  std::vector<std::int64_t> count(d);
  for (std::int64_t t = 0; t < d; ++t) {
    double sx = 0.0, sy = 0.0;
    std::int64_t n = 0;
    double val = 0.0;
    for (std::int64_t y = 0; y < h; ++y) {
      for (std::int64_t x = 0; x < w; ++x) {
        const double v = face_video.at({0, t, y, x});
        if (v <= kDecodeThreshold) continue;
        sx += static_cast<double>(x);
        sy += static_cast<double>(y);
        val = v;
        ++n;
      }
    }
    if (n == 0) {
      throw DataError("no foreground disc found in frame " + std::to_string(t));
    }
    cx[t] = sx / static_cast<double>(n);
    cy[t] = sy / static_cast<double>(n);
    intensity[t] = val;
    count[t] = n;
  }

  const double vx = cx[1] - cx[0];
  const double vy = cy[1] - cy[0];
  const double base = intensity[0];  // frame 0 is never dimmed

  const bool half_x = cx[0] != std::floor(cx[0]);
  const bool half_y = cy[0] != std::floor(cy[0]);
  std::int64_t ir = -1;
  for (std::int64_t j = 0; j < kRadiusCount; ++j) {
    if (support_count(radius_value(j), half_x, half_y) == count[0]) {
      ir = j;
      break;
    }
  }
  if (ir < 0) {
    throw DataError("foreground support of " + std::to_string(count[0]) +
                    " pixels matches no known disc radius");
  }

  std::int64_t flicker = 0;
  const double dim_cut = 0.8 * base;
  if (d > 1 && intensity[1] < dim_cut) {
    flicker = 3;
  } else if (d > 2 && intensity[2] < dim_cut) {
    flicker = 2;
  } else if (d > 3 && intensity[3] < dim_cut) {
    flicker = 1;
  }

  Tensor label = Tensor::zeros({5});
  label.data()[0] = (vx + kVelocityMax) / (2.0 * kVelocityMax);
  label.data()[1] = (vy + kVelocityMax) / (2.0 * kVelocityMax);
  label.data()[2] = (base - 0.5) * 2.0;
  label.data()[3] = static_cast<double>(ir) * 0.5;
  label.data()[4] = static_cast<double>(flicker) / 3.0;
  return label;
}

std::int64_t class_of_label(const Tensor& label, std::int64_t classes) {
  if (classes < 2) {
    throw ContractError("class binning needs at least 2 classes");
  }
  if (label.numel() < 1) {
    throw DimensionError("label tensor is empty");
  }
  return class_of_first(label.at(static_cast<std::int64_t>(0)), classes);
}

Dataset generate_dataset(std::int64_t n, std::uint64_t seed,
                         const GenerationSpec& spec) {
  validate_spec(spec);
  if (n < 2) {
    throw ContractError("dataset needs at least 2 samples for a split");
  }
  Dataset ds;
  ds.spec = spec;

  std::vector<std::int64_t> assigned(static_cast<std::size_t>(n), -1);
  if (spec.classes >= 2) {
    std::vector<double> weights = spec.class_weights;
    if (weights.empty()) {
      weights.assign(static_cast<std::size_t>(spec.classes), 1.0);
    }
    const double total = std::accumulate(weights.begin(), weights.end(), 0.0);
    // Largest-remainder allocation: exact integer histogram matching the
    // requested ratios as closely as possible.
    std::vector<std::int64_t> counts(weights.size());
    std::vector<std::pair<double, std::int64_t>> frac(weights.size());
    std::int64_t used = 0;
    for (std::size_t c = 0; c < weights.size(); ++c) {
      const double quota = static_cast<double>(n) * weights[c] / total;
      counts[c] = static_cast<std::int64_t>(std::floor(quota));
      frac[c] = {quota - std::floor(quota), static_cast<std::int64_t>(c)};
      used += counts[c];
    }
    std::sort(frac.begin(), frac.end(), [](const auto& a, const auto& b) {
      if (a.first != b.first) return a.first > b.first;
      return a.second < b.second;
    });
    for (std::int64_t k = 0; k < n - used; ++k) {
      ++counts[static_cast<std::size_t>(frac[static_cast<std::size_t>(k)].second)];
    }
    ds.class_counts = counts;

    std::size_t pos = 0;
    for (std::size_t c = 0; c < counts.size(); ++c) {
      for (std::int64_t k = 0; k < counts[c]; ++k) {
        assigned[pos++] = static_cast<std::int64_t>(c);
      }
    }
    RandomStream order(seed_for(seed, "class-order"));
    for (std::size_t i = assigned.size(); i > 1; --i) {
      std::swap(assigned[i - 1], assigned[order.uniform_index(i)]);
    }
  }

  ds.samples.reserve(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) {
    const std::uint64_t s = seed_for(seed, "sample-" + std::to_string(i));
    ds.samples.push_back(gen_impl(s, spec, assigned[static_cast<std::size_t>(i)]));
  }

  std::vector<std::int64_t> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  RandomStream split(seed_for(seed, "split"));
  for (std::size_t i = order.size(); i > 1; --i) {
    std::swap(order[i - 1], order[split.uniform_index(i)]);
  }
  const auto n_train = static_cast<std::int64_t>(
      std::floor(static_cast<double>(n) * spec.train_fraction + 1e-9));
  ds.train.assign(order.begin(), order.begin() + n_train);
  ds.val.assign(order.begin() + n_train, order.end());
  std::sort(ds.train.begin(), ds.train.end());
  std::sort(ds.val.begin(), ds.val.end());
  return ds;
}

std::vector<std::vector<std::int64_t>> balanced_batches(
    const Dataset& ds, std::int64_t batch_size, std::uint64_t seed) {
  if (ds.spec.classes < 2) {
    throw ContractError("balanced batching needs a classification dataset");
  }
  const std::int64_t k = ds.spec.classes;
  if (batch_size < k) {
    throw ConfigError("batch size " + std::to_string(batch_size) +
                      " cannot cover all " + std::to_string(k) + " classes");
  }
  std::vector<std::vector<std::int64_t>> by_class(static_cast<std::size_t>(k));
  for (std::int64_t idx : ds.train) {
    const std::int64_t c = ds.samples[static_cast<std::size_t>(idx)].class_index;
    if (c < 0 || c >= k) {
      throw DataError("train sample " + std::to_string(idx) +
                      " carries class index " + std::to_string(c));
    }
    by_class[static_cast<std::size_t>(c)].push_back(idx);
  }
  for (std::int64_t c = 0; c < k; ++c) {
    if (by_class[static_cast<std::size_t>(c)].empty()) {
      throw DataError("class " + std::to_string(c) +
                      " has no training samples to draw from");
    }
  }

  // Per-class cyclic queues: shuffle, drain, reshuffle on wrap. Rare classes
  // recur; frequent classes are subsampled within the epoch.
  std::vector<RandomStream> streams;
  streams.reserve(static_cast<std::size_t>(k));
  std::vector<std::size_t> pos(static_cast<std::size_t>(k), 0);
  for (std::int64_t c = 0; c < k; ++c) {
    streams.emplace_back(seed_for(seed, "class-" + std::to_string(c)));
    auto& q = by_class[static_cast<std::size_t>(c)];
    auto& rs = streams.back();
    for (std::size_t i = q.size(); i > 1; --i) {
      std::swap(q[i - 1], q[rs.uniform_index(i)]);
    }
  }
  auto draw = [&](std::int64_t c) {
    auto& q = by_class[static_cast<std::size_t>(c)];
    auto& p = pos[static_cast<std::size_t>(c)];
    if (p == q.size()) {
      auto& rs = streams[static_cast<std::size_t>(c)];
      for (std::size_t i = q.size(); i > 1; --i) {
        std::swap(q[i - 1], q[rs.uniform_index(i)]);
      }
      p = 0;
    }
    return q[p++];
  };

  const auto pool = static_cast<std::int64_t>(ds.train.size());
  const std::int64_t batch_count = (pool + batch_size - 1) / batch_size;
  const std::int64_t base = batch_size / k;
  const std::int64_t extra = batch_size % k;
  RandomStream mixer(seed_for(seed, "batch-order"));
  std::vector<std::vector<std::int64_t>> batches;
  batches.reserve(static_cast<std::size_t>(batch_count));
  for (std::int64_t b = 0; b < batch_count; ++b) {
    std::vector<std::int64_t> batch;
    batch.reserve(static_cast<std::size_t>(batch_size));
    for (std::int64_t c = 0; c < k; ++c) {
      // Rotate which classes absorb the remainder so no class is favored.
      const std::int64_t shifted = (c - b % k + k) % k;
      const std::int64_t quota = base + (shifted < extra ? 1 : 0);
      for (std::int64_t j = 0; j < quota; ++j) batch.push_back(draw(c));
    }
    for (std::size_t i = batch.size(); i > 1; --i) {
      std::swap(batch[i - 1], batch[mixer.uniform_index(i)]);
    }
    batches.push_back(std::move(batch));
  }
  return batches;
}

namespace {

void write_tensor_file(const Tensor& t, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write tensor file " + path);
  out.write("FATTEN1\0", 8);
  const auto rank = static_cast<std::uint64_t>(t.shape().size());
  out.write(reinterpret_cast<const char*>(&rank), sizeof(rank));
  for (std::int64_t dim : t.shape()) {
    const auto d = static_cast<std::uint64_t>(dim);
    out.write(reinterpret_cast<const char*>(&d), sizeof(d));
  }
  out.write(reinterpret_cast<const char*>(t.data().data()),
            static_cast<std::streamsize>(t.numel() * sizeof(double)));
  if (!out) throw DataError("failed while writing tensor file " + path);
}

Tensor read_tensor_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read tensor file " + path);
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, "FATTEN1\0", 8) != 0) {
    throw DataError("bad tensor file magic in " + path);
  }
  std::uint64_t rank = 0;
  in.read(reinterpret_cast<char*>(&rank), sizeof(rank));
  if (!in || rank > 8) throw DataError("bad tensor rank in " + path);
  Shape shape;
  for (std::uint64_t i = 0; i < rank; ++i) {
    std::uint64_t d = 0;
    in.read(reinterpret_cast<char*>(&d), sizeof(d));
    shape.push_back(static_cast<std::int64_t>(d));
  }
  Tensor t = Tensor::zeros(shape);
  in.read(reinterpret_cast<char*>(t.data().data()),
          static_cast<std::streamsize>(t.numel() * sizeof(double)));
  if (!in) throw DataError("truncated tensor file " + path);
  return t;
}

void write_csv_matrix(const Tensor& t, const std::string& path) {
  if (t.shape().size() != 2) {
    throw DimensionError("CSV export expects a rank-2 tensor, got " +
                         shape_str(t.shape()));
  }
  std::FILE* f = std::fopen(path.c_str(), "w");
  if (!f) throw DataError("cannot write " + path);
  const std::int64_t rows = t.shape()[0], cols = t.shape()[1];
  for (std::int64_t i = 0; i < rows; ++i) {
    for (std::int64_t j = 0; j < cols; ++j) {
      std::fprintf(f, j ? ",%.17g" : "%.17g", t.at(i * cols + j));
    }
    std::fprintf(f, "\n");
  }
  std::fclose(f);
}

Tensor read_csv_matrix(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read " + path);
  std::vector<double> values;
  std::int64_t rows = 0, cols = -1;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::int64_t c = 0;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
      values.push_back(std::strtod(cell.c_str(), nullptr));
      ++c;
    }
    if (cols < 0) cols = c;
    if (c != cols) throw DataError("ragged CSV rows in " + path);
    ++rows;
  }
  if (rows == 0 || cols <= 0) throw DataError("empty CSV file " + path);
  return Tensor::from_data({rows, cols}, std::move(values));
}

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string join_i64(const std::vector<std::int64_t>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ',';
    out += std::to_string(v[i]);
  }
  return out;
}

std::vector<std::int64_t> split_i64(const std::string& s) {
  std::vector<std::int64_t> out;
  std::stringstream ss(s);
  std::string cell;
  while (std::getline(ss, cell, ',')) {
    if (!cell.empty()) out.push_back(std::stoll(cell));
  }
  return out;
}

}  // namespace

void export_dataset(const Dataset& ds, const std::string& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  const GenerationSpec& sp = ds.spec;

  std::ofstream man(fs::path(dir) / "manifest.txt");
  if (!man) throw DataError("cannot write dataset manifest in " + dir);
  man << "count=" << ds.samples.size() << "\n";
  man << "channels=" << sp.channels << "\n";
  man << "frames=" << sp.frames << "\n";
  man << "height=" << sp.height << "\n";
  man << "width=" << sp.width << "\n";
  man << "audio_tokens=" << sp.audio_tokens << "\n";
  man << "audio_channels=" << sp.audio_channels << "\n";
  man << "transcript_tokens=" << sp.transcript_tokens << "\n";
  man << "transcript_channels=" << sp.transcript_channels << "\n";
  man << "noise_amplitude=" << fmt_double(sp.noise_amplitude) << "\n";
  man << "side_redundancy=" << fmt_double(sp.side_redundancy) << "\n";
  man << "train_fraction=" << fmt_double(sp.train_fraction) << "\n";
  man << "classes=" << sp.classes << "\n";
  if (!sp.class_weights.empty()) {
    man << "class_weights=";
    for (std::size_t i = 0; i < sp.class_weights.size(); ++i) {
      man << (i ? "," : "") << fmt_double(sp.class_weights[i]);
    }
    man << "\n";
  }
  man << "train=" << join_i64(ds.train) << "\n";
  man << "val=" << join_i64(ds.val) << "\n";
  if (!ds.class_counts.empty()) {
    man << "class_counts=" << join_i64(ds.class_counts) << "\n";
  }
  for (std::size_t i = 0; i < ds.samples.size(); ++i) {
    man << "sample." << i << ".seed=" << ds.samples[i].seed << "\n";
    man << "sample." << i << ".class=" << ds.samples[i].class_index << "\n";
  }
  man.close();
  if (!man) throw DataError("failed while writing dataset manifest in " + dir);

  for (std::size_t i = 0; i < ds.samples.size(); ++i) {
    const SyntheticSample& s = ds.samples[i];
    const fs::path sub = fs::path(dir) / ("sample_" + std::to_string(i));
    fs::create_directories(sub);
    write_tensor_file(s.face_video, (sub / "face.tensor").string());
    write_tensor_file(s.fullframe_video, (sub / "fullframe.tensor").string());
    save_segmap_pgm(s.seg_map, (sub / "seg.pgm").string());
    write_csv_matrix(s.audio_tokens, (sub / "audio.csv").string());
    write_csv_matrix(s.transcript_tokens, (sub / "transcript.csv").string());
    write_csv_matrix(Tensor::from_data({1, 5}, s.label.data()),
                     (sub / "label.csv").string());
  }
}

Dataset load_dataset(const std::string& dir) {
  namespace fs = std::filesystem;
  std::ifstream man(fs::path(dir) / "manifest.txt");
  if (!man) throw DataError("no dataset manifest found in " + dir);
  std::map<std::string, std::string> kv;
  std::string line;
  while (std::getline(man, line)) {
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw DataError("malformed manifest line: " + line);
    }
    kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  auto need = [&](const std::string& key) -> const std::string& {
    auto it = kv.find(key);
    if (it == kv.end()) throw DataError("manifest misses key " + key);
    return it->second;
  };

  Dataset ds;
  GenerationSpec sp;
  sp.channels = std::stoll(need("channels"));
  sp.frames = std::stoll(need("frames"));
  sp.height = std::stoll(need("height"));
  sp.width = std::stoll(need("width"));
  sp.audio_tokens = std::stoll(need("audio_tokens"));
  sp.audio_channels = std::stoll(need("audio_channels"));
  sp.transcript_tokens = std::stoll(need("transcript_tokens"));
  sp.transcript_channels = std::stoll(need("transcript_channels"));
  sp.noise_amplitude = std::strtod(need("noise_amplitude").c_str(), nullptr);
  sp.side_redundancy = std::strtod(need("side_redundancy").c_str(), nullptr);
  sp.train_fraction = std::strtod(need("train_fraction").c_str(), nullptr);
  sp.classes = std::stoll(need("classes"));
  if (kv.count("class_weights")) {
    std::stringstream ss(kv["class_weights"]);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
      sp.class_weights.push_back(std::strtod(cell.c_str(), nullptr));
    }
  }
  ds.spec = sp;
  ds.train = split_i64(need("train"));
  ds.val = split_i64(need("val"));
  if (kv.count("class_counts")) ds.class_counts = split_i64(kv["class_counts"]);

  const auto count = std::stoll(need("count"));
  ds.samples.reserve(static_cast<std::size_t>(count));
  for (std::int64_t i = 0; i < count; ++i) {
    const fs::path sub = fs::path(dir) / ("sample_" + std::to_string(i));
    SyntheticSample s;
    s.face_video = read_tensor_file((sub / "face.tensor").string());
    s.fullframe_video = read_tensor_file((sub / "fullframe.tensor").string());
    s.seg_map = load_segmap_pgm((sub / "seg.pgm").string());
    s.audio_tokens = read_csv_matrix((sub / "audio.csv").string());
    s.transcript_tokens = read_csv_matrix((sub / "transcript.csv").string());
    Tensor lab = read_csv_matrix((sub / "label.csv").string());
    if (lab.numel() != 5) throw DataError("label file must hold 5 values");
    s.label = Tensor::from_data({5}, lab.data());
    const std::string pre = "sample." + std::to_string(i);
    s.seed = std::stoull(need(pre + ".seed"));
    s.class_index = std::stoll(need(pre + ".class"));
    ds.samples.push_back(std::move(s));
  }
  return ds;
}

}  // namespace fat
