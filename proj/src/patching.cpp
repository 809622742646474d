// SPDX-License-Identifier: Apache-2.0
#include "fat/patching.hpp"

#include <cctype>
#include <fstream>
#include <sstream>

#include "fat/error.hpp"
#include "fat/ops.hpp"

namespace fat {

PatchGrid partition_patches(const Tensor& x, std::int64_t p) {
  if (x.rank() != 4) throw DimensionError("partition_patches wants C x D x H x W");
  const auto& s = x.shape();
  const std::int64_t H = s[2], W = s[3];
  if (p <= 0 || H % p != 0 || W % p != 0) {
    throw DimensionError("extents " + std::to_string(H) + "x" + std::to_string(W) +
                         " not divisible by patch size " + std::to_string(p) +
                         "; resize input to a multiple of " + std::to_string(p));
  }
  PatchGrid g;
  g.rows = H / p;
  g.cols = W / p;
  g.patch_size = p;
  g.source_shape = s;
  g.patches.reserve(static_cast<size_t>(g.rows * g.cols));
  for (std::int64_t r = 0; r < g.rows; ++r) {
    for (std::int64_t c = 0; c < g.cols; ++c) {
      Tensor rows = slice(x, 2, r * p, p);
      g.patches.push_back(slice(rows, 3, c * p, p));
    }
  }
  return g;
}

Tensor merge_patches(const PatchGrid& g) {
  if (g.patches.empty()) throw ContractError("merge_patches on empty grid");
  if (static_cast<std::int64_t>(g.patches.size()) != g.rows * g.cols) {
    throw ContractError("merge_patches: grid holds " + std::to_string(g.patches.size()) +
                        " patches, expected " + std::to_string(g.rows * g.cols));
  }
  const Shape ps = g.patches[0].shape();
  for (const auto& t : g.patches) {
    if (!t.defined()) throw ContractError("merge_patches: missing patch");
    if (t.shape() != ps) throw ContractError("merge_patches: heterogeneous patches");
  }
  std::vector<Tensor> rows;
  rows.reserve(static_cast<size_t>(g.rows));
  for (std::int64_t r = 0; r < g.rows; ++r) {
    std::vector<Tensor> band(g.patches.begin() + r * g.cols,
                             g.patches.begin() + (r + 1) * g.cols);
    rows.push_back(concat(band, 3));
  }
  return concat(rows, 2);
}

namespace {

void check_binary(const Tensor& seg) {
  for (double v : seg.data()) {
    if (v != 0.0 && v != 1.0) {
      throw ContractError("segmentation map must contain exactly 0/1 values");
    }
  }
}

}  // namespace

SegPatchMatrix patchify_segmap(const Tensor& seg, const ChunkLayout& layout,
                               std::int64_t e) {
  if (seg.rank() != 2 && seg.rank() != 3) {
    throw DimensionError("segmentation map must be (H,W) or (D,H,W)");
  }
  check_binary(seg);
  const bool per_frame = seg.rank() == 3;
  const std::int64_t Dm = per_frame ? seg.dim(0) : 1;
  const std::int64_t H = seg.dim(per_frame ? 1 : 0);
  const std::int64_t W = seg.dim(per_frame ? 2 : 1);
  const std::int64_t gd = layout.grid_d, gh = layout.grid_h, gw = layout.grid_w;
  if (gd <= 0 || gh <= 0 || gw <= 0 || H % gh != 0 || W % gw != 0 ||
      (per_frame && Dm % gd != 0)) {
    throw DimensionError("chunk grid does not tile the segmentation map");
  }
  if (e <= 0) throw ContractError("embedding width must be positive");
  const std::int64_t ch = H / gh, cw = W / gw;
  const std::int64_t cd = per_frame ? Dm / gd : 1;
  SegPatchMatrix m;
  m.nc = gd * gh * gw;
  m.e = e;
  m.grid_d = gd;
  m.grid_h = gh;
  m.grid_w = gw;
  std::vector<double> rows(static_cast<size_t>(m.nc * e), 0.0);
  const auto& sd = seg.data();
  for (std::int64_t d = 0; d < gd; ++d) {
    for (std::int64_t h = 0; h < gh; ++h) {
      for (std::int64_t w = 0; w < gw; ++w) {
        std::int64_t fg = 0;
        const std::int64_t frames = per_frame ? cd : 1;
        for (std::int64_t fd = 0; fd < frames; ++fd) {
          const std::int64_t dd = per_frame ? d * cd + fd : 0;
          for (std::int64_t i = 0; i < ch; ++i) {
            for (std::int64_t j = 0; j < cw; ++j) {
              fg += sd[(dd * H + h * ch + i) * W + w * cw + j] != 0.0 ? 1 : 0;
            }
          }
        }
        const std::int64_t total = frames * ch * cw;
        const bool on = layout.min_fraction <= 0.0
                            ? fg > 0
                            : static_cast<double>(fg) >
                                  layout.min_fraction * static_cast<double>(total);
        if (on) {
          const std::int64_t row = (d * gh + h) * gw + w;
          for (std::int64_t k = 0; k < e; ++k) rows[row * e + k] = 1.0;
        }
      }
    }
  }
  m.m1 = Tensor::from_data({m.nc, e}, std::move(rows));
  return m;
}

std::vector<double> sample_m1(const SegPatchMatrix& m, std::int64_t chunk_index) {
  if (chunk_index < 0 || chunk_index >= m.nc) {
    throw BoundsError("chunk index " + std::to_string(chunk_index) +
                      " outside [0, " + std::to_string(m.nc) + ")");
  }
  const auto& d = m.m1.data();
  return std::vector<double>(d.begin() + chunk_index * m.e,
                             d.begin() + (chunk_index + 1) * m.e);
}

SegPatchMatrix rescale_m1(const SegPatchMatrix& m, std::int64_t new_nc,
                          std::int64_t new_e) {
  if (new_e <= 0) throw ContractError("embedding width must be positive");
  // Find merge factors (fd, fh, fw) that divide the grid and hit new_nc.
  // Spatial-only isotropic merges (1, f, f) — the patch-merging pattern —
  // win over any other factorization; otherwise the first match is taken.
  std::int64_t fd = 0, fh = 0, fw = 0;
  for (std::int64_t cd = 1; cd <= m.grid_d; ++cd) {
    if (m.grid_d % cd != 0) continue;
    for (std::int64_t chh = 1; chh <= m.grid_h; ++chh) {
      if (m.grid_h % chh != 0) continue;
      for (std::int64_t cww = 1; cww <= m.grid_w; ++cww) {
        if (m.grid_w % cww != 0) continue;
        if ((m.grid_d / cd) * (m.grid_h / chh) * (m.grid_w / cww) != new_nc) continue;
        const bool isotropic_spatial = cd == 1 && chh == cww;
        if (fd == 0 || (isotropic_spatial && !(fd == 1 && fh == fw))) {
          fd = cd;
          fh = chh;
          fw = cww;
        }
      }
    }
  }
  if (fd == 0) {
    throw ContractError("cannot merge " + std::to_string(m.nc) + " chunks into " +
                        std::to_string(new_nc) + ": not a nested tiling");
  }
  SegPatchMatrix out;
  out.nc = new_nc;
  out.e = new_e;
  out.grid_d = m.grid_d / fd;
  out.grid_h = m.grid_h / fh;
  out.grid_w = m.grid_w / fw;
  std::vector<double> rows(static_cast<size_t>(new_nc * new_e), 0.0);
  const auto& src = m.m1.data();
  for (std::int64_t d = 0; d < out.grid_d; ++d) {
    for (std::int64_t h = 0; h < out.grid_h; ++h) {
      for (std::int64_t w = 0; w < out.grid_w; ++w) {
        bool on = false;
        for (std::int64_t a = 0; a < fd && !on; ++a) {
          for (std::int64_t b = 0; b < fh && !on; ++b) {
            for (std::int64_t c = 0; c < fw && !on; ++c) {
              const std::int64_t row =
                  ((d * fd + a) * m.grid_h + h * fh + b) * m.grid_w + w * fw + c;
              on = src[row * m.e] != 0.0;
            }
          }
        }
        if (on) {
          const std::int64_t row = (d * out.grid_h + h) * out.grid_w + w;
          for (std::int64_t k = 0; k < new_e; ++k) rows[row * new_e + k] = 1.0;
        }
      }
    }
  }
  out.m1 = Tensor::from_data({new_nc, new_e}, std::move(rows));
  return out;
}

Tensor m1_flag_grid(const SegPatchMatrix& m) {
  std::vector<double> flags(static_cast<size_t>(m.nc));
  const auto& src = m.m1.data();
  for (std::int64_t i = 0; i < m.nc; ++i) flags[i] = src[i * m.e];
  return Tensor::from_data({1, m.grid_d, m.grid_h, m.grid_w, 1}, std::move(flags));
}

Tensor expand_flag_grid(const Tensor& flags, std::int64_t td, std::int64_t th,
                        std::int64_t tw) {
  if (flags.rank() != 5 || flags.dim(4) != 1)
    throw DimensionError("expand_flag_grid wants a (N, d, h, w, 1) grid, got " +
                         shape_str(flags.shape()));
  const std::int64_t n = flags.dim(0), d = flags.dim(1), h = flags.dim(2),
                     w = flags.dim(3);
  if (td % d != 0 || th % h != 0 || tw % w != 0)
    throw DimensionError("token grid " + std::to_string(td) + "x" +
                         std::to_string(th) + "x" + std::to_string(tw) +
                         " is not a whole multiple of the chunk grid " +
                         shape_str(flags.shape()));
  const std::int64_t fd = td / d, fh = th / h, fw = tw / w;
  std::vector<double> out(static_cast<size_t>(n * td * th * tw));
  const auto& src = flags.data();
  size_t k = 0;
  for (std::int64_t b = 0; b < n; ++b)
    for (std::int64_t z = 0; z < td; ++z)
      for (std::int64_t y = 0; y < th; ++y)
        for (std::int64_t x = 0; x < tw; ++x)
          out[k++] = src[((b * d + z / fd) * h + y / fh) * w + x / fw];
  return Tensor::from_data({n, td, th, tw, 1}, std::move(out));
}

namespace {

int pnm_next_int(std::istream& in) {
  // Skips whitespace and '#' comments per the PNM grammar.
  while (true) {
    int c = in.peek();
    if (c == '#') {
      std::string line;
      std::getline(in, line);
    } else if (std::isspace(c)) {
      in.get();
    } else {
      break;
    }
  }
  int v = 0;
  if (!(in >> v)) throw DataError("malformed graymap header");
  return v;
}

}  // namespace

Tensor load_segmap_pgm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open graymap: " + path);
  std::string magic;
  in >> magic;
  if (magic != "P2" && magic != "P5") {
    throw DataError("unsupported graymap magic '" + magic + "' in " + path);
  }
  const int w = pnm_next_int(in);
  const int h = pnm_next_int(in);
  const int maxval = pnm_next_int(in);
  if (w <= 0 || h <= 0 || maxval <= 0 || maxval > 65535) {
    throw DataError("bad graymap dimensions in " + path);
  }
  std::vector<double> vals(static_cast<size_t>(w) * h);
  const double thresh = 0.5 * maxval;
  if (magic == "P2") {
    for (auto& v : vals) {
      int p = 0;
      if (!(in >> p)) throw DataError("truncated P2 data in " + path);
      v = p > thresh ? 1.0 : 0.0;
    }
  } else {
    in.get();  // single whitespace after maxval
    const int bytes = maxval > 255 ? 2 : 1;
    for (auto& v : vals) {
      int p = 0;
      for (int b = 0; b < bytes; ++b) {
        const int c = in.get();
        if (c == EOF) throw DataError("truncated P5 data in " + path);
        p = (p << 8) | c;
      }
      v = p > thresh ? 1.0 : 0.0;
    }
  }
  return Tensor::from_data({h, w}, std::move(vals));
}

Tensor load_segmap_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open CSV: " + path);
  std::vector<double> vals;
  std::int64_t w = -1, h = 0;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    std::int64_t n = 0;
    while (std::getline(ss, cell, ',')) {
      const double v = std::stod(cell);
      if (v != 0.0 && v != 1.0) {
        throw DataError("CSV segmentation values must be 0 or 1: " + path);
      }
      vals.push_back(v);
      ++n;
    }
    if (w < 0) w = n;
    if (n != w) throw DataError("ragged CSV rows in " + path);
    ++h;
  }
  if (h == 0 || w <= 0) throw DataError("empty CSV map: " + path);
  return Tensor::from_data({h, w}, std::move(vals));
}

void save_segmap_pgm(const Tensor& seg, const std::string& path) {
  if (seg.rank() != 2) throw DimensionError("save_segmap_pgm wants (H, W)");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write graymap: " + path);
  out << "P5\n" << seg.dim(1) << " " << seg.dim(0) << "\n255\n";
  for (double v : seg.data()) out.put(v != 0.0 ? char(255) : char(0));
}

}  // namespace fat
