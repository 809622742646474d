// SPDX-License-Identifier: Apache-2.0
// Reference implementations used to validate the library: straightforward
// nested loops, no shared code with the production paths.
#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

namespace oracle {

// (m,k) x (k,n) row-major triple loop.
inline std::vector<double> matmul(const std::vector<double>& a,
                                  const std::vector<double>& b, std::int64_t m,
                                  std::int64_t k, std::int64_t n) {
  std::vector<double> c(static_cast<size_t>(m * n), 0.0);
  for (std::int64_t i = 0; i < m; ++i) {
    for (std::int64_t j = 0; j < n; ++j) {
      double acc = 0.0;
      for (std::int64_t t = 0; t < k; ++t) acc += a[i * k + t] * b[t * n + j];
      c[i * n + j] = acc;
    }
  }
  return c;
}

// Stable softmax of one row in extended precision.
inline std::vector<double> softmax_row(const std::vector<double>& row) {
  long double mx = row[0];
  for (double v : row) mx = std::max<long double>(mx, v);
  long double denom = 0.0L;
  std::vector<long double> e(row.size());
  for (size_t i = 0; i < row.size(); ++i) {
    e[i] = std::exp(static_cast<long double>(row[i]) - mx);
    denom += e[i];
  }
  std::vector<double> out(row.size());
  for (size_t i = 0; i < row.size(); ++i) out[i] = static_cast<double>(e[i] / denom);
  return out;
}

struct ConvDims {
  std::int64_t B, C, D, H, W;
};

inline std::int64_t same_out(std::int64_t in, std::int64_t stride) {
  return (in + stride - 1) / stride;
}

inline std::int64_t same_lo(std::int64_t in, std::int64_t k, std::int64_t stride) {
  const std::int64_t out = same_out(in, stride);
  const std::int64_t total = std::max<std::int64_t>((out - 1) * stride + k - in, 0);
  return total / 2;
}

// Direct 1xkxk convolution with zero "same" padding, no tricks.
inline std::vector<double> conv_spatial(const std::vector<double>& x, ConvDims d,
                                        const std::vector<double>& w,
                                        const std::vector<double>& bias, std::int64_t M,
                                        std::int64_t kh, std::int64_t kw, int sh, int sw) {
  const std::int64_t Ho = same_out(d.H, sh), Wo = same_out(d.W, sw);
  const std::int64_t plo_h = same_lo(d.H, kh, sh), plo_w = same_lo(d.W, kw, sw);
  std::vector<double> y(static_cast<size_t>(d.B * M * d.D * Ho * Wo), 0.0);
  for (std::int64_t b = 0; b < d.B; ++b)
    for (std::int64_t m = 0; m < M; ++m)
      for (std::int64_t dd = 0; dd < d.D; ++dd)
        for (std::int64_t ho = 0; ho < Ho; ++ho)
          for (std::int64_t wo = 0; wo < Wo; ++wo) {
            double acc = bias.empty() ? 0.0 : bias[m];
            for (std::int64_t c = 0; c < d.C; ++c)
              for (std::int64_t i = 0; i < kh; ++i)
                for (std::int64_t j = 0; j < kw; ++j) {
                  const std::int64_t hi = ho * sh + i - plo_h;
                  const std::int64_t wi = wo * sw + j - plo_w;
                  if (hi < 0 || hi >= d.H || wi < 0 || wi >= d.W) continue;
                  acc += w[((m * d.C + c) * kh + i) * kw + j] *
                         x[(((b * d.C + c) * d.D + dd) * d.H + hi) * d.W + wi];
                }
            y[(((b * M + m) * d.D + dd) * Ho + ho) * Wo + wo] = acc;
          }
  return y;
}

// Direct kx1x1 temporal convolution with zero "same" padding.
inline std::vector<double> conv_temporal(const std::vector<double>& x, ConvDims d,
                                         const std::vector<double>& w,
                                         const std::vector<double>& bias, std::int64_t O,
                                         std::int64_t kt, int sd) {
  const std::int64_t Do = same_out(d.D, sd);
  const std::int64_t plo = same_lo(d.D, kt, sd);
  std::vector<double> y(static_cast<size_t>(d.B * O * Do * d.H * d.W), 0.0);
  for (std::int64_t b = 0; b < d.B; ++b)
    for (std::int64_t o = 0; o < O; ++o)
      for (std::int64_t dd = 0; dd < Do; ++dd)
        for (std::int64_t h = 0; h < d.H; ++h)
          for (std::int64_t ww = 0; ww < d.W; ++ww) {
            double acc = bias.empty() ? 0.0 : bias[o];
            for (std::int64_t c = 0; c < d.C; ++c)
              for (std::int64_t t = 0; t < kt; ++t) {
                const std::int64_t di = dd * sd + t - plo;
                if (di < 0 || di >= d.D) continue;
                acc += w[(o * d.C + c) * kt + t] *
                       x[(((b * d.C + c) * d.D + di) * d.H + h) * d.W + ww];
              }
            y[(((b * O + o) * Do + dd) * d.H + h) * d.W + ww] = acc;
          }
  return y;
}

inline double gelu_exact(double v) {
  return 0.5 * v * (1.0 + std::erf(v / std::sqrt(2.0)));
}

}  // namespace oracle
