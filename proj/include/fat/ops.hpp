// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <vector>

#include "fat/tensor.hpp"

namespace fat {

// Elementwise with NumPy-style broadcasting.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);

Tensor neg(const Tensor& x);
Tensor scale(const Tensor& x, double c);
Tensor add_scalar(const Tensor& x, double c);
Tensor exp(const Tensor& x);
Tensor log(const Tensor& x);
Tensor gelu(const Tensor& x);

// Matrix product over the trailing two dims; leading dims broadcast.
// Ranks 2 to 4.
Tensor matmul(const Tensor& a, const Tensor& b);

// Affine map on the last axis: y = x * W^T + b. W is (out, in); b optional.
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);

Tensor softmax(const Tensor& x, int axis);

// Normalization over the last axis. gamma/beta have that axis's extent.
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  double eps = 1e-5);

Tensor reshape(const Tensor& x, Shape shape);
Tensor transpose(const Tensor& x, const std::vector<int>& perm);
Tensor slice(const Tensor& x, int axis, std::int64_t start, std::int64_t length);
Tensor concat(const std::vector<Tensor>& parts, int axis);

Tensor reduce_sum(const Tensor& x, std::vector<int> axes, bool keepdim);
Tensor reduce_mean(const Tensor& x, std::vector<int> axes, bool keepdim);
Tensor sum_all(const Tensor& x);
Tensor mean_all(const Tensor& x);

// Spatial 1xkxk convolution over (B,C,D,H,W), zero "same" padding.
Tensor conv_spatial2d(const Tensor& x, const Tensor& weight, const Tensor& bias,
                      int stride_h, int stride_w);
// Temporal kx1x1 convolution over (B,C,D,H,W), zero "same" padding.
Tensor conv_temporal(const Tensor& x, const Tensor& weight, const Tensor& bias,
                     int stride_d);

struct Conv2Plus1dParams {
  Tensor spatial_weight;   // (mid, in, k, k)
  Tensor spatial_bias;     // (mid)
  Tensor temporal_weight;  // (out, mid, k)
  Tensor temporal_bias;    // (out)
  int stride_h = 1;
  int stride_w = 1;
  int stride_d = 1;
  bool nonlinearity = true;
};

// Factorized (2+1)D convolution: spatial stage then temporal stage, each
// with bias and (optionally) a smooth nonlinearity.
Tensor conv_2plus1d(const Tensor& x, const Conv2Plus1dParams& p);

// (B,C,D,H,W) -> (B,C,1,1,1), mean over D*H*W.
Tensor adaptive_avg_pool3d(const Tensor& x);

// Stochastic depth gate over the batch axis. Training: zero a sample's
// branch with probability p and scale survivors by 1/(1-p); eval: identity.
Tensor drop_path(const Tensor& x, double p, bool training, RandomStream* rng);

// out(h, i, j) = table(h, index[i*T+j]); table is (heads, table_size).
Tensor rel_pos_lookup(const Tensor& table, const std::vector<std::int64_t>& index,
                      std::int64_t tokens);

// Cyclic shift of the D,H,W axes of a (B,D,H,W,E) tensor.
Tensor roll3d(const Tensor& x, std::int64_t sd, std::int64_t sh, std::int64_t sw);

Tensor mse_loss(const Tensor& pred, const Tensor& target);
// logits (B,k); stable log-softmax cross entropy, mean over the batch.
Tensor cross_entropy(const Tensor& logits, const std::vector<std::int64_t>& labels);

}  // namespace fat
