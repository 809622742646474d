// SPDX-License-Identifier: Apache-2.0
#include "fat/ops.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>
#include <utility>

namespace fat {
namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapRM = Eigen::Map<RowMat>;
using CMapRM = Eigen::Map<const RowMat>;

int norm_axis(int axis, int rank) {
  int a = axis < 0 ? axis + rank : axis;
  if (a < 0 || a >= rank) {
    throw ContractError("axis " + std::to_string(axis) + " out of range for rank " +
                        std::to_string(rank));
  }
  return a;
}

// Per-output-axis element strides into a broadcast operand (0 where the
// operand's extent is 1).
struct BroadcastPlan {
  Shape out;
  std::vector<std::int64_t> a_stride;
  std::vector<std::int64_t> b_stride;
  std::int64_t n = 0;
};

BroadcastPlan plan_broadcast(const Shape& a, const Shape& b) {
  BroadcastPlan p;
  p.out = detail::broadcast_shapes(a, b);
  const int r = static_cast<int>(p.out.size());
  p.a_stride.assign(r, 0);
  p.b_stride.assign(r, 0);
  const auto as = detail::strides_of(a);
  const auto bs = detail::strides_of(b);
  const int ra = static_cast<int>(a.size());
  const int rb = static_cast<int>(b.size());
  for (int i = 0; i < r; ++i) {
    const int ia = i - (r - ra);
    const int ib = i - (r - rb);
    if (ia >= 0 && a[ia] != 1) p.a_stride[i] = as[ia];
    if (ib >= 0 && b[ib] != 1) p.b_stride[i] = bs[ib];
  }
  p.n = shape_numel(p.out);
  return p;
}

// Walks every output element of a broadcast op, handing the callback the
// flat output index and the two operand offsets.
template <class F>
void for_each_broadcast(const BroadcastPlan& p, F&& f) {
  const int r = static_cast<int>(p.out.size());
  if (r == 0) {
    f(0, 0, 0);
    return;
  }
  std::vector<std::int64_t> idx(r, 0);
  std::int64_t ao = 0, bo = 0;
  for (std::int64_t i = 0; i < p.n; ++i) {
    f(i, ao, bo);
    for (int ax = r - 1; ax >= 0; --ax) {
      ++idx[ax];
      ao += p.a_stride[ax];
      bo += p.b_stride[ax];
      if (idx[ax] < p.out[ax]) break;
      ao -= p.a_stride[ax] * p.out[ax];
      bo -= p.b_stride[ax] * p.out[ax];
      idx[ax] = 0;
    }
  }
}

enum class BinOp { Add, Sub, Mul, Div };

Tensor binary_op(const Tensor& a, const Tensor& b, BinOp op) {
  const BroadcastPlan plan = plan_broadcast(a.shape(), b.shape());
  std::vector<double> out(static_cast<size_t>(plan.n));
  const auto& ad = a.data();
  const auto& bd = b.data();
  const bool same = a.shape() == b.shape();
  if (same) {
    switch (op) {
      case BinOp::Add:
        for (std::int64_t i = 0; i < plan.n; ++i) out[i] = ad[i] + bd[i];
        break;
      case BinOp::Sub:
        for (std::int64_t i = 0; i < plan.n; ++i) out[i] = ad[i] - bd[i];
        break;
      case BinOp::Mul:
        for (std::int64_t i = 0; i < plan.n; ++i) out[i] = ad[i] * bd[i];
        break;
      case BinOp::Div:
        for (std::int64_t i = 0; i < plan.n; ++i) out[i] = ad[i] / bd[i];
        break;
    }
  } else {
    for_each_broadcast(plan, [&](std::int64_t i, std::int64_t ao, std::int64_t bo) {
      switch (op) {
        case BinOp::Add: out[i] = ad[ao] + bd[bo]; break;
        case BinOp::Sub: out[i] = ad[ao] - bd[bo]; break;
        case BinOp::Mul: out[i] = ad[ao] * bd[bo]; break;
        case BinOp::Div: out[i] = ad[ao] / bd[bo]; break;
      }
    });
  }
  return Tensor::make(plan.out, std::move(out), {a, b},
                      [plan, op, same](detail::TensorNode& n) {
    auto& pa = *n.parents[0];
    auto& pb = *n.parents[1];
    const auto& dz = n.grad;
    if (same) {
      const std::int64_t m = plan.n;
      switch (op) {
        case BinOp::Add:
          if (pa.needs_grad) for (std::int64_t i = 0; i < m; ++i) pa.grad[i] += dz[i];
          if (pb.needs_grad) for (std::int64_t i = 0; i < m; ++i) pb.grad[i] += dz[i];
          break;
        case BinOp::Sub:
          if (pa.needs_grad) for (std::int64_t i = 0; i < m; ++i) pa.grad[i] += dz[i];
          if (pb.needs_grad) for (std::int64_t i = 0; i < m; ++i) pb.grad[i] -= dz[i];
          break;
        case BinOp::Mul:
          if (pa.needs_grad)
            for (std::int64_t i = 0; i < m; ++i) pa.grad[i] += dz[i] * pb.data[i];
          if (pb.needs_grad)
            for (std::int64_t i = 0; i < m; ++i) pb.grad[i] += dz[i] * pa.data[i];
          break;
        case BinOp::Div:
          if (pa.needs_grad)
            for (std::int64_t i = 0; i < m; ++i) pa.grad[i] += dz[i] / pb.data[i];
          if (pb.needs_grad)
            for (std::int64_t i = 0; i < m; ++i)
              pb.grad[i] -= dz[i] * pa.data[i] / (pb.data[i] * pb.data[i]);
          break;
      }
      return;
    }
    for_each_broadcast(plan, [&](std::int64_t i, std::int64_t ao, std::int64_t bo) {
      switch (op) {
        case BinOp::Add:
          if (pa.needs_grad) pa.grad[ao] += dz[i];
          if (pb.needs_grad) pb.grad[bo] += dz[i];
          break;
        case BinOp::Sub:
          if (pa.needs_grad) pa.grad[ao] += dz[i];
          if (pb.needs_grad) pb.grad[bo] -= dz[i];
          break;
        case BinOp::Mul:
          if (pa.needs_grad) pa.grad[ao] += dz[i] * pb.data[bo];
          if (pb.needs_grad) pb.grad[bo] += dz[i] * pa.data[ao];
          break;
        case BinOp::Div:
          if (pa.needs_grad) pa.grad[ao] += dz[i] / pb.data[bo];
          if (pb.needs_grad)
            pb.grad[bo] -= dz[i] * pa.data[ao] / (pb.data[bo] * pb.data[bo]);
          break;
      }
    });
  });
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) { return binary_op(a, b, BinOp::Add); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary_op(a, b, BinOp::Sub); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary_op(a, b, BinOp::Mul); }
Tensor div(const Tensor& a, const Tensor& b) { return binary_op(a, b, BinOp::Div); }

Tensor neg(const Tensor& x) { return scale(x, -1.0); }

Tensor scale(const Tensor& x, double c) {
  const auto& xd = x.data();
  std::vector<double> out(xd.size());
  for (size_t i = 0; i < xd.size(); ++i) out[i] = xd[i] * c;
  return Tensor::make(x.shape(), std::move(out), {x}, [c](detail::TensorNode& n) {
    auto& p = *n.parents[0];
    if (!p.needs_grad) return;
    for (size_t i = 0; i < n.grad.size(); ++i) p.grad[i] += n.grad[i] * c;
  });
}

Tensor add_scalar(const Tensor& x, double c) {
  const auto& xd = x.data();
  std::vector<double> out(xd.size());
  for (size_t i = 0; i < xd.size(); ++i) out[i] = xd[i] + c;
  return Tensor::make(x.shape(), std::move(out), {x}, [](detail::TensorNode& n) {
    auto& p = *n.parents[0];
    if (!p.needs_grad) return;
    for (size_t i = 0; i < n.grad.size(); ++i) p.grad[i] += n.grad[i];
  });
}

Tensor exp(const Tensor& x) {
  const auto& xd = x.data();
  std::vector<double> out(xd.size());
  for (size_t i = 0; i < xd.size(); ++i) out[i] = std::exp(xd[i]);
  return Tensor::make(x.shape(), std::move(out), {x}, [](detail::TensorNode& n) {
    auto& p = *n.parents[0];
    if (!p.needs_grad) return;
    for (size_t i = 0; i < n.grad.size(); ++i) p.grad[i] += n.grad[i] * n.data[i];
  });
}

Tensor log(const Tensor& x) {
  const auto& xd = x.data();
  std::vector<double> out(xd.size());
  for (size_t i = 0; i < xd.size(); ++i) out[i] = std::log(xd[i]);
  return Tensor::make(x.shape(), std::move(out), {x}, [](detail::TensorNode& n) {
    auto& p = *n.parents[0];
    if (!p.needs_grad) return;
    for (size_t i = 0; i < n.grad.size(); ++i) p.grad[i] += n.grad[i] / p.data[i];
  });
}

Tensor gelu(const Tensor& x) {
  static const double kInvSqrt2 = 1.0 / std::sqrt(2.0);
  static const double kInvSqrt2Pi = 1.0 / std::sqrt(8.0 * std::atan(1.0));
  const auto& xd = x.data();
  std::vector<double> out(xd.size());
  for (size_t i = 0; i < xd.size(); ++i) {
    out[i] = 0.5 * xd[i] * (1.0 + std::erf(xd[i] * kInvSqrt2));
  }
  return Tensor::make(x.shape(), std::move(out), {x}, [](detail::TensorNode& n) {
    auto& p = *n.parents[0];
    if (!p.needs_grad) return;
    for (size_t i = 0; i < n.grad.size(); ++i) {
      const double v = p.data[i];
      const double cdf = 0.5 * (1.0 + std::erf(v * kInvSqrt2));
      const double pdf = std::exp(-0.5 * v * v) * kInvSqrt2Pi;
      p.grad[i] += n.grad[i] * (cdf + v * pdf);
    }
  });
}

namespace {

// Batch bookkeeping for matmul with broadcast leading dims.
struct MatmulPlan {
  std::int64_t batches = 1;
  std::int64_t m = 0, k = 0, n = 0;
  // Element offset of each batch's matrix inside a and b.
  std::vector<std::int64_t> a_off;
  std::vector<std::int64_t> b_off;
  Shape out;
};

MatmulPlan plan_matmul(const Shape& a, const Shape& b) {
  if (a.size() < 2 || b.size() < 2 || a.size() > 4 || b.size() > 4) {
    throw DimensionError("matmul supports ranks 2..4, got " + shape_str(a) + " and " +
                         shape_str(b));
  }
  MatmulPlan p;
  p.m = a[a.size() - 2];
  p.k = a[a.size() - 1];
  p.n = b[b.size() - 1];
  if (b[b.size() - 2] != p.k) {
    throw DimensionError("matmul inner dims differ: " + shape_str(a) + " vs " +
                         shape_str(b));
  }
  const int r = static_cast<int>(std::max(a.size(), b.size()));
  Shape la(a.begin(), a.end() - 2), lb(b.begin(), b.end() - 2);
  Shape pla(r - 2, 1), plb(r - 2, 1);
  std::copy(la.begin(), la.end(), pla.end() - la.size());
  std::copy(lb.begin(), lb.end(), plb.end() - lb.size());
  Shape lead = detail::broadcast_shapes(pla, plb);
  p.out = lead;
  p.out.push_back(p.m);
  p.out.push_back(p.n);
  p.batches = shape_numel(lead);
  p.a_off.resize(p.batches);
  p.b_off.resize(p.batches);
  // Strides of each operand's lead dims in units of elements.
  std::vector<std::int64_t> sa(r - 2, 0), sb(r - 2, 0);
  std::int64_t acc = p.m * p.k;
  for (int i = r - 3; i >= 0; --i) {
    if (pla[i] != 1) {
      sa[i] = acc;
      acc *= pla[i];
    }
  }
  acc = p.k * p.n;
  for (int i = r - 3; i >= 0; --i) {
    if (plb[i] != 1) {
      sb[i] = acc;
      acc *= plb[i];
    }
  }
  std::vector<std::int64_t> idx(r - 2, 0);
  for (std::int64_t bi = 0; bi < p.batches; ++bi) {
    std::int64_t ao = 0, bo = 0;
    for (int i = 0; i < r - 2; ++i) {
      ao += idx[i] * sa[i];
      bo += idx[i] * sb[i];
    }
    p.a_off[bi] = ao;
    p.b_off[bi] = bo;
    for (int i = r - 3; i >= 0; --i) {
      if (++idx[i] < lead[i]) break;
      idx[i] = 0;
    }
  }
  return p;
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  const MatmulPlan p = plan_matmul(a.shape(), b.shape());
  std::vector<double> out(static_cast<size_t>(p.batches * p.m * p.n));
  for (std::int64_t bi = 0; bi < p.batches; ++bi) {
    CMapRM ma(a.data().data() + p.a_off[bi], p.m, p.k);
    CMapRM mb(b.data().data() + p.b_off[bi], p.k, p.n);
    MapRM mo(out.data() + bi * p.m * p.n, p.m, p.n);
    mo.noalias() = ma * mb;
  }
  return Tensor::make(p.out, std::move(out), {a, b}, [p](detail::TensorNode& n) {
    auto& pa = *n.parents[0];
    auto& pb = *n.parents[1];
    for (std::int64_t bi = 0; bi < p.batches; ++bi) {
      CMapRM gz(n.grad.data() + bi * p.m * p.n, p.m, p.n);
      if (pa.needs_grad) {
        CMapRM mb(pb.data.data() + p.b_off[bi], p.k, p.n);
        MapRM ga(pa.grad.data() + p.a_off[bi], p.m, p.k);
        ga.noalias() += gz * mb.transpose();
      }
      if (pb.needs_grad) {
        CMapRM ma(pa.data.data() + p.a_off[bi], p.m, p.k);
        MapRM gb(pb.grad.data() + p.b_off[bi], p.k, p.n);
        gb.noalias() += ma.transpose() * gz;
      }
    }
  });
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  if (weight.rank() != 2) {
    throw DimensionError("linear weight must be rank 2, got " + shape_str(weight.shape()));
  }
  const std::int64_t out_f = weight.dim(0);
  const std::int64_t in_f = weight.dim(1);
  if (x.rank() < 1 || x.shape().back() != in_f) {
    throw DimensionError("linear input " + shape_str(x.shape()) +
                         " does not end in " + std::to_string(in_f));
  }
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != out_f)) {
    throw DimensionError("linear bias must be (" + std::to_string(out_f) + ")");
  }
  const std::int64_t rows = x.numel() / in_f;
  std::vector<double> out(static_cast<size_t>(rows * out_f));
  {
    CMapRM mx(x.data().data(), rows, in_f);
    CMapRM mw(weight.data().data(), out_f, in_f);
    MapRM mo(out.data(), rows, out_f);
    mo.noalias() = mx * mw.transpose();
    if (bias.defined()) {
      Eigen::Map<const Eigen::RowVectorXd> mb(bias.data().data(), out_f);
      mo.rowwise() += mb;
    }
  }
  Shape os = x.shape();
  os.back() = out_f;
  std::vector<Tensor> parents = {x, weight};
  if (bias.defined()) parents.push_back(bias);
  const bool has_bias = bias.defined();
  return Tensor::make(os, std::move(out), std::move(parents),
                      [rows, in_f, out_f, has_bias](detail::TensorNode& n) {
    auto& px = *n.parents[0];
    auto& pw = *n.parents[1];
    CMapRM gz(n.grad.data(), rows, out_f);
    if (px.needs_grad) {
      CMapRM mw(pw.data.data(), out_f, in_f);
      MapRM gx(px.grad.data(), rows, in_f);
      gx.noalias() += gz * mw;
    }
    if (pw.needs_grad) {
      CMapRM mx(px.data.data(), rows, in_f);
      MapRM gw(pw.grad.data(), out_f, in_f);
      gw.noalias() += gz.transpose() * mx;
    }
    if (has_bias && n.parents[2]->needs_grad) {
      Eigen::Map<Eigen::RowVectorXd> gb(n.parents[2]->grad.data(), out_f);
      gb += gz.colwise().sum();
    }
  });
}

Tensor softmax(const Tensor& x, int axis) {
  const int ax = norm_axis(axis, x.rank());
  const auto& s = x.shape();
  std::int64_t outer = 1, inner = 1;
  for (int i = 0; i < ax; ++i) outer *= s[i];
  const std::int64_t len = s[ax];
  for (int i = ax + 1; i < x.rank(); ++i) inner *= s[i];
  const auto& xd = x.data();
  std::vector<double> out(xd.size());
  for (std::int64_t o = 0; o < outer; ++o) {
    for (std::int64_t in = 0; in < inner; ++in) {
      const std::int64_t base = o * len * inner + in;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::int64_t j = 0; j < len; ++j) mx = std::max(mx, xd[base + j * inner]);
      double denom = 0.0;
      for (std::int64_t j = 0; j < len; ++j) {
        const double e = std::exp(xd[base + j * inner] - mx);
        out[base + j * inner] = e;
        denom += e;
      }
      for (std::int64_t j = 0; j < len; ++j) out[base + j * inner] /= denom;
    }
  }
  return Tensor::make(x.shape(), std::move(out), {x},
                      [outer, len, inner](detail::TensorNode& n) {
    auto& p = *n.parents[0];
    if (!p.needs_grad) return;
    for (std::int64_t o = 0; o < outer; ++o) {
      for (std::int64_t in = 0; in < inner; ++in) {
        const std::int64_t base = o * len * inner + in;
        double dot = 0.0;
        for (std::int64_t j = 0; j < len; ++j) {
          const std::int64_t k = base + j * inner;
          dot += n.grad[k] * n.data[k];
        }
        for (std::int64_t j = 0; j < len; ++j) {
          const std::int64_t k = base + j * inner;
          p.grad[k] += n.data[k] * (n.grad[k] - dot);
        }
      }
    }
  });
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  if (x.rank() < 1) throw DimensionError("layer_norm needs rank >= 1");
  const std::int64_t len = x.shape().back();
  if (gamma.rank() != 1 || gamma.dim(0) != len || beta.rank() != 1 || beta.dim(0) != len) {
    throw DimensionError("layer_norm gamma/beta must be (" + std::to_string(len) + ")");
  }
  const std::int64_t rows = x.numel() / len;
  const auto& xd = x.data();
  const auto& gd = gamma.data();
  const auto& bd = beta.data();
  std::vector<double> out(xd.size());
  std::vector<double> xhat(xd.size());
  std::vector<double> inv(static_cast<size_t>(rows));
  for (std::int64_t r = 0; r < rows; ++r) {
    const std::int64_t base = r * len;
    double mean = 0.0;
    for (std::int64_t j = 0; j < len; ++j) mean += xd[base + j];
    mean /= static_cast<double>(len);
    double var = 0.0;
    for (std::int64_t j = 0; j < len; ++j) {
      const double d = xd[base + j] - mean;
      var += d * d;
    }
    var /= static_cast<double>(len);
    const double iv = 1.0 / std::sqrt(var + eps);
    inv[r] = iv;
    for (std::int64_t j = 0; j < len; ++j) {
      const double h = (xd[base + j] - mean) * iv;
      xhat[base + j] = h;
      out[base + j] = gd[j] * h + bd[j];
    }
  }
  return Tensor::make(x.shape(), std::move(out), {x, gamma, beta},
                      [rows, len, xhat = std::move(xhat),
                       inv = std::move(inv)](detail::TensorNode& n) {
    auto& px = *n.parents[0];
    auto& pg = *n.parents[1];
    auto& pb = *n.parents[2];
    const auto& gd = pg.data;
    for (std::int64_t r = 0; r < rows; ++r) {
      const std::int64_t base = r * len;
      if (pg.needs_grad || pb.needs_grad) {
        for (std::int64_t j = 0; j < len; ++j) {
          if (pg.needs_grad) pg.grad[j] += n.grad[base + j] * xhat[base + j];
          if (pb.needs_grad) pb.grad[j] += n.grad[base + j];
        }
      }
      if (px.needs_grad) {
        double mean_g = 0.0, mean_gh = 0.0;
        for (std::int64_t j = 0; j < len; ++j) {
          const double g = n.grad[base + j] * gd[j];
          mean_g += g;
          mean_gh += g * xhat[base + j];
        }
        mean_g /= static_cast<double>(len);
        mean_gh /= static_cast<double>(len);
        for (std::int64_t j = 0; j < len; ++j) {
          const double g = n.grad[base + j] * gd[j];
          px.grad[base + j] += inv[r] * (g - mean_g - xhat[base + j] * mean_gh);
        }
      }
    }
  });
}

Tensor reshape(const Tensor& x, Shape shape) {
  std::int64_t known = 1;
  int infer = -1;
  for (size_t i = 0; i < shape.size(); ++i) {
    if (shape[i] == -1) {
      if (infer >= 0) throw ContractError("reshape allows one inferred dim");
      infer = static_cast<int>(i);
    } else {
      known *= shape[i];
    }
  }
  if (infer >= 0) {
    if (known == 0 || x.numel() % known != 0) {
      throw DimensionError("cannot infer reshape dim for " + shape_str(x.shape()));
    }
    shape[infer] = x.numel() / known;
  } else if (known != x.numel()) {
    throw DimensionError("reshape " + shape_str(x.shape()) + " -> " + shape_str(shape) +
                         " changes element count");
  }
  return Tensor::make(std::move(shape), x.data(), {x}, [](detail::TensorNode& n) {
    auto& p = *n.parents[0];
    if (!p.needs_grad) return;
    for (size_t i = 0; i < n.grad.size(); ++i) p.grad[i] += n.grad[i];
  });
}

Tensor transpose(const Tensor& x, const std::vector<int>& perm) {
  const int r = x.rank();
  if (static_cast<int>(perm.size()) != r) {
    throw ContractError("transpose perm size mismatch");
  }
  std::vector<bool> seen(r, false);
  for (int a : perm) {
    if (a < 0 || a >= r || seen[a]) throw ContractError("transpose perm invalid");
    seen[a] = true;
  }
  const auto& s = x.shape();
  Shape os(r);
  for (int i = 0; i < r; ++i) os[i] = s[perm[i]];
  const auto in_strides = detail::strides_of(s);
  // Stride into the input for each output axis.
  std::vector<std::int64_t> step(r);
  for (int i = 0; i < r; ++i) step[i] = in_strides[perm[i]];
  const std::int64_t n = x.numel();
  const auto& xd = x.data();
  std::vector<double> out(static_cast<size_t>(n));
  std::vector<std::int64_t> idx(r, 0);
  std::int64_t src = 0;
  for (std::int64_t i = 0; i < n; ++i) {
    out[i] = xd[src];
    for (int ax = r - 1; ax >= 0; --ax) {
      ++idx[ax];
      src += step[ax];
      if (idx[ax] < os[ax]) break;
      src -= step[ax] * os[ax];
      idx[ax] = 0;
    }
  }
  return Tensor::make(os, std::move(out), {x},
                      [os, step, r, n](detail::TensorNode& nn) {
    auto& p = *nn.parents[0];
    if (!p.needs_grad) return;
    std::vector<std::int64_t> idx(r, 0);
    std::int64_t src = 0;
    for (std::int64_t i = 0; i < n; ++i) {
      p.grad[src] += nn.grad[i];
      for (int ax = r - 1; ax >= 0; --ax) {
        ++idx[ax];
        src += step[ax];
        if (idx[ax] < os[ax]) break;
        src -= step[ax] * os[ax];
        idx[ax] = 0;
      }
    }
  });
}

Tensor slice(const Tensor& x, int axis, std::int64_t start, std::int64_t length) {
  const int ax = norm_axis(axis, x.rank());
  const auto& s = x.shape();
  if (start < 0 || length < 0 || start + length > s[ax]) {
    throw BoundsError("slice [" + std::to_string(start) + "," +
                      std::to_string(start + length) + ") exceeds axis extent " +
                      std::to_string(s[ax]));
  }
  std::int64_t outer = 1, inner = 1;
  for (int i = 0; i < ax; ++i) outer *= s[i];
  for (int i = ax + 1; i < x.rank(); ++i) inner *= s[i];
  const std::int64_t len = s[ax];
  Shape os = s;
  os[ax] = length;
  const auto& xd = x.data();
  std::vector<double> out(static_cast<size_t>(outer * length * inner));
  for (std::int64_t o = 0; o < outer; ++o) {
    const double* srcp = xd.data() + (o * len + start) * inner;
    double* dstp = out.data() + o * length * inner;
    std::memcpy(dstp, srcp, static_cast<size_t>(length * inner) * sizeof(double));
  }
  return Tensor::make(os, std::move(out), {x},
                      [outer, inner, len, start, length](detail::TensorNode& n) {
    auto& p = *n.parents[0];
    if (!p.needs_grad) return;
    for (std::int64_t o = 0; o < outer; ++o) {
      const double* g = n.grad.data() + o * length * inner;
      double* dst = p.grad.data() + (o * len + start) * inner;
      for (std::int64_t i = 0; i < length * inner; ++i) dst[i] += g[i];
    }
  });
}

Tensor concat(const std::vector<Tensor>& parts, int axis) {
  if (parts.empty()) throw ContractError("concat of zero tensors");
  const int r = parts[0].rank();
  const int ax = norm_axis(axis, r);
  Shape os = parts[0].shape();
  std::int64_t total = 0;
  for (const auto& t : parts) {
    if (t.rank() != r) throw DimensionError("concat rank mismatch");
    for (int i = 0; i < r; ++i) {
      if (i != ax && t.shape()[i] != os[i]) {
        throw DimensionError("concat shape mismatch at axis " + std::to_string(i));
      }
    }
    total += t.shape()[ax];
  }
  os[ax] = total;
  std::int64_t outer = 1, inner = 1;
  for (int i = 0; i < ax; ++i) outer *= os[i];
  for (int i = ax + 1; i < r; ++i) inner *= os[i];
  std::vector<double> out(static_cast<size_t>(outer * total * inner));
  std::vector<std::int64_t> lens(parts.size());
  std::int64_t off = 0;
  for (size_t pi = 0; pi < parts.size(); ++pi) {
    const std::int64_t len = parts[pi].shape()[ax];
    lens[pi] = len;
    const auto& pd = parts[pi].data();
    for (std::int64_t o = 0; o < outer; ++o) {
      std::memcpy(out.data() + (o * total + off) * inner, pd.data() + o * len * inner,
                  static_cast<size_t>(len * inner) * sizeof(double));
    }
    off += len;
  }
  return Tensor::make(os, std::move(out), parts,
                      [outer, inner, total, lens](detail::TensorNode& n) {
    std::int64_t off = 0;
    for (size_t pi = 0; pi < n.parents.size(); ++pi) {
      auto& p = *n.parents[pi];
      const std::int64_t len = lens[pi];
      if (p.needs_grad) {
        for (std::int64_t o = 0; o < outer; ++o) {
          const double* g = n.grad.data() + (o * total + off) * inner;
          double* dst = p.grad.data() + o * len * inner;
          for (std::int64_t i = 0; i < len * inner; ++i) dst[i] += g[i];
        }
      }
      off += len;
    }
  });
}

namespace {

Tensor reduce_impl(const Tensor& x, std::vector<int> axes, bool keepdim, bool mean) {
  const int r = x.rank();
  std::vector<bool> reduced(r, false);
  if (axes.empty()) {
    reduced.assign(r, true);
  } else {
    for (int a : axes) reduced[norm_axis(a, r)] = true;
  }
  const auto& s = x.shape();
  Shape os;
  std::int64_t count = 1;
  for (int i = 0; i < r; ++i) {
    if (reduced[i]) {
      count *= s[i];
      if (keepdim) os.push_back(1);
    } else {
      os.push_back(s[i]);
    }
  }
  if (os.empty()) os = {1};
  // Per-input-axis stride into the output (0 on reduced axes).
  const auto out_full = [&] {
    Shape f(r);
    for (int i = 0; i < r; ++i) f[i] = reduced[i] ? 1 : s[i];
    return f;
  }();
  const auto ostr = detail::strides_of(out_full);
  std::vector<std::int64_t> step(r);
  for (int i = 0; i < r; ++i) step[i] = reduced[i] ? 0 : ostr[i];
  const double w = mean ? 1.0 / static_cast<double>(count) : 1.0;
  const std::int64_t n = x.numel();
  const auto& xd = x.data();
  std::vector<double> out(static_cast<size_t>(shape_numel(os)), 0.0);
  std::vector<std::int64_t> idx(r, 0);
  std::int64_t dst = 0;
  for (std::int64_t i = 0; i < n; ++i) {
    out[dst] += xd[i] * w;
    for (int ax = r - 1; ax >= 0; --ax) {
      ++idx[ax];
      dst += step[ax];
      if (idx[ax] < s[ax]) break;
      dst -= step[ax] * s[ax];
      idx[ax] = 0;
    }
  }
  return Tensor::make(os, std::move(out), {x},
                      [s, step, r, n, w](detail::TensorNode& nn) {
    auto& p = *nn.parents[0];
    if (!p.needs_grad) return;
    std::vector<std::int64_t> idx(r, 0);
    std::int64_t src = 0;
    for (std::int64_t i = 0; i < n; ++i) {
      p.grad[i] += nn.grad[src] * w;
      for (int ax = r - 1; ax >= 0; --ax) {
        ++idx[ax];
        src += step[ax];
        if (idx[ax] < s[ax]) break;
        src -= step[ax] * s[ax];
        idx[ax] = 0;
      }
    }
  });
}

}  // namespace

Tensor reduce_sum(const Tensor& x, std::vector<int> axes, bool keepdim) {
  return reduce_impl(x, std::move(axes), keepdim, false);
}

Tensor reduce_mean(const Tensor& x, std::vector<int> axes, bool keepdim) {
  return reduce_impl(x, std::move(axes), keepdim, true);
}

Tensor sum_all(const Tensor& x) { return reduce_impl(x, {}, false, false); }
Tensor mean_all(const Tensor& x) { return reduce_impl(x, {}, false, true); }

namespace {

struct SamePad {
  std::int64_t out = 0;
  std::int64_t lo = 0;
};

SamePad same_pad(std::int64_t in, std::int64_t k, std::int64_t stride) {
  SamePad p;
  p.out = (in + stride - 1) / stride;
  const std::int64_t total = std::max<std::int64_t>((p.out - 1) * stride + k - in, 0);
  p.lo = total / 2;
  return p;
}

}  // namespace

Tensor conv_spatial2d(const Tensor& x, const Tensor& weight, const Tensor& bias,
                      int stride_h, int stride_w) {
  if (x.rank() != 5 || weight.rank() != 4) {
    throw DimensionError("conv_spatial2d wants x rank 5 and weight rank 4");
  }
  const auto& s = x.shape();
  const std::int64_t B = s[0], C = s[1], D = s[2], H = s[3], W = s[4];
  const std::int64_t M = weight.dim(0), kh = weight.dim(2), kw = weight.dim(3);
  if (weight.dim(1) != C) {
    throw DimensionError("conv_spatial2d channel mismatch: input " + std::to_string(C) +
                         ", weight " + std::to_string(weight.dim(1)));
  }
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != M)) {
    throw DimensionError("conv_spatial2d bias must be (" + std::to_string(M) + ")");
  }
  if (stride_h < 1 || stride_w < 1) throw ContractError("conv stride must be >= 1");
  const SamePad ph = same_pad(H, kh, stride_h);
  const SamePad pw = same_pad(W, kw, stride_w);
  const std::int64_t Ho = ph.out, Wo = pw.out;
  const std::int64_t K = C * kh * kw;
  const std::int64_t cols_n = D * Ho * Wo;

  auto im2col = [=](const double* xb, std::vector<double>& cols) {
    // cols is (K, D*Ho*Wo); column index = ((d*Ho)+ho)*Wo+wo.
    std::fill(cols.begin(), cols.end(), 0.0);
    for (std::int64_t c = 0; c < C; ++c) {
      for (std::int64_t i = 0; i < kh; ++i) {
        for (std::int64_t j = 0; j < kw; ++j) {
          double* row = cols.data() + ((c * kh + i) * kw + j) * cols_n;
          for (std::int64_t d = 0; d < D; ++d) {
            for (std::int64_t ho = 0; ho < Ho; ++ho) {
              const std::int64_t hi = ho * stride_h + i - ph.lo;
              if (hi < 0 || hi >= H) continue;
              for (std::int64_t wo = 0; wo < Wo; ++wo) {
                const std::int64_t wi = wo * stride_w + j - pw.lo;
                if (wi < 0 || wi >= W) continue;
                row[(d * Ho + ho) * Wo + wo] = xb[((c * D + d) * H + hi) * W + wi];
              }
            }
          }
        }
      }
    }
  };

  std::vector<double> out(static_cast<size_t>(B * M * D * Ho * Wo));
  std::vector<double> cols(static_cast<size_t>(K * cols_n));
  const auto& xd = x.data();
  CMapRM mw(weight.data().data(), M, K);
  for (std::int64_t b = 0; b < B; ++b) {
    im2col(xd.data() + b * C * D * H * W, cols);
    CMapRM mc(cols.data(), K, cols_n);
    MapRM mo(out.data() + b * M * cols_n, M, cols_n);
    mo.noalias() = mw * mc;
    if (bias.defined()) {
      Eigen::Map<const Eigen::VectorXd> mb(bias.data().data(), M);
      mo.colwise() += mb;
    }
  }
  Shape os = {B, M, D, Ho, Wo};
  std::vector<Tensor> parents = {x, weight};
  if (bias.defined()) parents.push_back(bias);
  const bool has_bias = bias.defined();
  return Tensor::make(os, std::move(out), std::move(parents),
                      [=](detail::TensorNode& n) {
    auto& px = *n.parents[0];
    auto& pw2 = *n.parents[1];
    std::vector<double> cols(static_cast<size_t>(K * cols_n));
    std::vector<double> dcols(static_cast<size_t>(K * cols_n));
    CMapRM w2(pw2.data.data(), M, K);
    for (std::int64_t b = 0; b < B; ++b) {
      CMapRM gz(n.grad.data() + b * M * cols_n, M, cols_n);
      if (pw2.needs_grad) {
        im2col(px.data.data() + b * C * D * H * W, cols);
        CMapRM mc(cols.data(), K, cols_n);
        MapRM gw(pw2.grad.data(), M, K);
        gw.noalias() += gz * mc.transpose();
      }
      if (has_bias && n.parents[2]->needs_grad) {
        Eigen::Map<Eigen::VectorXd> gb(n.parents[2]->grad.data(), M);
        gb += gz.rowwise().sum();
      }
      if (px.needs_grad) {
        MapRM gc(dcols.data(), K, cols_n);
        gc.noalias() = w2.transpose() * gz;
        double* gx = px.grad.data() + b * C * D * H * W;
        for (std::int64_t c = 0; c < C; ++c) {
          for (std::int64_t i = 0; i < kh; ++i) {
            for (std::int64_t j = 0; j < kw; ++j) {
              const double* row = dcols.data() + ((c * kh + i) * kw + j) * cols_n;
              for (std::int64_t d = 0; d < D; ++d) {
                for (std::int64_t ho = 0; ho < Ho; ++ho) {
                  const std::int64_t hi = ho * stride_h + i - ph.lo;
                  if (hi < 0 || hi >= H) continue;
                  for (std::int64_t wo = 0; wo < Wo; ++wo) {
                    const std::int64_t wi = wo * stride_w + j - pw.lo;
                    if (wi < 0 || wi >= W) continue;
                    gx[((c * D + d) * H + hi) * W + wi] += row[(d * Ho + ho) * Wo + wo];
                  }
                }
              }
            }
          }
        }
      }
    }
  });
}

Tensor conv_temporal(const Tensor& x, const Tensor& weight, const Tensor& bias,
                     int stride_d) {
  if (x.rank() != 5 || weight.rank() != 3) {
    throw DimensionError("conv_temporal wants x rank 5 and weight rank 3");
  }
  const auto& s = x.shape();
  const std::int64_t B = s[0], C = s[1], D = s[2], H = s[3], W = s[4];
  const std::int64_t O = weight.dim(0), kt = weight.dim(2);
  if (weight.dim(1) != C) {
    throw DimensionError("conv_temporal channel mismatch: input " + std::to_string(C) +
                         ", weight " + std::to_string(weight.dim(1)));
  }
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != O)) {
    throw DimensionError("conv_temporal bias must be (" + std::to_string(O) + ")");
  }
  if (stride_d < 1) throw ContractError("conv stride must be >= 1");
  const SamePad pd = same_pad(D, kt, stride_d);
  const std::int64_t Do = pd.out;
  const std::int64_t P = H * W;
  const std::int64_t K = C * kt;
  const std::int64_t cols_n = Do * P;

  auto im2col = [=](const double* xb, std::vector<double>& cols) {
    std::fill(cols.begin(), cols.end(), 0.0);
    for (std::int64_t c = 0; c < C; ++c) {
      for (std::int64_t t = 0; t < kt; ++t) {
        double* row = cols.data() + (c * kt + t) * cols_n;
        for (std::int64_t dd = 0; dd < Do; ++dd) {
          const std::int64_t di = dd * stride_d + t - pd.lo;
          if (di < 0 || di >= D) continue;
          std::memcpy(row + dd * P, xb + (c * D + di) * P,
                      static_cast<size_t>(P) * sizeof(double));
        }
      }
    }
  };

  std::vector<double> out(static_cast<size_t>(B * O * Do * P));
  std::vector<double> cols(static_cast<size_t>(K * cols_n));
  const auto& xd = x.data();
  CMapRM mw(weight.data().data(), O, K);
  for (std::int64_t b = 0; b < B; ++b) {
    im2col(xd.data() + b * C * D * P, cols);
    CMapRM mc(cols.data(), K, cols_n);
    MapRM mo(out.data() + b * O * cols_n, O, cols_n);
    mo.noalias() = mw * mc;
    if (bias.defined()) {
      Eigen::Map<const Eigen::VectorXd> mb(bias.data().data(), O);
      mo.colwise() += mb;
    }
  }
  Shape os = {B, O, Do, H, W};
  std::vector<Tensor> parents = {x, weight};
  if (bias.defined()) parents.push_back(bias);
  const bool has_bias = bias.defined();
  return Tensor::make(os, std::move(out), std::move(parents),
                      [=](detail::TensorNode& n) {
    auto& px = *n.parents[0];
    auto& pw2 = *n.parents[1];
    std::vector<double> cols(static_cast<size_t>(K * cols_n));
    std::vector<double> dcols(static_cast<size_t>(K * cols_n));
    CMapRM w2(pw2.data.data(), O, K);
    for (std::int64_t b = 0; b < B; ++b) {
      CMapRM gz(n.grad.data() + b * O * cols_n, O, cols_n);
      if (pw2.needs_grad) {
        im2col(px.data.data() + b * C * D * P, cols);
        CMapRM mc(cols.data(), K, cols_n);
        MapRM gw(pw2.grad.data(), O, K);
        gw.noalias() += gz * mc.transpose();
      }
      if (has_bias && n.parents[2]->needs_grad) {
        Eigen::Map<Eigen::VectorXd> gb(n.parents[2]->grad.data(), O);
        gb += gz.rowwise().sum();
      }
      if (px.needs_grad) {
        MapRM gc(dcols.data(), K, cols_n);
        gc.noalias() = w2.transpose() * gz;
        double* gx = px.grad.data() + b * C * D * P;
        for (std::int64_t c = 0; c < C; ++c) {
          for (std::int64_t t = 0; t < kt; ++t) {
            const double* row = dcols.data() + (c * kt + t) * cols_n;
            for (std::int64_t dd = 0; dd < Do; ++dd) {
              const std::int64_t di = dd * stride_d + t - pd.lo;
              if (di < 0 || di >= D) continue;
              double* dst = gx + (c * D + di) * P;
              const double* src = row + dd * P;
              for (std::int64_t p2 = 0; p2 < P; ++p2) dst[p2] += src[p2];
            }
          }
        }
      }
    }
  });
}

Tensor conv_2plus1d(const Tensor& x, const Conv2Plus1dParams& p) {
  Tensor h = conv_spatial2d(x, p.spatial_weight, p.spatial_bias, p.stride_h, p.stride_w);
  if (p.nonlinearity) h = gelu(h);
  h = conv_temporal(h, p.temporal_weight, p.temporal_bias, p.stride_d);
  if (p.nonlinearity) h = gelu(h);
  return h;
}

Tensor adaptive_avg_pool3d(const Tensor& x) {
  if (x.rank() != 5) throw DimensionError("adaptive_avg_pool3d wants rank 5");
  const auto& s = x.shape();
  const std::int64_t B = s[0], C = s[1], vol = s[2] * s[3] * s[4];
  const auto& xd = x.data();
  std::vector<double> out(static_cast<size_t>(B * C), 0.0);
  for (std::int64_t bc = 0; bc < B * C; ++bc) {
    double acc = 0.0;
    const double* p = xd.data() + bc * vol;
    for (std::int64_t i = 0; i < vol; ++i) acc += p[i];
    out[bc] = acc / static_cast<double>(vol);
  }
  return Tensor::make({B, C, 1, 1, 1}, std::move(out), {x},
                      [B, C, vol](detail::TensorNode& n) {
    auto& p = *n.parents[0];
    if (!p.needs_grad) return;
    for (std::int64_t bc = 0; bc < B * C; ++bc) {
      const double g = n.grad[bc] / static_cast<double>(vol);
      double* dst = p.grad.data() + bc * vol;
      for (std::int64_t i = 0; i < vol; ++i) dst[i] += g;
    }
  });
}

Tensor drop_path(const Tensor& x, double p, bool training, RandomStream* rng) {
  // p = 1 is the pure gate limit: every sample drops, the keep scale is unused.
  if (p < 0.0 || p > 1.0) throw ContractError("drop_path rate must lie in [0, 1]");
  if (!training || p == 0.0) return x;
  if (rng == nullptr) throw ContractError("drop_path in training mode needs a RandomStream");
  if (x.rank() < 1) throw DimensionError("drop_path needs a batch axis");
  const std::int64_t B = x.dim(0);
  const std::int64_t per = x.numel() / B;
  std::vector<double> mask(static_cast<size_t>(B));
  const double keep_scale = 1.0 / (1.0 - p);
  for (std::int64_t b = 0; b < B; ++b) {
    mask[b] = (rng->uniform() < p) ? 0.0 : keep_scale;
  }
  const auto& xd = x.data();
  std::vector<double> out(xd.size());
  for (std::int64_t b = 0; b < B; ++b) {
    for (std::int64_t i = 0; i < per; ++i) out[b * per + i] = xd[b * per + i] * mask[b];
  }
  return Tensor::make(x.shape(), std::move(out), {x},
                      [B, per, mask = std::move(mask)](detail::TensorNode& n) {
    auto& px = *n.parents[0];
    if (!px.needs_grad) return;
    for (std::int64_t b = 0; b < B; ++b) {
      for (std::int64_t i = 0; i < per; ++i) {
        px.grad[b * per + i] += n.grad[b * per + i] * mask[b];
      }
    }
  });
}

Tensor rel_pos_lookup(const Tensor& table, const std::vector<std::int64_t>& index,
                      std::int64_t tokens) {
  if (table.rank() != 2) throw DimensionError("rel_pos_lookup table must be rank 2");
  const std::int64_t H = table.dim(0), S = table.dim(1);
  if (static_cast<std::int64_t>(index.size()) != tokens * tokens) {
    throw DimensionError("rel_pos_lookup index length must be tokens^2");
  }
  for (std::int64_t v : index) {
    if (v < 0 || v >= S) throw BoundsError("rel_pos_lookup index out of table range");
  }
  const auto& td = table.data();
  std::vector<double> out(static_cast<size_t>(H * tokens * tokens));
  for (std::int64_t h = 0; h < H; ++h) {
    for (std::int64_t p = 0; p < tokens * tokens; ++p) {
      out[h * tokens * tokens + p] = td[h * S + index[p]];
    }
  }
  return Tensor::make({H, tokens, tokens}, std::move(out), {table},
                      [H, S, tokens, index](detail::TensorNode& n) {
    auto& p = *n.parents[0];
    if (!p.needs_grad) return;
    for (std::int64_t h = 0; h < H; ++h) {
      for (std::int64_t q = 0; q < tokens * tokens; ++q) {
        p.grad[h * S + index[q]] += n.grad[h * tokens * tokens + q];
      }
    }
  });
}

Tensor roll3d(const Tensor& x, std::int64_t sd, std::int64_t sh, std::int64_t sw) {
  if (x.rank() != 5) throw DimensionError("roll3d wants (B,D,H,W,E)");
  const auto& s = x.shape();
  const std::int64_t B = s[0], D = s[1], H = s[2], W = s[3], E = s[4];
  auto wrap = [](std::int64_t v, std::int64_t m) { return ((v % m) + m) % m; };
  const std::int64_t rd = wrap(sd, D), rh = wrap(sh, H), rw = wrap(sw, W);
  if (rd == 0 && rh == 0 && rw == 0) return x;
  const auto& xd = x.data();
  std::vector<double> out(xd.size());
  // out[d] = x[d - shift]: content moves toward higher indices.
  std::vector<std::int64_t> srcmap(static_cast<size_t>(D * H * W));
  for (std::int64_t d = 0; d < D; ++d) {
    const std::int64_t ds = wrap(d - rd, D);
    for (std::int64_t h = 0; h < H; ++h) {
      const std::int64_t hs = wrap(h - rh, H);
      for (std::int64_t w = 0; w < W; ++w) {
        const std::int64_t ws = wrap(w - rw, W);
        srcmap[(d * H + h) * W + w] = (ds * H + hs) * W + ws;
      }
    }
  }
  const std::int64_t cells = D * H * W;
  for (std::int64_t b = 0; b < B; ++b) {
    for (std::int64_t c = 0; c < cells; ++c) {
      std::memcpy(out.data() + (b * cells + c) * E,
                  xd.data() + (b * cells + srcmap[c]) * E,
                  static_cast<size_t>(E) * sizeof(double));
    }
  }
  return Tensor::make(x.shape(), std::move(out), {x},
                      [B, cells, E, srcmap = std::move(srcmap)](detail::TensorNode& n) {
    auto& p = *n.parents[0];
    if (!p.needs_grad) return;
    for (std::int64_t b = 0; b < B; ++b) {
      for (std::int64_t c = 0; c < cells; ++c) {
        const double* g = n.grad.data() + (b * cells + c) * E;
        double* dst = p.grad.data() + (b * cells + srcmap[c]) * E;
        for (std::int64_t e = 0; e < E; ++e) dst[e] += g[e];
      }
    }
  });
}

Tensor mse_loss(const Tensor& pred, const Tensor& target) {
  if (pred.shape() != target.shape()) {
    throw DimensionError("mse_loss shapes differ: " + shape_str(pred.shape()) + " vs " +
                         shape_str(target.shape()));
  }
  const std::int64_t n = pred.numel();
  const auto& pd = pred.data();
  const auto& td = target.data();
  double acc = 0.0;
  for (std::int64_t i = 0; i < n; ++i) {
    const double d = pd[i] - td[i];
    acc += d * d;
  }
  acc /= static_cast<double>(n);
  return Tensor::make({1}, {acc}, {pred, target}, [n](detail::TensorNode& nn) {
    auto& pp = *nn.parents[0];
    auto& pt = *nn.parents[1];
    const double g = nn.grad[0] * 2.0 / static_cast<double>(n);
    for (std::int64_t i = 0; i < n; ++i) {
      const double d = (pp.data[i] - pt.data[i]) * g;
      if (pp.needs_grad) pp.grad[i] += d;
      if (pt.needs_grad) pt.grad[i] -= d;
    }
  });
}

Tensor cross_entropy(const Tensor& logits, const std::vector<std::int64_t>& labels) {
  if (logits.rank() != 2) throw DimensionError("cross_entropy wants (B, classes)");
  const std::int64_t B = logits.dim(0), k = logits.dim(1);
  if (static_cast<std::int64_t>(labels.size()) != B) {
    throw DimensionError("cross_entropy label count mismatch");
  }
  for (std::int64_t y : labels) {
    if (y < 0 || y >= k) throw BoundsError("cross_entropy label out of range");
  }
  const auto& ld = logits.data();
  std::vector<double> probs(ld.size());
  double loss = 0.0;
  for (std::int64_t b = 0; b < B; ++b) {
    const double* row = ld.data() + b * k;
    double mx = row[0];
    for (std::int64_t j = 1; j < k; ++j) mx = std::max(mx, row[j]);
    double denom = 0.0;
    for (std::int64_t j = 0; j < k; ++j) {
      const double e = std::exp(row[j] - mx);
      probs[b * k + j] = e;
      denom += e;
    }
    for (std::int64_t j = 0; j < k; ++j) probs[b * k + j] /= denom;
    loss += std::log(denom) + mx - row[labels[b]];
  }
  loss /= static_cast<double>(B);
  return Tensor::make({1}, {loss}, {logits},
                      [B, k, labels, probs = std::move(probs)](detail::TensorNode& n) {
    auto& p = *n.parents[0];
    if (!p.needs_grad) return;
    const double g = n.grad[0] / static_cast<double>(B);
    for (std::int64_t b = 0; b < B; ++b) {
      for (std::int64_t j = 0; j < k; ++j) {
        const double onehot = (j == labels[b]) ? 1.0 : 0.0;
        p.grad[b * k + j] += g * (probs[b * k + j] - onehot);
      }
    }
  });
}

}  // namespace fat
