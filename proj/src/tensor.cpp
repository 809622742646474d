// SPDX-License-Identifier: Apache-2.0
#include "fat/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <unordered_set>

namespace fat {

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "(";
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) os << ",";
    os << s[i];
  }
  os << ")";
  return os.str();
}

std::int64_t shape_numel(const Shape& s) {
  std::int64_t n = 1;
  for (auto d : s) {
    if (d <= 0) throw DimensionError("non-positive extent in shape " + shape_str(s));
    n *= d;
  }
  return n;
}

namespace detail {

namespace {
thread_local bool g_autograd_enabled = true;
}

bool autograd_enabled() { return g_autograd_enabled; }

std::vector<std::int64_t> strides_of(const Shape& s) {
  std::vector<std::int64_t> st(s.size());
  std::int64_t acc = 1;
  for (int i = static_cast<int>(s.size()) - 1; i >= 0; --i) {
    st[i] = acc;
    acc *= s[i];
  }
  return st;
}

Shape broadcast_shapes(const Shape& a, const Shape& b) {
  const size_t r = std::max(a.size(), b.size());
  Shape out(r);
  for (size_t i = 0; i < r; ++i) {
    const std::int64_t da = i < r - a.size() ? 1 : a[i - (r - a.size())];
    const std::int64_t db = i < r - b.size() ? 1 : b[i - (r - b.size())];
    if (da != db && da != 1 && db != 1) {
      throw DimensionError("cannot broadcast " + shape_str(a) + " with " + shape_str(b));
    }
    out[i] = std::max(da, db);
  }
  return out;
}

std::vector<double> reduce_to_shape(const std::vector<double>& grad,
                                    const Shape& from, const Shape& to) {
  if (from == to) return grad;
  std::vector<double> out(static_cast<size_t>(shape_numel(to)), 0.0);
  const auto from_strides = strides_of(from);
  // Map each source index to the destination index it broadcasts from.
  const size_t offset = from.size() - to.size();
  std::vector<std::int64_t> to_strides_padded(from.size(), 0);
  {
    const auto ts = strides_of(to);
    for (size_t i = 0; i < to.size(); ++i) {
      to_strides_padded[offset + i] = (to[i] == 1) ? 0 : ts[i];
    }
  }
  const std::int64_t n = shape_numel(from);
  std::vector<std::int64_t> idx(from.size(), 0);
  for (std::int64_t flat = 0; flat < n; ++flat) {
    std::int64_t dst = 0;
    std::int64_t rem = flat;
    for (size_t d = 0; d < from.size(); ++d) {
      const std::int64_t coord = rem / from_strides[d];
      rem %= from_strides[d];
      dst += coord * to_strides_padded[d];
    }
    out[dst] += grad[flat];
  }
  return out;
}

}  // namespace detail

NoGradGuard::NoGradGuard() : previous_(detail::g_autograd_enabled) {
  detail::g_autograd_enabled = false;
}

NoGradGuard::~NoGradGuard() { detail::g_autograd_enabled = previous_; }

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::ones(Shape shape, bool requires_grad) {
  return full(std::move(shape), 1.0, requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  auto node = std::make_shared<detail::TensorNode>();
  node->data.assign(static_cast<size_t>(shape_numel(shape)), value);
  node->shape = std::move(shape);
  node->requires_grad = requires_grad;
  node->needs_grad = requires_grad;
  return Tensor(std::move(node));
}

Tensor Tensor::from_data(Shape shape, std::vector<double> values, bool requires_grad) {
  if (shape_numel(shape) != static_cast<std::int64_t>(values.size())) {
    throw DimensionError("value count " + std::to_string(values.size()) +
                         " does not match shape " + shape_str(shape));
  }
  auto node = std::make_shared<detail::TensorNode>();
  node->shape = std::move(shape);
  node->data = std::move(values);
  node->requires_grad = requires_grad;
  node->needs_grad = requires_grad;
  return Tensor(std::move(node));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return from_data({1}, {value}, requires_grad);
}

Tensor Tensor::randn(Shape shape, RandomStream& rng, double stddev, double mean,
                     bool requires_grad) {
  std::vector<double> v(static_cast<size_t>(shape_numel(shape)));
  for (auto& x : v) x = rng.normal(mean, stddev);
  return from_data(std::move(shape), std::move(v), requires_grad);
}

std::int64_t Tensor::dim(int axis) const {
  const auto& s = node().shape;
  const int r = static_cast<int>(s.size());
  if (axis < 0) axis += r;
  if (axis < 0 || axis >= r) {
    throw BoundsError("axis " + std::to_string(axis) + " out of range for rank " +
                      std::to_string(r));
  }
  return s[axis];
}

double Tensor::at(std::initializer_list<std::int64_t> index) const {
  const auto& s = node().shape;
  if (index.size() != s.size()) {
    throw DimensionError("index of rank " + std::to_string(index.size()) +
                         " into shape " + shape_str(s));
  }
  std::int64_t flat = 0;
  int axis = 0;
  for (std::int64_t i : index) {
    if (i < 0 || i >= s[axis]) {
      throw BoundsError("index " + std::to_string(i) + " out of range on axis " +
                        std::to_string(axis) + " of shape " + shape_str(s));
    }
    flat = flat * s[axis] + i;
    ++axis;
  }
  return node().data[flat];
}

double Tensor::value() const {
  if (numel() != 1) {
    throw ContractError("value() requires a scalar tensor, got shape " +
                        shape_str(shape()));
  }
  return node().data[0];
}

void Tensor::set_requires_grad(bool value) {
  node().requires_grad = value;
  node().needs_grad = value || !node().parents.empty();
}

const std::vector<double>& Tensor::grad() const {
  if (node().grad.empty()) {
    throw ContractError("tensor has no gradient; call backward() first");
  }
  return node().grad;
}

std::vector<double>& Tensor::grad_mutable() {
  node().ensure_grad();
  return node().grad;
}

void Tensor::zero_grad() { node().grad.clear(); }

Tensor Tensor::detach() const {
  return from_data(shape(), data(), false);
}

Tensor Tensor::make(Shape shape, std::vector<double> values, std::vector<Tensor> parents,
                    std::function<void(detail::TensorNode&)> backward_fn) {
  Tensor out = from_data(std::move(shape), std::move(values), false);
  if (!detail::autograd_enabled()) return out;
  bool needs = false;
  for (const auto& p : parents) {
    if (p.defined() && p.node().needs_grad) {
      needs = true;
      break;
    }
  }
  if (!needs) return out;
  auto& n = out.node();
  n.needs_grad = true;
  n.parents.reserve(parents.size());
  for (auto& p : parents) n.parents.push_back(p.node_ptr());
  n.backward_fn = std::move(backward_fn);
  return out;
}

void Tensor::backward() {
  if (numel() != 1) {
    throw ContractError("backward() requires a scalar root, got shape " +
                        shape_str(shape()));
  }
  auto root = node_ptr();
  if (!root->needs_grad) return;

  // Iterative post-order DFS; the reversed finish order is a topological
  // order of the subgraph that needs gradients.
  std::vector<detail::TensorNode*> order;
  std::unordered_set<detail::TensorNode*> visited;
  struct Frame {
    detail::TensorNode* node;
    size_t next_parent;
  };
  std::vector<Frame> stack;
  stack.push_back({root.get(), 0});
  visited.insert(root.get());
  while (!stack.empty()) {
    Frame& f = stack.back();
    if (f.next_parent < f.node->parents.size()) {
      detail::TensorNode* p = f.node->parents[f.next_parent++].get();
      if (p->needs_grad && !visited.count(p)) {
        visited.insert(p);
        stack.push_back({p, 0});
      }
    } else {
      order.push_back(f.node);
      stack.pop_back();
    }
  }

  root->ensure_grad();
  root->grad[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::TensorNode* n = *it;
    if (n->backward_fn) {
      n->ensure_grad();
      for (auto& p : n->parents) {
        if (p->needs_grad) p->ensure_grad();
      }
      n->backward_fn(*n);
    }
  }
}

double grad_check(const std::function<Tensor(const Tensor&)>& f, Tensor x, double eps) {
  if (eps < 1e-6 || eps > 1e-4) {
    throw ContractError("grad_check eps must lie in [1e-6, 1e-4]");
  }
  Tensor probe = Tensor::from_data(x.shape(), x.data(), true);
  Tensor y = f(probe);
  if (y.numel() != 1) {
    throw ContractError("grad_check requires a scalar-valued function");
  }
  y.backward();
  const std::vector<double> analytic =
      probe.has_grad() ? probe.grad() : std::vector<double>(probe.data().size(), 0.0);

  double worst = 0.0;
  std::vector<double>& vals = probe.data();
  for (size_t i = 0; i < vals.size(); ++i) {
    const double saved = vals[i];
    NoGradGuard no_grad;
    vals[i] = saved + eps;
    const double hi = f(probe).value();
    vals[i] = saved - eps;
    const double lo = f(probe).value();
    vals[i] = saved;
    const double central = (hi - lo) / (2.0 * eps);
    const double err = std::abs(analytic[i] - central) / std::max(1.0, std::abs(central));
    worst = std::max(worst, err);
  }
  return worst;
}

}  // namespace fat
