// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "fat/error.hpp"
#include "fat/random.hpp"

namespace fat {

using Shape = std::vector<std::int64_t>;

std::string shape_str(const Shape& s);
std::int64_t shape_numel(const Shape& s);

namespace detail {

struct TensorNode {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // sized lazily, same length as data when present
  bool requires_grad = false;          // leaf that accumulates gradient
  bool needs_grad = false;             // participates in some backward pass
  std::vector<std::shared_ptr<TensorNode>> parents;
  // Reads this node's grad and accumulates into the parents' grads.
  std::function<void(TensorNode&)> backward_fn;

  void ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
  }
};

bool autograd_enabled();

}  // namespace detail

// RAII switch that disables graph recording on the current thread
// (evaluation passes). Parameters stay intact; only lineage is skipped.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

// N-dimensional row-major array of doubles with an optional gradient slot.
// Tensor is a cheap handle; copies share the underlying node.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor ones(Shape shape, bool requires_grad = false);
  static Tensor from_data(Shape shape, std::vector<double> values,
                          bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);
  static Tensor randn(Shape shape, RandomStream& rng, double stddev = 1.0,
                      double mean = 0.0, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node().shape; }
  int rank() const { return static_cast<int>(node().shape.size()); }
  std::int64_t numel() const { return static_cast<std::int64_t>(node().data.size()); }
  std::int64_t dim(int axis) const;

  std::vector<double>& data() { return node().data; }
  const std::vector<double>& data() const { return node().data; }
  double at(std::int64_t flat_index) const { return node().data.at(flat_index); }
  double at(std::initializer_list<std::int64_t> index) const;
  double value() const;  // scalar tensors only

  bool requires_grad() const { return node().requires_grad; }
  void set_requires_grad(bool value);
  bool has_grad() const { return !node().grad.empty(); }
  const std::vector<double>& grad() const;
  std::vector<double>& grad_mutable();
  void zero_grad();

  // Reverse-mode sweep from a scalar root.
  void backward();

  // Detached copy of the values (no lineage, no grad).
  Tensor detach() const;

  std::shared_ptr<detail::TensorNode> node_ptr() const { return node_; }
  detail::TensorNode& node() {
    if (!node_) throw ContractError("use of undefined Tensor");
    return *node_;
  }
  const detail::TensorNode& node() const {
    if (!node_) throw ContractError("use of undefined Tensor");
    return *node_;
  }

  // Builds a node wired into the graph. parents/backward are dropped when
  // autograd is off or no parent needs gradients.
  static Tensor make(Shape shape, std::vector<double> values,
                     std::vector<Tensor> parents,
                     std::function<void(detail::TensorNode&)> backward_fn);

 private:
  explicit Tensor(std::shared_ptr<detail::TensorNode> node) : node_(std::move(node)) {}
  std::shared_ptr<detail::TensorNode> node_;
};

// Max over coordinates of |analytic - central difference| / max(1, |central|).
// f must map x to a scalar tensor; eps must lie in [1e-6, 1e-4].
double grad_check(const std::function<Tensor(const Tensor&)>& f, Tensor x,
                  double eps = 1e-5);

namespace detail {

// Row-major strides for a shape.
std::vector<std::int64_t> strides_of(const Shape& s);

// NumPy-style broadcast of two shapes; throws DimensionError on mismatch.
Shape broadcast_shapes(const Shape& a, const Shape& b);

// Sums `grad` (shaped `from`) down to shape `to` (inverse of broadcasting).
std::vector<double> reduce_to_shape(const std::vector<double>& grad,
                                    const Shape& from, const Shape& to);

}  // namespace detail

}  // namespace fat
