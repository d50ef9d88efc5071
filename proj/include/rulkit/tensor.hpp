#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <memory>
#include <vector>

#include "rulkit/common.hpp"

namespace rulkit {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;
using Shape = std::vector<int>;

inline Eigen::Index shape_size(const Shape& s) {
  Eigen::Index n = 1;
  for (int d : s) n *= d;
  return n;
}

std::string shape_str(const Shape& s);

namespace detail {

// One node of the computation graph. Operations append nodes; backward()
// traverses them once in reverse topological order.
struct Node {
  Shape shape;
  Vec value;
  Vec grad;  // empty until first accumulation
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;
  std::uint64_t id = 0;
};

bool grad_enabled();
void set_grad_enabled(bool on);

// Accumulates g into the node's grad buffer, allocating zeros on first touch.
void accumulate(Node& node, const Vec& g);

}  // namespace detail

// Scoped switch that disables graph construction (validation, scoring).
class NoGradGuard {
 public:
  NoGradGuard() : prev_(detail::grad_enabled()) { detail::set_grad_enabled(false); }
  ~NoGradGuard() { detail::set_grad_enabled(prev_); }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

// Value-semantic handle on a graph node. Copies share the node.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double v, bool requires_grad = false);
  static Tensor from(Shape shape, Vec data, bool requires_grad = false);
  static Tensor scalar(double v, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  int ndim() const { return static_cast<int>(shape().size()); }
  int dim(int i) const { return shape().at(static_cast<std::size_t>(i)); }
  Eigen::Index size() const;

  Vec& value();
  const Vec& value() const;
  double item() const;

  bool requires_grad() const;
  bool has_grad() const;
  Vec& grad();              // allocates a zero buffer on first use
  const Vec& grad() const;  // throws if no gradient has been materialized
  void zero_grad();

  std::uint64_t id() const;

  // Copy of the value as a fresh leaf, detached from any graph.
  Tensor detach(bool requires_grad = false) const;

  std::shared_ptr<detail::Node> node() const { return node_; }

 private:
  explicit Tensor(std::shared_ptr<detail::Node> n) : node_(std::move(n)) {}
  std::shared_ptr<detail::Node> node_;

  friend Tensor make_op(Shape shape, Vec value, std::vector<Tensor> parents,
                        std::function<void(detail::Node&)> backward_fn);
};

// Builds an op result node. When gradients are enabled and any parent
// requires them, parents and the backward function are recorded.
Tensor make_op(Shape shape, Vec value, std::vector<Tensor> parents,
               std::function<void(detail::Node&)> backward_fn);

// Reverse-mode sweep from a scalar loss. Accumulates into the grad buffers
// of every reachable tensor that requires gradients.
void backward(const Tensor& loss);

}  // namespace rulkit
