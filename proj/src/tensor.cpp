#include "rulkit/tensor.hpp"

#include <atomic>
#include <chrono>
#include <ctime>
#include <iostream>
#include <unordered_set>

namespace rulkit {

void warn(const std::string& msg) { std::cerr << "warning: " << msg << std::endl; }

std::string iso_timestamp() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

namespace detail {

namespace {
std::atomic<std::uint64_t> g_next_id{1};
thread_local bool g_grad_enabled = true;
}  // namespace

bool grad_enabled() { return g_grad_enabled; }
void set_grad_enabled(bool on) { g_grad_enabled = on; }

void accumulate(Node& node, const Vec& g) {
  if (!node.requires_grad) return;
  if (node.grad.size() == 0) node.grad = Vec::Zero(node.value.size());
  node.grad += g;
}

}  // namespace detail

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return from(std::move(shape), Vec(), requires_grad);
}

Tensor Tensor::full(Shape shape, double v, bool requires_grad) {
  const Eigen::Index n = shape_size(shape);
  return from(std::move(shape), Vec::Constant(n, v), requires_grad);
}

Tensor Tensor::from(Shape shape, Vec data, bool requires_grad) {
  const Eigen::Index n = shape_size(shape);
  if (data.size() == 0) data = Vec::Zero(n);
  RULKIT_CHECK_SHAPE(data.size() == n, "tensor data length " << data.size()
                                           << " does not match shape " << shape_str(shape));
  auto node = std::make_shared<detail::Node>();
  node->shape = std::move(shape);
  node->value = std::move(data);
  node->requires_grad = requires_grad;
  node->id = detail::g_next_id.fetch_add(1, std::memory_order_relaxed);
  return Tensor(std::move(node));
}

Tensor Tensor::scalar(double v, bool requires_grad) {
  return from(Shape{}, Vec::Constant(1, v), requires_grad);
}

const Shape& Tensor::shape() const {
  RULKIT_CHECK(defined(), "use of undefined tensor");
  return node_->shape;
}

Eigen::Index Tensor::size() const { return value().size(); }

Vec& Tensor::value() {
  RULKIT_CHECK(defined(), "use of undefined tensor");
  return node_->value;
}

const Vec& Tensor::value() const {
  RULKIT_CHECK(defined(), "use of undefined tensor");
  return node_->value;
}

double Tensor::item() const {
  RULKIT_CHECK_SHAPE(size() == 1, "item() requires a single-element tensor, got shape "
                                      << shape_str(shape()));
  return value()(0);
}

bool Tensor::requires_grad() const { return defined() && node_->requires_grad; }

bool Tensor::has_grad() const { return defined() && node_->grad.size() > 0; }

Vec& Tensor::grad() {
  RULKIT_CHECK(defined(), "use of undefined tensor");
  if (node_->grad.size() == 0) node_->grad = Vec::Zero(node_->value.size());
  return node_->grad;
}

const Vec& Tensor::grad() const {
  RULKIT_CHECK(has_grad(), "tensor has no gradient buffer");
  return node_->grad;
}

void Tensor::zero_grad() {
  if (defined() && node_->grad.size() > 0) node_->grad.setZero();
}

std::uint64_t Tensor::id() const {
  RULKIT_CHECK(defined(), "use of undefined tensor");
  return node_->id;
}

Tensor Tensor::detach(bool requires_grad) const {
  return Tensor::from(shape(), value(), requires_grad);
}

Tensor make_op(Shape shape, Vec value, std::vector<Tensor> parents,
               std::function<void(detail::Node&)> backward_fn) {
  bool needs_grad = false;
  if (detail::grad_enabled()) {
    for (const auto& p : parents)
      if (p.requires_grad()) needs_grad = true;
  }
  auto out = Tensor::from(std::move(shape), std::move(value), false);
  if (needs_grad) {
    auto node = out.node();
    node->requires_grad = true;
    node->parents.reserve(parents.size());
    for (const auto& p : parents) node->parents.push_back(p.node());
    node->backward_fn = std::move(backward_fn);
  }
  return out;
}

void backward(const Tensor& loss) {
  RULKIT_CHECK(loss.defined(), "backward() on undefined tensor");
  RULKIT_CHECK(loss.size() == 1,
               "backward() requires a scalar loss, got shape " << shape_str(loss.shape()));

  // Iterative post-order DFS to get a topological order of the graph.
  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> visited;
  std::vector<std::pair<detail::Node*, std::size_t>> stack;
  stack.emplace_back(loss.node().get(), 0);
  visited.insert(loss.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      detail::Node* parent = node->parents[next++].get();
      if (parent->requires_grad && !visited.count(parent)) {
        visited.insert(parent);
        stack.emplace_back(parent, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  detail::accumulate(*loss.node(), Vec::Constant(1, 1.0));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::Node* node = *it;
    if (node->backward_fn && node->grad.size() > 0) node->backward_fn(*node);
  }
}

}  // namespace rulkit
