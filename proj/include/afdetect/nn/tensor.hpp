#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <string>
#include <unordered_set>
#include <vector>

#include "afdetect/errors.hpp"

namespace afdetect::nn {

using Shape = std::vector<int>;

inline std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (int d : s) {
    if (d <= 0) throw ShapeMismatch("non-positive dimension");
    n *= static_cast<std::size_t>(d);
  }
  return n;
}

inline std::string shape_string(const Shape& s) {
  std::string out = "(";
  for (std::size_t i = 0; i < s.size(); ++i)
    out += (i ? "," : "") + std::to_string(s[i]);
  return out + ")";
}

template <class Real>
struct Node {
  Shape shape;
  std::vector<Real> value;
  std::vector<Real> grad;  // sized lazily, on first accumulation
  bool requires_grad = false;
  bool leaf = true;
  bool consumed = false;
  std::vector<std::shared_ptr<Node>> parents;
  // Reads this->grad and accumulates into parents' grads.
  std::function<void(Node&)> backprop;

  void ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), Real(0));
  }
};

// Value-semantics handle over a shared autodiff node. Non-leaf tensors record
// their producing operation; calling backward() on a scalar result fills the
// grad of every reachable requires_grad tensor.
template <class Real>
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(Shape shape, Real fill = Real(0), bool requires_grad = false)
      : node_(std::make_shared<Node<Real>>()) {
    node_->value.assign(shape_numel(shape), fill);
    node_->shape = std::move(shape);
    node_->requires_grad = requires_grad;
  }

  Tensor(Shape shape, std::vector<Real> values, bool requires_grad = false)
      : node_(std::make_shared<Node<Real>>()) {
    if (shape_numel(shape) != values.size())
      throw ShapeMismatch("value count does not match shape " +
                          shape_string(shape));
    node_->shape = std::move(shape);
    node_->value = std::move(values);
    node_->requires_grad = requires_grad;
  }

  static Tensor scalar(Real v) { return Tensor({1}, std::vector<Real>{v}); }

  static Tensor from_op(Shape shape, std::vector<Real> value,
                        std::vector<Tensor> parents,
                        std::function<void(Node<Real>&)> backprop) {
    Tensor t(std::move(shape), std::move(value));
    t.node_->leaf = false;
    bool needs = false;
    for (const Tensor& p : parents) needs = needs || p.requires_grad();
    if (needs) {
      t.node_->requires_grad = true;
      for (Tensor& p : parents) t.node_->parents.push_back(p.node_);
      t.node_->backprop = std::move(backprop);
    }
    return t;
  }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  int dim(std::size_t i) const { return node_->shape[i]; }
  std::size_t ndim() const { return node_->shape.size(); }
  std::size_t size() const { return node_->value.size(); }

  std::vector<Real>& values() { return node_->value; }
  const std::vector<Real>& values() const { return node_->value; }
  std::vector<Real>& grad() {
    node_->ensure_grad();
    return node_->grad;
  }
  bool has_grad() const { return node_->grad.size() == node_->value.size(); }
  void zero_grad() { node_->grad.assign(node_->value.size(), Real(0)); }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool b) { node_->requires_grad = b; }

  Real item() const {
    if (size() != 1) throw NotScalar("item() on non-scalar tensor");
    return node_->value[0];
  }

  std::shared_ptr<Node<Real>>& node() { return node_; }
  const std::shared_ptr<Node<Real>>& node() const { return node_; }

  // Asserts every entry is finite; NaN/Inf is a contract violation.
  void check_finite(const char* where = "tensor") const {
    for (Real v : node_->value)
      if (!std::isfinite(static_cast<double>(v)))
        throw Error(std::string("non-finite value in ") + where);
  }

 private:
  std::shared_ptr<Node<Real>> node_;
};

// Reverse-mode sweep from a scalar loss. The recorded graph is consumable
// exactly once; parameters (leaf tensors) accumulate into their grads.
template <class Real>
inline void backward(Tensor<Real>& loss) {
  if (loss.size() != 1) throw NotScalar("backward() requires a scalar loss");
  auto root = loss.node();
  if (root->consumed) throw GraphConsumed("backward() already ran on this graph");
  if (!root->requires_grad) return;

  // iterative post-order DFS for topological order
  std::vector<Node<Real>*> order;
  std::unordered_set<Node<Real>*> seen;
  std::vector<std::pair<Node<Real>*, std::size_t>> stack;
  stack.emplace_back(root.get(), 0);
  seen.insert(root.get());
  while (!stack.empty()) {
    auto& [node, next_child] = stack.back();
    if (next_child < node->parents.size()) {
      Node<Real>* child = node->parents[next_child++].get();
      if (child->requires_grad && !seen.count(child)) {
        seen.insert(child);
        stack.emplace_back(child, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  for (Node<Real>* n : order) n->ensure_grad();
  root->grad[0] = Real(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<Real>* n = *it;
    if (n->backprop) n->backprop(*n);
    if (!n->leaf) {
      n->consumed = true;
      n->backprop = nullptr;  // release captured buffers
    }
  }
  root->consumed = true;
}

namespace detail {

template <class Real>
inline void accumulate(Node<Real>& parent, const Real* g, std::size_t n) {
  if (!parent.requires_grad) return;
  parent.ensure_grad();
  for (std::size_t i = 0; i < n; ++i) parent.grad[i] += g[i];
}

}  // namespace detail

}  // namespace afdetect::nn
