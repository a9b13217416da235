#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <unordered_set>
#include <utility>
#include <vector>

#include "msfa/tensor.hpp"

namespace msfa {

namespace detail {

inline bool& grad_enabled_flag() {
  thread_local bool enabled = true;
  return enabled;
}

inline std::uint64_t*& kink_sink() {
  thread_local std::uint64_t* sink = nullptr;
  return sink;
}

}  // namespace detail

/// Disables graph recording for the current thread while alive.
class NoGradGuard {
 public:
  NoGradGuard() : prev_(detail::grad_enabled_flag()) { detail::grad_enabled_flag() = false; }
  ~NoGradGuard() { detail::grad_enabled_flag() = prev_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

inline bool grad_enabled() { return detail::grad_enabled_flag(); }

/// Collects a hash of every piecewise branch decision (relu masks, pooling
/// argmaxes, clamps) taken while alive. Two forward passes that produce the
/// same signature lie on the same smooth piece of the function.
class KinkProbe {
 public:
  KinkProbe() : prev_(detail::kink_sink()) { detail::kink_sink() = &hash_; }
  ~KinkProbe() { detail::kink_sink() = prev_; }
  KinkProbe(const KinkProbe&) = delete;
  KinkProbe& operator=(const KinkProbe&) = delete;

  [[nodiscard]] std::uint64_t signature() const { return hash_; }

 private:
  std::uint64_t hash_ = 1469598103934665603ull;
  std::uint64_t* prev_;
};

inline void record_branch(std::uint64_t decision) {
  if (auto* sink = detail::kink_sink()) {
    *sink ^= decision + 0x9e3779b97f4a7c15ull + (*sink << 6) + (*sink >> 2);
  }
}

struct Node {
  Tensor value;
  Tensor grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  Tensor& grad_buffer() {
    if (grad.shape() != value.shape())
      grad = Tensor(value.shape());
    return grad;
  }
};

/// Handle to a node in the computation graph. Copies share the node.
class Var {
 public:
  Var() = default;
  explicit Var(Tensor value, bool requires_grad = false) : node_(std::make_shared<Node>()) {
    node_->value = std::move(value);
    node_->requires_grad = requires_grad;
  }

  [[nodiscard]] const Tensor& value() const { return node_->value; }
  [[nodiscard]] Tensor& mutable_value() { return node_->value; }
  [[nodiscard]] const Tensor& grad() const { return node_->grad; }
  [[nodiscard]] Tensor& mutable_grad() { return node_->grad_buffer(); }
  [[nodiscard]] const Shape& shape() const { return node_->value.shape(); }
  [[nodiscard]] bool requires_grad() const { return node_ && node_->requires_grad; }
  [[nodiscard]] bool defined() const { return static_cast<bool>(node_); }
  [[nodiscard]] const std::shared_ptr<Node>& node() const { return node_; }

  /// Scalar value of a 1-element tensor.
  [[nodiscard]] Real item() const {
    if (node_->value.size() != 1) throw ShapeError("item() on non-scalar " + to_string(shape()));
    return node_->value[0];
  }

  void zero_grad() {
    if (node_) node_->grad = Tensor();
  }

  /// Builds a result node. The backward closure receives the result node and
  /// accumulates into the parents' grad buffers; it is dropped when no input
  /// needs a gradient or recording is disabled.
  static Var make(Tensor value, std::vector<Var> inputs, std::function<void(Node&)> backward) {
    Var out(std::move(value));
    if (!grad_enabled()) return out;
    bool needs = false;
    for (const auto& in : inputs) needs = needs || in.requires_grad();
    if (!needs) return out;
    out.node_->requires_grad = true;
    out.node_->parents.reserve(inputs.size());
    for (auto& in : inputs)
      if (in.requires_grad()) out.node_->parents.push_back(in.node_);
    out.node_->backward = std::move(backward);
    return out;
  }

 private:
  std::shared_ptr<Node> node_;
};

/// Reverse-mode sweep from a scalar root. Leaf gradients accumulate.
inline void backward(const Var& root) {
  if (root.value().size() != 1) throw ShapeError("backward() requires a scalar root");
  if (!root.requires_grad()) return;

  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack{{root.node().get(), 0}};
  seen.insert(root.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* p = node->parents[next++].get();
      if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  root.node()->grad_buffer().fill(1.0);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward && !n->grad.empty()) n->backward(*n);
    // Interior buffers are no longer needed once propagated.
    if (!n->parents.empty() && n != root.node().get()) n->grad = Tensor();
  }
}

}  // namespace msfa
