#pragma once

#include <deque>
#include <functional>

#include "byols/nn/tensor.hpp"

namespace byols::nn {

class Graph;

/// Handle to a node on a Graph tape.
struct Var {
  Graph* graph = nullptr;
  int id = -1;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape; }
  Index dim(int axis) const { return value().dim(axis); }
  bool needs_grad() const;
};

/// Reverse-mode tape. Nodes are appended in evaluation order; backward() walks
/// them in reverse and accumulates into Parameter::grad for parameter leaves.
class Graph {
 public:
  Var constant(Tensor value);
  /// Leaf bound to a parameter. Untracked parameters behave like constants.
  Var param(Parameter& p, bool tracked = true);

  /// Appends a computed node. `backward` runs only when some parent needs a gradient.
  Var emit(Tensor value, std::initializer_list<Var> parents, std::function<void(const Tensor& grad_out)> backward);
  Var emit(Tensor value, const std::vector<Var>& parents, std::function<void(const Tensor& grad_out)> backward);

  const Tensor& value(int id) const { return nodes_[static_cast<std::size_t>(id)].value; }
  bool needs_grad(int id) const { return nodes_[static_cast<std::size_t>(id)].needs_grad; }
  /// Gradient accumulator for a node, zero-initialised on first access.
  Tensor& grad(int id);

  /// Seeds d(root)/d(root) = 1 for a scalar root and propagates.
  void backward(Var root);

  /// Order-sensitive fingerprint of every branch decision (ReLU masks, max
  /// selections). Finite differences are only valid when it is unchanged.
  std::uint64_t kink_signature() const { return kinks_; }
  void mix_kink(std::uint64_t v) {
    kinks_ ^= v + 0x9e3779b97f4a7c15ULL + (kinks_ << 6) + (kinks_ >> 2);
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool has_grad = false;
    bool needs_grad = false;
    Parameter* param = nullptr;
    std::function<void(const Tensor&)> backward;
  };
  std::deque<Node> nodes_;
  std::uint64_t kinks_ = 0;
};

}  // namespace byols::nn
