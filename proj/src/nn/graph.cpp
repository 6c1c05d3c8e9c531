#include "byols/nn/graph.hpp"

#include "byols/error.hpp"

namespace byols::nn {

const Tensor& Var::value() const {
  require(graph != nullptr, "null variable");
  return graph->value(id);
}

bool Var::needs_grad() const { return graph != nullptr && graph->needs_grad(id); }

Var Graph::constant(Tensor value) {
  Node& n = nodes_.emplace_back();
  n.value = std::move(value);
  return {this, static_cast<int>(nodes_.size() - 1)};
}

Var Graph::param(Parameter& p, bool tracked) {
  Node& n = nodes_.emplace_back();
  n.value = p.value;
  if (tracked && p.trainable) {
    n.needs_grad = true;
    n.param = &p;
  }
  return {this, static_cast<int>(nodes_.size() - 1)};
}

Var Graph::emit(Tensor value, std::initializer_list<Var> parents, std::function<void(const Tensor&)> backward) {
  return emit(std::move(value), std::vector<Var>(parents), std::move(backward));
}

Var Graph::emit(Tensor value, const std::vector<Var>& parents, std::function<void(const Tensor&)> backward) {
  bool needs = false;
  for (const Var& p : parents) {
    if (p.graph == nullptr) continue;
    require(p.graph == this, "variables from different graphs");
    needs = needs || nodes_[static_cast<std::size_t>(p.id)].needs_grad;
  }
  Node& n = nodes_.emplace_back();
  n.value = std::move(value);
  n.needs_grad = needs;
  if (needs) n.backward = std::move(backward);
  return {this, static_cast<int>(nodes_.size() - 1)};
}

Tensor& Graph::grad(int id) {
  Node& n = nodes_[static_cast<std::size_t>(id)];
  if (!n.has_grad) {
    n.grad = Tensor(n.value.shape, 0.0);
    n.has_grad = true;
  }
  return n.grad;
}

void Graph::backward(Var root) {
  require(root.graph == this, "backward root belongs to another graph");
  require(value(root.id).size() == 1, "backward needs a scalar root");
  if (!needs_grad(root.id)) return;
  grad(root.id).data.setOnes();
  for (int i = root.id; i >= 0; --i) {
    Node& n = nodes_[static_cast<std::size_t>(i)];
    if (!n.has_grad || !n.needs_grad) continue;
    if (n.backward) n.backward(n.grad);
    if (n.param != nullptr) {
      if (n.param->grad.size() != n.param->value.size()) n.param->grad = Tensor(n.param->value.shape, 0.0);
      n.param->grad.data += n.grad.data;
    }
    // Interior gradients are no longer needed once propagated.
    n.grad = Tensor();
    n.has_grad = false;
  }
}

}  // namespace byols::nn
