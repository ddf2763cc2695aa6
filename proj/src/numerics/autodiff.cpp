#include "pdiff/autodiff.hpp"

#include <cmath>
#include <stdexcept>

namespace pdiff {

const Tensor& Var::value() const { return graph->value(id); }
bool Var::requires_grad() const { return graph->requires_grad(id); }

Var Graph::constant(Tensor value) {
  nodes_.push_back(Node{std::move(value), {}, false, false, {}});
  return Var{this, static_cast<int>(nodes_.size() - 1)};
}

Var Graph::variable(Tensor value) {
  nodes_.push_back(Node{std::move(value), {}, false, true, {}});
  return Var{this, static_cast<int>(nodes_.size() - 1)};
}

Var Graph::record(Tensor value, std::initializer_list<Var> inputs, BackwardFn fn) {
  bool any = false;
  for (const Var& v : inputs) {
    if (v.graph != this) throw std::invalid_argument("operands belong to different graphs");
    any = any || nodes_[v.id].requires_grad;
  }
  nodes_.push_back(Node{std::move(value), {}, false, any, any ? std::move(fn) : BackwardFn{}});
  return Var{this, static_cast<int>(nodes_.size() - 1)};
}

Var Graph::record(Tensor value, const std::vector<Var>& inputs, BackwardFn fn) {
  bool any = false;
  for (const Var& v : inputs) {
    if (v.graph != this) throw std::invalid_argument("operands belong to different graphs");
    any = any || nodes_[v.id].requires_grad;
  }
  nodes_.push_back(Node{std::move(value), {}, false, any, any ? std::move(fn) : BackwardFn{}});
  return Var{this, static_cast<int>(nodes_.size() - 1)};
}

Tensor& Graph::grad_buffer(int id) {
  Node& n = nodes_[id];
  if (!n.has_grad) {
    n.grad = Tensor::zeros_like(n.value);
    n.has_grad = true;
  }
  return n.grad;
}

Tensor Graph::grad(Var v) const {
  const Node& n = nodes_[v.id];
  return n.has_grad ? n.grad : Tensor::zeros_like(n.value);
}

void Graph::backward(Var loss) {
  if (loss.graph != this) throw std::invalid_argument("loss belongs to a different graph");
  const Tensor& lv = nodes_[loss.id].value;
  if (lv.size() != 1) throw std::invalid_argument("backward() needs a scalar loss, got " + shape_str(lv.shape()));
  if (!std::isfinite(lv[0])) throw std::domain_error("non-finite loss");
  if (!nodes_[loss.id].requires_grad) return;
  grad_buffer(loss.id)[0] += 1.0;
  for (int id = loss.id; id >= 0; --id) {
    Node& n = nodes_[id];
    if (n.has_grad && n.backward) n.backward(*this, id);
  }
}

BoundParams::BoundParams(Graph& graph, const ParamSet& params, bool requires_grad) : graph_(&graph) {
  for (const auto& [name, t] : params) {
    order_.push_back(name);
    vars_.emplace(name, requires_grad ? graph.variable(t) : graph.constant(t));
  }
}

Var BoundParams::operator[](const std::string& name) const {
  auto it = vars_.find(name);
  if (it == vars_.end()) throw std::out_of_range("unbound parameter '" + name + "'");
  return it->second;
}

ParamSet BoundParams::grads() const {
  ParamSet out;
  for (const auto& name : order_) out.add(name, graph_->grad(vars_.at(name)));
  return out;
}

ParamSet grad(const std::function<Var(Graph&, const BoundParams&)>& loss, const ParamSet& params,
              double* loss_value) {
  Graph g;
  BoundParams bound(g, params);
  Var l = loss(g, bound);
  g.backward(l);
  if (loss_value) *loss_value = l.value().item();
  return bound.grads();
}

}  // namespace pdiff
