#pragma once

#include <deque>
#include <functional>
#include <initializer_list>
#include <string>
#include <unordered_map>
#include <vector>

#include "pdiff/params.hpp"
#include "pdiff/tensor.hpp"

namespace pdiff {

class Graph;

/// Handle to a value recorded on a Graph. Cheap to copy; only valid while the
/// owning Graph is alive.
struct Var {
  Graph* graph = nullptr;
  int id = -1;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
  bool requires_grad() const;
};

/// Reverse-mode tape. Every op appends one node; backward() walks the tape in
/// reverse and accumulates adjoints into nodes that require gradients.
class Graph {
 public:
  using BackwardFn = std::function<void(Graph&, int self)>;

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var constant(Tensor value);
  Var variable(Tensor value);

  /// Seeds d(loss)/d(loss) = 1 and propagates. The loss must hold a single
  /// finite value.
  void backward(Var loss);

  const Tensor& value(int id) const { return nodes_[id].value; }
  bool requires_grad(int id) const { return nodes_[id].requires_grad; }
  bool has_grad(int id) const { return nodes_[id].has_grad; }
  /// Gradient of a node after backward(); zeros if nothing flowed into it.
  Tensor grad(Var v) const;
  const Tensor& grad_ref(int id) const { return nodes_[id].grad; }
  /// Zero-initialized on first access.
  Tensor& grad_buffer(int id);

  Var record(Tensor value, std::initializer_list<Var> inputs, BackwardFn fn);
  Var record(Tensor value, const std::vector<Var>& inputs, BackwardFn fn);

  std::size_t node_count() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool has_grad = false;
    bool requires_grad = false;
    BackwardFn backward;
  };
  std::deque<Node> nodes_;
};

/// Leaves for every tensor of a ParamSet, in ParamSet order.
class BoundParams {
 public:
  BoundParams(Graph& graph, const ParamSet& params, bool requires_grad = true);

  Var operator[](const std::string& name) const;
  bool contains(const std::string& name) const { return vars_.count(name) != 0; }
  Graph& graph() const { return *graph_; }
  /// Gradients keyed by parameter name; zeros where no gradient flowed.
  ParamSet grads() const;

 private:
  Graph* graph_;
  std::vector<std::string> order_;
  std::unordered_map<std::string, Var> vars_;
};

/// Runs `loss` on a fresh graph with `params` bound and returns the named
/// gradients. Throws on a non-finite loss.
ParamSet grad(const std::function<Var(Graph&, const BoundParams&)>& loss, const ParamSet& params,
              double* loss_value = nullptr);

}  // namespace pdiff
