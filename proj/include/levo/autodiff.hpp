#pragma once

#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "levo/tensor.hpp"

namespace levo::ad {

struct Var {
  std::int64_t id = -1;
  bool valid() const { return id >= 0; }
};

// Wengert-list tape. Nodes are appended in evaluation order, which is already
// a topological order, so backward is a reverse sweep.
template <typename T>
class Graph {
 public:
  struct Node {
    Shape shape;
    std::vector<T> value;
    std::vector<T> grad;
    bool needs_grad = false;
    std::function<void(Graph&)> backward;
    std::string param;
  };

  explicit Graph(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}

  Var constant(BasicTensor<T> t);
  Var constant(Shape shape, std::vector<T> values);
  // Leaf bound to a named parameter; repeated calls return the same node.
  Var parameter(const BasicParamStore<T>& store, const std::string& name);

  Var make(Shape shape, std::vector<T> value, std::initializer_list<Var> inputs);

  const Node& node(Var v) const { return nodes_[static_cast<std::size_t>(v.id)]; }
  Node& node(Var v) { return nodes_[static_cast<std::size_t>(v.id)]; }
  const std::vector<T>& value(Var v) const { return node(v).value; }
  const Shape& shape(Var v) const { return node(v).shape; }
  T scalar(Var v) const;
  BasicTensor<T> tensor(Var v) const { return BasicTensor<T>(node(v).shape, node(v).value); }
  bool needs_grad(Var v) const { return node(v).needs_grad; }
  bool grad_enabled() const { return grad_enabled_; }

  // Gradient buffer of `v`, zero-filled on first access.
  std::vector<T>& grad_buffer(Var v);
  void set_backward(Var v, std::function<void(Graph&)> fn) { node(v).backward = std::move(fn); }

  void backward(Var loss);
  const std::map<std::string, Var>& bound_params() const { return params_; }
  std::size_t size() const { return nodes_.size(); }

 private:
  std::vector<Node> nodes_;
  std::map<std::string, Var> params_;
  bool grad_enabled_;
};

// Reverse-mode gradient of a scalar loss with respect to every non-frozen
// parameter of `params`. Parameters not reachable from the loss get zeros.
template <typename T>
GradMap<T> grad(Graph<T>& g, Var loss, const BasicParamStore<T>& params);

template <typename T> Var add(Graph<T>& g, Var a, Var b);
template <typename T> Var sub(Graph<T>& g, Var a, Var b);
template <typename T> Var mul(Graph<T>& g, Var a, Var b);
template <typename T> Var scale(Graph<T>& g, Var a, T s);
template <typename T> Var sum(Graph<T>& g, Var a);
template <typename T> Var mean(Graph<T>& g, Var a);
template <typename T> Var matmul(Graph<T>& g, Var a, Var b);
// x[n, in] * w[in, out] + b[out]; `b` may be an invalid Var.
template <typename T> Var linear(Graph<T>& g, Var x, Var w, Var b);
template <typename T> Var gelu(Graph<T>& g, Var x);
template <typename T> Var tanh(Graph<T>& g, Var x);
template <typename T> Var log_sigmoid(Graph<T>& g, Var x);
template <typename T> Var layer_norm(Graph<T>& g, Var x, Var gamma, Var beta);
// Rows of `table` selected by `ids`.
template <typename T> Var embedding(Graph<T>& g, Var table, std::span<const int> ids);
template <typename T> Var gather_rows(Graph<T>& g, Var x, std::span<const int> rows);
template <typename T> Var slice_rows(Graph<T>& g, Var x, std::int64_t begin, std::int64_t end);
template <typename T> Var concat_cols(Graph<T>& g, std::span<const Var> parts);
template <typename T> Var concat_rows(Graph<T>& g, std::span<const Var> parts);
// Multi-head causal self-attention over a packed [n, 3*d] q|k|v tensor.
template <typename T> Var causal_attention(Graph<T>& g, Var qkv, std::int64_t heads);
// Sum over rows of -log softmax(logits)[target]; rows with target < 0 skipped.
template <typename T> Var nll_sum(Graph<T>& g, Var logits, std::span<const int> targets);
// Mean of the above over non-ignored rows; throws if every row is ignored.
template <typename T> Var cross_entropy(Graph<T>& g, Var logits, std::span<const int> targets);
// Piecewise-constant rounding; has no derivative, so backward through it fails.
template <typename T> Var round(Graph<T>& g, Var x);

constexpr int kIgnoreTarget = -1;

}  // namespace levo::ad
