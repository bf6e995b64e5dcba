#pragma once

#include <functional>
#include <initializer_list>
#include <memory>
#include <vector>

#include "catnet/errors.hpp"

namespace catnet {

using Shape = std::vector<int>;

long long shape_size(const Shape& shape);

class Graph;

// Immutable dense tensor of doubles in row-major order. Copies are cheap
// (shared storage). The only mutable aspect is the gradient slot, which the
// owning Graph fills during backward().
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(const Shape& shape);
  static Tensor full(const Shape& shape, double fill);
  static Tensor from_values(const Shape& shape, std::vector<double> values);
  static Tensor from_shared(const Shape& shape, std::shared_ptr<const std::vector<double>> values);
  static Tensor scalar(double value);

  bool defined() const { return values_ != nullptr; }
  const Shape& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  long long size() const;

  const std::vector<double>& values() const;
  std::shared_ptr<const std::vector<double>> values_ptr() const { return values_; }
  double at(long long flat_index) const;

  bool has_grad() const { return grad_ && !grad_->empty(); }
  const std::vector<double>& grad() const;

  Graph* graph() const { return graph_; }
  int node() const { return node_; }

  // Copy that carries values only: no graph linkage, no gradient slot.
  Tensor detached() const;

 private:
  friend class Graph;

  Shape shape_;
  std::shared_ptr<const std::vector<double>> values_;
  std::shared_ptr<std::vector<double>> grad_;
  Graph* graph_ = nullptr;
  int node_ = -1;
};

// dL/d(node) arrays indexed by node id.
using GradientMap = std::vector<std::vector<double>>;

// Eager tape. Ops append nodes as they execute; backward walks the tape in
// reverse insertion order. A graph is built per training step and discarded
// after backward.
class Graph {
 public:
  using BackFn = std::function<void(const std::vector<double>& upstream,
                                    const std::vector<std::vector<double>*>& input_grads)>;

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  // Registers a differentiation leaf. The returned copy is tracked on this
  // graph; the original tensor keeps the shared gradient slot so callers can
  // read gradients from it after backward.
  Tensor param(Tensor& t);

  GradientMap backward(const Tensor& loss);

  int num_nodes() const { return static_cast<int>(nodes_.size()); }
  const char* node_op(int id) const { return nodes_[id].op; }

  // Recording machinery for op implementations. `tracking` returns the graph
  // the listed tensors agree on (nullptr when none is tracked) and rejects
  // tensors from two different graphs.
  static Graph* tracking(std::initializer_list<const Tensor*> inputs);
  void record(Tensor& out, const char* op, std::initializer_list<const Tensor*> inputs, BackFn fn);

 private:
  struct NodeRec {
    const char* op;
    std::vector<int> inputs;
    long long size;
    std::shared_ptr<std::vector<double>> slot;
    BackFn fn;
    std::vector<double> grad;
  };

  std::vector<NodeRec> nodes_;
  std::vector<std::pair<const void*, int>> leaves_;  // value identity -> node id
};

enum class Act { Relu, Gelu };

// Elementwise ops accept identical shapes or a scalar right operand.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor softmax(const Tensor& x, int axis);
Tensor activation(const Tensor& x, Act kind);
Tensor relu(const Tensor& x);
Tensor gelu(const Tensor& x);
Tensor sum(const Tensor& x);
Tensor reshape(const Tensor& x, const Shape& shape);

}  // namespace catnet
