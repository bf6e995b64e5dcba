#include "catnet/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <utility>

namespace catnet {

long long shape_size(const Shape& shape) {
  if (shape.empty()) throw SizeError("tensor shape must be nonempty");
  long long n = 1;
  for (int d : shape) {
    if (d < 1) throw SizeError("tensor dimensions must be >= 1, got " + std::to_string(d));
    n *= d;
  }
  return n;
}

Tensor Tensor::zeros(const Shape& shape) { return full(shape, 0.0); }

Tensor Tensor::full(const Shape& shape, double fill) {
  const long long n = shape_size(shape);
  Tensor t;
  t.shape_ = shape;
  t.values_ = std::make_shared<std::vector<double>>(static_cast<std::size_t>(n), fill);
  return t;
}

Tensor Tensor::from_values(const Shape& shape, std::vector<double> values) {
  const long long n = shape_size(shape);
  if (n != static_cast<long long>(values.size())) {
    throw SizeError("shape holds " + std::to_string(n) + " elements but " +
                    std::to_string(values.size()) + " values were given");
  }
  Tensor t;
  t.shape_ = shape;
  t.values_ = std::make_shared<std::vector<double>>(std::move(values));
  return t;
}

Tensor Tensor::from_shared(const Shape& shape, std::shared_ptr<const std::vector<double>> values) {
  const long long n = shape_size(shape);
  if (!values || n != static_cast<long long>(values->size())) {
    throw SizeError("shape holds " + std::to_string(n) + " elements but storage differs");
  }
  Tensor t;
  t.shape_ = shape;
  t.values_ = std::move(values);
  return t;
}

Tensor Tensor::scalar(double value) { return from_values({1}, {value}); }

long long Tensor::size() const {
  return values_ ? static_cast<long long>(values_->size()) : 0;
}

const std::vector<double>& Tensor::values() const {
  if (!values_) throw GraphError("tensor is not defined");
  return *values_;
}

double Tensor::at(long long flat_index) const {
  const auto& v = values();
  if (flat_index < 0 || flat_index >= static_cast<long long>(v.size())) {
    throw IndexError("flat index " + std::to_string(flat_index) + " out of range");
  }
  return v[static_cast<std::size_t>(flat_index)];
}

const std::vector<double>& Tensor::grad() const {
  if (!has_grad()) throw GraphError("tensor has no gradient; run backward on its graph first");
  return *grad_;
}

Tensor Tensor::detached() const {
  Tensor t;
  t.shape_ = shape_;
  t.values_ = values_;
  return t;
}

Tensor Graph::param(Tensor& t) {
  if (!t.defined()) throw GraphError("cannot register an undefined tensor as a parameter");
  if (t.graph_ == this && t.node_ >= 0) return t;
  if (t.graph_ != nullptr && t.graph_ != this) {
    throw GraphError("tensor already belongs to a different graph");
  }
  const void* identity = static_cast<const void*>(t.values_.get());
  for (const auto& [ptr, id] : leaves_) {
    if (ptr == identity) {
      Tensor out = t;
      out.graph_ = this;
      out.node_ = id;
      return out;
    }
  }
  if (!t.grad_) t.grad_ = std::make_shared<std::vector<double>>();
  Tensor out = t;
  out.graph_ = this;
  out.node_ = static_cast<int>(nodes_.size());
  nodes_.push_back(NodeRec{"param", {}, t.size(), t.grad_, nullptr, {}});
  leaves_.emplace_back(identity, out.node_);
  return out;
}

Graph* Graph::tracking(std::initializer_list<const Tensor*> inputs) {
  Graph* g = nullptr;
  for (const Tensor* t : inputs) {
    if (!t->graph_) continue;
    if (g && g != t->graph_) throw GraphError("operands belong to different graphs");
    g = t->graph_;
  }
  return g;
}

void Graph::record(Tensor& out, const char* op, std::initializer_list<const Tensor*> inputs,
                   BackFn fn) {
  NodeRec n;
  n.op = op;
  for (const Tensor* t : inputs) {
    n.inputs.push_back(t->graph_ == this ? t->node_ : -1);
  }
  n.size = out.size();
  out.grad_ = std::make_shared<std::vector<double>>();
  out.graph_ = this;
  out.node_ = static_cast<int>(nodes_.size());
  n.slot = out.grad_;
  n.fn = std::move(fn);
  nodes_.push_back(std::move(n));
}

GradientMap Graph::backward(const Tensor& loss) {
  if (loss.graph_ != this || loss.node_ < 0) {
    throw GraphError("loss tensor is not recorded on this graph");
  }
  if (loss.size() != 1) throw RankError("backward requires a scalar loss");

  for (auto& n : nodes_) n.grad.assign(static_cast<std::size_t>(n.size), 0.0);
  nodes_[static_cast<std::size_t>(loss.node_)].grad[0] = 1.0;

  for (int i = loss.node_; i >= 0; --i) {
    NodeRec& n = nodes_[static_cast<std::size_t>(i)];
    if (!n.fn) continue;
    std::vector<std::vector<double>*> input_grads;
    input_grads.reserve(n.inputs.size());
    for (int id : n.inputs) {
      input_grads.push_back(id >= 0 ? &nodes_[static_cast<std::size_t>(id)].grad : nullptr);
    }
    n.fn(n.grad, input_grads);
  }

  GradientMap out(nodes_.size());
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    if (nodes_[i].slot) *nodes_[i].slot = nodes_[i].grad;
    out[i] = std::move(nodes_[i].grad);
  }
  return out;
}

namespace {

enum class EwMode { Same, ScalarRhs };

EwMode elementwise_mode(const Tensor& a, const Tensor& b) {
  if (!a.defined() || !b.defined()) throw GraphError("elementwise op on undefined tensor");
  if (a.shape() == b.shape()) return EwMode::Same;
  if (b.size() == 1) return EwMode::ScalarRhs;
  throw ShapeError("elementwise operands need identical shapes or a scalar right operand");
}

struct AxisSplit {
  long long outer, n, inner;
};

AxisSplit split_axis(const Shape& shape, int axis) {
  if (axis < 0 || axis >= static_cast<int>(shape.size())) {
    throw AxisError("axis " + std::to_string(axis) + " out of range for rank " +
                    std::to_string(shape.size()));
  }
  AxisSplit s{1, shape[static_cast<std::size_t>(axis)], 1};
  for (int i = 0; i < axis; ++i) s.outer *= shape[static_cast<std::size_t>(i)];
  for (int i = axis + 1; i < static_cast<int>(shape.size()); ++i) {
    s.inner *= shape[static_cast<std::size_t>(i)];
  }
  return s;
}

constexpr double kGeluScale = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluCubic = 0.044715;

double gelu_value(double x) {
  const double u = kGeluScale * (x + kGeluCubic * x * x * x);
  return 0.5 * x * (1.0 + std::tanh(u));
}

double gelu_derivative(double x) {
  const double u = kGeluScale * (x + kGeluCubic * x * x * x);
  const double t = std::tanh(u);
  const double du = kGeluScale * (1.0 + 3.0 * kGeluCubic * x * x);
  return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  const EwMode mode = elementwise_mode(a, b);
  const auto& av = a.values();
  const auto& bv = b.values();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) {
    out[i] = av[i] + (mode == EwMode::Same ? bv[i] : bv[0]);
  }
  Tensor r = Tensor::from_values(a.shape(), std::move(out));
  if (Graph* g = Graph::tracking({&a, &b})) {
    g->record(r, "add", {&a, &b},
              [mode](const std::vector<double>& up, const std::vector<std::vector<double>*>& ig) {
                if (ig[0]) {
                  for (std::size_t i = 0; i < up.size(); ++i) (*ig[0])[i] += up[i];
                }
                if (ig[1]) {
                  if (mode == EwMode::Same) {
                    for (std::size_t i = 0; i < up.size(); ++i) (*ig[1])[i] += up[i];
                  } else {
                    double s = 0.0;
                    for (double u : up) s += u;
                    (*ig[1])[0] += s;
                  }
                }
              });
  }
  return r;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  const EwMode mode = elementwise_mode(a, b);
  const auto& av = a.values();
  const auto& bv = b.values();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) {
    out[i] = av[i] - (mode == EwMode::Same ? bv[i] : bv[0]);
  }
  Tensor r = Tensor::from_values(a.shape(), std::move(out));
  if (Graph* g = Graph::tracking({&a, &b})) {
    g->record(r, "sub", {&a, &b},
              [mode](const std::vector<double>& up, const std::vector<std::vector<double>*>& ig) {
                if (ig[0]) {
                  for (std::size_t i = 0; i < up.size(); ++i) (*ig[0])[i] += up[i];
                }
                if (ig[1]) {
                  if (mode == EwMode::Same) {
                    for (std::size_t i = 0; i < up.size(); ++i) (*ig[1])[i] -= up[i];
                  } else {
                    double s = 0.0;
                    for (double u : up) s += u;
                    (*ig[1])[0] -= s;
                  }
                }
              });
  }
  return r;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  const EwMode mode = elementwise_mode(a, b);
  const auto& av = a.values();
  const auto& bv = b.values();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) {
    out[i] = av[i] * (mode == EwMode::Same ? bv[i] : bv[0]);
  }
  Tensor r = Tensor::from_values(a.shape(), std::move(out));
  if (Graph* g = Graph::tracking({&a, &b})) {
    auto a_vals = a.values_ptr();
    auto b_vals = b.values_ptr();
    g->record(r, "mul", {&a, &b},
              [mode, a_vals, b_vals](const std::vector<double>& up,
                                     const std::vector<std::vector<double>*>& ig) {
                if (ig[0]) {
                  for (std::size_t i = 0; i < up.size(); ++i) {
                    (*ig[0])[i] += up[i] * (mode == EwMode::Same ? (*b_vals)[i] : (*b_vals)[0]);
                  }
                }
                if (ig[1]) {
                  if (mode == EwMode::Same) {
                    for (std::size_t i = 0; i < up.size(); ++i) (*ig[1])[i] += up[i] * (*a_vals)[i];
                  } else {
                    double s = 0.0;
                    for (std::size_t i = 0; i < up.size(); ++i) s += up[i] * (*a_vals)[i];
                    (*ig[1])[0] += s;
                  }
                }
              });
  }
  return r;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2) throw RankError("matmul requires rank-2 operands");
  const long long m = a.shape()[0], k = a.shape()[1];
  const long long k2 = b.shape()[0], n = b.shape()[1];
  if (k != k2) {
    throw ShapeError("matmul inner dimensions differ: " + std::to_string(k) + " vs " +
                     std::to_string(k2));
  }
  const auto& av = a.values();
  const auto& bv = b.values();
  std::vector<double> out(static_cast<std::size_t>(m * n), 0.0);
  for (long long i = 0; i < m; ++i) {
    for (long long kk = 0; kk < k; ++kk) {
      const double aik = av[static_cast<std::size_t>(i * k + kk)];
      for (long long j = 0; j < n; ++j) {
        out[static_cast<std::size_t>(i * n + j)] += aik * bv[static_cast<std::size_t>(kk * n + j)];
      }
    }
  }
  Tensor r = Tensor::from_values({static_cast<int>(m), static_cast<int>(n)}, std::move(out));
  if (Graph* g = Graph::tracking({&a, &b})) {
    auto a_vals = a.values_ptr();
    auto b_vals = b.values_ptr();
    g->record(r, "matmul", {&a, &b},
              [m, k, n, a_vals, b_vals](const std::vector<double>& up,
                                        const std::vector<std::vector<double>*>& ig) {
                if (ig[0]) {
                  for (long long i = 0; i < m; ++i) {
                    for (long long kk = 0; kk < k; ++kk) {
                      double s = 0.0;
                      for (long long j = 0; j < n; ++j) {
                        s += up[static_cast<std::size_t>(i * n + j)] *
                             (*b_vals)[static_cast<std::size_t>(kk * n + j)];
                      }
                      (*ig[0])[static_cast<std::size_t>(i * k + kk)] += s;
                    }
                  }
                }
                if (ig[1]) {
                  for (long long kk = 0; kk < k; ++kk) {
                    for (long long j = 0; j < n; ++j) {
                      double s = 0.0;
                      for (long long i = 0; i < m; ++i) {
                        s += (*a_vals)[static_cast<std::size_t>(i * k + kk)] *
                             up[static_cast<std::size_t>(i * n + j)];
                      }
                      (*ig[1])[static_cast<std::size_t>(kk * n + j)] += s;
                    }
                  }
                }
              });
  }
  return r;
}

Tensor softmax(const Tensor& x, int axis) {
  const AxisSplit s = split_axis(x.shape(), axis);
  const auto& xv = x.values();
  std::vector<double> out(xv.size());
  for (long long o = 0; o < s.outer; ++o) {
    for (long long in = 0; in < s.inner; ++in) {
      const auto idx = [&](long long i) {
        return static_cast<std::size_t>((o * s.n + i) * s.inner + in);
      };
      double m = xv[idx(0)];
      for (long long i = 1; i < s.n; ++i) m = std::max(m, xv[idx(i)]);
      double denom = 0.0;
      for (long long i = 0; i < s.n; ++i) {
        out[idx(i)] = std::exp(xv[idx(i)] - m);
        denom += out[idx(i)];
      }
      for (long long i = 0; i < s.n; ++i) out[idx(i)] /= denom;
    }
  }
  Tensor r = Tensor::from_values(x.shape(), std::move(out));
  if (Graph* g = Graph::tracking({&x})) {
    auto y_vals = r.values_ptr();
    g->record(r, "softmax", {&x},
              [s, y_vals](const std::vector<double>& up,
                          const std::vector<std::vector<double>*>& ig) {
                if (!ig[0]) return;
                for (long long o = 0; o < s.outer; ++o) {
                  for (long long in = 0; in < s.inner; ++in) {
                    const auto idx = [&](long long i) {
                      return static_cast<std::size_t>((o * s.n + i) * s.inner + in);
                    };
                    double dot = 0.0;
                    for (long long i = 0; i < s.n; ++i) dot += up[idx(i)] * (*y_vals)[idx(i)];
                    for (long long i = 0; i < s.n; ++i) {
                      (*ig[0])[idx(i)] += (*y_vals)[idx(i)] * (up[idx(i)] - dot);
                    }
                  }
                }
              });
  }
  return r;
}

Tensor activation(const Tensor& x, Act kind) {
  const auto& xv = x.values();
  std::vector<double> out(xv.size());
  for (std::size_t i = 0; i < xv.size(); ++i) {
    out[i] = kind == Act::Relu ? (xv[i] > 0.0 ? xv[i] : 0.0) : gelu_value(xv[i]);
  }
  Tensor r = Tensor::from_values(x.shape(), std::move(out));
  if (Graph* g = Graph::tracking({&x})) {
    auto x_vals = x.values_ptr();
    g->record(r, kind == Act::Relu ? "relu" : "gelu", {&x},
              [kind, x_vals](const std::vector<double>& up,
                             const std::vector<std::vector<double>*>& ig) {
                if (!ig[0]) return;
                for (std::size_t i = 0; i < up.size(); ++i) {
                  const double x = (*x_vals)[i];
                  const double d = kind == Act::Relu ? (x > 0.0 ? 1.0 : 0.0) : gelu_derivative(x);
                  (*ig[0])[i] += up[i] * d;
                }
              });
  }
  return r;
}

Tensor relu(const Tensor& x) { return activation(x, Act::Relu); }

Tensor gelu(const Tensor& x) { return activation(x, Act::Gelu); }

Tensor sum(const Tensor& x) {
  const auto& xv = x.values();
  double s = 0.0;
  for (double v : xv) s += v;
  Tensor r = Tensor::scalar(s);
  if (Graph* g = Graph::tracking({&x})) {
    g->record(r, "sum", {&x},
              [](const std::vector<double>& up, const std::vector<std::vector<double>*>& ig) {
                if (!ig[0]) return;
                for (double& gv : *ig[0]) gv += up[0];
              });
  }
  return r;
}

Tensor reshape(const Tensor& x, const Shape& shape) {
  const long long n = shape_size(shape);
  if (n != x.size()) {
    throw SizeError("reshape to " + std::to_string(n) + " elements from " +
                    std::to_string(x.size()));
  }
  Tensor r = Tensor::from_shared(shape, x.values_ptr());
  if (Graph* g = Graph::tracking({&x})) {
    g->record(r, "reshape", {&x},
              [](const std::vector<double>& up, const std::vector<std::vector<double>*>& ig) {
                if (!ig[0]) return;
                for (std::size_t i = 0; i < up.size(); ++i) (*ig[0])[i] += up[i];
              });
  }
  return r;
}

}  // namespace catnet
