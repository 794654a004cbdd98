#pragma once

// Tape-based reverse-mode differentiation.
//
// A Graph records operations in execution order, so the tape is
// topologically sorted by construction; backward() walks it once in reverse.
// Parameters enter the tape through leaf(), which binds the node to an
// external Tensor: reading its data on the forward pass and accumulating into
// its grad() on the backward pass. Recorded values are never mutated.

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "rls/tensor.hpp"

namespace rls::ad {

class Graph;

// Handle to one recorded node. Cheap to copy; valid while its Graph lives.
class Var {
 public:
  Var() = default;

  Graph& graph() const { return *graph_; }
  std::size_t id() const { return id_; }
  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  bool valid() const { return graph_ != nullptr; }

 private:
  friend class Graph;
  Var(Graph* graph, std::size_t id) : graph_(graph), id_(id) {}

  Graph* graph_ = nullptr;
  std::size_t id_ = 0;
};

// View handed to a backward rule: the output gradient plus writable
// gradient buffers for those inputs that need one.
class BackwardContext {
 public:
  std::span<const double> grad_out() const { return grad_out_; }
  const Tensor& out() const;
  const Tensor& in(std::size_t i) const;
  bool wants(std::size_t i) const;
  std::span<double> grad_in(std::size_t i);

 private:
  friend class Graph;
  BackwardContext(Graph& graph, std::size_t node) : graph_(graph), node_(node) {}

  Graph& graph_;
  std::size_t node_;
  std::span<const double> grad_out_;
};

using BackwardFn = std::function<void(BackwardContext&)>;

class Graph {
 public:
  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  // Constant input; never receives a gradient.
  Var constant(Tensor value);
  // Leaf bound to `bound`, which must outlive the graph and stay unmodified
  // until backward() has run.
  Var leaf(Tensor& bound);
  // Read-only view of an external tensor; treated like a constant.
  Var reference(const Tensor& value);
  // Appends an operation. `backward` may be empty for non-differentiable ops.
  Var record(Tensor value, std::vector<Var> inputs, BackwardFn backward);

  // Seeds d(loss)/d(loss) = 1 and propagates to every reachable node.
  // Gradients of bound leaves are added to their tensors' grad buffers.
  void backward(Var loss);

  const Tensor& value(Var v) const;
  // Gradient computed by the last backward(); empty if the node got none.
  std::span<const double> grad(Var v) const;
  bool needs_grad(Var v) const;
  std::size_t size() const { return nodes_.size(); }

 private:
  friend class BackwardContext;

  struct Node {
    Tensor owned;
    const Tensor* view = nullptr;
    Tensor* bound = nullptr;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
    std::vector<double> grad;
    bool needs_grad = false;

    const Tensor& value() const { return view ? *view : owned; }
  };

  void check_owner(Var v) const;
  std::vector<double>& grad_buffer(std::size_t id);

  std::vector<Node> nodes_;
};

// Convolution (cross-correlation, zero padding) of x[B,Cin,H,W] with
// kernel[Cout,Cin,kh,kw] plus per-channel bias[Cout].
Var conv2d(Var x, Var kernel, Var bias, std::size_t stride, std::size_t pad);
// Nearest-neighbour 2x upsampling of a rank-4 tensor.
Var upsample2x(Var x);
// x[B,D] * weight[D,E] + bias[E]
Var affine(Var x, Var weight, Var bias);

Var relu(Var x);
Var sigmoid(Var x);
Var exp(Var x);
Var log(Var x);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var x, double factor);
Var reshape(Var x, Shape shape);
Var sum(Var x);
Var mean(Var x);

// Mean over the batch of -log softmax(logits[b])[labels[b]] for logits[B,C].
Var softmax_cross_entropy(Var logits, std::span<const std::size_t> labels);
// 0.5 * sum(mean^2 + exp(logvar) - 1 - logvar) over every element.
Var gaussian_kl(Var mean, Var logvar);

}  // namespace rls::ad
