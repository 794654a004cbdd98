#include "rls/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "rls/kernels.hpp"

namespace rls::ad {

namespace kp = kernels::parallel;

const Tensor& Var::value() const { return graph_->value(*this); }

const Tensor& BackwardContext::out() const { return graph_.nodes_[node_].value(); }

const Tensor& BackwardContext::in(std::size_t i) const {
  return graph_.nodes_[graph_.nodes_[node_].inputs.at(i)].value();
}

bool BackwardContext::wants(std::size_t i) const {
  return graph_.nodes_[graph_.nodes_[node_].inputs.at(i)].needs_grad;
}

std::span<double> BackwardContext::grad_in(std::size_t i) {
  return graph_.grad_buffer(graph_.nodes_[node_].inputs.at(i));
}

void Graph::check_owner(Var v) const {
  if (v.graph_ != this || v.id_ >= nodes_.size()) throw std::logic_error("Var does not belong to this graph");
}

Var Graph::constant(Tensor value) {
  Node n;
  n.owned = std::move(value);
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

Var Graph::leaf(Tensor& bound) {
  Node n;
  n.view = &bound;
  n.bound = &bound;
  n.needs_grad = bound.requires_grad();
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

Var Graph::reference(const Tensor& value) {
  Node n;
  n.view = &value;
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

Var Graph::record(Tensor value, std::vector<Var> inputs, BackwardFn backward) {
  Node n;
  n.owned = std::move(value);
  for (const auto& v : inputs) {
    check_owner(v);
    n.inputs.push_back(v.id_);
    n.needs_grad = n.needs_grad || nodes_[v.id_].needs_grad;
  }
  n.needs_grad = n.needs_grad && static_cast<bool>(backward);
  n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

const Tensor& Graph::value(Var v) const {
  check_owner(v);
  return nodes_[v.id_].value();
}

std::span<const double> Graph::grad(Var v) const {
  check_owner(v);
  return nodes_[v.id_].grad;
}

bool Graph::needs_grad(Var v) const {
  check_owner(v);
  return nodes_[v.id_].needs_grad;
}

std::vector<double>& Graph::grad_buffer(std::size_t id) {
  auto& n = nodes_[id];
  if (n.grad.empty()) n.grad.assign(n.value().size(), 0.0);
  return n.grad;
}

void Graph::backward(Var loss) {
  check_owner(loss);
  if (value(loss).size() != 1)
    throw ShapeError("backward needs a scalar loss, got " + to_string(value(loss).shape()));
  for (auto& n : nodes_) n.grad.clear();
  grad_buffer(loss.id_)[0] = 1.0;
  for (std::size_t id = loss.id_ + 1; id-- > 0;) {
    auto& n = nodes_[id];
    if (n.grad.empty() || !n.needs_grad) continue;
    if (n.bound && n.bound->requires_grad()) {
      auto g = n.bound->grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i];
    }
    if (n.backward) {
      BackwardContext ctx(*this, id);
      ctx.grad_out_ = n.grad;
      n.backward(ctx);
    }
  }
}

namespace {

void require_same_shape(const char* op, Var a, Var b) {
  if (a.shape() != b.shape())
    throw ShapeError(std::string(op) + ": shape mismatch " + to_string(a.shape()) + " vs " + to_string(b.shape()));
}

void require_same_graph(Var a, Var b) {
  if (&a.graph() != &b.graph()) throw std::logic_error("operands recorded on different graphs");
}

template <typename Fwd, typename Deriv>
Var unary(Var x, Fwd fwd, Deriv deriv) {
  Tensor out(x.shape());
  const auto in = x.value().data();
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = fwd(in[i]);
  return x.graph().record(std::move(out), {x}, [deriv](BackwardContext& c) {
    const auto gi = c.grad_in(0);
    const auto go = c.grad_out();
    const auto xin = c.in(0).data();
    const auto y = c.out().data();
    for (std::size_t i = 0; i < gi.size(); ++i) gi[i] += go[i] * deriv(xin[i], y[i]);
  });
}

}  // namespace

Var conv2d(Var x, Var kernel, Var bias, std::size_t stride, std::size_t pad) {
  require_same_graph(x, kernel);
  require_same_graph(x, bias);
  const auto& xs = x.shape();
  const auto& ks = kernel.shape();
  if (xs.size() != 4 || ks.size() != 4)
    throw ShapeError("conv2d: expected rank-4 input and kernel, got " + to_string(xs) + " and " + to_string(ks));
  if (xs[1] != ks[1])
    throw ShapeError("conv2d: input channels " + to_string(xs) + " do not match kernel " + to_string(ks));
  if (bias.shape() != Shape{ks[0]})
    throw ShapeError("conv2d: bias " + to_string(bias.shape()) + " does not match kernel " + to_string(ks));
  if (stride == 0) throw std::invalid_argument("conv2d: stride must be positive");
  if (ks[2] > xs[2] + 2 * pad || ks[3] > xs[3] + 2 * pad)
    throw ShapeError("conv2d: kernel " + to_string(ks) + " larger than padded input " + to_string(xs));

  kernels::ConvGeometry g{xs[0], xs[1], xs[2], xs[3], ks[0], ks[2], ks[3], stride, pad};
  Tensor out({g.batch, g.out_channels, g.out_h(), g.out_w()});
  kp::conv2d_forward(g, x.value().data(), kernel.value().data(), bias.value().data(), out.data());
  return x.graph().record(std::move(out), {x, kernel, bias}, [g](BackwardContext& c) {
    if (c.wants(0)) kp::conv2d_backward_input(g, c.in(1).data(), c.grad_out(), c.grad_in(0));
    if (c.wants(1) || c.wants(2))
      kp::conv2d_backward_params(g, c.in(0).data(), c.grad_out(), c.wants(1) ? c.grad_in(1) : std::span<double>{},
                                 c.wants(2) ? c.grad_in(2) : std::span<double>{});
  });
}

Var upsample2x(Var x) {
  const auto& s = x.shape();
  if (s.size() != 4) throw ShapeError("upsample2x: expected rank-4 input, got " + to_string(s));
  const std::size_t planes = s[0] * s[1], h = s[2], w = s[3];
  Tensor out({s[0], s[1], 2 * h, 2 * w});
  kp::upsample2x_forward(planes, h, w, x.value().data(), out.data());
  return x.graph().record(std::move(out), {x}, [planes, h, w](BackwardContext& c) {
    kp::upsample2x_backward(planes, h, w, c.grad_out(), c.grad_in(0));
  });
}

Var affine(Var x, Var weight, Var bias) {
  require_same_graph(x, weight);
  require_same_graph(x, bias);
  const auto& xs = x.shape();
  const auto& ws = weight.shape();
  if (xs.size() != 2 || ws.size() != 2 || xs[1] != ws[0])
    throw ShapeError("affine: cannot multiply " + to_string(xs) + " by " + to_string(ws));
  if (bias.shape() != Shape{ws[1]})
    throw ShapeError("affine: bias " + to_string(bias.shape()) + " does not match weight " + to_string(ws));
  const std::size_t rows = xs[0], in_dim = xs[1], out_dim = ws[1];
  Tensor out({rows, out_dim});
  kp::affine_forward(rows, in_dim, out_dim, x.value().data(), weight.value().data(), bias.value().data(),
                     out.data());
  return x.graph().record(std::move(out), {x, weight, bias}, [rows, in_dim, out_dim](BackwardContext& c) {
    kp::affine_backward(rows, in_dim, out_dim, c.in(0).data(), c.in(1).data(), c.grad_out(),
                        c.wants(0) ? c.grad_in(0) : std::span<double>{},
                        c.wants(1) ? c.grad_in(1) : std::span<double>{},
                        c.wants(2) ? c.grad_in(2) : std::span<double>{});
  });
}

Var relu(Var x) {
  return unary(
      x, [](double v) { return v > 0.0 ? v : 0.0; }, [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Var sigmoid(Var x) {
  return unary(
      x,
      [](double v) {
        if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
        const double e = std::exp(v);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Var exp(Var x) {
  return unary(
      x, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

Var log(Var x) {
  return unary(
      x, [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

Var add(Var a, Var b) {
  require_same_graph(a, b);
  require_same_shape("add", a, b);
  Tensor out(a.shape());
  const auto x = a.value().data(), y = b.value().data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] + y[i];
  return a.graph().record(std::move(out), {a, b}, [](BackwardContext& c) {
    const auto go = c.grad_out();
    for (std::size_t k = 0; k < 2; ++k)
      if (c.wants(k)) {
        auto gi = c.grad_in(k);
        for (std::size_t i = 0; i < gi.size(); ++i) gi[i] += go[i];
      }
  });
}

Var sub(Var a, Var b) {
  require_same_graph(a, b);
  require_same_shape("sub", a, b);
  Tensor out(a.shape());
  const auto x = a.value().data(), y = b.value().data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] - y[i];
  return a.graph().record(std::move(out), {a, b}, [](BackwardContext& c) {
    const auto go = c.grad_out();
    if (c.wants(0)) {
      auto gi = c.grad_in(0);
      for (std::size_t i = 0; i < gi.size(); ++i) gi[i] += go[i];
    }
    if (c.wants(1)) {
      auto gi = c.grad_in(1);
      for (std::size_t i = 0; i < gi.size(); ++i) gi[i] -= go[i];
    }
  });
}

Var mul(Var a, Var b) {
  require_same_graph(a, b);
  require_same_shape("mul", a, b);
  Tensor out(a.shape());
  const auto x = a.value().data(), y = b.value().data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * y[i];
  return a.graph().record(std::move(out), {a, b}, [](BackwardContext& c) {
    const auto go = c.grad_out();
    const auto x = c.in(0).data(), y = c.in(1).data();
    if (c.wants(0)) {
      auto gi = c.grad_in(0);
      for (std::size_t i = 0; i < gi.size(); ++i) gi[i] += go[i] * y[i];
    }
    if (c.wants(1)) {
      auto gi = c.grad_in(1);
      for (std::size_t i = 0; i < gi.size(); ++i) gi[i] += go[i] * x[i];
    }
  });
}

Var scale(Var x, double factor) {
  return unary(
      x, [factor](double v) { return factor * v; }, [factor](double, double) { return factor; });
}

Var reshape(Var x, Shape shape) {
  Tensor out = x.value().reshaped(std::move(shape));
  return x.graph().record(std::move(out), {x}, [](BackwardContext& c) {
    auto gi = c.grad_in(0);
    const auto go = c.grad_out();
    for (std::size_t i = 0; i < gi.size(); ++i) gi[i] += go[i];
  });
}

Var sum(Var x) {
  double s = 0.0;
  for (double v : x.value().data()) s += v;
  return x.graph().record(Tensor::scalar(s), {x}, [](BackwardContext& c) {
    auto gi = c.grad_in(0);
    const double go = c.grad_out()[0];
    for (auto& g : gi) g += go;
  });
}

Var mean(Var x) {
  const double n = static_cast<double>(x.value().size());
  double s = 0.0;
  for (double v : x.value().data()) s += v;
  return x.graph().record(Tensor::scalar(s / n), {x}, [n](BackwardContext& c) {
    auto gi = c.grad_in(0);
    const double go = c.grad_out()[0] / n;
    for (auto& g : gi) g += go;
  });
}

Var softmax_cross_entropy(Var logits, std::span<const std::size_t> labels) {
  const auto& s = logits.shape();
  if (s.size() != 2) throw ShapeError("softmax_cross_entropy: expected [B,C] logits, got " + to_string(s));
  const std::size_t rows = s[0], classes = s[1];
  if (labels.size() != rows)
    throw ShapeError("softmax_cross_entropy: " + std::to_string(labels.size()) + " labels for " +
                     std::to_string(rows) + " rows");
  for (auto l : labels)
    if (l >= classes) throw std::out_of_range("softmax_cross_entropy: label " + std::to_string(l) + " out of range");

  std::vector<double> prob(rows * classes);
  std::vector<std::size_t> label_copy(labels.begin(), labels.end());
  const auto z = logits.value().data();
  double loss = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    const double* zr = z.data() + r * classes;
    const double zmax = *std::max_element(zr, zr + classes);
    double denom = 0.0;
    for (std::size_t k = 0; k < classes; ++k) denom += std::exp(zr[k] - zmax);
    const double log_denom = std::log(denom);
    for (std::size_t k = 0; k < classes; ++k) prob[r * classes + k] = std::exp(zr[k] - zmax - log_denom);
    loss -= zr[label_copy[r]] - zmax - log_denom;
  }
  loss /= static_cast<double>(rows);
  return logits.graph().record(
      Tensor::scalar(loss), {logits},
      [prob = std::move(prob), label_copy = std::move(label_copy), rows, classes](BackwardContext& c) {
        auto gi = c.grad_in(0);
        const double go = c.grad_out()[0] / static_cast<double>(rows);
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t k = 0; k < classes; ++k) {
            const double target = k == label_copy[r] ? 1.0 : 0.0;
            gi[r * classes + k] += go * (prob[r * classes + k] - target);
          }
      });
}

Var gaussian_kl(Var mean, Var logvar) {
  require_same_graph(mean, logvar);
  require_same_shape("gaussian_kl", mean, logvar);
  const auto mu = mean.value().data(), lv = logvar.value().data();
  double kl = 0.0;
  for (std::size_t i = 0; i < mu.size(); ++i) kl += mu[i] * mu[i] + std::exp(lv[i]) - 1.0 - lv[i];
  return mean.graph().record(Tensor::scalar(0.5 * kl), {mean, logvar}, [](BackwardContext& c) {
    const double go = c.grad_out()[0];
    const auto mu = c.in(0).data(), lv = c.in(1).data();
    if (c.wants(0)) {
      auto g = c.grad_in(0);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += go * mu[i];
    }
    if (c.wants(1)) {
      auto g = c.grad_in(1);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += go * 0.5 * (std::exp(lv[i]) - 1.0);
    }
  });
}

}  // namespace rls::ad
