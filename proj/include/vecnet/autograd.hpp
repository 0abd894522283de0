#pragma once

// Reverse-mode autodiff over Tensor. A forward pass builds a DAG of Node
// values; backward() walks it in reverse topological order and accumulates
// gradients into every node with requires_grad. Graphs are rebuilt per step;
// parameters are long-lived leaf nodes shared across graphs.

#include "vecnet/tensor.hpp"

#include <functional>
#include <memory>
#include <unordered_set>
#include <utility>
#include <vector>

namespace vecnet::ag {

using core::ConstMatMap;
using core::MatMap;
using core::Tensor;

struct Node;
using NodeRef = std::shared_ptr<Node>;

struct Node {
  Tensor value;
  Tensor grad;  // allocated on first accumulation
  bool requires_grad = false;
  std::vector<NodeRef> parents;
  std::function<void(Node&)> backprop;  // pulls this->grad into parents

  Tensor& grad_buf() {
    if (grad.size() != value.size()) grad = Tensor(value.shape());
    return grad;
  }
  void zero_grad() {
    if (grad.size() == value.size()) grad.fill(0.0);
  }
};

inline NodeRef leaf(Tensor v, bool requires_grad = false) {
  auto n = std::make_shared<Node>();
  n->value = std::move(v);
  n->requires_grad = requires_grad;
  return n;
}

inline NodeRef constant(Tensor v) { return leaf(std::move(v), false); }

inline bool any_grad(const std::vector<NodeRef>& parents) {
  for (const auto& p : parents)
    if (p && p->requires_grad) return true;
  return false;
}

// Builds an op node; backprop is installed only when some parent needs it.
inline NodeRef make_op(Tensor value, std::vector<NodeRef> parents,
                       std::function<void(Node&)> backprop) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->requires_grad = any_grad(parents);
  if (n->requires_grad) {
    n->parents = std::move(parents);
    n->backprop = std::move(backprop);
  }
  return n;
}

// Reverse topological order from root (iterative; graphs can be deep).
inline void backward(const NodeRef& root) {
  if (root->value.size() != 1)
    throw std::invalid_argument("backward: root must be a scalar");
  if (!root->requires_grad) return;

  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(root.get(), 0);
  seen.insert(root.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* p = node->parents[next++].get();
      if (p && p->requires_grad && !seen.count(p)) {
        seen.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  root->grad_buf().fill(1.0);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backprop && n->grad.size() == n->value.size()) n->backprop(*n);
  }
}

// ---------------------------------------------------------------------------
// elementwise ops

namespace detail {
inline void require_same_shape(const NodeRef& a, const NodeRef& b, const char* op) {
  if (!a->value.same_shape(b->value))
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + a->value.shape_str() +
                                " vs " + b->value.shape_str());
}
inline void accumulate(Node& dst, const Tensor& g) {
  Tensor& buf = dst.grad_buf();
  for (std::int64_t i = 0; i < g.size(); ++i) buf[i] += g[i];
}
}  // namespace detail

inline NodeRef add(NodeRef a, NodeRef b) {
  detail::require_same_shape(a, b, "add");
  Tensor out(a->value.shape());
  for (std::int64_t i = 0; i < out.size(); ++i) out[i] = a->value[i] + b->value[i];
  return make_op(std::move(out), {a, b}, [a = a.get(), b = b.get()](Node& self) {
    if (a->requires_grad) detail::accumulate(*a, self.grad);
    if (b->requires_grad) detail::accumulate(*b, self.grad);
  });
}

inline NodeRef sub(NodeRef a, NodeRef b) {
  detail::require_same_shape(a, b, "sub");
  Tensor out(a->value.shape());
  for (std::int64_t i = 0; i < out.size(); ++i) out[i] = a->value[i] - b->value[i];
  return make_op(std::move(out), {a, b}, [a = a.get(), b = b.get()](Node& self) {
    if (a->requires_grad) detail::accumulate(*a, self.grad);
    if (b->requires_grad) {
      Tensor& buf = b->grad_buf();
      for (std::int64_t i = 0; i < self.grad.size(); ++i) buf[i] -= self.grad[i];
    }
  });
}

inline NodeRef mul(NodeRef a, NodeRef b) {
  detail::require_same_shape(a, b, "mul");
  Tensor out(a->value.shape());
  for (std::int64_t i = 0; i < out.size(); ++i) out[i] = a->value[i] * b->value[i];
  return make_op(std::move(out), {a, b}, [a = a.get(), b = b.get()](Node& self) {
    if (a->requires_grad) {
      Tensor& buf = a->grad_buf();
      for (std::int64_t i = 0; i < self.grad.size(); ++i) buf[i] += self.grad[i] * b->value[i];
    }
    if (b->requires_grad) {
      Tensor& buf = b->grad_buf();
      for (std::int64_t i = 0; i < self.grad.size(); ++i) buf[i] += self.grad[i] * a->value[i];
    }
  });
}

inline NodeRef div(NodeRef a, NodeRef b) {
  detail::require_same_shape(a, b, "div");
  Tensor out(a->value.shape());
  for (std::int64_t i = 0; i < out.size(); ++i) out[i] = a->value[i] / b->value[i];
  return make_op(std::move(out), {a, b}, [a = a.get(), b = b.get()](Node& self) {
    if (a->requires_grad) {
      Tensor& buf = a->grad_buf();
      for (std::int64_t i = 0; i < self.grad.size(); ++i) buf[i] += self.grad[i] / b->value[i];
    }
    if (b->requires_grad) {
      Tensor& buf = b->grad_buf();
      for (std::int64_t i = 0; i < self.grad.size(); ++i) {
        const double bv = b->value[i];
        buf[i] -= self.grad[i] * a->value[i] / (bv * bv);
      }
    }
  });
}

inline NodeRef mul_scalar(NodeRef a, double c) {
  Tensor out(a->value.shape());
  for (std::int64_t i = 0; i < out.size(); ++i) out[i] = a->value[i] * c;
  return make_op(std::move(out), {a}, [a = a.get(), c](Node& self) {
    Tensor& buf = a->grad_buf();
    for (std::int64_t i = 0; i < self.grad.size(); ++i) buf[i] += self.grad[i] * c;
  });
}

inline NodeRef add_scalar(NodeRef a, double c) {
  Tensor out(a->value.shape());
  for (std::int64_t i = 0; i < out.size(); ++i) out[i] = a->value[i] + c;
  return make_op(std::move(out), {a}, [a = a.get()](Node& self) {
    detail::accumulate(*a, self.grad);
  });
}

// c - x
inline NodeRef rsub_scalar(double c, NodeRef a) {
  Tensor out(a->value.shape());
  for (std::int64_t i = 0; i < out.size(); ++i) out[i] = c - a->value[i];
  return make_op(std::move(out), {a}, [a = a.get()](Node& self) {
    Tensor& buf = a->grad_buf();
    for (std::int64_t i = 0; i < self.grad.size(); ++i) buf[i] -= self.grad[i];
  });
}

inline NodeRef relu(NodeRef a) {
  Tensor out(a->value.shape());
  for (std::int64_t i = 0; i < out.size(); ++i) out[i] = a->value[i] > 0.0 ? a->value[i] : 0.0;
  return make_op(std::move(out), {a}, [a = a.get()](Node& self) {
    Tensor& buf = a->grad_buf();
    for (std::int64_t i = 0; i < self.grad.size(); ++i)
      if (a->value[i] > 0.0) buf[i] += self.grad[i];
  });
}

inline NodeRef sigmoid(NodeRef a) {
  Tensor out(a->value.shape());
  for (std::int64_t i = 0; i < out.size(); ++i) out[i] = 1.0 / (1.0 + std::exp(-a->value[i]));
  return make_op(std::move(out), {a}, [a = a.get(), y = out](Node& self) {
    Tensor& buf = a->grad_buf();
    for (std::int64_t i = 0; i < self.grad.size(); ++i)
      buf[i] += self.grad[i] * y[i] * (1.0 - y[i]);
  });
}

inline NodeRef clamp(NodeRef a, double lo, double hi) {
  Tensor out(a->value.shape());
  for (std::int64_t i = 0; i < out.size(); ++i) out[i] = std::min(hi, std::max(lo, a->value[i]));
  return make_op(std::move(out), {a}, [a = a.get(), lo, hi](Node& self) {
    Tensor& buf = a->grad_buf();
    for (std::int64_t i = 0; i < self.grad.size(); ++i)
      if (a->value[i] >= lo && a->value[i] <= hi) buf[i] += self.grad[i];
  });
}

// ---------------------------------------------------------------------------
// shape ops

inline NodeRef reshape(NodeRef a, std::vector<int> shape) {
  if (Tensor::count(shape) != a->value.size())
    throw std::invalid_argument("reshape: element count mismatch");
  Tensor out = Tensor::from(shape, a->value.vec());
  return make_op(std::move(out), {a}, [a = a.get()](Node& self) {
    detail::accumulate(*a, self.grad);
  });
}

// concat [Ci,H,W] tensors along the channel axis
inline NodeRef concat_ch(std::vector<NodeRef> xs) {
  if (xs.empty()) throw std::invalid_argument("concat_ch: no inputs");
  const int h = xs[0]->value.dim(1), w = xs[0]->value.dim(2);
  int ctot = 0;
  for (const auto& x : xs) {
    if (x->value.rank() != 3 || x->value.dim(1) != h || x->value.dim(2) != w)
      throw std::invalid_argument("concat_ch: spatial shape mismatch");
    ctot += x->value.dim(0);
  }
  Tensor out({ctot, h, w});
  std::int64_t off = 0;
  for (const auto& x : xs) {
    std::copy(x->value.data(), x->value.data() + x->value.size(), out.data() + off);
    off += x->value.size();
  }
  std::vector<NodeRef> parents = xs;
  return make_op(std::move(out), std::move(parents), [xs](Node& self) {
    std::int64_t off = 0;
    for (const auto& x : xs) {
      if (x->requires_grad) {
        Tensor& buf = x->grad_buf();
        for (std::int64_t i = 0; i < x->value.size(); ++i) buf[i] += self.grad[off + i];
      }
      off += x->value.size();
    }
  });
}

inline NodeRef slice_ch(NodeRef a, int c0, int c1) {
  if (a->value.rank() != 3 || c0 < 0 || c1 > a->value.dim(0) || c0 >= c1)
    throw std::invalid_argument("slice_ch: bad channel range");
  const int h = a->value.dim(1), w = a->value.dim(2);
  const std::int64_t plane = static_cast<std::int64_t>(h) * w;
  Tensor out({c1 - c0, h, w});
  std::copy(a->value.data() + c0 * plane, a->value.data() + c1 * plane, out.data());
  return make_op(std::move(out), {a}, [a = a.get(), c0, plane](Node& self) {
    Tensor& buf = a->grad_buf();
    for (std::int64_t i = 0; i < self.grad.size(); ++i) buf[c0 * plane + i] += self.grad[i];
  });
}

// ---------------------------------------------------------------------------
// reductions and normalizers

inline NodeRef mean_all(NodeRef a) {
  Tensor out = Tensor::scalar(a->value.mean());
  const double inv_n = 1.0 / static_cast<double>(a->value.size());
  return make_op(std::move(out), {a}, [a = a.get(), inv_n](Node& self) {
    Tensor& buf = a->grad_buf();
    const double g = self.grad[0] * inv_n;
    for (std::int64_t i = 0; i < buf.size(); ++i) buf[i] += g;
  });
}

// softmax over the channel axis of [C,H,W], per pixel
inline NodeRef softmax_ch(NodeRef a) {
  if (a->value.rank() != 3) throw std::invalid_argument("softmax_ch: need [C,H,W]");
  const int c = a->value.dim(0), h = a->value.dim(1), w = a->value.dim(2);
  const std::int64_t plane = static_cast<std::int64_t>(h) * w;
  Tensor out(a->value.shape());
  for (std::int64_t p = 0; p < plane; ++p) {
    double mx = -1e300;
    for (int k = 0; k < c; ++k) mx = std::max(mx, a->value[k * plane + p]);
    double sum = 0.0;
    for (int k = 0; k < c; ++k) sum += std::exp(a->value[k * plane + p] - mx);
    for (int k = 0; k < c; ++k) out[k * plane + p] = std::exp(a->value[k * plane + p] - mx) / sum;
  }
  return make_op(std::move(out), {a}, [a = a.get(), y = out, c, plane](Node& self) {
    Tensor& buf = a->grad_buf();
    for (std::int64_t p = 0; p < plane; ++p) {
      double dot = 0.0;
      for (int k = 0; k < c; ++k) dot += self.grad[k * plane + p] * y[k * plane + p];
      for (int k = 0; k < c; ++k)
        buf[k * plane + p] += y[k * plane + p] * (self.grad[k * plane + p] - dot);
    }
  });
}

// softmax over the last axis of [R,C] (one distribution per row)
inline NodeRef softmax_rows(NodeRef a) {
  if (a->value.rank() != 2) throw std::invalid_argument("softmax_rows: need [R,C]");
  const int r = a->value.dim(0), c = a->value.dim(1);
  Tensor out(a->value.shape());
  for (int i = 0; i < r; ++i) {
    const double* row = a->value.data() + static_cast<std::int64_t>(i) * c;
    double* orow = out.data() + static_cast<std::int64_t>(i) * c;
    double mx = -1e300;
    for (int j = 0; j < c; ++j) mx = std::max(mx, row[j]);
    double sum = 0.0;
    for (int j = 0; j < c; ++j) sum += std::exp(row[j] - mx);
    for (int j = 0; j < c; ++j) orow[j] = std::exp(row[j] - mx) / sum;
  }
  return make_op(std::move(out), {a}, [a = a.get(), y = out, r, c](Node& self) {
    Tensor& buf = a->grad_buf();
    for (int i = 0; i < r; ++i) {
      const std::int64_t o = static_cast<std::int64_t>(i) * c;
      double dot = 0.0;
      for (int j = 0; j < c; ++j) dot += self.grad[o + j] * y[o + j];
      for (int j = 0; j < c; ++j) buf[o + j] += y[o + j] * (self.grad[o + j] - dot);
    }
  });
}

// C[m,n] = op(A) * op(B) with optional transposes
inline NodeRef matmul(NodeRef a, NodeRef b, bool trans_a = false, bool trans_b = false) {
  if (a->value.rank() != 2 || b->value.rank() != 2)
    throw std::invalid_argument("matmul: need 2-D tensors");
  const int am = a->value.dim(0), an = a->value.dim(1);
  const int bm = b->value.dim(0), bn = b->value.dim(1);
  const int m = trans_a ? an : am, ka = trans_a ? am : an;
  const int kb = trans_b ? bn : bm, n = trans_b ? bm : bn;
  if (ka != kb) throw std::invalid_argument("matmul: inner dimension mismatch");

  Tensor out({m, n});
  auto A = a->value.mat(am, an);
  auto B = b->value.mat(bm, bn);
  auto C = out.mat(m, n);
  if (!trans_a && !trans_b) C.noalias() = A * B;
  else if (trans_a && !trans_b) C.noalias() = A.transpose() * B;
  else if (!trans_a && trans_b) C.noalias() = A * B.transpose();
  else C.noalias() = A.transpose() * B.transpose();

  return make_op(std::move(out), {a, b},
                 [a = a.get(), b = b.get(), trans_a, trans_b, am, an, bm, bn, m, n](Node& self) {
    auto G = self.grad.mat(m, n);
    auto A = a->value.mat(am, an);
    auto B = b->value.mat(bm, bn);
    if (a->requires_grad) {
      auto dA = a->grad_buf().mat(am, an);
      if (!trans_a && !trans_b) dA.noalias() += G * B.transpose();
      else if (!trans_a && trans_b) dA.noalias() += G * B;
      else if (trans_a && !trans_b) dA.noalias() += B * G.transpose();
      else dA.noalias() += B.transpose() * G.transpose();
    }
    if (b->requires_grad) {
      auto dB = b->grad_buf().mat(bm, bn);
      if (!trans_a && !trans_b) dB.noalias() += A.transpose() * G;
      else if (trans_a && !trans_b) dB.noalias() += A * G;
      else if (!trans_a && trans_b) dB.noalias() += G.transpose() * A;
      else dB.noalias() += G.transpose() * A.transpose();
    }
  });
}

// x[C,H,W] * s[C,1,1], channel-wise broadcast
inline NodeRef mul_channel(NodeRef x, NodeRef s) {
  if (x->value.rank() != 3 || s->value.rank() != 3 || s->value.dim(1) != 1 ||
      s->value.dim(2) != 1 || s->value.dim(0) != x->value.dim(0))
    throw std::invalid_argument("mul_channel: need x[C,H,W], s[C,1,1]");
  const int c = x->value.dim(0);
  const std::int64_t plane = static_cast<std::int64_t>(x->value.dim(1)) * x->value.dim(2);
  Tensor out(x->value.shape());
  for (int k = 0; k < c; ++k)
    for (std::int64_t p = 0; p < plane; ++p) out[k * plane + p] = x->value[k * plane + p] * s->value[k];
  return make_op(std::move(out), {x, s}, [x = x.get(), s = s.get(), c, plane](Node& self) {
    if (x->requires_grad) {
      Tensor& buf = x->grad_buf();
      for (int k = 0; k < c; ++k)
        for (std::int64_t p = 0; p < plane; ++p)
          buf[k * plane + p] += self.grad[k * plane + p] * s->value[k];
    }
    if (s->requires_grad) {
      Tensor& buf = s->grad_buf();
      for (int k = 0; k < c; ++k) {
        double acc = 0.0;
        for (std::int64_t p = 0; p < plane; ++p)
          acc += self.grad[k * plane + p] * x->value[k * plane + p];
        buf[k] += acc;
      }
    }
  });
}

// x[C,H,W] * w[1,H,W], spatial map broadcast over channels
inline NodeRef mul_map(NodeRef x, NodeRef w) {
  if (x->value.rank() != 3 || w->value.rank() != 3 || w->value.dim(0) != 1 ||
      w->value.dim(1) != x->value.dim(1) || w->value.dim(2) != x->value.dim(2))
    throw std::invalid_argument("mul_map: need x[C,H,W], w[1,H,W]");
  const int c = x->value.dim(0);
  const std::int64_t plane = static_cast<std::int64_t>(x->value.dim(1)) * x->value.dim(2);
  Tensor out(x->value.shape());
  for (int k = 0; k < c; ++k)
    for (std::int64_t p = 0; p < plane; ++p)
      out[k * plane + p] = x->value[k * plane + p] * w->value[p];
  return make_op(std::move(out), {x, w}, [x = x.get(), w = w.get(), c, plane](Node& self) {
    if (x->requires_grad) {
      Tensor& buf = x->grad_buf();
      for (int k = 0; k < c; ++k)
        for (std::int64_t p = 0; p < plane; ++p)
          buf[k * plane + p] += self.grad[k * plane + p] * w->value[p];
    }
    if (w->requires_grad) {
      Tensor& buf = w->grad_buf();
      for (std::int64_t p = 0; p < plane; ++p) {
        double acc = 0.0;
        for (int k = 0; k < c; ++k) acc += self.grad[k * plane + p] * x->value[k * plane + p];
        buf[p] += acc;
      }
    }
  });
}

}  // namespace vecnet::ag
