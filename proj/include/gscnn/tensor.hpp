// SPDX-License-Identifier: Apache-2.0
//
// Dense tensors with reverse-mode automatic differentiation.
//
// The engine is eager: every op computes its value immediately and, when
// gradients are being recorded, stores a backward closure plus shared
// ownership of its parents. backward() on a scalar loss walks the graph in
// reverse topological order. Everything is templated on the scalar type so
// the finite-difference harness can run a 64-bit shadow of the exact same
// code path that training executes in 32-bit.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

#include "gscnn/rng.hpp"

namespace gscnn {

using Shape = std::vector<int>;

inline int64_t numel_of(const Shape& s) {
  int64_t n = 1;
  for (int e : s) {
    if (e <= 0)
      throw std::invalid_argument("shape has non-positive extent " + std::to_string(e));
    n *= e;
  }
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << "]";
  return os.str();
}

// Thread-local switch: with autograd disabled, ops compute values only and
// the graph is not recorded (inference mode).
inline bool& autograd_flag() {
  thread_local bool enabled = true;
  return enabled;
}

struct NoGradGuard {
  NoGradGuard() : prev_(autograd_flag()) { autograd_flag() = false; }
  ~NoGradGuard() { autograd_flag() = prev_; }
  bool prev_;
};

template <typename S>
struct Node {
  Shape shape;
  std::vector<S> value;
  std::vector<S> grad;  // allocated on first accumulation
  bool requires_grad = false;
  bool backward_done = false;  // set on the root after backward()
  std::string name;            // op or parameter name, for diagnostics
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backprop;  // reads this->grad, accumulates into parents

  void ensure_grad() {
    if (grad.empty()) grad.assign(value.size(), S(0));
  }
};

template <typename S>
class TensorT {
 public:
  TensorT() = default;
  explicit TensorT(std::shared_ptr<Node<S>> n) : node_(std::move(n)) {}

  static TensorT zeros(const Shape& shape, bool requires_grad = false) {
    return filled(shape, S(0), requires_grad);
  }

  static TensorT filled(const Shape& shape, S v, bool requires_grad = false) {
    auto n = std::make_shared<Node<S>>();
    n->shape = shape;
    n->value.assign(numel_of(shape), v);
    n->requires_grad = requires_grad;
    return TensorT(std::move(n));
  }

  static TensorT from_data(const Shape& shape, std::vector<S> data,
                           bool requires_grad = false) {
    if (static_cast<int64_t>(data.size()) != numel_of(shape))
      throw std::invalid_argument("from_data: " + std::to_string(data.size()) +
                                  " values for shape " + shape_str(shape));
    auto n = std::make_shared<Node<S>>();
    n->shape = shape;
    n->value = std::move(data);
    n->requires_grad = requires_grad;
    return TensorT(std::move(n));
  }

  static TensorT randn(const Shape& shape, Rng& rng, S scale = S(1),
                       bool requires_grad = false) {
    auto t = zeros(shape, requires_grad);
    for (auto& v : t.data()) v = static_cast<S>(rng.normal()) * scale;
    return t;
  }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  int64_t numel() const { return static_cast<int64_t>(node_->value.size()); }
  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool rg) { node_->requires_grad = rg; }

  std::vector<S>& data() { return node_->value; }
  const std::vector<S>& data() const { return node_->value; }

  bool has_grad() const { return !node_->grad.empty(); }
  std::vector<S>& grad() {
    node_->ensure_grad();
    return node_->grad;
  }
  const std::vector<S>& grad() const { return node_->grad; }
  void zero_grad() {
    std::fill(node_->grad.begin(), node_->grad.end(), S(0));
    node_->backward_done = false;
  }
  void drop_grad() { node_->grad.clear(); node_->backward_done = false; }

  S item() const {
    if (numel() != 1)
      throw std::invalid_argument("item: tensor has " + std::to_string(numel()) +
                                  " elements");
    return node_->value[0];
  }

  const std::string& name() const { return node_->name; }
  void set_name(std::string n) { node_->name = std::move(n); }

  std::shared_ptr<Node<S>> node() const { return node_; }

  bool all_finite() const {
    for (S v : node_->value)
      if (!std::isfinite(static_cast<double>(v))) return false;
    return true;
  }

 private:
  std::shared_ptr<Node<S>> node_;
};

using Tensor = TensorT<float>;

// ---------------------------------------------------------------------------
// Graph construction helper
// ---------------------------------------------------------------------------

// Creates the result node for an op. Parents and the backprop closure are
// attached only when recording is on and some parent needs gradients.
template <typename S>
TensorT<S> make_op(const char* name, const Shape& shape,
                   std::vector<TensorT<S>> parents,
                   std::function<void(Node<S>&)> backprop) {
  auto n = std::make_shared<Node<S>>();
  n->shape = shape;
  n->value.resize(numel_of(shape));
  n->name = name;
  bool track = false;
  if (autograd_flag()) {
    for (const auto& p : parents) track = track || p.requires_grad();
  }
  if (track) {
    n->requires_grad = true;
    for (auto& p : parents) n->parents.push_back(p.node());
    n->backprop = std::move(backprop);
  }
  return TensorT<S>(std::move(n));
}

// ---------------------------------------------------------------------------
// backward
// ---------------------------------------------------------------------------

template <typename S>
void backward(const TensorT<S>& loss) {
  auto root = loss.node();
  if (loss.numel() != 1)
    throw std::invalid_argument("backward: loss must be scalar, got " +
                                shape_str(loss.shape()));
  if (!root->requires_grad)
    throw std::runtime_error("backward: graph is detached (no tracked inputs)");
  if (root->backward_done)
    throw std::runtime_error("backward: already ran on this loss; reset gradients first");

  // Iterative post-order DFS for a deterministic topological order.
  std::vector<Node<S>*> order;
  std::unordered_set<Node<S>*> visited;
  struct Frame {
    Node<S>* n;
    size_t next_child;
  };
  std::vector<Frame> stack{{root.get(), 0}};
  visited.insert(root.get());
  while (!stack.empty()) {
    Frame& f = stack.back();
    if (f.next_child < f.n->parents.size()) {
      Node<S>* c = f.n->parents[f.next_child++].get();
      if (c->requires_grad && visited.insert(c).second) stack.push_back({c, 0});
    } else {
      order.push_back(f.n);
      stack.pop_back();
    }
  }

  root->ensure_grad();
  root->grad[0] += S(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<S>* n = *it;
    if (n->backprop) {
      n->ensure_grad();
      n->backprop(*n);
    }
  }
  root->backward_done = true;
}

// Finds the first node (in forward creation order seen from the loss) whose
// value contains a non-finite entry. Used for the NaN-abort diagnostic.
template <typename S>
std::string first_nonfinite_node(const TensorT<S>& loss) {
  std::vector<Node<S>*> order;
  std::unordered_set<Node<S>*> visited;
  struct Frame {
    Node<S>* n;
    size_t next_child;
  };
  std::vector<Frame> stack{{loss.node().get(), 0}};
  visited.insert(loss.node().get());
  while (!stack.empty()) {
    Frame& f = stack.back();
    if (f.next_child < f.n->parents.size()) {
      Node<S>* c = f.n->parents[f.next_child++].get();
      if (visited.insert(c).second) stack.push_back({c, 0});
    } else {
      order.push_back(f.n);
      stack.pop_back();
    }
  }
  for (auto it = order.begin(); it != order.end(); ++it) {
    for (S v : (*it)->value)
      if (!std::isfinite(static_cast<double>(v)))
        return (*it)->name.empty() ? std::string("<unnamed>") : (*it)->name;
  }
  return "";
}

// ---------------------------------------------------------------------------
// Elementwise ops
// ---------------------------------------------------------------------------

template <typename S>
void check_same_shape(const char* op, const TensorT<S>& a, const TensorT<S>& b) {
  if (a.shape() != b.shape())
    throw std::invalid_argument(std::string(op) + ": shape mismatch " +
                                shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

template <typename S>
TensorT<S> add(const TensorT<S>& a, const TensorT<S>& b) {
  check_same_shape("add", a, b);
  auto an = a.node(), bn = b.node();
  auto out = make_op<S>("add", a.shape(), {a, b}, [an, bn](Node<S>& n) {
    if (an->requires_grad) {
      an->ensure_grad();
      for (size_t i = 0; i < n.grad.size(); ++i) an->grad[i] += n.grad[i];
    }
    if (bn->requires_grad) {
      bn->ensure_grad();
      for (size_t i = 0; i < n.grad.size(); ++i) bn->grad[i] += n.grad[i];
    }
  });
  auto& o = out.data();
  const auto& av = a.data();
  const auto& bv = b.data();
  for (size_t i = 0; i < o.size(); ++i) o[i] = av[i] + bv[i];
  return out;
}

template <typename S>
TensorT<S> sub(const TensorT<S>& a, const TensorT<S>& b) {
  check_same_shape("sub", a, b);
  auto an = a.node(), bn = b.node();
  auto out = make_op<S>("sub", a.shape(), {a, b}, [an, bn](Node<S>& n) {
    if (an->requires_grad) {
      an->ensure_grad();
      for (size_t i = 0; i < n.grad.size(); ++i) an->grad[i] += n.grad[i];
    }
    if (bn->requires_grad) {
      bn->ensure_grad();
      for (size_t i = 0; i < n.grad.size(); ++i) bn->grad[i] -= n.grad[i];
    }
  });
  auto& o = out.data();
  const auto& av = a.data();
  const auto& bv = b.data();
  for (size_t i = 0; i < o.size(); ++i) o[i] = av[i] - bv[i];
  return out;
}

template <typename S>
TensorT<S> mul(const TensorT<S>& a, const TensorT<S>& b) {
  check_same_shape("mul", a, b);
  auto an = a.node(), bn = b.node();
  auto out = make_op<S>("mul", a.shape(), {a, b}, [an, bn](Node<S>& n) {
    if (an->requires_grad) {
      an->ensure_grad();
      for (size_t i = 0; i < n.grad.size(); ++i) an->grad[i] += n.grad[i] * bn->value[i];
    }
    if (bn->requires_grad) {
      bn->ensure_grad();
      for (size_t i = 0; i < n.grad.size(); ++i) bn->grad[i] += n.grad[i] * an->value[i];
    }
  });
  auto& o = out.data();
  const auto& av = a.data();
  const auto& bv = b.data();
  for (size_t i = 0; i < o.size(); ++i) o[i] = av[i] * bv[i];
  return out;
}

template <typename S>
TensorT<S> scale(const TensorT<S>& a, S c) {
  auto an = a.node();
  auto out = make_op<S>("scale", a.shape(), {a}, [an, c](Node<S>& n) {
    an->ensure_grad();
    for (size_t i = 0; i < n.grad.size(); ++i) an->grad[i] += n.grad[i] * c;
  });
  auto& o = out.data();
  const auto& av = a.data();
  for (size_t i = 0; i < o.size(); ++i) o[i] = av[i] * c;
  return out;
}

template <typename S>
TensorT<S> add_scalar(const TensorT<S>& a, S c) {
  auto an = a.node();
  auto out = make_op<S>("add_scalar", a.shape(), {a}, [an](Node<S>& n) {
    an->ensure_grad();
    for (size_t i = 0; i < n.grad.size(); ++i) an->grad[i] += n.grad[i];
  });
  auto& o = out.data();
  const auto& av = a.data();
  for (size_t i = 0; i < o.size(); ++i) o[i] = av[i] + c;
  return out;
}

template <typename S>
TensorT<S> relu(const TensorT<S>& a) {
  auto an = a.node();
  auto out = make_op<S>("relu", a.shape(), {a}, [an](Node<S>& n) {
    an->ensure_grad();
    for (size_t i = 0; i < n.grad.size(); ++i)
      if (an->value[i] > S(0)) an->grad[i] += n.grad[i];
  });
  auto& o = out.data();
  const auto& av = a.data();
  for (size_t i = 0; i < o.size(); ++i) o[i] = av[i] > S(0) ? av[i] : S(0);
  return out;
}

template <typename S>
TensorT<S> sigmoid(const TensorT<S>& a) {
  auto an = a.node();
  auto out = make_op<S>("sigmoid", a.shape(), {a}, [an](Node<S>& n) {
    an->ensure_grad();
    for (size_t i = 0; i < n.grad.size(); ++i) {
      S y = n.value[i];
      an->grad[i] += n.grad[i] * y * (S(1) - y);
    }
  });
  auto& o = out.data();
  const auto& av = a.data();
  for (size_t i = 0; i < o.size(); ++i) o[i] = S(1) / (S(1) + std::exp(-av[i]));
  return out;
}

template <typename S>
TensorT<S> log_op(const TensorT<S>& a) {
  auto an = a.node();
  auto out = make_op<S>("log", a.shape(), {a}, [an](Node<S>& n) {
    an->ensure_grad();
    for (size_t i = 0; i < n.grad.size(); ++i) an->grad[i] += n.grad[i] / an->value[i];
  });
  auto& o = out.data();
  const auto& av = a.data();
  for (size_t i = 0; i < o.size(); ++i) o[i] = std::log(av[i]);
  return out;
}

template <typename S>
TensorT<S> sqrt_op(const TensorT<S>& a) {
  auto an = a.node();
  auto out = make_op<S>("sqrt", a.shape(), {a}, [an](Node<S>& n) {
    an->ensure_grad();
    for (size_t i = 0; i < n.grad.size(); ++i)
      an->grad[i] += n.grad[i] / (S(2) * n.value[i]);
  });
  auto& o = out.data();
  const auto& av = a.data();
  for (size_t i = 0; i < o.size(); ++i) o[i] = std::sqrt(av[i]);
  return out;
}

template <typename S>
TensorT<S> abs_op(const TensorT<S>& a) {
  auto an = a.node();
  auto out = make_op<S>("abs", a.shape(), {a}, [an](Node<S>& n) {
    an->ensure_grad();
    for (size_t i = 0; i < n.grad.size(); ++i) {
      S x = an->value[i];
      S s = x > S(0) ? S(1) : (x < S(0) ? S(-1) : S(0));
      an->grad[i] += n.grad[i] * s;
    }
  });
  auto& o = out.data();
  const auto& av = a.data();
  for (size_t i = 0; i < o.size(); ++i) o[i] = std::abs(av[i]);
  return out;
}

// Gradient passes through only strictly inside the clamp range.
template <typename S>
TensorT<S> clamp(const TensorT<S>& a, S lo, S hi) {
  auto an = a.node();
  auto out = make_op<S>("clamp", a.shape(), {a}, [an, lo, hi](Node<S>& n) {
    an->ensure_grad();
    for (size_t i = 0; i < n.grad.size(); ++i) {
      S x = an->value[i];
      if (x > lo && x < hi) an->grad[i] += n.grad[i];
    }
  });
  auto& o = out.data();
  const auto& av = a.data();
  for (size_t i = 0; i < o.size(); ++i) o[i] = std::min(hi, std::max(lo, av[i]));
  return out;
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

template <typename S>
TensorT<S> sum(const TensorT<S>& a) {
  auto an = a.node();
  auto out = make_op<S>("sum", Shape{1}, {a}, [an](Node<S>& n) {
    an->ensure_grad();
    for (size_t i = 0; i < an->grad.size(); ++i) an->grad[i] += n.grad[0];
  });
  S acc = S(0);
  for (S v : a.data()) acc += v;
  out.data()[0] = acc;
  return out;
}

template <typename S>
TensorT<S> mean(const TensorT<S>& a) {
  S inv = S(1) / static_cast<S>(a.numel());
  return scale(sum(a), inv);
}

// ---------------------------------------------------------------------------
// Shape ops
// ---------------------------------------------------------------------------

// Concatenate C×H×W tensors along the channel axis.
template <typename S>
TensorT<S> concat_channels(const std::vector<TensorT<S>>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_channels: no inputs");
  int H = parts[0].shape()[1], W = parts[0].shape()[2];
  int C = 0;
  for (const auto& p : parts) {
    if (p.shape().size() != 3 || p.shape()[1] != H || p.shape()[2] != W)
      throw std::invalid_argument("concat_channels: spatial mismatch " +
                                  shape_str(p.shape()));
    C += p.shape()[0];
  }
  std::vector<std::shared_ptr<Node<S>>> pn;
  for (const auto& p : parts) pn.push_back(p.node());
  auto out = make_op<S>("concat_channels", Shape{C, H, W}, parts, [pn, H, W](Node<S>& n) {
    int64_t hw = int64_t(H) * W;
    int64_t off = 0;
    for (auto& p : pn) {
      int64_t len = int64_t(p->shape[0]) * hw;
      if (p->requires_grad) {
        p->ensure_grad();
        for (int64_t i = 0; i < len; ++i) p->grad[i] += n.grad[off + i];
      }
      off += len;
    }
  });
  auto& o = out.data();
  int64_t off = 0;
  for (const auto& p : parts) {
    std::copy(p.data().begin(), p.data().end(), o.begin() + off);
    off += p.numel();
  }
  return out;
}

// Multiply a C×H×W tensor by a 1×H×W map, broadcasting over channels.
template <typename S>
TensorT<S> mul_channel_broadcast(const TensorT<S>& x, const TensorT<S>& a) {
  if (x.shape().size() != 3 || a.shape().size() != 3 || a.shape()[0] != 1 ||
      x.shape()[1] != a.shape()[1] || x.shape()[2] != a.shape()[2])
    throw std::invalid_argument("mul_channel_broadcast: shapes " +
                                shape_str(x.shape()) + " vs " + shape_str(a.shape()));
  int C = x.shape()[0];
  int64_t hw = int64_t(x.shape()[1]) * x.shape()[2];
  auto xn = x.node(), an = a.node();
  auto out = make_op<S>("mul_channel_broadcast", x.shape(), {x, a},
                        [xn, an, C, hw](Node<S>& n) {
    if (xn->requires_grad) {
      xn->ensure_grad();
      for (int c = 0; c < C; ++c)
        for (int64_t i = 0; i < hw; ++i)
          xn->grad[c * hw + i] += n.grad[c * hw + i] * an->value[i];
    }
    if (an->requires_grad) {
      an->ensure_grad();
      for (int c = 0; c < C; ++c)
        for (int64_t i = 0; i < hw; ++i)
          an->grad[i] += n.grad[c * hw + i] * xn->value[c * hw + i];
    }
  });
  auto& o = out.data();
  const auto& xv = x.data();
  const auto& av = a.data();
  for (int c = 0; c < C; ++c)
    for (int64_t i = 0; i < hw; ++i) o[c * hw + i] = xv[c * hw + i] * av[i];
  return out;
}

// Per-pixel sum over the channel axis: K×H×W -> 1×H×W.
template <typename S>
TensorT<S> sum_channels(const TensorT<S>& x) {
  if (x.shape().size() != 3)
    throw std::invalid_argument("sum_channels: need C×H×W, got " + shape_str(x.shape()));
  int C = x.shape()[0];
  int64_t hw = int64_t(x.shape()[1]) * x.shape()[2];
  auto xn = x.node();
  auto out = make_op<S>("sum_channels", Shape{1, x.shape()[1], x.shape()[2]}, {x},
                        [xn, C, hw](Node<S>& n) {
    xn->ensure_grad();
    for (int c = 0; c < C; ++c)
      for (int64_t i = 0; i < hw; ++i) xn->grad[c * hw + i] += n.grad[i];
  });
  auto& o = out.data();
  const auto& xv = x.data();
  std::fill(o.begin(), o.end(), S(0));
  for (int c = 0; c < C; ++c)
    for (int64_t i = 0; i < hw; ++i) o[i] += xv[c * hw + i];
  return out;
}

// Global average pool: C×H×W -> C×1×1.
template <typename S>
TensorT<S> global_avg_pool(const TensorT<S>& x) {
  if (x.shape().size() != 3)
    throw std::invalid_argument("global_avg_pool: need C×H×W");
  int C = x.shape()[0];
  int64_t hw = int64_t(x.shape()[1]) * x.shape()[2];
  S inv = S(1) / static_cast<S>(hw);
  auto xn = x.node();
  auto out = make_op<S>("global_avg_pool", Shape{C, 1, 1}, {x}, [xn, C, hw, inv](Node<S>& n) {
    xn->ensure_grad();
    for (int c = 0; c < C; ++c)
      for (int64_t i = 0; i < hw; ++i) xn->grad[c * hw + i] += n.grad[c] * inv;
  });
  auto& o = out.data();
  const auto& xv = x.data();
  for (int c = 0; c < C; ++c) {
    S acc = S(0);
    for (int64_t i = 0; i < hw; ++i) acc += xv[c * hw + i];
    o[c] = acc * inv;
  }
  return out;
}

// Broadcast C×1×1 to C×H×W.
template <typename S>
TensorT<S> broadcast_spatial(const TensorT<S>& x, int H, int W) {
  if (x.shape().size() != 3 || x.shape()[1] != 1 || x.shape()[2] != 1)
    throw std::invalid_argument("broadcast_spatial: need C×1×1, got " +
                                shape_str(x.shape()));
  int C = x.shape()[0];
  int64_t hw = int64_t(H) * W;
  auto xn = x.node();
  auto out = make_op<S>("broadcast_spatial", Shape{C, H, W}, {x}, [xn, C, hw](Node<S>& n) {
    xn->ensure_grad();
    for (int c = 0; c < C; ++c) {
      S acc = S(0);
      for (int64_t i = 0; i < hw; ++i) acc += n.grad[c * hw + i];
      xn->grad[c] += acc;
    }
  });
  auto& o = out.data();
  const auto& xv = x.data();
  for (int c = 0; c < C; ++c)
    for (int64_t i = 0; i < hw; ++i) o[c * hw + i] = xv[c];
  return out;
}

}  // namespace gscnn
