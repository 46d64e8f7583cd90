#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <unordered_map>
#include <utility>
#include <vector>

#include "sevar/tensor.hpp"

namespace sevar {

// Index of a recorded value on a Tape.
using VarId = std::int32_t;

// Reverse-mode tape. Every differentiable op records its inputs, its output
// and a backward rule; backward() replays the rules in exact reverse
// recording order and accumulates (+=) gradients across fan-out. One tape per
// training step, used single-threaded.
template <typename T>
class Tape {
 public:
  VarId leaf(Tensor<T> value, bool requires_grad) {
    nodes_.push_back(Node{std::move(value), Tensor<T>{}, requires_grad});
    return static_cast<VarId>(nodes_.size() - 1);
  }

  // Binds an externally owned tensor (model parameter). Rebinding the same
  // pointer returns the existing node, and grad_of() can look gradients up by
  // pointer after backward().
  VarId bind(const Tensor<T>* external, bool requires_grad = true) {
    auto it = bound_.find(external);
    if (it != bound_.end()) return it->second;
    VarId id = leaf(*external, requires_grad);
    bound_.emplace(external, id);
    return id;
  }

  const Tensor<T>& value(VarId id) const { return nodes_[static_cast<std::size_t>(id)].value; }
  bool requires_grad(VarId id) const { return nodes_[static_cast<std::size_t>(id)].requires_grad; }

  // Gradient of the last backward() pass; zeros if the node was never reached.
  const Tensor<T>& grad(VarId id) {
    return grad_mut(id);
  }

  Tensor<T>& grad_mut(VarId id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (n.grad.empty()) n.grad = Tensor<T>::zeros(n.value.shape());
    return n.grad;
  }

  bool grad_live(VarId id) const { return !nodes_[static_cast<std::size_t>(id)].grad.empty(); }

  const Tensor<T>& grad_of(const Tensor<T>* external) {
    auto it = bound_.find(external);
    if (it == bound_.end()) throw Error("grad_of: tensor was never bound to this tape");
    return grad(it->second);
  }

  // Records a new op. `backward` may be empty when no input needs gradients.
  VarId record(std::vector<VarId> inputs, Tensor<T> out_value,
               std::function<void(Tape&, VarId)> backward) {
    bool needs = false;
    for (VarId in : inputs) needs = needs || nodes_[static_cast<std::size_t>(in)].requires_grad;
    VarId out = leaf(std::move(out_value), needs);
    if (needs && backward) {
      ops_.push_back(OpRecord{std::move(inputs), out, std::move(backward)});
    }
    return out;
  }

  // Accumulates d loss / d value into every reachable node's grad. When
  // `release_intermediates` is set, value and grad buffers of non-leaf nodes
  // are freed as soon as the reverse sweep is done with them (training-loop
  // memory saver; leaves keep their gradients either way).
  void backward(VarId loss, bool release_intermediates = false) {
    const Tensor<T>& lv = value(loss);
    if (lv.numel() != 1) {
      throw NonScalarLoss("backward: loss must be scalar, got shape " + shape_str(lv.shape()));
    }
    grad_mut(loss).fill(T(1));
    for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) {
      Node& out_node = nodes_[static_cast<std::size_t>(it->output)];
      if (!out_node.grad.empty()) {
        it->backward(*this, it->output);
      }
      if (release_intermediates) {
        out_node.value = Tensor<T>{};
        out_node.grad = Tensor<T>{};
      }
    }
  }

  std::size_t num_nodes() const { return nodes_.size(); }
  std::size_t num_ops() const { return ops_.size(); }

 private:
  struct Node {
    Tensor<T> value;
    Tensor<T> grad;  // allocated lazily, same shape as value
    bool requires_grad = false;
  };
  struct OpRecord {
    std::vector<VarId> inputs;
    VarId output;
    std::function<void(Tape&, VarId)> backward;
  };

  std::vector<Node> nodes_;
  std::vector<OpRecord> ops_;
  std::unordered_map<const Tensor<T>*, VarId> bound_;
};

namespace ag {

template <typename T>
void accumulate(Tensor<T>& into, const Tensor<T>& delta) {
  T* d = into.data();
  const T* s = delta.data();
  for (std::int64_t i = 0; i < into.numel(); ++i) d[i] += s[i];
}

// y = a + b (same shape)
template <typename T>
VarId add(Tape<T>& t, VarId a, VarId b) {
  const Tensor<T>&av = t.value(a), &bv = t.value(b);
  if (!av.same_shape(bv)) {
    throw ShapeMismatch("add: shapes differ, " + shape_str(av.shape()) + " vs " + shape_str(bv.shape()));
  }
  Tensor<T> out(av.shape(), T(0));
  for (std::int64_t i = 0; i < out.numel(); ++i) out[i] = av[i] + bv[i];
  return t.record({a, b}, std::move(out), [a, b](Tape<T>& tp, VarId o) {
    const Tensor<T>& g = tp.grad(o);
    if (tp.requires_grad(a)) ag::accumulate(tp.grad_mut(a), g);
    if (tp.requires_grad(b)) ag::accumulate(tp.grad_mut(b), g);
  });
}

// y = a * b elementwise
template <typename T>
VarId mul(Tape<T>& t, VarId a, VarId b) {
  const Tensor<T>&av = t.value(a), &bv = t.value(b);
  if (!av.same_shape(bv)) {
    throw ShapeMismatch("mul: shapes differ, " + shape_str(av.shape()) + " vs " + shape_str(bv.shape()));
  }
  Tensor<T> out(av.shape(), T(0));
  for (std::int64_t i = 0; i < out.numel(); ++i) out[i] = av[i] * bv[i];
  return t.record({a, b}, std::move(out), [a, b](Tape<T>& tp, VarId o) {
    const Tensor<T>& g = tp.grad(o);
    const Tensor<T>&av2 = tp.value(a), &bv2 = tp.value(b);
    if (tp.requires_grad(a)) {
      Tensor<T>& ga = tp.grad_mut(a);
      for (std::int64_t i = 0; i < ga.numel(); ++i) ga[i] += g[i] * bv2[i];
    }
    if (tp.requires_grad(b)) {
      Tensor<T>& gb = tp.grad_mut(b);
      for (std::int64_t i = 0; i < gb.numel(); ++i) gb[i] += g[i] * av2[i];
    }
  });
}

// y = c * x
template <typename T>
VarId scale(Tape<T>& t, VarId x, T c) {
  const Tensor<T>& xv = t.value(x);
  Tensor<T> out(xv.shape(), T(0));
  for (std::int64_t i = 0; i < out.numel(); ++i) out[i] = c * xv[i];
  return t.record({x}, std::move(out), [x, c](Tape<T>& tp, VarId o) {
    const Tensor<T>& g = tp.grad(o);
    Tensor<T>& gx = tp.grad_mut(x);
    for (std::int64_t i = 0; i < gx.numel(); ++i) gx[i] += c * g[i];
  });
}

// y = sum of all elements (scalar [1])
template <typename T>
VarId sum(Tape<T>& t, VarId x) {
  const Tensor<T>& xv = t.value(x);
  T acc = 0;
  for (std::int64_t i = 0; i < xv.numel(); ++i) acc += xv[i];
  return t.record({x}, Tensor<T>({1}, acc), [x](Tape<T>& tp, VarId o) {
    const T g = tp.grad(o)[0];
    Tensor<T>& gx = tp.grad_mut(x);
    for (std::int64_t i = 0; i < gx.numel(); ++i) gx[i] += g;
  });
}

// y = sum(x * w) for a fixed weight tensor — a well-conditioned scalar head
// for gradient checks.
template <typename T>
VarId weighted_sum(Tape<T>& t, VarId x, Tensor<T> w) {
  const Tensor<T>& xv = t.value(x);
  if (!xv.same_shape(w)) throw ShapeMismatch("weighted_sum: weight shape mismatch");
  T acc = 0;
  for (std::int64_t i = 0; i < xv.numel(); ++i) acc += xv[i] * w[i];
  return t.record({x}, Tensor<T>({1}, acc), [x, w = std::move(w)](Tape<T>& tp, VarId o) {
    const T g = tp.grad(o)[0];
    Tensor<T>& gx = tp.grad_mut(x);
    for (std::int64_t i = 0; i < gx.numel(); ++i) gx[i] += g * w[i];
  });
}

template <typename T>
VarId reshape(Tape<T>& t, VarId x, Shape shape) {
  const Tensor<T>& xv = t.value(x);
  if (shape_numel(shape) != xv.numel()) {
    throw ShapeMismatch("reshape: element count changes from " + shape_str(xv.shape()) + " to " +
                        shape_str(shape));
  }
  Tensor<T> out(std::move(shape), xv.vec());
  return t.record({x}, std::move(out), [x](Tape<T>& tp, VarId o) {
    const Tensor<T>& g = tp.grad(o);
    Tensor<T>& gx = tp.grad_mut(x);
    for (std::int64_t i = 0; i < gx.numel(); ++i) gx[i] += g[i];
  });
}

template <typename T>
VarId relu(Tape<T>& t, VarId x) {
  const Tensor<T>& xv = t.value(x);
  Tensor<T> out(xv.shape(), T(0));
  for (std::int64_t i = 0; i < out.numel(); ++i) out[i] = xv[i] > T(0) ? xv[i] : T(0);
  return t.record({x}, std::move(out), [x](Tape<T>& tp, VarId o) {
    const Tensor<T>& g = tp.grad(o);
    const Tensor<T>& xv2 = tp.value(x);
    Tensor<T>& gx = tp.grad_mut(x);
    for (std::int64_t i = 0; i < gx.numel(); ++i) {
      if (xv2[i] > T(0)) gx[i] += g[i];
    }
  });
}

template <typename T>
T sigmoid_scalar(T v) {
  // Evaluate through exp of a negative argument only, so neither branch
  // overflows. The result is clamped to the nearest representable values
  // inside (0,1): the contract is an open interval even where exp underflows.
  T y;
  if (v >= T(0)) {
    const T e = std::exp(-v);
    y = T(1) / (T(1) + e);
  } else {
    const T e = std::exp(v);
    y = e / (T(1) + e);
  }
  const T lo = std::numeric_limits<T>::denorm_min();
  const T hi = T(1) - std::numeric_limits<T>::epsilon() / T(2);
  return std::min(std::max(y, lo), hi);
}

template <typename T>
VarId sigmoid(Tape<T>& t, VarId x) {
  const Tensor<T>& xv = t.value(x);
  Tensor<T> out(xv.shape(), T(0));
  for (std::int64_t i = 0; i < out.numel(); ++i) out[i] = sigmoid_scalar(xv[i]);
  return t.record({x}, std::move(out), [x](Tape<T>& tp, VarId o) {
    const Tensor<T>& g = tp.grad(o);
    const Tensor<T>& y = tp.value(o);
    Tensor<T>& gx = tp.grad_mut(x);
    for (std::int64_t i = 0; i < gx.numel(); ++i) gx[i] += g[i] * y[i] * (T(1) - y[i]);
  });
}

template <typename T>
VarId matmul(Tape<T>& t, VarId a, VarId b) {
  Tensor<T> out = sevar::matmul(t.value(a), t.value(b));
  return t.record({a, b}, std::move(out), [a, b](Tape<T>& tp, VarId o) {
    const Tensor<T>& g = tp.grad(o);  // [M,N]
    const Tensor<T>&av = tp.value(a), &bv = tp.value(b);
    const std::int64_t m = av.dim(0), k = av.dim(1), n = bv.dim(1);
    if (tp.requires_grad(a)) {  // dA = G * B^T
      detail::gemm(false, true, m, k, n, T(1), g.data(), n, bv.data(), n, T(1),
                   tp.grad_mut(a).data(), k);
    }
    if (tp.requires_grad(b)) {  // dB = A^T * G
      detail::gemm(true, false, k, n, m, T(1), av.data(), k, g.data(), n, T(1),
                   tp.grad_mut(b).data(), n);
    }
  });
}

template <typename T>
VarId spatial_mean(Tape<T>& t, VarId u) {
  Tensor<T> out = sevar::spatial_mean(t.value(u));
  return t.record({u}, std::move(out), [u](Tape<T>& tp, VarId o) {
    const Tensor<T>& g = tp.grad(o);  // [N,C]
    const Tensor<T>& uv = tp.value(u);
    const std::int64_t n = uv.dim(0), c = uv.dim(1), hw = uv.dim(2) * uv.dim(3);
    const T inv = T(1) / static_cast<T>(hw);
    Tensor<T>& gu = tp.grad_mut(u);
    for (std::int64_t i = 0; i < n; ++i) {
      for (std::int64_t j = 0; j < c; ++j) {
        const T gv = g(i, j) * inv;
        const std::int64_t base = (i * c + j) * hw;
        for (std::int64_t p = 0; p < hw; ++p) gu[base + p] += gv;
      }
    }
  });
}

template <typename T>
VarId channel_scale(Tape<T>& t, VarId u, VarId s) {
  Tensor<T> out = sevar::channel_scale(t.value(u), t.value(s));
  return t.record({u, s}, std::move(out), [u, s](Tape<T>& tp, VarId o) {
    const Tensor<T>& g = tp.grad(o);
    const Tensor<T>&uv = tp.value(u), &sv = tp.value(s);
    const std::int64_t n = uv.dim(0), c = uv.dim(1), hw = uv.dim(2) * uv.dim(3);
    if (tp.requires_grad(u)) {
      Tensor<T>& gu = tp.grad_mut(u);
      for (std::int64_t i = 0; i < n; ++i) {
        for (std::int64_t j = 0; j < c; ++j) {
          const T gate = sv(i, j);
          const std::int64_t base = (i * c + j) * hw;
          for (std::int64_t p = 0; p < hw; ++p) gu[base + p] += g[base + p] * gate;
        }
      }
    }
    if (tp.requires_grad(s)) {
      Tensor<T>& gs = tp.grad_mut(s);
      for (std::int64_t i = 0; i < n; ++i) {
        for (std::int64_t j = 0; j < c; ++j) {
          const std::int64_t base = (i * c + j) * hw;
          T acc = 0;
          for (std::int64_t p = 0; p < hw; ++p) acc += g[base + p] * uv[base + p];
          gs(i, j) += acc;
        }
      }
    }
  });
}

}  // namespace ag

// Central-difference gradient check. `build` constructs a deterministic
// scalar-valued graph from a leaf for x; the analytic gradient from one
// backward pass is compared element-by-element against
// (f(x+eps*e_i) - f(x-eps*e_i)) / (2*eps). Returns the max over elements of
// |analytic - numeric| / max(|analytic|, |numeric|, 1e-8).
template <typename T, typename BuildFn>
T finite_diff_check(BuildFn&& build, const Tensor<T>& x, T eps) {
  if (!(eps > T(0))) throw InvalidRange("finite_diff_check: eps must be positive");

  Tensor<T> analytic;
  {
    Tape<T> tape;
    VarId xid = tape.leaf(x, /*requires_grad=*/true);
    VarId loss = build(tape, xid);
    tape.backward(loss);
    analytic = tape.grad(xid);
  }

  auto eval = [&](const Tensor<T>& point) -> T {
    Tape<T> tape;
    VarId xid = tape.leaf(point, /*requires_grad=*/false);
    VarId loss = build(tape, xid);
    return tape.value(loss)[0];
  };

  Tensor<T> probe = x;
  T worst = 0;
  for (std::int64_t i = 0; i < x.numel(); ++i) {
    const T saved = probe[i];
    probe[i] = saved + eps;
    const T fp = eval(probe);
    probe[i] = saved - eps;
    const T fm = eval(probe);
    probe[i] = saved;
    const T numeric = (fp - fm) / (T(2) * eps);
    const T a = analytic[i];
    const T denom = std::max({std::abs(a), std::abs(numeric), T(1e-8)});
    worst = std::max(worst, std::abs(a - numeric) / denom);
  }
  return worst;
}

}  // namespace sevar
