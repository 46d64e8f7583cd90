#pragma once

#include <cmath>
#include <limits>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "sevar/autograd.hpp"
#include "sevar/tensor.hpp"

namespace sevar {

enum class Mode { train, eval };

// Named handle to an externally owned parameter or buffer tensor.
template <typename T>
struct ParamRef {
  std::string name;
  Tensor<T>* tensor;
};

// ---- elementwise activations (tensor level) ----

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  Tensor<T> out(x.shape(), T(0));
  for (std::int64_t i = 0; i < x.numel(); ++i) out[i] = x[i] > T(0) ? x[i] : T(0);
  return out;
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  Tensor<T> out(x.shape(), T(0));
  for (std::int64_t i = 0; i < x.numel(); ++i) out[i] = ag::sigmoid_scalar(x[i]);
  return out;
}

// ---- initialization ----

template <typename T>
T kaiming_bound(std::int64_t fan_in) {
  return std::sqrt(T(6) / static_cast<T>(fan_in));
}

// Kaiming-uniform weights, U(-sqrt(6/fan_in), +sqrt(6/fan_in)).
template <typename T>
Tensor<T> kaiming_uniform(Rng& rng, Shape shape, std::int64_t fan_in) {
  const T b = kaiming_bound<T>(fan_in);
  return rand_uniform<T>(rng, std::move(shape), -b, b);
}

enum class LayerKind { conv, dense };

// Returns {weight, bias}. fan_in is derived from the weight shape
// (conv: Cin*Kh*Kw, dense: in); biases start at zero.
template <typename T>
std::pair<Tensor<T>, Tensor<T>> init_params(Rng& rng, LayerKind kind, Shape weight_shape) {
  std::int64_t fan_in = 0;
  std::int64_t out_dim = weight_shape[0];
  if (kind == LayerKind::conv) {
    fan_in = weight_shape[1] * weight_shape[2] * weight_shape[3];
  } else {
    fan_in = weight_shape[1];
  }
  Tensor<T> w = kaiming_uniform<T>(rng, std::move(weight_shape), fan_in);
  Tensor<T> b({out_dim}, T(0));
  return {std::move(w), std::move(b)};
}

// ---- convolution ----

inline std::int64_t conv_out_dim(std::int64_t in, std::int64_t k, std::int64_t stride,
                                 std::int64_t pad) {
  return (in + 2 * pad - k) / stride + 1;
}

namespace detail {

// cols[(n*OH+oh)*OW+ow, (ci*KH+ki)*KW+kj] = x[n, ci, oh*s-p+ki, ow*s-p+kj]
// (zero outside the image). Column layout matches the row-major flattening of
// a [Cout, Cin, KH, KW] weight tensor.
template <typename T>
Tensor<T> im2col(const Tensor<T>& x, std::int64_t kh, std::int64_t kw, std::int64_t stride,
                 std::int64_t pad, std::int64_t oh, std::int64_t ow) {
  const std::int64_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::int64_t patch = c * kh * kw;
  Tensor<T> cols({n * oh * ow, patch}, T(0));
  T* cp = cols.data();
  const T* xp = x.data();
  for (std::int64_t in = 0; in < n; ++in) {
    for (std::int64_t i = 0; i < oh; ++i) {
      for (std::int64_t j = 0; j < ow; ++j) {
        T* row = cp + ((in * oh + i) * ow + j) * patch;
        const std::int64_t h0 = i * stride - pad;
        const std::int64_t w0 = j * stride - pad;
        for (std::int64_t ci = 0; ci < c; ++ci) {
          const T* plane = xp + (in * c + ci) * h * w;
          for (std::int64_t ki = 0; ki < kh; ++ki) {
            const std::int64_t hi = h0 + ki;
            T* dst = row + (ci * kh + ki) * kw;
            if (hi < 0 || hi >= h) continue;  // row stays zero
            const T* src = plane + hi * w;
            for (std::int64_t kj = 0; kj < kw; ++kj) {
              const std::int64_t wi = w0 + kj;
              if (wi >= 0 && wi < w) dst[kj] = src[wi];
            }
          }
        }
      }
    }
  }
  return cols;
}

// Scatter-accumulate of the im2col layout back onto an image gradient.
template <typename T>
void col2im_accumulate(const Tensor<T>& cols, std::int64_t kh, std::int64_t kw,
                       std::int64_t stride, std::int64_t pad, std::int64_t oh, std::int64_t ow,
                       Tensor<T>& dx) {
  const std::int64_t n = dx.dim(0), c = dx.dim(1), h = dx.dim(2), w = dx.dim(3);
  const std::int64_t patch = c * kh * kw;
  const T* cp = cols.data();
  T* xp = dx.data();
  for (std::int64_t in = 0; in < n; ++in) {
    for (std::int64_t i = 0; i < oh; ++i) {
      for (std::int64_t j = 0; j < ow; ++j) {
        const T* row = cp + ((in * oh + i) * ow + j) * patch;
        const std::int64_t h0 = i * stride - pad;
        const std::int64_t w0 = j * stride - pad;
        for (std::int64_t ci = 0; ci < c; ++ci) {
          T* plane = xp + (in * c + ci) * h * w;
          for (std::int64_t ki = 0; ki < kh; ++ki) {
            const std::int64_t hi = h0 + ki;
            if (hi < 0 || hi >= h) continue;
            const T* src = row + (ci * kh + ki) * kw;
            T* dst = plane + hi * w;
            for (std::int64_t kj = 0; kj < kw; ++kj) {
              const std::int64_t wi = w0 + kj;
              if (wi >= 0 && wi < w) dst[wi] += src[kj];
            }
          }
        }
      }
    }
  }
}

}  // namespace detail

namespace ag {

// Cross-correlation (no kernel flip) with stride and zero padding, plus an
// optional per-output-channel bias. Forward is im2col + GEMM; backward
// recomputes the column matrix instead of keeping it alive.
template <typename T>
VarId conv2d(Tape<T>& t, VarId x, VarId w, std::optional<VarId> b, std::int64_t stride,
             std::int64_t pad) {
  const Tensor<T>& xv = t.value(x);
  const Tensor<T>& wv = t.value(w);
  if (xv.ndim() != 4 || wv.ndim() != 4) {
    throw ShapeMismatch("conv2d: expects NCHW input and [Cout,Cin,Kh,Kw] weight");
  }
  if (xv.dim(1) != wv.dim(1)) {
    throw ShapeMismatch("conv2d: input has " + std::to_string(xv.dim(1)) +
                        " channels but weight expects " + std::to_string(wv.dim(1)));
  }
  const std::int64_t n = xv.dim(0), cout = wv.dim(0), kh = wv.dim(2), kw = wv.dim(3);
  const std::int64_t oh = conv_out_dim(xv.dim(2), kh, stride, pad);
  const std::int64_t ow = conv_out_dim(xv.dim(3), kw, stride, pad);
  if (oh < 1 || ow < 1) {
    throw InvalidShape("conv2d: output would be empty for input " + shape_str(xv.shape()));
  }
  if (b && t.value(*b).numel() != cout) {
    throw ShapeMismatch("conv2d: bias length must equal Cout");
  }

  const std::int64_t rows = n * oh * ow, patch = wv.dim(1) * kh * kw;
  Tensor<T> cols = detail::im2col(xv, kh, kw, stride, pad, oh, ow);
  Tensor<T> y0({rows, cout}, T(0));  // y0 = cols * W^T
  detail::gemm(false, true, rows, cout, patch, T(1), cols.data(), patch, wv.data(), patch, T(0),
               y0.data(), cout);

  Tensor<T> out({n, cout, oh, ow}, T(0));
  const T* bias = b ? t.value(*b).data() : nullptr;
  for (std::int64_t in = 0; in < n; ++in) {
    for (std::int64_t i = 0; i < oh; ++i) {
      for (std::int64_t j = 0; j < ow; ++j) {
        const T* src = y0.data() + ((in * oh + i) * ow + j) * cout;
        for (std::int64_t co = 0; co < cout; ++co) {
          out(in, co, i, j) = src[co] + (bias ? bias[co] : T(0));
        }
      }
    }
  }

  std::vector<VarId> inputs = b ? std::vector<VarId>{x, w, *b} : std::vector<VarId>{x, w};
  return t.record(std::move(inputs), std::move(out),
                  [x, w, b, stride, pad, oh, ow](Tape<T>& tp, VarId o) {
    const Tensor<T>& g = tp.grad(o);
    const Tensor<T>& xv2 = tp.value(x);
    const Tensor<T>& wv2 = tp.value(w);
    const std::int64_t n2 = xv2.dim(0), cout2 = wv2.dim(0);
    const std::int64_t kh2 = wv2.dim(2), kw2 = wv2.dim(3);
    const std::int64_t rows2 = n2 * oh * ow, patch2 = wv2.dim(1) * kh2 * kw2;

    // dY in the [rows, Cout] layout used by the forward GEMM
    Tensor<T> gy({rows2, cout2}, T(0));
    for (std::int64_t in = 0; in < n2; ++in) {
      for (std::int64_t i = 0; i < oh; ++i) {
        for (std::int64_t j = 0; j < ow; ++j) {
          T* dst = gy.data() + ((in * oh + i) * ow + j) * cout2;
          for (std::int64_t co = 0; co < cout2; ++co) dst[co] = g(in, co, i, j);
        }
      }
    }

    if (b && tp.requires_grad(*b)) {
      Tensor<T>& gb = tp.grad_mut(*b);
      for (std::int64_t r = 0; r < rows2; ++r) {
        const T* src = gy.data() + r * cout2;
        for (std::int64_t co = 0; co < cout2; ++co) gb[co] += src[co];
      }
    }
    const bool need_w = tp.requires_grad(w);
    const bool need_x = tp.requires_grad(x);
    if (need_w) {
      Tensor<T> cols2 = detail::im2col(xv2, kh2, kw2, stride, pad, oh, ow);
      // dW = dY^T * cols
      detail::gemm(true, false, cout2, patch2, rows2, T(1), gy.data(), cout2, cols2.data(),
                   patch2, T(1), tp.grad_mut(w).data(), patch2);
    }
    if (need_x) {
      Tensor<T> dcols({rows2, patch2}, T(0));  // dcols = dY * W
      detail::gemm(false, false, rows2, patch2, cout2, T(1), gy.data(), cout2, wv2.data(),
                   patch2, T(0), dcols.data(), patch2);
      detail::col2im_accumulate(dcols, kh2, kw2, stride, pad, oh, ow, tp.grad_mut(x));
    }
  });
}

// y = x * W^T + b for x:[N,in], W:[out,in], b:[out].
template <typename T>
VarId dense(Tape<T>& t, VarId x, VarId w, VarId b) {
  const Tensor<T>& xv = t.value(x);
  const Tensor<T>& wv = t.value(w);
  const Tensor<T>& bv = t.value(b);
  if (xv.ndim() != 2 || wv.ndim() != 2 || xv.dim(1) != wv.dim(1)) {
    throw ShapeMismatch("dense: input " + shape_str(xv.shape()) + " incompatible with weight " +
                        shape_str(wv.shape()));
  }
  if (bv.numel() != wv.dim(0)) throw ShapeMismatch("dense: bias length must equal out features");
  const std::int64_t n = xv.dim(0), in = xv.dim(1), out = wv.dim(0);
  Tensor<T> y({n, out}, T(0));
  detail::gemm(false, true, n, out, in, T(1), xv.data(), in, wv.data(), in, T(0), y.data(), out);
  for (std::int64_t i = 0; i < n; ++i) {
    for (std::int64_t j = 0; j < out; ++j) y(i, j) += bv[j];
  }
  return t.record({x, w, b}, std::move(y), [x, w, b](Tape<T>& tp, VarId o) {
    const Tensor<T>& g = tp.grad(o);
    const Tensor<T>&xv2 = tp.value(x), &wv2 = tp.value(w);
    const std::int64_t n2 = xv2.dim(0), in2 = xv2.dim(1), out2 = wv2.dim(0);
    if (tp.requires_grad(x)) {  // dX = G * W
      detail::gemm(false, false, n2, in2, out2, T(1), g.data(), out2, wv2.data(), in2, T(1),
                   tp.grad_mut(x).data(), in2);
    }
    if (tp.requires_grad(w)) {  // dW = G^T * X
      detail::gemm(true, false, out2, in2, n2, T(1), g.data(), out2, xv2.data(), in2, T(1),
                   tp.grad_mut(w).data(), in2);
    }
    if (tp.requires_grad(b)) {
      Tensor<T>& gb = tp.grad_mut(b);
      for (std::int64_t i = 0; i < n2; ++i) {
        for (std::int64_t j = 0; j < out2; ++j) gb[j] += g(i, j);
      }
    }
  });
}

// Max pooling over k x k windows. Gradient flows only to the argmax element
// of each window (first occurrence on ties).
template <typename T>
VarId maxpool2d(Tape<T>& t, VarId x, std::int64_t k, std::int64_t stride, std::int64_t pad) {
  const Tensor<T>& xv = t.value(x);
  if (xv.ndim() != 4) throw ShapeMismatch("maxpool2d: expects NCHW input");
  const std::int64_t n = xv.dim(0), c = xv.dim(1), h = xv.dim(2), w = xv.dim(3);
  const std::int64_t oh = conv_out_dim(h, k, stride, pad);
  const std::int64_t ow = conv_out_dim(w, k, stride, pad);
  if (oh < 1 || ow < 1) throw InvalidShape("maxpool2d: output would be empty");

  Tensor<T> out({n, c, oh, ow}, T(0));
  auto argmax = std::make_shared<std::vector<std::int64_t>>(
      static_cast<std::size_t>(n * c * oh * ow));
  std::int64_t oi = 0;
  for (std::int64_t in = 0; in < n; ++in) {
    for (std::int64_t ci = 0; ci < c; ++ci) {
      const T* plane = xv.data() + (in * c + ci) * h * w;
      for (std::int64_t i = 0; i < oh; ++i) {
        for (std::int64_t j = 0; j < ow; ++j, ++oi) {
          T best = -std::numeric_limits<T>::infinity();
          std::int64_t best_idx = -1;
          for (std::int64_t ki = 0; ki < k; ++ki) {
            const std::int64_t hi = i * stride - pad + ki;
            if (hi < 0 || hi >= h) continue;
            for (std::int64_t kj = 0; kj < k; ++kj) {
              const std::int64_t wi = j * stride - pad + kj;
              if (wi < 0 || wi >= w) continue;
              const T v = plane[hi * w + wi];
              if (v > best) {
                best = v;
                best_idx = hi * w + wi;
              }
            }
          }
          out[oi] = best;
          (*argmax)[static_cast<std::size_t>(oi)] = (in * c + ci) * h * w + best_idx;
        }
      }
    }
  }
  return t.record({x}, std::move(out), [x, argmax](Tape<T>& tp, VarId o) {
    const Tensor<T>& g = tp.grad(o);
    Tensor<T>& gx = tp.grad_mut(x);
    for (std::int64_t i = 0; i < g.numel(); ++i) {
      gx[(*argmax)[static_cast<std::size_t>(i)]] += g[i];
    }
  });
}

// 2x2 non-overlapping max pool; spatial dims must be even.
template <typename T>
VarId maxpool2(Tape<T>& t, VarId x) {
  const Tensor<T>& xv = t.value(x);
  if (xv.ndim() != 4) throw ShapeMismatch("maxpool2: expects NCHW input");
  if (xv.dim(2) % 2 != 0 || xv.dim(3) % 2 != 0) {
    throw InvalidShape("maxpool2: spatial dims must be even, got " + shape_str(xv.shape()));
  }
  return maxpool2d(t, x, 2, 2, 0);
}

// Per-channel batch normalization state that persists across steps.
template <typename T>
struct BnRunning {
  Tensor<T> mean;
  Tensor<T> var;
};

// Train mode normalizes with batch statistics (biased variance over N*H*W)
// and folds them into the running estimates:
//   running = (1 - momentum) * running + momentum * batch.
// Eval mode normalizes with the running estimates only. Running stats track
// the biased batch moments so a converged eval pass reproduces train output.
template <typename T>
VarId batchnorm2d(Tape<T>& t, VarId x, VarId gamma, VarId beta, BnRunning<T>* running,
                  T momentum, T eps, Mode mode) {
  const Tensor<T>& xv = t.value(x);
  if (xv.ndim() != 4) throw ShapeMismatch("batchnorm2d: expects NCHW input");
  const std::int64_t n = xv.dim(0), c = xv.dim(1), h = xv.dim(2), w = xv.dim(3);
  if (t.value(gamma).numel() != c || t.value(beta).numel() != c) {
    throw ShapeMismatch("batchnorm2d: gamma/beta must have one entry per channel");
  }
  const std::int64_t m = n * h * w;
  const std::int64_t hw = h * w;

  auto mean = std::make_shared<std::vector<T>>(static_cast<std::size_t>(c), T(0));
  auto invstd = std::make_shared<std::vector<T>>(static_cast<std::size_t>(c), T(0));

  if (mode == Mode::train) {
    if (m < 2) {
      throw DegenerateBatch("batchnorm2d: train mode needs N*H*W >= 2, got " + std::to_string(m));
    }
    for (std::int64_t ci = 0; ci < c; ++ci) {
      T acc = 0;
      for (std::int64_t in = 0; in < n; ++in) {
        const T* plane = xv.data() + (in * c + ci) * hw;
        for (std::int64_t p = 0; p < hw; ++p) acc += plane[p];
      }
      const T mu = acc / static_cast<T>(m);
      T vacc = 0;
      for (std::int64_t in = 0; in < n; ++in) {
        const T* plane = xv.data() + (in * c + ci) * hw;
        for (std::int64_t p = 0; p < hw; ++p) {
          const T d = plane[p] - mu;
          vacc += d * d;
        }
      }
      const T var = vacc / static_cast<T>(m);
      (*mean)[static_cast<std::size_t>(ci)] = mu;
      (*invstd)[static_cast<std::size_t>(ci)] = T(1) / std::sqrt(var + eps);
      if (running) {
        running->mean[ci] = (T(1) - momentum) * running->mean[ci] + momentum * mu;
        running->var[ci] = (T(1) - momentum) * running->var[ci] + momentum * var;
      }
    }
  } else {
    if (!running) throw Error("batchnorm2d: eval mode needs running statistics");
    for (std::int64_t ci = 0; ci < c; ++ci) {
      (*mean)[static_cast<std::size_t>(ci)] = running->mean[ci];
      (*invstd)[static_cast<std::size_t>(ci)] = T(1) / std::sqrt(running->var[ci] + eps);
    }
  }

  const Tensor<T>& gv = t.value(gamma);
  const Tensor<T>& bv = t.value(beta);
  Tensor<T> out(xv.shape(), T(0));
  for (std::int64_t in = 0; in < n; ++in) {
    for (std::int64_t ci = 0; ci < c; ++ci) {
      const T mu = (*mean)[static_cast<std::size_t>(ci)];
      const T is = (*invstd)[static_cast<std::size_t>(ci)];
      const T ga = gv[ci], be = bv[ci];
      const T* src = xv.data() + (in * c + ci) * hw;
      T* dst = out.data() + (in * c + ci) * hw;
      for (std::int64_t p = 0; p < hw; ++p) dst[p] = (src[p] - mu) * is * ga + be;
    }
  }

  const bool train = (mode == Mode::train);
  return t.record({x, gamma, beta}, std::move(out),
                  [x, gamma, beta, mean, invstd, train, m, c, hw, n](Tape<T>& tp, VarId o) {
    const Tensor<T>& g = tp.grad(o);
    const Tensor<T>& xv2 = tp.value(x);
    const Tensor<T>& gv2 = tp.value(gamma);
    const bool need_x = tp.requires_grad(x);

    for (std::int64_t ci = 0; ci < c; ++ci) {
      const T mu = (*mean)[static_cast<std::size_t>(ci)];
      const T is = (*invstd)[static_cast<std::size_t>(ci)];
      T sum_dy = 0, sum_dy_xhat = 0;
      for (std::int64_t in = 0; in < n; ++in) {
        const T* gp = g.data() + (in * c + ci) * hw;
        const T* xp = xv2.data() + (in * c + ci) * hw;
        for (std::int64_t p = 0; p < hw; ++p) {
          sum_dy += gp[p];
          sum_dy_xhat += gp[p] * (xp[p] - mu) * is;
        }
      }
      if (tp.requires_grad(gamma)) tp.grad_mut(gamma)[ci] += sum_dy_xhat;
      if (tp.requires_grad(beta)) tp.grad_mut(beta)[ci] += sum_dy;
      if (need_x) {
        Tensor<T>& gx = tp.grad_mut(x);
        const T ga = gv2[ci];
        if (train) {
          const T inv_m = T(1) / static_cast<T>(m);
          for (std::int64_t in = 0; in < n; ++in) {
            const T* gp = g.data() + (in * c + ci) * hw;
            const T* xp = xv2.data() + (in * c + ci) * hw;
            T* dst = gx.data() + (in * c + ci) * hw;
            for (std::int64_t p = 0; p < hw; ++p) {
              const T xhat = (xp[p] - mu) * is;
              dst[p] += ga * is * (gp[p] - inv_m * sum_dy - inv_m * xhat * sum_dy_xhat);
            }
          }
        } else {
          for (std::int64_t in = 0; in < n; ++in) {
            const T* gp = g.data() + (in * c + ci) * hw;
            T* dst = gx.data() + (in * c + ci) * hw;
            for (std::int64_t p = 0; p < hw; ++p) dst[p] += ga * is * gp[p];
          }
        }
      }
    }
  });
}

// Mean over the batch of -log softmax(logits)[label], max-subtracted for
// stability. Gradient is (softmax - onehot) / N.
template <typename T>
VarId softmax_cross_entropy(Tape<T>& t, VarId logits, const std::vector<int>& labels) {
  const Tensor<T>& lv = t.value(logits);
  if (lv.ndim() != 2) throw ShapeMismatch("softmax_cross_entropy: logits must be [N,K]");
  const std::int64_t n = lv.dim(0), k = lv.dim(1);
  if (static_cast<std::int64_t>(labels.size()) != n) {
    throw ShapeMismatch("softmax_cross_entropy: one label per row required");
  }
  for (int lab : labels) {
    if (lab < 0 || lab >= k) {
      throw InvalidLabel("softmax_cross_entropy: label " + std::to_string(lab) +
                         " outside [0," + std::to_string(k) + ")");
    }
  }

  auto probs = std::make_shared<Tensor<T>>(lv.shape(), T(0));
  T loss = 0;
  for (std::int64_t i = 0; i < n; ++i) {
    const T* row = lv.data() + i * k;
    T mx = row[0];
    for (std::int64_t j = 1; j < k; ++j) mx = std::max(mx, row[j]);
    T denom = 0;
    for (std::int64_t j = 0; j < k; ++j) denom += std::exp(row[j] - mx);
    const T log_denom = std::log(denom);
    T* prow = probs->data() + i * k;
    for (std::int64_t j = 0; j < k; ++j) prow[j] = std::exp(row[j] - mx) / denom;
    loss += -(row[labels[static_cast<std::size_t>(i)]] - mx - log_denom);
  }
  loss /= static_cast<T>(n);

  return t.record({logits}, Tensor<T>({1}, loss),
                  [logits, probs, labels](Tape<T>& tp, VarId o) {
    const T g0 = tp.grad(o)[0];
    Tensor<T>& gl = tp.grad_mut(logits);
    const std::int64_t n2 = gl.dim(0), k2 = gl.dim(1);
    const T invn = T(1) / static_cast<T>(n2);
    for (std::int64_t i = 0; i < n2; ++i) {
      const T* prow = probs->data() + i * k2;
      T* grow = gl.data() + i * k2;
      const int lab = labels[static_cast<std::size_t>(i)];
      for (std::int64_t j = 0; j < k2; ++j) {
        grow[j] += g0 * invn * (prow[j] - (j == lab ? T(1) : T(0)));
      }
    }
  });
}

}  // namespace ag

// ---- parameter-owning layer structs ----

template <typename T>
struct Conv2d {
  Tensor<T> weight;  // [Cout, Cin, Kh, Kw]
  Tensor<T> bias;    // [Cout], unused when has_bias is false
  std::int64_t stride = 1;
  std::int64_t pad = 0;
  bool has_bias = true;

  Conv2d() = default;
  Conv2d(std::int64_t cin, std::int64_t cout, std::int64_t k, std::int64_t stride_,
         std::int64_t pad_, bool bias_, Rng& rng)
      : stride(stride_), pad(pad_), has_bias(bias_) {
    auto [w, b] = init_params<T>(rng, LayerKind::conv, {cout, cin, k, k});
    weight = std::move(w);
    bias = std::move(b);
  }

  VarId forward(Tape<T>& t, VarId x) const {
    VarId w = t.bind(&weight);
    std::optional<VarId> b;
    if (has_bias) b = t.bind(&bias);
    return ag::conv2d(t, x, w, b, stride, pad);
  }

  void collect(const std::string& prefix, std::vector<ParamRef<T>>& out) {
    out.push_back({prefix + ".weight", &weight});
    if (has_bias) out.push_back({prefix + ".bias", &bias});
  }
};

template <typename T>
struct Dense {
  Tensor<T> weight;  // [out, in]
  Tensor<T> bias;    // [out]

  Dense() = default;
  Dense(std::int64_t in, std::int64_t out, Rng& rng) {
    auto [w, b] = init_params<T>(rng, LayerKind::dense, {out, in});
    weight = std::move(w);
    bias = std::move(b);
  }

  VarId forward(Tape<T>& t, VarId x) const {
    return ag::dense(t, x, t.bind(&weight), t.bind(&bias));
  }

  void collect(const std::string& prefix, std::vector<ParamRef<T>>& out) {
    out.push_back({prefix + ".weight", &weight});
    out.push_back({prefix + ".bias", &bias});
  }
};

template <typename T>
struct BatchNorm2d {
  Tensor<T> gamma;
  Tensor<T> beta;
  ag::BnRunning<T> running;
  T momentum = T(0.1);
  T eps = T(1e-5);

  BatchNorm2d() = default;
  explicit BatchNorm2d(std::int64_t channels)
      : gamma({channels}, T(1)),
        beta({channels}, T(0)),
        running{Tensor<T>({channels}, T(0)), Tensor<T>({channels}, T(1))} {}

  VarId forward(Tape<T>& t, VarId x, Mode mode) {
    return ag::batchnorm2d(t, x, t.bind(&gamma), t.bind(&beta), &running, momentum, eps, mode);
  }

  void collect(const std::string& prefix, std::vector<ParamRef<T>>& out) {
    out.push_back({prefix + ".gamma", &gamma});
    out.push_back({prefix + ".beta", &beta});
  }
  void collect_buffers(const std::string& prefix, std::vector<ParamRef<T>>& out) {
    out.push_back({prefix + ".running_mean", &running.mean});
    out.push_back({prefix + ".running_var", &running.var});
  }
};

// ---- accuracy ----

// Top-k membership: the true label is a top-k hit when fewer than k logits
// rank above it (strictly greater, with earlier index breaking ties).
template <typename T>
bool topk_hit(const T* row, std::int64_t k_classes, int label, int k) {
  const T lv = row[label];
  int rank = 0;
  for (std::int64_t j = 0; j < k_classes; ++j) {
    if (row[j] > lv || (row[j] == lv && j < label)) ++rank;
  }
  return rank < k;
}

template <typename T>
std::pair<std::int64_t, std::int64_t> topk_counts(const Tensor<T>& logits,
                                                  const std::vector<int>& labels) {
  const std::int64_t n = logits.dim(0), k = logits.dim(1);
  std::int64_t hit1 = 0, hit5 = 0;
  for (std::int64_t i = 0; i < n; ++i) {
    const T* row = logits.data() + i * k;
    const int lab = labels[static_cast<std::size_t>(i)];
    if (topk_hit(row, k, lab, 1)) ++hit1;
    if (topk_hit(row, k, lab, 5)) ++hit5;
  }
  return {hit1, hit5};
}

}  // namespace sevar
