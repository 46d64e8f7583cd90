#pragma once

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "sevar/errors.hpp"
#include "sevar/rng.hpp"

namespace sevar {

using Shape = std::vector<std::int64_t>;

inline std::int64_t shape_numel(const Shape& shape) {
  std::int64_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << "]";
  return os.str();
}

// Dense row-major N-dimensional array. 4-D activations follow the NCHW
// convention. Scalar type is float for training and double for the
// verification suites.
template <typename T>
class Tensor {
 public:
  Tensor() = default;

  Tensor(Shape shape, T fill) : shape_(std::move(shape)) {
    validate_shape(shape_);
    data_.assign(static_cast<std::size_t>(shape_numel(shape_)), fill);
  }

  Tensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
    validate_shape(shape_);
    if (static_cast<std::int64_t>(data_.size()) != shape_numel(shape_)) {
      throw InvalidShape("tensor data length " + std::to_string(data_.size()) +
                         " does not match shape " + shape_str(shape_));
    }
  }

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape), T(0)); }

  const Shape& shape() const { return shape_; }
  int ndim() const { return static_cast<int>(shape_.size()); }
  std::int64_t dim(int i) const { return shape_[static_cast<std::size_t>(i)]; }
  std::int64_t numel() const { return static_cast<std::int64_t>(data_.size()); }
  bool empty() const { return data_.empty(); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::vector<T>& vec() { return data_; }
  const std::vector<T>& vec() const { return data_; }

  T& operator[](std::int64_t i) { return data_[static_cast<std::size_t>(i)]; }
  const T& operator[](std::int64_t i) const { return data_[static_cast<std::size_t>(i)]; }

  T& operator()(std::int64_t i, std::int64_t j) {
    return data_[static_cast<std::size_t>(i * shape_[1] + j)];
  }
  const T& operator()(std::int64_t i, std::int64_t j) const {
    return data_[static_cast<std::size_t>(i * shape_[1] + j)];
  }
  T& operator()(std::int64_t n, std::int64_t c, std::int64_t h, std::int64_t w) {
    return data_[static_cast<std::size_t>(((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w)];
  }
  const T& operator()(std::int64_t n, std::int64_t c, std::int64_t h, std::int64_t w) const {
    return data_[static_cast<std::size_t>(((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w)];
  }

  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  template <typename U>
  Tensor<U> cast() const {
    std::vector<U> out(data_.size());
    for (std::size_t i = 0; i < data_.size(); ++i) out[i] = static_cast<U>(data_[i]);
    return Tensor<U>(shape_, std::move(out));
  }

 private:
  static void validate_shape(const Shape& shape) {
    if (shape.empty()) throw InvalidShape("tensor shape must have at least one dimension");
    for (auto d : shape) {
      if (d < 1) throw InvalidShape("tensor dimensions must be positive, got " + shape_str(shape));
    }
  }

  Shape shape_;
  std::vector<T> data_;
};

// ---- primitive operations ----

template <typename T>
Tensor<T> create(Shape shape, T fill) {
  return Tensor<T>(std::move(shape), fill);
}

namespace detail {
// C[M,N] = alpha * op(A) * op(B) + beta * C, row-major. Backed by BLAS for
// float/double; reduction order is fixed (single BLAS thread), which keeps
// results bitwise reproducible run-to-run.
void gemm_f32(bool trans_a, bool trans_b, std::int64_t m, std::int64_t n, std::int64_t k,
              float alpha, const float* a, std::int64_t lda, const float* b, std::int64_t ldb,
              float beta, float* c, std::int64_t ldc);
void gemm_f64(bool trans_a, bool trans_b, std::int64_t m, std::int64_t n, std::int64_t k,
              double alpha, const double* a, std::int64_t lda, const double* b, std::int64_t ldb,
              double beta, double* c, std::int64_t ldc);

inline void gemm(bool ta, bool tb, std::int64_t m, std::int64_t n, std::int64_t k, float alpha,
                 const float* a, std::int64_t lda, const float* b, std::int64_t ldb, float beta,
                 float* c, std::int64_t ldc) {
  gemm_f32(ta, tb, m, n, k, alpha, a, lda, b, ldb, beta, c, ldc);
}
inline void gemm(bool ta, bool tb, std::int64_t m, std::int64_t n, std::int64_t k, double alpha,
                 const double* a, std::int64_t lda, const double* b, std::int64_t ldb, double beta,
                 double* c, std::int64_t ldc) {
  gemm_f64(ta, tb, m, n, k, alpha, a, lda, b, ldb, beta, c, ldc);
}
}  // namespace detail

// Standard matrix product of two 2-D tensors.
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.ndim() != 2 || b.ndim() != 2) {
    throw ShapeMismatch("matmul: expects 2-D tensors, got " + shape_str(a.shape()) + " and " +
                        shape_str(b.shape()));
  }
  if (a.dim(1) != b.dim(0)) {
    throw ShapeMismatch("matmul: inner dimensions disagree, " + shape_str(a.shape()) + " x " +
                        shape_str(b.shape()));
  }
  const std::int64_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor<T> c({m, n}, T(0));
  detail::gemm(false, false, m, n, k, T(1), a.data(), k, b.data(), n, T(0), c.data(), n);
  return c;
}

// out[n,c,h,w] = u[n,c,h,w] * s[n,c] — the per-channel rescale that ends
// every SE-style module.
template <typename T>
Tensor<T> channel_scale(const Tensor<T>& u, const Tensor<T>& s) {
  if (u.ndim() != 4) throw ShapeMismatch("channel_scale: u must be 4-D, got " + shape_str(u.shape()));
  if (s.ndim() != 2 || s.dim(0) != u.dim(0) || s.dim(1) != u.dim(1)) {
    throw ShapeMismatch("channel_scale: gate shape " + shape_str(s.shape()) +
                        " does not match activations " + shape_str(u.shape()));
  }
  const std::int64_t n = u.dim(0), c = u.dim(1), hw = u.dim(2) * u.dim(3);
  Tensor<T> out(u.shape(), T(0));
  const T* up = u.data();
  T* op = out.data();
  for (std::int64_t i = 0; i < n; ++i) {
    for (std::int64_t j = 0; j < c; ++j) {
      const T g = s(i, j);
      const std::int64_t base = (i * c + j) * hw;
      for (std::int64_t p = 0; p < hw; ++p) op[base + p] = up[base + p] * g;
    }
  }
  return out;
}

// z[n,c] = mean over the spatial positions of channel c — the squeeze.
// Each channel is summed in sorted value order: the sorted sequence of a
// multiset is unique, so the result is exactly invariant under any spatial
// permutation of the channel.
template <typename T>
Tensor<T> spatial_mean(const Tensor<T>& u) {
  if (u.ndim() != 4) throw ShapeMismatch("spatial_mean: expects NCHW input, got " + shape_str(u.shape()));
  const std::int64_t n = u.dim(0), c = u.dim(1), hw = u.dim(2) * u.dim(3);
  Tensor<T> z({n, c}, T(0));
  const T* up = u.data();
  const T inv = T(1) / static_cast<T>(hw);
  std::vector<T> buf(static_cast<std::size_t>(hw));
  for (std::int64_t i = 0; i < n; ++i) {
    for (std::int64_t j = 0; j < c; ++j) {
      const std::int64_t base = (i * c + j) * hw;
      buf.assign(up + base, up + base + hw);
      std::sort(buf.begin(), buf.end());
      T acc = 0;
      for (std::int64_t p = 0; p < hw; ++p) acc += buf[static_cast<std::size_t>(p)];
      z(i, j) = acc * inv;
    }
  }
  return z;
}

// I.i.d. uniform samples in [lo, hi), deterministic per seed.
template <typename T>
Tensor<T> rand_uniform(Rng& rng, Shape shape, T lo, T hi) {
  if (!(lo < hi)) throw InvalidRange("rand_uniform: requires lo < hi");
  Tensor<T> out(std::move(shape), T(0));
  for (std::int64_t i = 0; i < out.numel(); ++i) {
    out[i] = static_cast<T>(rng.uniform(static_cast<double>(lo), static_cast<double>(hi)));
  }
  return out;
}

}  // namespace sevar
