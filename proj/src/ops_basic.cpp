#include <algorithm>
#include <cmath>
#include <numbers>

#include "ops_internal.hpp"

namespace ittr {

using detail::grad_of;
using detail::require;
using detail::wants_grad;

namespace {

template <typename T>
void require_same_shape(const char* op, const Tensor<T>& a, const Tensor<T>& b) {
  require(a.shape() == b.shape(), std::string(op) + ": shape mismatch " + to_string(a.shape()) +
                                      " vs " + to_string(b.shape()));
}

// Unary elementwise op whose derivative is a function of (x, y).
template <typename T, typename F, typename D>
Tensor<T> unary(const char* op, const Tensor<T>& x, F f, D dfdx) {
  const auto xs = x.data();
  Buffer<T> out(xs.size());
  std::transform(xs.begin(), xs.end(), out.begin(), f);
  return detail::make_result<T>(op, x.shape(), std::move(out), {&x}, [x, dfdx](Node<T>& self) {
    if (!wants_grad(x)) return;
    T* gx = grad_of(x);
    const T* xv = x.raw();
    const size_t n = self.value.size();
    for (size_t i = 0; i < n; ++i) gx[i] += self.grad[i] * dfdx(xv[i], self.value[i]);
  });
}

}  // namespace

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape("add", a, b);
  Buffer<T> out(a.data().begin(), a.data().end());
  const T* bv = b.raw();
  for (size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  return detail::make_result<T>("add", a.shape(), std::move(out), {&a, &b}, [a, b](Node<T>& self) {
    for (const Tensor<T>* t : {&a, &b}) {
      if (!wants_grad(*t)) continue;
      T* g = grad_of(*t);
      for (size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
    }
  });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape("sub", a, b);
  Buffer<T> out(a.data().begin(), a.data().end());
  const T* bv = b.raw();
  for (size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
  return detail::make_result<T>("sub", a.shape(), std::move(out), {&a, &b}, [a, b](Node<T>& self) {
    if (wants_grad(a)) {
      T* g = grad_of(a);
      for (size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
    }
    if (wants_grad(b)) {
      T* g = grad_of(b);
      for (size_t i = 0; i < self.grad.size(); ++i) g[i] -= self.grad[i];
    }
  });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape("mul", a, b);
  Buffer<T> out(a.data().begin(), a.data().end());
  const T* bv = b.raw();
  for (size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  return detail::make_result<T>("mul", a.shape(), std::move(out), {&a, &b}, [a, b](Node<T>& self) {
    // Read both inputs before writing: a and b may be the same node.
    const T* av = a.raw();
    const T* bv = b.raw();
    if (wants_grad(a)) {
      T* g = grad_of(a);
      for (size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * bv[i];
    }
    if (wants_grad(b)) {
      T* g = grad_of(b);
      for (size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * av[i];
    }
  });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor) {
  return unary<T>(
      "scale", a, [factor](T v) { return v * factor; }, [factor](T, T) { return factor; });
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& a, T offset) {
  return unary<T>(
      "add_scalar", a, [offset](T v) { return v + offset; }, [](T, T) { return T(1); });
}

template <typename T>
Tensor<T> gelu(const Tensor<T>& x) {
  return unary<T>(
      "gelu", x,
      [](T v) { return T(0.5) * v * (T(1) + std::erf(v * T(std::numbers::sqrt2 / 2))); },
      [](T v, T) {
        const T cdf = T(0.5) * (T(1) + std::erf(v * T(std::numbers::sqrt2 / 2)));
        const T pdf = std::exp(T(-0.5) * v * v) * T(std::numbers::inv_sqrtpi / std::numbers::sqrt2);
        return cdf + v * pdf;
      });
}

template <typename T>
Tensor<T> tanh(const Tensor<T>& x) {
  return unary<T>(
      "tanh", x, [](T v) { return std::tanh(v); }, [](T, T y) { return T(1) - y * y; });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  return unary<T>(
      "relu", x, [](T v) { return v > T(0) ? v : T(0); },
      [](T v, T) { return v > T(0) ? T(1) : T(0); });
}

template <typename T>
Tensor<T> leaky_relu(const Tensor<T>& x, T slope) {
  return unary<T>(
      "leaky_relu", x, [slope](T v) { return v > T(0) ? v : slope * v; },
      [slope](T v, T) { return v > T(0) ? T(1) : slope; });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& a) {
  T total = T(0);
  for (T v : a.data()) total += v;
  return detail::make_result<T>("sum", Shape{}, {total}, {&a}, [a](Node<T>& self) {
    if (!wants_grad(a)) return;
    T* g = grad_of(a);
    const T up = self.grad[0];
    for (Index i = 0; i < a.numel(); ++i) g[i] += up;
  });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& a) {
  T total = T(0);
  for (T v : a.data()) total += v;
  const T inv = T(1) / static_cast<T>(a.numel());
  return detail::make_result<T>("mean", Shape{}, {total * inv}, {&a}, [a, inv](Node<T>& self) {
    if (!wants_grad(a)) return;
    T* g = grad_of(a);
    const T up = self.grad[0] * inv;
    for (Index i = 0; i < a.numel(); ++i) g[i] += up;
  });
}

template <typename T>
Tensor<T> mean_squared_error(const Tensor<T>& a, T target) {
  T total = T(0);
  for (T v : a.data()) total += (v - target) * (v - target);
  const T inv = T(1) / static_cast<T>(a.numel());
  return detail::make_result<T>(
      "mean_squared_error", Shape{}, {total * inv}, {&a}, [a, inv, target](Node<T>& self) {
        if (!wants_grad(a)) return;
        T* g = grad_of(a);
        const T* av = a.raw();
        const T up = T(2) * self.grad[0] * inv;
        for (Index i = 0; i < a.numel(); ++i) g[i] += up * (av[i] - target);
      });
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape) {
  require(numel(shape) == a.numel(),
          "reshape: " + to_string(a.shape()) + " cannot become " + to_string(shape));
  Buffer<T> out(a.data().begin(), a.data().end());
  return detail::make_result<T>("reshape", std::move(shape), std::move(out), {&a},
                                [a](Node<T>& self) {
                                  if (!wants_grad(a)) return;
                                  T* g = grad_of(a);
                                  for (size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
                                });
}

namespace {

// out[perm-order index] = in[...]; calls visit(out_flat, in_flat).
template <typename F>
void for_each_permuted(const Shape& in_shape, const std::vector<int>& axes, F visit) {
  const int r = static_cast<int>(in_shape.size());
  std::vector<Index> in_stride(static_cast<size_t>(r), 1);
  for (int i = r - 2; i >= 0; --i) in_stride[i] = in_stride[i + 1] * in_shape[i + 1];
  std::vector<Index> out_shape(static_cast<size_t>(r)), step(static_cast<size_t>(r));
  for (int i = 0; i < r; ++i) {
    out_shape[i] = in_shape[axes[i]];
    step[i] = in_stride[axes[i]];
  }
  const Index total = numel(in_shape);
  std::vector<Index> counter(static_cast<size_t>(r), 0);
  Index in_flat = 0;
  for (Index out_flat = 0; out_flat < total; ++out_flat) {
    visit(out_flat, in_flat);
    for (int d = r - 1; d >= 0; --d) {
      if (++counter[d] < out_shape[d]) {
        in_flat += step[d];
        break;
      }
      in_flat -= step[d] * (out_shape[d] - 1);
      counter[d] = 0;
    }
  }
}

}  // namespace

template <typename T>
Tensor<T> permute(const Tensor<T>& a, const std::vector<int>& axes) {
  const int r = a.rank();
  require(static_cast<int>(axes.size()) == r, "permute: axis count mismatch");
  std::vector<bool> used(static_cast<size_t>(r), false);
  Shape out_shape(static_cast<size_t>(r));
  for (int i = 0; i < r; ++i) {
    require(axes[i] >= 0 && axes[i] < r && !used[axes[i]], "permute: invalid axis list");
    used[axes[i]] = true;
    out_shape[i] = a.shape()[axes[i]];
  }
  Buffer<T> out(static_cast<size_t>(a.numel()));
  const T* in = a.raw();
  for_each_permuted(a.shape(), axes, [&](Index o, Index i) { out[o] = in[i]; });
  return detail::make_result<T>("permute", std::move(out_shape), std::move(out), {&a},
                                [a, axes](Node<T>& self) {
                                  if (!wants_grad(a)) return;
                                  T* g = grad_of(a);
                                  const T* up = self.grad.data();
                                  for_each_permuted(a.shape(), axes,
                                                    [&](Index o, Index i) { g[i] += up[o]; });
                                });
}

template <typename T>
Tensor<T> transpose_last2(const Tensor<T>& a) {
  require(a.rank() >= 2, "transpose_last2: rank must be >= 2");
  std::vector<int> axes(static_cast<size_t>(a.rank()));
  for (int i = 0; i < a.rank(); ++i) axes[i] = i;
  std::swap(axes[a.rank() - 1], axes[a.rank() - 2]);
  return permute(a, axes);
}

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, int axis) {
  require(!parts.empty(), "concat: no inputs");
  const int r = parts.front().rank();
  if (axis < 0) axis += r;
  require(axis >= 0 && axis < r, "concat: axis out of range");
  Shape out_shape = parts.front().shape();
  out_shape[axis] = 0;
  for (const auto& p : parts) {
    require(p.rank() == r, "concat: rank mismatch");
    for (int d = 0; d < r; ++d)
      if (d != axis)
        require(p.shape()[d] == parts.front().shape()[d],
                "concat: shape mismatch " + to_string(p.shape()) + " vs " +
                    to_string(parts.front().shape()));
    out_shape[axis] += p.shape()[axis];
  }
  Index outer = 1, inner = 1;
  for (int d = 0; d < axis; ++d) outer *= out_shape[d];
  for (int d = axis + 1; d < r; ++d) inner *= out_shape[d];
  const Index out_block = out_shape[axis] * inner;

  Buffer<T> out(static_cast<size_t>(numel(out_shape)));
  Index offset = 0;
  for (const auto& p : parts) {
    const Index block = p.shape()[axis] * inner;
    const T* src = p.raw();
    for (Index o = 0; o < outer; ++o)
      std::copy_n(src + o * block, block, out.data() + o * out_block + offset);
    offset += block;
  }
  return detail::make_result<T>(
      "concat", std::move(out_shape), std::move(out), parts,
      [parts, outer, inner, out_block, axis](Node<T>& self) {
        Index off = 0;
        for (const auto& p : parts) {
          const Index block = p.shape()[axis] * inner;
          if (wants_grad(p)) {
            T* g = grad_of(p);
            for (Index o = 0; o < outer; ++o) {
              const T* up = self.grad.data() + o * out_block + off;
              for (Index i = 0; i < block; ++i) g[o * block + i] += up[i];
            }
          }
          off += block;
        }
      });
}

template <typename T>
Tensor<T> gather_rows(const Tensor<T>& x, const std::vector<std::vector<Index>>& rows) {
  require(x.rank() == 3, "gather_rows: expected [G x N x D], got " + to_string(x.shape()));
  const Index groups = x.dim(0), n = x.dim(1), d = x.dim(2);
  require(static_cast<Index>(rows.size()) == groups, "gather_rows: one index list per group");
  const Index m = static_cast<Index>(rows.front().size());
  require(m > 0, "gather_rows: empty index list");
  Buffer<T> out(static_cast<size_t>(groups * m * d));
  for (Index g = 0; g < groups; ++g) {
    require(static_cast<Index>(rows[g].size()) == m, "gather_rows: ragged index lists");
    for (Index j = 0; j < m; ++j) {
      const Index src = rows[g][j];
      require(src >= 0 && src < n, "gather_rows: index out of range");
      std::copy_n(x.raw() + (g * n + src) * d, d, out.data() + (g * m + j) * d);
    }
  }
  return detail::make_result<T>("gather_rows", Shape{groups, m, d}, std::move(out), {&x},
                                [x, rows, n, m, d](Node<T>& self) {
                                  if (!wants_grad(x)) return;
                                  T* gx = grad_of(x);
                                  for (size_t g = 0; g < rows.size(); ++g)
                                    for (Index j = 0; j < m; ++j) {
                                      const T* up = self.grad.data() + (g * m + j) * d;
                                      T* dst = gx + (static_cast<Index>(g) * n + rows[g][j]) * d;
                                      for (Index k = 0; k < d; ++k) dst[k] += up[k];
                                    }
                                });
}

#define ITTR_INSTANTIATE(T)                                                               \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                             \
  template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                             \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                             \
  template Tensor<T> scale(const Tensor<T>&, T);                                          \
  template Tensor<T> add_scalar(const Tensor<T>&, T);                                     \
  template Tensor<T> gelu(const Tensor<T>&);                                              \
  template Tensor<T> tanh(const Tensor<T>&);                                              \
  template Tensor<T> relu(const Tensor<T>&);                                              \
  template Tensor<T> leaky_relu(const Tensor<T>&, T);                                     \
  template Tensor<T> sum(const Tensor<T>&);                                               \
  template Tensor<T> mean(const Tensor<T>&);                                              \
  template Tensor<T> mean_squared_error(const Tensor<T>&, T);                             \
  template Tensor<T> reshape(const Tensor<T>&, Shape);                                    \
  template Tensor<T> permute(const Tensor<T>&, const std::vector<int>&);                  \
  template Tensor<T> transpose_last2(const Tensor<T>&);                                   \
  template Tensor<T> concat(const std::vector<Tensor<T>>&, int);                          \
  template Tensor<T> gather_rows(const Tensor<T>&, const std::vector<std::vector<Index>>&);
ITTR_INSTANTIATE(float)
ITTR_INSTANTIATE(double)
#undef ITTR_INSTANTIATE

}  // namespace ittr
