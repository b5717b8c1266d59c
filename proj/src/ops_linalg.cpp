#include <algorithm>
#include <cmath>
#include <limits>

#include "ops_internal.hpp"

namespace ittr {

using detail::ConstMatMap;
using detail::grad_of;
using detail::MatMap;
using detail::require;
using detail::wants_grad;

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  require(a.rank() >= 2 && b.rank() >= 2, "matmul: operands must have rank >= 2, got " +
                                              to_string(a.shape()) + " and " + to_string(b.shape()));
  const Index m = a.dim(-2), k = a.dim(-1);
  const Index kb = b.dim(-2), n = b.dim(-1);
  const bool shared_b = b.rank() == 2;
  Shape lead_a(a.shape().begin(), a.shape().end() - 2);
  Shape lead_b(b.shape().begin(), b.shape().end() - 2);
  require(k == kb && (shared_b || lead_a == lead_b),
          "matmul: incompatible shapes " + to_string(a.shape()) + " and " + to_string(b.shape()));
  const Index batch = numel(lead_a);
  Shape out_shape = lead_a;
  out_shape.push_back(m);
  out_shape.push_back(n);

  Buffer<T> out(static_cast<size_t>(batch * m * n));
  for (Index g = 0; g < batch; ++g) {
    ConstMatMap<T> A(a.raw() + g * m * k, m, k);
    ConstMatMap<T> B(b.raw() + (shared_b ? 0 : g * k * n), k, n);
    MatMap<T> C(out.data() + g * m * n, m, n);
    C.noalias() = A * B;
  }
  return detail::make_result<T>(
      "matmul", std::move(out_shape), std::move(out), {&a, &b},
      [a, b, batch, m, k, n, shared_b](Node<T>& self) {
        const bool ga = wants_grad(a), gb = wants_grad(b);
        for (Index g = 0; g < batch; ++g) {
          ConstMatMap<T> dC(self.grad.data() + g * m * n, m, n);
          ConstMatMap<T> A(a.raw() + g * m * k, m, k);
          ConstMatMap<T> B(b.raw() + (shared_b ? 0 : g * k * n), k, n);
          if (ga) MatMap<T>(grad_of(a) + g * m * k, m, k).noalias() += dC * B.transpose();
          if (gb)
            MatMap<T>(grad_of(b) + (shared_b ? 0 : g * k * n), k, n).noalias() +=
                A.transpose() * dC;
        }
      });
}

template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>* bias) {
  require(weight.rank() == 2, "linear: weight must be [out x in]");
  const Index out_f = weight.dim(0), in_f = weight.dim(1);
  require(x.rank() >= 1 && x.dim(-1) == in_f,
          "linear: input " + to_string(x.shape()) + " does not match weight " +
              to_string(weight.shape()));
  if (bias) require(bias->rank() == 1 && bias->dim(0) == out_f, "linear: bias must be [out]");
  const Index rows = x.numel() / in_f;
  Shape out_shape = x.shape();
  out_shape.back() = out_f;

  Buffer<T> out(static_cast<size_t>(rows * out_f));
  MatMap<T> Y(out.data(), rows, out_f);
  ConstMatMap<T> X(x.raw(), rows, in_f);
  ConstMatMap<T> Wm(weight.raw(), out_f, in_f);
  Y.noalias() = X * Wm.transpose();
  if (bias) Y.rowwise() += detail::ConstVecMap<T>(bias->raw(), out_f).transpose();

  Tensor<T> b = bias ? *bias : Tensor<T>();
  return detail::make_result<T>(
      "linear", std::move(out_shape), std::move(out), {&x, &weight, &b},
      [x, weight, b, rows, in_f, out_f](Node<T>& self) {
        ConstMatMap<T> dY(self.grad.data(), rows, out_f);
        if (wants_grad(x))
          MatMap<T>(grad_of(x), rows, in_f).noalias() +=
              dY * ConstMatMap<T>(weight.raw(), out_f, in_f);
        if (wants_grad(weight))
          MatMap<T>(grad_of(weight), out_f, in_f).noalias() +=
              dY.transpose() * ConstMatMap<T>(x.raw(), rows, in_f);
        if (wants_grad(b))
          detail::VecMap<T>(grad_of(b), out_f) += dY.colwise().sum().transpose();
      });
}

template <typename T>
Tensor<T> softmax(const Tensor<T>& x, int axis) {
  const int r = x.rank();
  if (axis < 0) axis += r;
  require(axis >= 0 && axis < r, "softmax: axis out of range for " + to_string(x.shape()));
  Index outer = 1, inner = 1;
  for (int d = 0; d < axis; ++d) outer *= x.shape()[d];
  for (int d = axis + 1; d < r; ++d) inner *= x.shape()[d];
  const Index len = x.shape()[axis];
  detail::check_finite<T>("softmax input", x.data());

  Buffer<T> out(static_cast<size_t>(x.numel()));
  const T* in = x.raw();
  for (Index o = 0; o < outer; ++o)
    for (Index i = 0; i < inner; ++i) {
      const Index base = o * len * inner + i;
      T mx = -std::numeric_limits<T>::infinity();
      for (Index j = 0; j < len; ++j) mx = std::max(mx, in[base + j * inner]);
      T total = T(0);
      for (Index j = 0; j < len; ++j) {
        const T e = std::exp(in[base + j * inner] - mx);
        out[base + j * inner] = e;
        total += e;
      }
      const T inv = T(1) / total;
      for (Index j = 0; j < len; ++j) out[base + j * inner] *= inv;
    }
  return detail::make_result<T>(
      "softmax", x.shape(), std::move(out), {&x}, [x, outer, inner, len](Node<T>& self) {
        if (!wants_grad(x)) return;
        T* gx = grad_of(x);
        const T* y = self.value.data();
        const T* g = self.grad.data();
        for (Index o = 0; o < outer; ++o)
          for (Index i = 0; i < inner; ++i) {
            const Index base = o * len * inner + i;
            T dot = T(0);
            for (Index j = 0; j < len; ++j) dot += g[base + j * inner] * y[base + j * inner];
            for (Index j = 0; j < len; ++j) {
              const Index at = base + j * inner;
              gx[at] += y[at] * (g[at] - dot);
            }
          }
      });
}

template <typename T>
Tensor<T> l2_normalize_tokens(const Tensor<T>& x, T eps) {
  require(x.rank() >= 1, "l2_normalize_tokens: rank must be >= 1");
  if (!(eps > T(0))) throw ContractError("l2_normalize_tokens: eps must be positive");
  const Index d = x.dim(-1);
  const Index rows = x.numel() / d;
  Buffer<T> out(static_cast<size_t>(x.numel()));
  Buffer<T> denom(static_cast<size_t>(rows));
  const T* in = x.raw();
  for (Index r = 0; r < rows; ++r) {
    T sq = T(0);
    for (Index j = 0; j < d; ++j) sq += in[r * d + j] * in[r * d + j];
    denom[r] = std::max(std::sqrt(sq), eps);
    for (Index j = 0; j < d; ++j) out[r * d + j] = in[r * d + j] / denom[r];
  }
  return detail::make_result<T>(
      "l2_normalize_tokens", x.shape(), std::move(out), {&x},
      [x, denom, eps, rows, d](Node<T>& self) {
        if (!wants_grad(x)) return;
        T* gx = grad_of(x);
        const T* y = self.value.data();
        const T* g = self.grad.data();
        for (Index r = 0; r < rows; ++r) {
          const T s = denom[r];
          if (s > eps) {
            T dot = T(0);
            for (Index j = 0; j < d; ++j) dot += y[r * d + j] * g[r * d + j];
            for (Index j = 0; j < d; ++j) gx[r * d + j] += (g[r * d + j] - y[r * d + j] * dot) / s;
          } else {
            for (Index j = 0; j < d; ++j) gx[r * d + j] += g[r * d + j] / eps;
          }
        }
      });
}

template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits, const std::vector<Index>& targets) {
  require(logits.rank() == 2, "cross_entropy: logits must be [M x K]");
  const Index rows = logits.dim(0), classes = logits.dim(1);
  require(static_cast<Index>(targets.size()) == rows, "cross_entropy: one target per row");
  detail::check_finite<T>("cross_entropy input", logits.data());
  Buffer<T> probs(static_cast<size_t>(logits.numel()));
  const T* in = logits.raw();
  double total = 0.0;
  for (Index r = 0; r < rows; ++r) {
    require(targets[r] >= 0 && targets[r] < classes, "cross_entropy: target out of range");
    const T* row = in + r * classes;
    const double mx = *std::max_element(row, row + classes);
    double z = 0.0;
    for (Index j = 0; j < classes; ++j) z += std::exp(row[j] - mx);
    const double lse = mx + std::log(z);
    total += lse - row[targets[r]];
    for (Index j = 0; j < classes; ++j) probs[r * classes + j] = static_cast<T>(std::exp(row[j] - lse));
  }
  const T inv = T(1) / static_cast<T>(rows);
  return detail::make_result<T>(
      "cross_entropy", Shape{}, {static_cast<T>(total / static_cast<double>(rows))}, {&logits},
      [logits, probs, targets, rows, classes, inv](Node<T>& self) {
        if (!wants_grad(logits)) return;
        T* g = grad_of(logits);
        const T up = self.grad[0] * inv;
        for (Index r = 0; r < rows; ++r) {
          for (Index j = 0; j < classes; ++j) g[r * classes + j] += up * probs[r * classes + j];
          g[r * classes + targets[r]] -= up;
        }
      });
}

template <typename T>
Tensor<T> to_tokens(const Tensor<T>& x) {
  require(x.rank() == 4, "to_tokens: expected [B x C x H x W], got " + to_string(x.shape()));
  const Index b = x.dim(0), c = x.dim(1), n = x.dim(2) * x.dim(3);
  Buffer<T> out(static_cast<size_t>(x.numel()));
  for (Index s = 0; s < b; ++s)
    MatMap<T>(out.data() + s * n * c, n, c) = ConstMatMap<T>(x.raw() + s * c * n, c, n).transpose();
  return detail::make_result<T>("to_tokens", Shape{b, n, c}, std::move(out), {&x},
                                [x, b, c, n](Node<T>& self) {
                                  if (!wants_grad(x)) return;
                                  for (Index s = 0; s < b; ++s)
                                    MatMap<T>(grad_of(x) + s * c * n, c, n) +=
                                        ConstMatMap<T>(self.grad.data() + s * n * c, n, c)
                                            .transpose();
                                });
}

template <typename T>
Tensor<T> from_tokens(const Tensor<T>& tokens, Index height, Index width) {
  require(tokens.rank() == 3 && tokens.dim(1) == height * width,
          "from_tokens: expected [B x H*W x C], got " + to_string(tokens.shape()));
  const Index b = tokens.dim(0), n = tokens.dim(1), c = tokens.dim(2);
  Buffer<T> out(static_cast<size_t>(tokens.numel()));
  for (Index s = 0; s < b; ++s)
    MatMap<T>(out.data() + s * c * n, c, n) =
        ConstMatMap<T>(tokens.raw() + s * n * c, n, c).transpose();
  return detail::make_result<T>("from_tokens", Shape{b, c, height, width}, std::move(out),
                                {&tokens}, [tokens, b, c, n](Node<T>& self) {
                                  if (!wants_grad(tokens)) return;
                                  for (Index s = 0; s < b; ++s)
                                    MatMap<T>(grad_of(tokens) + s * n * c, n, c) +=
                                        ConstMatMap<T>(self.grad.data() + s * c * n, c, n)
                                            .transpose();
                                });
}

#define ITTR_INSTANTIATE(T)                                                          \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                     \
  template Tensor<T> linear(const Tensor<T>&, const Tensor<T>&, const Tensor<T>*);   \
  template Tensor<T> softmax(const Tensor<T>&, int);                                 \
  template Tensor<T> l2_normalize_tokens(const Tensor<T>&, T);                       \
  template Tensor<T> cross_entropy(const Tensor<T>&, const std::vector<Index>&);     \
  template Tensor<T> to_tokens(const Tensor<T>&);                                    \
  template Tensor<T> from_tokens(const Tensor<T>&, Index, Index);
ITTR_INSTANTIATE(float)
ITTR_INSTANTIATE(double)
#undef ITTR_INSTANTIATE

}  // namespace ittr
