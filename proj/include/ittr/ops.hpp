// Differentiable tensor operations. Every op is a free function templated on
// the scalar type (float or double); shapes are checked eagerly and reported
// as ShapeError with the offending extents.
#pragma once

#include <optional>
#include <vector>

#include "ittr/tensor.hpp"

namespace ittr {

// ---- elementwise -----------------------------------------------------------

template <typename T> Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> scale(const Tensor<T>& a, T factor);
template <typename T> Tensor<T> add_scalar(const Tensor<T>& a, T offset);

/// Exact erf form: 0.5 x (1 + erf(x / sqrt 2)).
template <typename T> Tensor<T> gelu(const Tensor<T>& x);
template <typename T> Tensor<T> tanh(const Tensor<T>& x);
template <typename T> Tensor<T> relu(const Tensor<T>& x);
template <typename T> Tensor<T> leaky_relu(const Tensor<T>& x, T slope);

template <typename T> Tensor<T> operator+(const Tensor<T>& a, const Tensor<T>& b) { return add(a, b); }
template <typename T> Tensor<T> operator-(const Tensor<T>& a, const Tensor<T>& b) { return sub(a, b); }
template <typename T> Tensor<T> operator*(const Tensor<T>& a, const Tensor<T>& b) { return mul(a, b); }
template <typename T> Tensor<T> operator*(const Tensor<T>& a, T s) { return scale(a, s); }

// ---- reductions ------------------------------------------------------------

template <typename T> Tensor<T> sum(const Tensor<T>& a);
template <typename T> Tensor<T> mean(const Tensor<T>& a);
/// mean((a - target)^2) over every element.
template <typename T> Tensor<T> mean_squared_error(const Tensor<T>& a, T target);

// ---- shape -----------------------------------------------------------------

template <typename T> Tensor<T> reshape(const Tensor<T>& a, Shape shape);
template <typename T> Tensor<T> permute(const Tensor<T>& a, const std::vector<int>& axes);
template <typename T> Tensor<T> transpose_last2(const Tensor<T>& a);
template <typename T> Tensor<T> concat(const std::vector<Tensor<T>>& parts, int axis);

/// x: [G x N x D]; rows[g] lists the token indices kept for group g (all the
/// same length M). Returns [G x M x D]. Backward scatters into the kept rows.
template <typename T>
Tensor<T> gather_rows(const Tensor<T>& x, const std::vector<std::vector<Index>>& rows);

// ---- linear algebra --------------------------------------------------------

/// a: [..., m, k], b: [..., k, n] with identical leading dims, or b: [k, n]
/// shared across the batch.
template <typename T> Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);

/// x: [..., in], weight: [out, in], bias: [out] -> [..., out].
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>* bias = nullptr);

/// Numerically stable softmax along `axis` (negative axes count from the end).
template <typename T> Tensor<T> softmax(const Tensor<T>& x, int axis = -1);

/// Each vector along the last axis divided by max(||v||, eps).
template <typename T> Tensor<T> l2_normalize_tokens(const Tensor<T>& x, T eps = T(1e-12));

/// logits: [M x K]; mean over rows of -log softmax(row)[targets[row]].
template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits, const std::vector<Index>& targets);

// ---- image ops -------------------------------------------------------------

struct Conv2dGeometry {
  Index stride = 1;
  Index padding = 0;
  Index groups = 1;
};

/// x: [B x Cin x H x W], weight: [Cout x Cin/groups x kh x kw], zero padding.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>* bias,
                 Conv2dGeometry geom);

/// Per (sample, channel) standardisation with population variance, then
/// gamma * xhat + beta.
template <typename T>
Tensor<T> instance_norm2d(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                          T eps);

template <typename T> Tensor<T> upsample_nearest2x(const Tensor<T>& x);

/// [B x C x H x W] -> [B x H*W x C]
template <typename T> Tensor<T> to_tokens(const Tensor<T>& x);
/// [B x H*W x C] -> [B x C x H x W]
template <typename T> Tensor<T> from_tokens(const Tensor<T>& tokens, Index height, Index width);

}  // namespace ittr
