#include <cmath>

#include "ops_internal.hpp"

namespace ittr {

using detail::ConstMatMap;
using detail::grad_of;
using detail::MatMap;
using detail::require;
using detail::wants_grad;

namespace {

struct ConvDims {
  Index batch, cin, h, w, cout, kh, kw, stride, pad, groups, ho, wo;
  Index cin_g() const { return cin / groups; }
  Index cout_g() const { return cout / groups; }
  Index col_rows() const { return cin_g() * kh * kw; }
  Index out_hw() const { return ho * wo; }
};

template <typename T>
void im2col(const T* img, const ConvDims& d, T* cols) {
  // img: [cin_g x h x w] slice; cols: [cin_g*kh*kw x ho*wo]
  for (Index c = 0; c < d.cin_g(); ++c)
    for (Index ky = 0; ky < d.kh; ++ky)
      for (Index kx = 0; kx < d.kw; ++kx) {
        T* row = cols + ((c * d.kh + ky) * d.kw + kx) * d.out_hw();
        const T* plane = img + c * d.h * d.w;
        for (Index oy = 0; oy < d.ho; ++oy) {
          const Index iy = oy * d.stride - d.pad + ky;
          T* dst = row + oy * d.wo;
          if (iy < 0 || iy >= d.h) {
            std::fill_n(dst, d.wo, T(0));
            continue;
          }
          const T* src = plane + iy * d.w;
          for (Index ox = 0; ox < d.wo; ++ox) {
            const Index ix = ox * d.stride - d.pad + kx;
            dst[ox] = (ix >= 0 && ix < d.w) ? src[ix] : T(0);
          }
        }
      }
}

template <typename T>
void col2im_add(const T* cols, const ConvDims& d, T* img) {
  for (Index c = 0; c < d.cin_g(); ++c)
    for (Index ky = 0; ky < d.kh; ++ky)
      for (Index kx = 0; kx < d.kw; ++kx) {
        const T* row = cols + ((c * d.kh + ky) * d.kw + kx) * d.out_hw();
        T* plane = img + c * d.h * d.w;
        for (Index oy = 0; oy < d.ho; ++oy) {
          const Index iy = oy * d.stride - d.pad + ky;
          if (iy < 0 || iy >= d.h) continue;
          const T* src = row + oy * d.wo;
          T* dst = plane + iy * d.w;
          for (Index ox = 0; ox < d.wo; ++ox) {
            const Index ix = ox * d.stride - d.pad + kx;
            if (ix >= 0 && ix < d.w) dst[ix] += src[ox];
          }
        }
      }
}

template <typename T>
void depthwise_forward(const T* x, const T* w, const ConvDims& d, T* out) {
  for (Index b = 0; b < d.batch; ++b)
    for (Index c = 0; c < d.cin; ++c) {
      const T* plane = x + (b * d.cin + c) * d.h * d.w;
      const T* k = w + c * d.kh * d.kw;
      T* o = out + (b * d.cout + c) * d.out_hw();
      for (Index oy = 0; oy < d.ho; ++oy)
        for (Index ox = 0; ox < d.wo; ++ox) {
          T acc = T(0);
          for (Index ky = 0; ky < d.kh; ++ky) {
            const Index iy = oy * d.stride - d.pad + ky;
            if (iy < 0 || iy >= d.h) continue;
            for (Index kx = 0; kx < d.kw; ++kx) {
              const Index ix = ox * d.stride - d.pad + kx;
              if (ix >= 0 && ix < d.w) acc += k[ky * d.kw + kx] * plane[iy * d.w + ix];
            }
          }
          o[oy * d.wo + ox] += acc;
        }
    }
}

template <typename T>
void depthwise_backward(const T* x, const T* w, const T* gout, const ConvDims& d, T* gx, T* gw) {
  for (Index b = 0; b < d.batch; ++b)
    for (Index c = 0; c < d.cin; ++c) {
      const T* plane = x + (b * d.cin + c) * d.h * d.w;
      const T* k = w + c * d.kh * d.kw;
      const T* g = gout + (b * d.cout + c) * d.out_hw();
      T* gplane = gx ? gx + (b * d.cin + c) * d.h * d.w : nullptr;
      T* gk = gw ? gw + c * d.kh * d.kw : nullptr;
      for (Index oy = 0; oy < d.ho; ++oy)
        for (Index ox = 0; ox < d.wo; ++ox) {
          const T up = g[oy * d.wo + ox];
          for (Index ky = 0; ky < d.kh; ++ky) {
            const Index iy = oy * d.stride - d.pad + ky;
            if (iy < 0 || iy >= d.h) continue;
            for (Index kx = 0; kx < d.kw; ++kx) {
              const Index ix = ox * d.stride - d.pad + kx;
              if (ix < 0 || ix >= d.w) continue;
              if (gplane) gplane[iy * d.w + ix] += up * k[ky * d.kw + kx];
              if (gk) gk[ky * d.kw + kx] += up * plane[iy * d.w + ix];
            }
          }
        }
    }
}

}  // namespace

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>* bias,
                 Conv2dGeometry geom) {
  require(x.rank() == 4, "conv2d: input must be [B x C x H x W], got " + to_string(x.shape()));
  require(weight.rank() == 4, "conv2d: weight must be [Cout x Cin/g x kh x kw]");
  require(geom.groups >= 1 && geom.stride >= 1 && geom.padding >= 0, "conv2d: bad geometry");
  ConvDims d{x.dim(0), x.dim(1), x.dim(2), x.dim(3), weight.dim(0), weight.dim(2), weight.dim(3),
             geom.stride, geom.padding, geom.groups, 0, 0};
  require(d.cin % d.groups == 0 && d.cout % d.groups == 0,
          "conv2d: channels " + std::to_string(d.cin) + "->" + std::to_string(d.cout) +
              " not divisible by groups " + std::to_string(d.groups));
  require(weight.dim(1) == d.cin_g(), "conv2d: channel mismatch, input " + to_string(x.shape()) +
                                          " weight " + to_string(weight.shape()));
  const Index hnum = d.h + 2 * d.pad - d.kh, wnum = d.w + 2 * d.pad - d.kw;
  require(hnum >= 0 && wnum >= 0, "conv2d: non-positive output extent for input " +
                                      to_string(x.shape()) + " and kernel " +
                                      to_string(weight.shape()));
  d.ho = hnum / d.stride + 1;
  d.wo = wnum / d.stride + 1;
  if (bias) require(bias->rank() == 1 && bias->dim(0) == d.cout, "conv2d: bias must be [Cout]");

  const bool depthwise = d.cin_g() == 1 && d.cout_g() == 1;
  const bool pointwise =
      d.kh == 1 && d.kw == 1 && d.stride == 1 && d.pad == 0 && d.groups == 1;
  Buffer<T> out(static_cast<size_t>(d.batch * d.cout * d.out_hw()), T(0));

  if (depthwise) {
    depthwise_forward(x.raw(), weight.raw(), d, out.data());
  } else if (pointwise) {
    ConstMatMap<T> W(weight.raw(), d.cout, d.cin);
    for (Index b = 0; b < d.batch; ++b)
      MatMap<T>(out.data() + b * d.cout * d.out_hw(), d.cout, d.out_hw()).noalias() =
          W * ConstMatMap<T>(x.raw() + b * d.cin * d.h * d.w, d.cin, d.h * d.w);
  } else {
    Buffer<T> cols(static_cast<size_t>(d.col_rows() * d.out_hw()));
    for (Index b = 0; b < d.batch; ++b)
      for (Index g = 0; g < d.groups; ++g) {
        im2col(x.raw() + (b * d.cin + g * d.cin_g()) * d.h * d.w, d, cols.data());
        ConstMatMap<T> W(weight.raw() + g * d.cout_g() * d.col_rows(), d.cout_g(), d.col_rows());
        MatMap<T>(out.data() + (b * d.cout + g * d.cout_g()) * d.out_hw(), d.cout_g(), d.out_hw())
            .noalias() = W * ConstMatMap<T>(cols.data(), d.col_rows(), d.out_hw());
      }
  }
  if (bias) {
    const T* bv = bias->raw();
    for (Index b = 0; b < d.batch; ++b)
      for (Index c = 0; c < d.cout; ++c) {
        T* o = out.data() + (b * d.cout + c) * d.out_hw();
        for (Index i = 0; i < d.out_hw(); ++i) o[i] += bv[c];
      }
  }

  Tensor<T> bias_t = bias ? *bias : Tensor<T>();
  return detail::make_result<T>(
      "conv2d", Shape{d.batch, d.cout, d.ho, d.wo}, std::move(out), {&x, &weight, &bias_t},
      [x, weight, bias_t, d, depthwise, pointwise](Node<T>& self) {
        const T* gout = self.grad.data();
        const bool gx = wants_grad(x), gw = wants_grad(weight);
        if (wants_grad(bias_t)) {
          T* gb = grad_of(bias_t);
          for (Index b = 0; b < d.batch; ++b)
            for (Index c = 0; c < d.cout; ++c) {
              const T* g = gout + (b * d.cout + c) * d.out_hw();
              T acc = T(0);
              for (Index i = 0; i < d.out_hw(); ++i) acc += g[i];
              gb[c] += acc;
            }
        }
        if (!gx && !gw) return;
        if (depthwise) {
          depthwise_backward(x.raw(), weight.raw(), gout, d, gx ? grad_of(x) : nullptr,
                             gw ? grad_of(weight) : nullptr);
          return;
        }
        if (pointwise) {
          ConstMatMap<T> W(weight.raw(), d.cout, d.cin);
          for (Index b = 0; b < d.batch; ++b) {
            ConstMatMap<T> G(gout + b * d.cout * d.out_hw(), d.cout, d.out_hw());
            ConstMatMap<T> X(x.raw() + b * d.cin * d.out_hw(), d.cin, d.out_hw());
            if (gx) MatMap<T>(grad_of(x) + b * d.cin * d.out_hw(), d.cin, d.out_hw()).noalias() +=
                W.transpose() * G;
            if (gw) MatMap<T>(grad_of(weight), d.cout, d.cin).noalias() += G * X.transpose();
          }
          return;
        }
        Buffer<T> cols(static_cast<size_t>(d.col_rows() * d.out_hw()));
        detail::RowMat<T> dcols;
        for (Index b = 0; b < d.batch; ++b)
          for (Index g = 0; g < d.groups; ++g) {
            ConstMatMap<T> G(gout + (b * d.cout + g * d.cout_g()) * d.out_hw(), d.cout_g(),
                             d.out_hw());
            ConstMatMap<T> W(weight.raw() + g * d.cout_g() * d.col_rows(), d.cout_g(),
                             d.col_rows());
            if (gw) {
              im2col(x.raw() + (b * d.cin + g * d.cin_g()) * d.h * d.w, d, cols.data());
              MatMap<T>(grad_of(weight) + g * d.cout_g() * d.col_rows(), d.cout_g(), d.col_rows())
                  .noalias() += G * ConstMatMap<T>(cols.data(), d.col_rows(), d.out_hw()).transpose();
            }
            if (gx) {
              dcols.noalias() = W.transpose() * G;
              col2im_add(dcols.data(), d, grad_of(x) + (b * d.cin + g * d.cin_g()) * d.h * d.w);
            }
          }
      });
}

template <typename T>
Tensor<T> instance_norm2d(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                          T eps) {
  require(x.rank() == 4, "instance_norm2d: input must be [B x C x H x W]");
  const Index b = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  require(gamma.numel() == c && beta.numel() == c,
          "instance_norm2d: affine parameters must have " + std::to_string(c) + " entries");
  Buffer<T> xhat(static_cast<size_t>(x.numel()));
  Buffer<T> inv_std(static_cast<size_t>(b * c));
  Buffer<T> out(static_cast<size_t>(x.numel()));
  const T* in = x.raw();
  for (Index s = 0; s < b; ++s)
    for (Index ch = 0; ch < c; ++ch) {
      const Index base = (s * c + ch) * hw;
      T mu = T(0);
      for (Index i = 0; i < hw; ++i) mu += in[base + i];
      mu /= static_cast<T>(hw);
      T var = T(0);
      for (Index i = 0; i < hw; ++i) var += (in[base + i] - mu) * (in[base + i] - mu);
      var /= static_cast<T>(hw);
      const T is = T(1) / std::sqrt(var + eps);
      inv_std[s * c + ch] = is;
      const T gm = gamma.raw()[ch], bt = beta.raw()[ch];
      for (Index i = 0; i < hw; ++i) {
        const T xh = (in[base + i] - mu) * is;
        xhat[base + i] = xh;
        out[base + i] = gm * xh + bt;
      }
    }
  return detail::make_result<T>(
      "instance_norm2d", x.shape(), std::move(out), {&x, &gamma, &beta},
      [x, gamma, beta, xhat, inv_std, b, c, hw](Node<T>& self) {
        const T* g = self.grad.data();
        const bool gx = wants_grad(x), gg = wants_grad(gamma), gb = wants_grad(beta);
        for (Index s = 0; s < b; ++s)
          for (Index ch = 0; ch < c; ++ch) {
            const Index base = (s * c + ch) * hw;
            T sum_g = T(0), sum_gx = T(0);
            for (Index i = 0; i < hw; ++i) {
              sum_g += g[base + i];
              sum_gx += g[base + i] * xhat[base + i];
            }
            if (gg) grad_of(gamma)[ch] += sum_gx;
            if (gb) grad_of(beta)[ch] += sum_g;
            if (!gx) continue;
            const T gm = gamma.raw()[ch];
            const T k = gm * inv_std[s * c + ch];
            const T mean_g = sum_g / static_cast<T>(hw), mean_gx = sum_gx / static_cast<T>(hw);
            T* dx = grad_of(x) + base;
            for (Index i = 0; i < hw; ++i)
              dx[i] += k * (g[base + i] - mean_g - xhat[base + i] * mean_gx);
          }
      });
}

template <typename T>
Tensor<T> upsample_nearest2x(const Tensor<T>& x) {
  require(x.rank() == 4, "upsample_nearest2x: input must be [B x C x H x W]");
  const Index planes = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3);
  Buffer<T> out(static_cast<size_t>(planes * 4 * h * w));
  for (Index p = 0; p < planes; ++p) {
    const T* src = x.raw() + p * h * w;
    T* dst = out.data() + p * 4 * h * w;
    for (Index y = 0; y < 2 * h; ++y)
      for (Index xx = 0; xx < 2 * w; ++xx) dst[y * 2 * w + xx] = src[(y / 2) * w + xx / 2];
  }
  return detail::make_result<T>(
      "upsample_nearest2x", Shape{x.dim(0), x.dim(1), 2 * h, 2 * w}, std::move(out), {&x},
      [x, planes, h, w](Node<T>& self) {
        if (!wants_grad(x)) return;
        T* g = grad_of(x);
        for (Index p = 0; p < planes; ++p) {
          const T* up = self.grad.data() + p * 4 * h * w;
          for (Index y = 0; y < 2 * h; ++y)
            for (Index xx = 0; xx < 2 * w; ++xx) g[p * h * w + (y / 2) * w + xx / 2] += up[y * 2 * w + xx];
        }
      });
}

#define ITTR_INSTANTIATE(T)                                                                     \
  template Tensor<T> conv2d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>*, Conv2dGeometry); \
  template Tensor<T> instance_norm2d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, T);   \
  template Tensor<T> upsample_nearest2x(const Tensor<T>&);
ITTR_INSTANTIATE(float)
ITTR_INSTANTIATE(double)
#undef ITTR_INSTANTIATE

}  // namespace ittr
