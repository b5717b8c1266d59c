#include "ittr/layers.hpp"

#include <cmath>

namespace ittr {

template <typename T>
void fill_uniform(Tensor<T>& t, double bound, Rng& rng) {
  for (T& v : t.mutable_data()) v = static_cast<T>(uniform(rng, -bound, bound));
}

template <typename T>
Conv2d<T>::Conv2d(const Conv2dOptions& opts, Rng& rng) : opts_(opts) {
  if (opts.in_channels <= 0 || opts.out_channels <= 0 || opts.kernel <= 0 || opts.groups <= 0)
    throw ConfigError("conv2d: extents must be positive");
  if (opts.in_channels % opts.groups || opts.out_channels % opts.groups)
    throw ConfigError("conv2d: channels must be divisible by groups");
  const Index in_g = opts.in_channels / opts.groups;
  weight = Tensor<T>({opts.out_channels, in_g, opts.kernel, opts.kernel});
  const double bound = 1.0 / std::sqrt(static_cast<double>(in_g * opts.kernel * opts.kernel));
  fill_uniform(weight, bound, rng);
  weight.set_requires_grad();
  if (opts.bias) {
    bias = Tensor<T>({opts.out_channels});
    fill_uniform(bias, bound, rng);
    bias.set_requires_grad();
  }
}

template <typename T>
Tensor<T> Conv2d<T>::operator()(const Tensor<T>& x) const {
  return conv2d(x, weight, bias.defined() ? &bias : nullptr,
                Conv2dGeometry{opts_.stride, opts_.padding, opts_.groups});
}

template <typename T>
std::pair<Index, Index> Conv2d<T>::output_size(Index h, Index w) const {
  return {(h + 2 * opts_.padding - opts_.kernel) / opts_.stride + 1,
          (w + 2 * opts_.padding - opts_.kernel) / opts_.stride + 1};
}

template <typename T>
Cost Conv2d<T>::cost(Index h, Index w) const {
  const auto [ho, wo] = output_size(h, w);
  const Index per_out = (opts_.in_channels / opts_.groups) * opts_.kernel * opts_.kernel;
  Cost c;
  c.params = opts_.out_channels * per_out + (opts_.bias ? opts_.out_channels : 0);
  c.macs = opts_.out_channels * ho * wo * per_out;
  return c;
}

template <typename T>
void Conv2d<T>::collect(const std::string& prefix, NamedTensors<T>& out) const {
  out.emplace_back(prefix + ".weight", weight);
  if (bias.defined()) out.emplace_back(prefix + ".bias", bias);
}

template <typename T>
Linear<T>::Linear(Index in_features, Index out_features, bool with_bias, Rng& rng)
    : in_(in_features), out_(out_features) {
  if (in_features <= 0 || out_features <= 0) throw ConfigError("linear: extents must be positive");
  weight = Tensor<T>({out_features, in_features});
  const double bound = 1.0 / std::sqrt(static_cast<double>(in_features));
  fill_uniform(weight, bound, rng);
  weight.set_requires_grad();
  if (with_bias) {
    bias = Tensor<T>({out_features});
    fill_uniform(bias, bound, rng);
    bias.set_requires_grad();
  }
}

template <typename T>
Tensor<T> Linear<T>::operator()(const Tensor<T>& x) const {
  return linear(x, weight, bias.defined() ? &bias : nullptr);
}

template <typename T>
Cost Linear<T>::cost(Index tokens) const {
  return {out_ * in_ + (bias.defined() ? out_ : 0), tokens * in_ * out_};
}

template <typename T>
void Linear<T>::collect(const std::string& prefix, NamedTensors<T>& out) const {
  out.emplace_back(prefix + ".weight", weight);
  if (bias.defined()) out.emplace_back(prefix + ".bias", bias);
}

template <typename T>
InstanceNorm2d<T>::InstanceNorm2d(Index channels, T eps)
    : gamma({channels}, T(1)), beta({channels}, T(0)), channels_(channels), eps_(eps) {
  gamma.set_requires_grad();
  beta.set_requires_grad();
}

template <typename T>
Tensor<T> InstanceNorm2d<T>::operator()(const Tensor<T>& x) const {
  return instance_norm2d(x, gamma, beta, eps_);
}

template <typename T>
void InstanceNorm2d<T>::collect(const std::string& prefix, NamedTensors<T>& out) const {
  out.emplace_back(prefix + ".gamma", gamma);
  out.emplace_back(prefix + ".beta", beta);
}

template void fill_uniform<float>(Tensor<float>&, double, Rng&);
template void fill_uniform<double>(Tensor<double>&, double, Rng&);
template class Conv2d<float>;
template class Conv2d<double>;
template class Linear<float>;
template class Linear<double>;
template class InstanceNorm2d<float>;
template class InstanceNorm2d<double>;

}  // namespace ittr
