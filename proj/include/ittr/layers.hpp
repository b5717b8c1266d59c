// Parameterised layers: convolution (grouped / depth-wise), linear maps,
// instance normalisation. Each layer owns its tensors, can enumerate them by
// name, and reports its analytic parameter and multiply-accumulate counts.
#pragma once

#include <cstdint>
#include <string>
#include <utility>

#include "ittr/ops.hpp"
#include "ittr/random.hpp"
#include "ittr/serialize.hpp"

namespace ittr {

/// Learnable scalar count and multiply-accumulates of one forward pass.
struct Cost {
  std::int64_t params = 0;
  std::int64_t macs = 0;

  Cost& operator+=(const Cost& o) {
    params += o.params;
    macs += o.macs;
    return *this;
  }
  friend Cost operator+(Cost a, const Cost& b) { return a += b; }
  friend bool operator==(const Cost&, const Cost&) = default;
};

struct Conv2dOptions {
  Index in_channels = 0;
  Index out_channels = 0;
  Index kernel = 1;
  Index stride = 1;
  Index padding = 0;
  Index groups = 1;
  bool bias = true;
};

template <typename T>
class Conv2d {
 public:
  Conv2d() = default;
  /// Kaiming-uniform weights (a = sqrt 5), uniform bias, both bounded by 1/sqrt(fan_in).
  Conv2d(const Conv2dOptions& opts, Rng& rng);

  Tensor<T> operator()(const Tensor<T>& x) const;

  std::pair<Index, Index> output_size(Index h, Index w) const;
  Cost cost(Index h, Index w) const;
  void collect(const std::string& prefix, NamedTensors<T>& out) const;

  const Conv2dOptions& options() const { return opts_; }

  Tensor<T> weight;  // [out, in/groups, k, k]
  Tensor<T> bias;    // [out] or undefined

 private:
  Conv2dOptions opts_;
};

template <typename T>
class Linear {
 public:
  Linear() = default;
  Linear(Index in_features, Index out_features, bool bias, Rng& rng);

  Tensor<T> operator()(const Tensor<T>& x) const;

  /// Cost for `tokens` rows.
  Cost cost(Index tokens) const;
  void collect(const std::string& prefix, NamedTensors<T>& out) const;

  Index in_features() const { return in_; }
  Index out_features() const { return out_; }

  Tensor<T> weight;  // [out, in]
  Tensor<T> bias;    // [out] or undefined

 private:
  Index in_ = 0;
  Index out_ = 0;
};

template <typename T>
class InstanceNorm2d {
 public:
  InstanceNorm2d() = default;
  explicit InstanceNorm2d(Index channels, T eps = T(1e-5));

  Tensor<T> operator()(const Tensor<T>& x) const;

  Cost cost() const { return {2 * channels_, 0}; }
  void collect(const std::string& prefix, NamedTensors<T>& out) const;

  Tensor<T> gamma;
  Tensor<T> beta;

 private:
  Index channels_ = 0;
  T eps_ = T(1e-5);
};

/// Fills `t` from U(-bound, bound).
template <typename T>
void fill_uniform(Tensor<T>& t, double bound, Rng& rng);

}  // namespace ittr
