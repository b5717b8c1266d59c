// Central finite-difference gradient checking.
//
// The checked function returns a tensor y; the scalar loss is the fixed
// random projection sum_i w_i y_i. The analytic side backpropagates that
// loss through the graph; the numeric side re-evaluates y under a no-grad
// guard and reduces it in double precision, so only the op itself carries
// rounding noise.
#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "ittr/ops.hpp"
#include "ittr/random.hpp"

namespace ittr {

struct GradCheckResult {
  double rel_error = 0.0;  // ||analytic - numeric|| / max(||analytic||, ||numeric||)
  double max_abs_error = 0.0;
  std::size_t coordinates = 0;
};

template <typename T>
double default_step() {
  return sizeof(T) == 4 ? 1e-3 : 1e-5;
}

template <typename T>
double default_tolerance() {
  return sizeof(T) == 4 ? 1e-3 : 1e-6;
}

/// `inputs` are leaves with requires_grad set. At most `max_coords` randomly
/// chosen coordinates per input are probed (all when <= 0).
template <typename T>
GradCheckResult check_gradients(const std::function<Tensor<T>()>& f, std::vector<Tensor<T>> inputs,
                                std::uint64_t seed = 7, double step = default_step<T>(),
                                int max_coords = -1) {
  Rng rng(seed);
  for (auto& in : inputs) in.zero_grad();
  const Tensor<T> y0 = f();
  std::vector<double> w(static_cast<size_t>(y0.numel()));
  for (double& v : w) v = uniform(rng, -1.0, 1.0);
  std::vector<T> wt(w.begin(), w.end());
  const Tensor<T> weights(y0.shape(), wt);
  sum(mul(y0, weights)).backward();

  auto project = [&]() {
    NoGradGuard guard;
    const Tensor<T> y = f();
    double acc = 0.0;
    for (Index i = 0; i < y.numel(); ++i) acc += w[i] * static_cast<double>(y.data()[i]);
    return acc;
  };

  GradCheckResult r;
  double diff2 = 0.0, a2 = 0.0, n2 = 0.0;
  for (auto& in : inputs) {
    std::vector<Index> coords(static_cast<size_t>(in.numel()));
    for (Index i = 0; i < in.numel(); ++i) coords[i] = i;
    if (max_coords > 0 && static_cast<Index>(coords.size()) > max_coords) {
      shuffle(coords.begin(), coords.end(), rng);
      coords.resize(static_cast<size_t>(max_coords));
    }
    const std::vector<T> analytic =
        in.has_grad() ? std::vector<T>(in.grad().begin(), in.grad().end())
                      : std::vector<T>(static_cast<size_t>(in.numel()), T(0));
    for (Index c : coords) {
      auto data = in.mutable_data();
      const T orig = data[c];
      data[c] = static_cast<T>(orig + step);
      const double up = project();
      data[c] = static_cast<T>(orig - step);
      const double down = project();
      data[c] = orig;
      const double h = static_cast<double>(static_cast<T>(orig + step)) -
                       static_cast<double>(static_cast<T>(orig - step));
      const double numeric = (up - down) / h;
      const double a = static_cast<double>(analytic[c]);
      diff2 += (a - numeric) * (a - numeric);
      a2 += a * a;
      n2 += numeric * numeric;
      r.max_abs_error = std::max(r.max_abs_error, std::abs(a - numeric));
      ++r.coordinates;
    }
  }
  const double denom = std::max({std::sqrt(a2), std::sqrt(n2), 1e-12});
  r.rel_error = std::sqrt(diff2) / denom;
  return r;
}

template <typename T>
Tensor<T> random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0,
                        bool requires_grad = true) {
  std::vector<T> v(static_cast<size_t>(numel(shape)));
  for (T& x : v) x = static_cast<T>(uniform(rng, lo, hi));
  Tensor<T> t(std::move(shape), std::move(v));
  t.set_requires_grad(requires_grad);
  return t;
}

}  // namespace ittr
