#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>

#include "ittr/ops.hpp"
#include "ittr/serialize.hpp"
#include "ittr/gradcheck.hpp"

using namespace ittr;

namespace {

template <typename T>
std::vector<T> values(const Tensor<T>& t) {
  return {t.data().begin(), t.data().end()};
}

std::vector<double> naive_matmul(const std::vector<double>& a, const std::vector<double>& b, Index m,
                                 Index k, Index n) {
  std::vector<double> c(static_cast<size_t>(m * n), 0.0);
  for (Index i = 0; i < m; ++i)
    for (Index j = 0; j < n; ++j)
      for (Index p = 0; p < k; ++p) c[i * n + j] += a[i * k + p] * b[p * n + j];
  return c;
}

}  // namespace

TEST(Matmul, IdentityAndZero) {
  const Tensor<double> a({2, 2}, {1, 2, 3, 4});
  EXPECT_EQ(values(matmul(a, Tensor<double>({2, 2}, {1, 0, 0, 1}))), (std::vector<double>{1, 2, 3, 4}));
  EXPECT_EQ(values(matmul(a, Tensor<double>({2, 3}))), std::vector<double>(6, 0.0));
}

TEST(Matmul, MatchesTripleLoop) {
  const Tensor<double> a({2, 2}, {1, 2, 3, 4});
  const Tensor<double> b({2, 2}, {5, 6, 7, 8});
  EXPECT_EQ(values(matmul(a, b)), naive_matmul({1, 2, 3, 4}, {5, 6, 7, 8}, 2, 2, 2));
  EXPECT_EQ(values(matmul(a, b)), (std::vector<double>{19, 22, 43, 50}));

  Rng rng(3);
  for (int trial = 0; trial < 10; ++trial) {
    const Index m = 1 + static_cast<Index>(uniform_index(rng, 6));
    const Index k = 1 + static_cast<Index>(uniform_index(rng, 6));
    const Index n = 1 + static_cast<Index>(uniform_index(rng, 6));
    auto x = random_tensor<double>({m, k}, rng, -1, 1, false);
    auto y = random_tensor<double>({k, n}, rng, -1, 1, false);
    const auto got = values(matmul(x, y));
    const auto want = naive_matmul(values(x), values(y), m, k, n);
    for (size_t i = 0; i < got.size(); ++i) EXPECT_NEAR(got[i], want[i], 1e-12);
  }
}

TEST(Matmul, BatchedAndSharedRhs) {
  Rng rng(4);
  auto a = random_tensor<double>({3, 2, 4}, rng, -1, 1, false);
  auto b = random_tensor<double>({4, 5}, rng, -1, 1, false);
  const auto c = matmul(a, b);
  ASSERT_EQ(c.shape(), (Shape{3, 2, 5}));
  const auto av = values(a), bv = values(b), cv = values(c);
  for (Index g = 0; g < 3; ++g) {
    const std::vector<double> slice(av.begin() + g * 8, av.begin() + (g + 1) * 8);
    const auto want = naive_matmul(slice, bv, 2, 4, 5);
    for (Index i = 0; i < 10; ++i) EXPECT_NEAR(cv[g * 10 + i], want[i], 1e-12);
  }
}

TEST(Matmul, ShapeMismatchNamesBothShapes) {
  try {
    matmul(Tensor<float>({2, 3}), Tensor<float>({4, 2}));
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("[2x3]"), std::string::npos) << msg;
    EXPECT_NE(msg.find("[4x2]"), std::string::npos) << msg;
  }
}

TEST(Softmax, Examples) {
  EXPECT_EQ(values(softmax(Tensor<double>({2}, {0, 0}))), (std::vector<double>{0.5, 0.5}));
  EXPECT_EQ(values(softmax(Tensor<float>({2}, {1000, 1000}))), (std::vector<float>{0.5f, 0.5f}));
  const auto s = values(softmax(Tensor<double>({2}, {0, std::log(3.0)})));
  EXPECT_NEAR(s[0], 0.25, 1e-15);
  EXPECT_NEAR(s[1], 0.75, 1e-15);
}

TEST(Softmax, RejectsNaN) {
  EXPECT_THROW(softmax(Tensor<float>({2}, {0.0f, std::numeric_limits<float>::quiet_NaN()})),
               NumericError);
}

TEST(Softmax, SumsToOneAndShiftInvariant) {
  Rng rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    auto x = random_tensor<float>({3, 4, 7}, rng, -20, 20, false);
    for (int axis : {0, 1, 2, -1}) {
      const auto s = softmax(x, axis);
      const auto shifted = softmax(add_scalar(x, 13.5f), axis);
      const Shape& sh = x.shape();
      const int ax = axis < 0 ? axis + 3 : axis;
      Index inner = 1;
      for (int d = ax + 1; d < 3; ++d) inner *= sh[d];
      const Index len = sh[ax], outer = x.numel() / (len * inner);
      for (Index o = 0; o < outer; ++o)
        for (Index i = 0; i < inner; ++i) {
          double acc = 0.0;
          for (Index l = 0; l < len; ++l) acc += s.data()[(o * len + l) * inner + i];
          EXPECT_NEAR(acc, 1.0, 1e-6);
        }
      for (Index i = 0; i < x.numel(); ++i) EXPECT_NEAR(s.data()[i], shifted.data()[i], 1e-6);
    }
  }
}

TEST(L2Normalize, Examples) {
  const auto y = values(l2_normalize_tokens(Tensor<double>({3, 2}, {3, 4, 1, 0, 0, 0})));
  EXPECT_NEAR(y[0], 0.6, 1e-15);
  EXPECT_NEAR(y[1], 0.8, 1e-15);
  EXPECT_EQ(y[2], 1.0);
  EXPECT_EQ(y[3], 0.0);
  EXPECT_EQ(y[4], 0.0);
  EXPECT_EQ(y[5], 0.0);
}

TEST(L2Normalize, UnitRowsAndGradientAtZeroRow) {
  Rng rng(6);
  for (int trial = 0; trial < 20; ++trial) {
    auto x = random_tensor<float>({5, 9}, rng, -3, 3, false);
    const auto y = l2_normalize_tokens(x);
    for (Index r = 0; r < 5; ++r) {
      double n = 0.0;
      for (Index c = 0; c < 9; ++c) n += double(y.data()[r * 9 + c]) * y.data()[r * 9 + c];
      EXPECT_NEAR(std::sqrt(n), 1.0, 1e-5);
    }
  }
  Tensor<float> z({1, 3});
  z.set_requires_grad();
  sum(l2_normalize_tokens(z)).backward();
  for (float g : z.grad()) EXPECT_TRUE(std::isfinite(g));
}

TEST(Gelu, Examples) {
  EXPECT_EQ(gelu(Tensor<double>::scalar(0.0)).item(), 0.0);
  EXPECT_LT(std::abs(gelu(Tensor<double>::scalar(10.0)).item() - 10.0), 1e-6);
  // 0.5 (1 + erf(1/sqrt 2)) = Phi(1) = 0.841344746068542948585...
  EXPECT_NEAR(gelu(Tensor<double>::scalar(1.0)).item(), 0.8413447460685429, 1e-15);
  EXPECT_NEAR(gelu(Tensor<float>::scalar(1.0f)).item(), 0.8413447f, 1e-6f);
}

TEST(Backward, Examples) {
  Tensor<double> x({2, 3}, {1, -2, 3, 0.5, 7, -1});
  x.set_requires_grad();
  sum(x).backward();
  EXPECT_EQ(values(Tensor<double>({6}, std::vector<double>(x.grad().begin(), x.grad().end()))), std::vector<double>(6, 1.0));

  Tensor<double> v({2}, {1, 2});
  v.set_requires_grad();
  sum(mul(v, v)).backward();
  EXPECT_EQ(v.grad()[0], 2.0);
  EXPECT_EQ(v.grad()[1], 4.0);
}

TEST(Backward, NonScalarLossIsContractError) {
  Tensor<float> x({2}, {1, 2});
  x.set_requires_grad();
  EXPECT_THROW(scale(x, 2.0f).backward(), ContractError);
}

TEST(Backward, SharedNodeSumsPathGradients) {
  Rng rng(8);
  auto x = random_tensor<double>({4}, rng);
  // y feeds two branches: sum(tanh(y)) + sum(3y)
  const auto y = gelu(x);
  sum(add(tanh(y), scale(y, 3.0))).backward();
  const std::vector<double> both(x.grad().begin(), x.grad().end());

  auto xa = x.detach().set_requires_grad();
  sum(tanh(gelu(xa))).backward();
  auto xb = x.detach().set_requires_grad();
  sum(scale(gelu(xb), 3.0)).backward();
  for (Index i = 0; i < 4; ++i) EXPECT_NEAR(both[i], xa.grad()[i] + xb.grad()[i], 1e-14);
}

TEST(Backward, DeepChainDoesNotOverflowStack) {
  Tensor<float> x({1}, {0.5f});
  x.set_requires_grad();
  Tensor<float> y = x;
  for (int i = 0; i < 5000; ++i) y = add_scalar(y, 0.0f);
  sum(y).backward();
  EXPECT_EQ(x.grad()[0], 1.0f);
}

TEST(NoGrad, RecordsNothing) {
  Tensor<float> x({2}, {1, 2});
  x.set_requires_grad();
  NoGradGuard guard;
  const auto y = mul(x, x);
  EXPECT_FALSE(y.requires_grad());
}

// ---- finite differences over every op ------------------------------------

template <typename T>
class OpGradients : public ::testing::Test {};
using Scalars = ::testing::Types<float, double>;
TYPED_TEST_SUITE(OpGradients, Scalars);

#define EXPECT_GRAD_OK(result)                                                               \
  do {                                                                                       \
    const auto r_ = (result);                                                                \
    EXPECT_LT(r_.rel_error, default_tolerance<TypeParam>())                   \
        << "max abs " << r_.max_abs_error << " over " << r_.coordinates << " coordinates";   \
  } while (0)

TYPED_TEST(OpGradients, Elementwise) {
  using T = TypeParam;
  Rng rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    auto a = random_tensor<T>({3, 4}, rng, -2, 2);
    auto b = random_tensor<T>({3, 4}, rng, -2, 2);
    EXPECT_GRAD_OK(check_gradients<T>([&] { return add(a, b); }, {a, b}));
    EXPECT_GRAD_OK(check_gradients<T>([&] { return sub(a, b); }, {a, b}));
    EXPECT_GRAD_OK(check_gradients<T>([&] { return mul(a, b); }, {a, b}));
    EXPECT_GRAD_OK(check_gradients<T>([&] { return mul(a, a); }, {a}));
    EXPECT_GRAD_OK(check_gradients<T>([&] { return scale(add_scalar(a, T(0.3)), T(-1.7)); }, {a}));
    EXPECT_GRAD_OK(check_gradients<T>([&] { return gelu(a); }, {a}));
    EXPECT_GRAD_OK(check_gradients<T>([&] { return tanh(a); }, {a}));
  }
}

TYPED_TEST(OpGradients, PiecewiseLinear) {
  using T = TypeParam;
  Rng rng(12);
  for (int trial = 0; trial < 20; ++trial) {
    // Keep inputs away from the kink so the central difference is exact.
    auto a = random_tensor<T>({12}, rng, 0.05, 2);
    auto mags = a.mutable_data();
    for (Index i = 0; i < a.numel(); i += 2) mags[i] = -mags[i];
    EXPECT_GRAD_OK(check_gradients<T>([&] { return relu(a); }, {a}));
    EXPECT_GRAD_OK(check_gradients<T>([&] { return leaky_relu(a, T(0.2)); }, {a}));
  }
}

TYPED_TEST(OpGradients, Reductions) {
  using T = TypeParam;
  Rng rng(13);
  for (int trial = 0; trial < 20; ++trial) {
    auto a = random_tensor<T>({2, 5}, rng);
    EXPECT_GRAD_OK(check_gradients<T>([&] { return sum(a); }, {a}));
    EXPECT_GRAD_OK(check_gradients<T>([&] { return mean(a); }, {a}));
    EXPECT_GRAD_OK(check_gradients<T>([&] { return mean_squared_error(a, T(0.4)); }, {a}));
  }
}

TYPED_TEST(OpGradients, ShapeOps) {
  using T = TypeParam;
  Rng rng(14);
  for (int trial = 0; trial < 20; ++trial) {
    auto a = random_tensor<T>({2, 3, 4}, rng);
    auto b = random_tensor<T>({2, 2, 4}, rng);
    EXPECT_GRAD_OK(check_gradients<T>([&] { return reshape(a, {6, 4}); }, {a}));
    EXPECT_GRAD_OK(check_gradients<T>([&] { return permute(a, {2, 0, 1}); }, {a}));
    EXPECT_GRAD_OK(check_gradients<T>([&] { return transpose_last2(a); }, {a}));
    EXPECT_GRAD_OK(check_gradients<T>([&] { return concat<T>({a, b}, 1); }, {a, b}));
    EXPECT_GRAD_OK(check_gradients<T>(
        [&] { return gather_rows(a, {{2, 0}, {1, 1}}); }, {a}));
  }
}

TYPED_TEST(OpGradients, LinearAlgebra) {
  using T = TypeParam;
  Rng rng(15);
  for (int trial = 0; trial < 20; ++trial) {
    auto a = random_tensor<T>({2, 3, 4}, rng);
    auto b = random_tensor<T>({2, 4, 5}, rng);
    auto shared = random_tensor<T>({4, 5}, rng);
    auto w = random_tensor<T>({6, 4}, rng);
    auto bias = random_tensor<T>({6}, rng);
    auto logits = random_tensor<T>({2, 7}, rng, -3, 3);
    EXPECT_GRAD_OK(check_gradients<T>([&] { return matmul(a, b); }, {a, b}));
    EXPECT_GRAD_OK(check_gradients<T>([&] { return matmul(a, shared); }, {a, shared}));
    EXPECT_GRAD_OK(check_gradients<T>([&] { return linear(a, w, &bias); }, {a, w, bias}));
    EXPECT_GRAD_OK(check_gradients<T>([&] { return softmax(a, -1); }, {a}));
    EXPECT_GRAD_OK(check_gradients<T>([&] { return softmax(a, 1); }, {a}));
    EXPECT_GRAD_OK(check_gradients<T>([&] { return l2_normalize_tokens(a); }, {a}));
    EXPECT_GRAD_OK(check_gradients<T>([&] { return cross_entropy(logits, {3, 6}); }, {logits}));
  }
}

TYPED_TEST(OpGradients, ImageOps) {
  using T = TypeParam;
  Rng rng(16);
  for (int trial = 0; trial < 20; ++trial) {
    auto x = random_tensor<T>({2, 4, 5, 5}, rng);
    auto w = random_tensor<T>({6, 2, 3, 3}, rng);
    auto bias = random_tensor<T>({6}, rng);
    auto gamma = random_tensor<T>({4}, rng, 0.5, 1.5);
    auto beta = random_tensor<T>({4}, rng);
    const Conv2dGeometry geom{1 + trial % 2, trial % 3 == 0 ? 0 : 1, 2};
    EXPECT_GRAD_OK(check_gradients<T>([&] { return conv2d(x, w, &bias, geom); }, {x, w, bias}));
    EXPECT_GRAD_OK(check_gradients<T>([&] { return instance_norm2d(x, gamma, beta, T(1e-5)); },
                                      {x, gamma, beta}));
    EXPECT_GRAD_OK(check_gradients<T>([&] { return upsample_nearest2x(x); }, {x}));
    EXPECT_GRAD_OK(check_gradients<T>([&] { return from_tokens(to_tokens(x), 5, 5); }, {x}));
    EXPECT_GRAD_OK(check_gradients<T>([&] { return to_tokens(x); }, {x}));
  }
}

TEST(Serialize, RoundTripsBothPrecisions) {
  const auto dir = std::filesystem::temp_directory_path() / "ittr_test_serialize";
  std::filesystem::create_directories(dir);
  Rng rng(17);
  NamedTensors<float> in{{"a.weight", random_tensor<float>({3, 2, 2}, rng, -1, 1, false)},
                         {"scalar", Tensor<float>::scalar(2.5f)}};
  save_tensors(dir / "t.ittr", in);
  const auto out = load_tensors<float>(dir / "t.ittr");
  ASSERT_EQ(out.size(), 2u);
  EXPECT_EQ(out[0].first, "a.weight");
  EXPECT_EQ(out[0].second.shape(), (Shape{3, 2, 2}));
  EXPECT_EQ(values(out[0].second), values(in[0].second));
  EXPECT_EQ(out[1].second.item(), 2.5f);
  const auto widened = load_tensors<double>(dir / "t.ittr");
  EXPECT_EQ(widened[1].second.item(), 2.5);
  EXPECT_FALSE(std::filesystem::exists(dir / "t.ittr.tmp"));
}

TEST(Serialize, RejectsCorruptFiles) {
  const auto dir = std::filesystem::temp_directory_path() / "ittr_test_serialize";
  std::filesystem::create_directories(dir);
  {
    std::ofstream f(dir / "bad.ittr", std::ios::binary);
    f << "NOPE....";
  }
  EXPECT_THROW(load_tensors<float>(dir / "bad.ittr"), FormatError);
  EXPECT_THROW(load_tensors<float>(dir / "missing.ittr"), FormatError);
}
