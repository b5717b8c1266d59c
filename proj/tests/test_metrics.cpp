#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>

#include "ittr/metrics.hpp"

using namespace ittr;

namespace {

FeatureStats make_stats(Eigen::VectorXd mu, Eigen::MatrixXd sigma, Index n = 100) {
  FeatureStats s;
  s.mu = std::move(mu);
  s.sigma = std::move(sigma);
  s.n = n;
  return s;
}

Eigen::MatrixXd random_spd(Index d, Rng& rng) {
  Eigen::MatrixXd a(d, d);
  for (Index r = 0; r < d; ++r)
    for (Index c = 0; c < d; ++c) a(r, c) = normal01(rng);
  return a * a.transpose() / static_cast<double>(d) + 0.1 * Eigen::MatrixXd::Identity(d, d);
}

Eigen::VectorXd random_vector(Index d, Rng& rng) {
  Eigen::VectorXd v(d);
  for (Index i = 0; i < d; ++i) v[i] = normal01(rng);
  return v;
}

Image random_image(Index size, Rng& rng) {
  Image im(size, size);
  for (auto& p : im.pixels) p = static_cast<float>(uniform(rng, -1.0, 1.0));
  return im;
}

}  // namespace

TEST(Frechet, IdenticalStatsGiveZero) {
  Rng rng(1);
  for (Index d : {1, 4, 16, 64}) {
    const auto s = make_stats(random_vector(d, rng), random_spd(d, rng));
    EXPECT_LT(frechet_distance(s, s), 1e-6) << d;
  }
}

TEST(Frechet, ShiftedIdentityIsSquaredShift) {
  Rng rng(2);
  for (Index d : {2, 8, 64}) {
    const Eigen::VectorXd mu = random_vector(d, rng), v = random_vector(d, rng);
    const Eigen::MatrixXd id = Eigen::MatrixXd::Identity(d, d);
    EXPECT_NEAR(frechet_distance(make_stats(mu, id), make_stats(mu + v, id)), v.squaredNorm(), 1e-6);
  }
}

TEST(Frechet, CommutingCovariancesClosedForm) {
  for (Index d : {1, 3, 64}) {
    const Eigen::MatrixXd id = Eigen::MatrixXd::Identity(d, d);
    const Eigen::VectorXd zero = Eigen::VectorXd::Zero(d);
    // (sqrt 4 - sqrt 1)^2 per dimension.
    EXPECT_NEAR(frechet_distance(make_stats(zero, 4.0 * id), make_stats(zero, id)), static_cast<double>(d), 1e-6);
  }
  Rng rng(3);
  const Index d = 12;
  Eigen::VectorXd a(d), b(d);
  for (Index i = 0; i < d; ++i) {
    a[i] = uniform(rng, 0.1, 5.0);
    b[i] = uniform(rng, 0.1, 5.0);
  }
  // Shared eigenbasis: rotate both diagonal covariances by one orthogonal matrix.
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(random_spd(d, rng));
  const Eigen::MatrixXd q = qr.householderQ();
  const Eigen::VectorXd mu_a = random_vector(d, rng), mu_b = random_vector(d, rng);
  double expected = (mu_a - mu_b).squaredNorm();
  for (Index i = 0; i < d; ++i) expected += std::pow(std::sqrt(a[i]) - std::sqrt(b[i]), 2);
  const auto sa = make_stats(mu_a, q * a.asDiagonal() * q.transpose());
  const auto sb = make_stats(mu_b, q * b.asDiagonal() * q.transpose());
  EXPECT_NEAR(frechet_distance(sa, sb), expected, 1e-6);
}

TEST(Frechet, SymmetricAndNonNegative) {
  Rng rng(4);
  for (int trial = 0; trial < 50; ++trial) {
    const Index d = 1 + trial % 20;
    const auto a = make_stats(random_vector(d, rng), random_spd(d, rng));
    const auto b = make_stats(random_vector(d, rng), random_spd(d, rng));
    const double ab = frechet_distance(a, b), ba = frechet_distance(b, a);
    EXPECT_NEAR(ab, ba, 1e-8);
    EXPECT_GE(ab, 0.0);
  }
}

TEST(Frechet, MeanTermScalesQuadratically) {
  Rng rng(5);
  const Index d = 10;
  const Eigen::MatrixXd s = random_spd(d, rng);
  const Eigen::VectorXd mu = random_vector(d, rng), v = random_vector(d, rng);
  const double base = frechet_distance(make_stats(mu, s), make_stats(mu + v, s));
  for (double t : {0.5, 2.0, 3.0})
    EXPECT_NEAR(frechet_distance(make_stats(mu, s), make_stats(mu + t * v, s)), t * t * base, 1e-6 * t * t);
}

TEST(Frechet, SingularCovarianceIsClamped) {
  const Index d = 6;
  Eigen::MatrixXd rank1 = Eigen::MatrixXd::Zero(d, d);
  rank1(0, 0) = 2.0;
  const Eigen::VectorXd zero = Eigen::VectorXd::Zero(d);
  const double f = frechet_distance(make_stats(zero, rank1), make_stats(zero, Eigen::MatrixXd::Zero(d, d)));
  EXPECT_NEAR(f, 2.0, 1e-9);
  EXPECT_TRUE(std::isfinite(f));
}

TEST(Frechet, RejectsInvalidStats) {
  const Eigen::MatrixXd id = Eigen::MatrixXd::Identity(3, 3);
  const Eigen::VectorXd zero = Eigen::VectorXd::Zero(3);
  EXPECT_THROW(frechet_distance(make_stats(zero, id), make_stats(Eigen::VectorXd::Zero(4), Eigen::MatrixXd::Identity(4, 4))),
               ShapeError);
  EXPECT_THROW(frechet_distance(make_stats(zero, id, 1), make_stats(zero, id)), NumericError);
  Eigen::MatrixXd asym = id;
  asym(0, 1) = 0.5;
  EXPECT_THROW(frechet_distance(make_stats(zero, asym), make_stats(zero, id)), NumericError);
  EXPECT_THROW(frechet_distance(make_stats(zero, -id), make_stats(zero, id)), NumericError);
  Eigen::VectorXd bad = zero;
  bad[1] = NAN;
  EXPECT_THROW(frechet_distance(make_stats(bad, id), make_stats(zero, id)), NumericError);
}

TEST(Stats, MatchTwoPassOracle) {
  Rng rng(6);
  const Index n = 37, d = 5;
  Eigen::MatrixXd x(n, d);
  for (Index r = 0; r < n; ++r)
    for (Index c = 0; c < d; ++c) x(r, c) = 3.0 + normal01(rng) * (c + 1);
  const auto s = collect_stats(x);
  std::vector<double> mean(d, 0.0);
  for (Index r = 0; r < n; ++r)
    for (Index c = 0; c < d; ++c) mean[c] += x(r, c) / n;
  for (Index i = 0; i < d; ++i) {
    EXPECT_NEAR(s.mu[i], mean[i], 1e-12);
    for (Index j = 0; j < d; ++j) {
      double acc = 0.0;
      for (Index r = 0; r < n; ++r) acc += (x(r, i) - mean[i]) * (x(r, j) - mean[j]);
      EXPECT_NEAR(s.sigma(i, j), acc / (n - 1), 1e-10);
    }
  }
  EXPECT_EQ(s.n, n);
  EXPECT_THROW(collect_stats(Eigen::MatrixXd(1, d)), NumericError);
}

TEST(Stats, ConcatenatedHalvesMatchWholeSet) {
  Rng rng(7);
  const Index n = 40, d = 4;
  Eigen::MatrixXd x(n, d);
  for (Index r = 0; r < n; ++r)
    for (Index c = 0; c < d; ++c) x(r, c) = normal01(rng);
  const auto whole = collect_stats(x);
  const auto a = collect_stats(x.topRows(n / 2)), b = collect_stats(x.bottomRows(n / 2));
  // Pooled moments from the two halves.
  const Eigen::VectorXd mu = 0.5 * (a.mu + b.mu);
  const double h = n / 2.0;
  const Eigen::MatrixXd scatter = (h - 1) * (a.sigma + b.sigma) + h * (a.mu - mu) * (a.mu - mu).transpose() +
                                  h * (b.mu - mu) * (b.mu - mu).transpose();
  EXPECT_LT((whole.mu - mu).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LT((whole.sigma - scatter / (n - 1.0)).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Stats, IdenticalImagesGiveZeroCovariance) {
  Rng rng(8);
  const Image im = random_image(32, rng);
  const auto fx = FeatureExtractor::random_projection(1);
  const auto s = collect_stats({im, im}, fx);
  EXPECT_EQ(s.dim(), 64);
  EXPECT_LT(s.sigma.cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LT((s.mu - fx(im)).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Stats, ArchiveRoundTrip) {
  Rng rng(9);
  const auto s = make_stats(random_vector(7, rng), random_spd(7, rng), 123);
  const auto path = std::filesystem::temp_directory_path() / "ittr_stats_roundtrip.ittr";
  save_stats(path, s);
  const auto back = load_stats(path);
  std::filesystem::remove(path);
  EXPECT_EQ(back.n, 123);
  EXPECT_EQ(back.mu, s.mu);
  EXPECT_EQ(back.sigma, s.sigma);
}

TEST(Extractor, RandomProjectionIsDeterministicAndLinear) {
  const auto f1 = FeatureExtractor::random_projection(42), f2 = FeatureExtractor::random_projection(42);
  const auto f3 = FeatureExtractor::random_projection(43);
  Rng rng(10);
  const Image a = random_image(64, rng), b = random_image(64, rng);
  EXPECT_EQ(f1(a), f2(a));
  EXPECT_GT((f1(a) - f3(a)).norm(), 1e-3);
  Image sum(64, 64);
  for (size_t i = 0; i < sum.pixels.size(); ++i) sum.pixels[i] = 0.5f * (a.pixels[i] + b.pixels[i]);
  EXPECT_LT((f1(sum) - 0.5 * (f1(a) + f1(b))).cwiseAbs().maxCoeff(), 1e-5);
  // Pixel variance 1/3, box-averaged over 16 pixels, times 768 entries of variance 1/768.
  EXPECT_NEAR(f1(a).squaredNorm() / 64.0, 1.0 / 48.0, 0.008);
}

TEST(Extractor, DownsampleFlatten) {
  const auto f = FeatureExtractor::downsample_flatten(48);
  Image im(16, 16, 0.25f);
  const auto v = f(im);
  ASSERT_EQ(v.size(), 48);
  EXPECT_LT((v.array() - 0.25).abs().maxCoeff(), 1e-7);
  EXPECT_THROW(FeatureExtractor::downsample_flatten(50), ConfigError);
  EXPECT_THROW(FeatureExtractor::random_projection(0, 0), ConfigError);
}
