#include "ittr/metrics.hpp"

#include <cmath>

#include "ittr/serialize.hpp"

namespace ittr {

namespace {

constexpr double kEigenTolerance = 1e-8;

Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd& m) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (m + m.transpose()));
  if (es.info() != Eigen::Success) throw NumericError("frechet: eigendecomposition failed");
  const Eigen::VectorXd root = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return es.eigenvectors() * root.asDiagonal() * es.eigenvectors().transpose();
}

}  // namespace

void FeatureStats::validate() const {
  if (n < 2) throw NumericError("feature stats need at least two samples, have " + std::to_string(n));
  if (sigma.rows() != mu.size() || sigma.cols() != mu.size())
    throw ShapeError("feature stats: covariance is " + std::to_string(sigma.rows()) + "x" +
                     std::to_string(sigma.cols()) + " for a mean of length " + std::to_string(mu.size()));
  if (!mu.allFinite() || !sigma.allFinite()) throw NumericError("feature stats hold non-finite values");
  const double scale = std::max(1.0, sigma.cwiseAbs().maxCoeff());
  if ((sigma - sigma.transpose()).cwiseAbs().maxCoeff() > 1e-9 * scale)
    throw NumericError("feature covariance is not symmetric");
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(sigma, Eigen::EigenvaluesOnly);
  if (mu.size() > 0 && es.eigenvalues().minCoeff() < -kEigenTolerance * scale)
    throw NumericError("feature covariance is not positive semi-definite");
}

FeatureExtractor FeatureExtractor::random_projection(std::uint64_t seed, Index dim) {
  if (dim < 1) throw ConfigError("feature dimension must be positive");
  FeatureExtractor f;
  f.kind_ = ExtractorKind::random_projection;
  f.dim_ = dim;
  f.side_ = 16;
  const Index in = 3 * f.side_ * f.side_;
  Rng rng = derive_rng(seed, {0xFEA7ULL});
  f.projection_.resize(dim, in);
  const double s = 1.0 / std::sqrt(static_cast<double>(in));
  for (Index r = 0; r < dim; ++r)
    for (Index c = 0; c < in; ++c) f.projection_(r, c) = s * normal01(rng);
  return f;
}

FeatureExtractor FeatureExtractor::downsample_flatten(Index dim) {
  const auto side = static_cast<Index>(std::lround(std::sqrt(dim / 3.0)));
  if (side < 1 || 3 * side * side != dim)
    throw ConfigError("downsample_flatten needs dim = 3 s^2, got " + std::to_string(dim));
  FeatureExtractor f;
  f.kind_ = ExtractorKind::downsample_flatten;
  f.dim_ = dim;
  f.side_ = side;
  return f;
}

Eigen::VectorXd FeatureExtractor::operator()(const Image& image) const {
  const Image small = downsample(image, side_, side_);
  Eigen::VectorXd flat(static_cast<Index>(small.pixels.size()));
  for (Index i = 0; i < flat.size(); ++i) flat[i] = small.pixels[static_cast<size_t>(i)];
  if (kind_ == ExtractorKind::downsample_flatten) return flat;
  return projection_ * flat;
}

FeatureStats collect_stats(const Eigen::MatrixXd& features) {
  if (features.rows() < 2)
    throw NumericError("feature stats need at least two samples, have " + std::to_string(features.rows()));
  FeatureStats s;
  s.n = features.rows();
  s.mu = features.colwise().mean().transpose();
  const Eigen::MatrixXd centred = features.rowwise() - s.mu.transpose();
  s.sigma = centred.transpose() * centred / static_cast<double>(s.n - 1);
  s.sigma = 0.5 * (s.sigma + s.sigma.transpose());
  return s;
}

FeatureStats collect_stats(const std::vector<Image>& images, const FeatureExtractor& extractor) {
  Eigen::MatrixXd feats(static_cast<Index>(images.size()), extractor.dim());
  for (size_t i = 0; i < images.size(); ++i) feats.row(static_cast<Index>(i)) = extractor(images[i]).transpose();
  return collect_stats(feats);
}

double frechet_distance(const FeatureStats& a, const FeatureStats& b) {
  if (a.dim() != b.dim())
    throw ShapeError("frechet: feature dimensions differ (" + std::to_string(a.dim()) + " vs " +
                     std::to_string(b.dim()) + ")");
  a.validate();
  b.validate();
  const Eigen::MatrixXd ra = psd_sqrt(a.sigma);
  const Eigen::MatrixXd m = ra * b.sigma * ra;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (m + m.transpose()), Eigen::EigenvaluesOnly);
  if (es.info() != Eigen::Success) throw NumericError("frechet: eigendecomposition failed");
  const double tr_sqrt = es.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();
  const double d = (a.mu - b.mu).squaredNorm() + a.sigma.trace() + b.sigma.trace() - 2.0 * tr_sqrt;
  return std::max(0.0, d);
}

void save_stats(const std::filesystem::path& path, const FeatureStats& stats) {
  const Index d = stats.dim();
  std::vector<double> mu(stats.mu.data(), stats.mu.data() + d), sigma(static_cast<size_t>(d * d));
  for (Index r = 0; r < d; ++r)
    for (Index c = 0; c < d; ++c) sigma[static_cast<size_t>(r * d + c)] = stats.sigma(r, c);
  save_tensors<double>(path, {{"mu", Tensor<double>({d}, mu)},
                              {"sigma", Tensor<double>({d, d}, sigma)},
                              {"n", Tensor<double>::scalar(static_cast<double>(stats.n))}});
}

FeatureStats load_stats(const std::filesystem::path& path) {
  FeatureStats s;
  const Tensor<double>* mu = nullptr;
  const Tensor<double>* sigma = nullptr;
  const auto tensors = load_tensors<double>(path);
  for (const auto& [name, t] : tensors) {
    if (name == "mu") mu = &t;
    if (name == "sigma") sigma = &t;
    if (name == "n") s.n = static_cast<Index>(t.item());
  }
  if (!mu || !sigma || mu->rank() != 1 || sigma->shape() != Shape{mu->dim(0), mu->dim(0)})
    throw FormatError("stats archive " + path.string() + " lacks a consistent mu/sigma pair");
  const Index d = mu->dim(0);
  s.mu = Eigen::Map<const Eigen::VectorXd>(mu->raw(), d);
  s.sigma = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(sigma->raw(), d, d);
  s.validate();
  return s;
}

}  // namespace ittr
