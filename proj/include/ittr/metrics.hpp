// Fréchet distance between Gaussian fits of feature sets, with a
// model-free feature extractor over downsampled images.
#pragma once

#include <Eigen/Dense>
#include <filesystem>
#include <vector>

#include "ittr/data.hpp"

namespace ittr {

struct FeatureStats {
  Eigen::VectorXd mu;
  Eigen::MatrixXd sigma;
  Index n = 0;

  Index dim() const { return mu.size(); }
  /// Symmetric, finite, n >= 2 and no eigenvalue below -1e-8 (throws NumericError).
  void validate() const;
};

enum class ExtractorKind { random_projection, downsample_flatten };

class FeatureExtractor {
 public:
  /// Gaussian projection (entries N(0, 1/768)) of the 16x16 box-downsampled image.
  static FeatureExtractor random_projection(std::uint64_t seed, Index dim = 64);
  /// The image downsampled to s x s with 3 s^2 = dim, flattened.
  static FeatureExtractor downsample_flatten(Index dim = 48);

  Eigen::VectorXd operator()(const Image& image) const;
  Index dim() const { return dim_; }
  ExtractorKind kind() const { return kind_; }

 private:
  ExtractorKind kind_ = ExtractorKind::random_projection;
  Index dim_ = 0;
  Index side_ = 16;
  Eigen::MatrixXd projection_;
};

/// Mean and unbiased covariance of the rows of `features` (n x d); n >= 2.
FeatureStats collect_stats(const Eigen::MatrixXd& features);
FeatureStats collect_stats(const std::vector<Image>& images, const FeatureExtractor& extractor);

/// ||mu_a - mu_b||^2 + Tr(S_a + S_b - 2 (S_a^1/2 S_b S_a^1/2)^1/2), negative
/// eigenvalues clamped to zero.
double frechet_distance(const FeatureStats& a, const FeatureStats& b);

/// Tensor archive holding "mu" [d], "sigma" [d x d] and "n".
void save_stats(const std::filesystem::path& path, const FeatureStats& stats);
FeatureStats load_stats(const std::filesystem::path& path);

}  // namespace ittr
