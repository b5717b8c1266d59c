// CUT training objectives: least-squares adversarial losses, the PatchNCE
// contrastive loss with per-layer MLP projection heads, and a PatchGAN
// discriminator.
#pragma once

#include <string>
#include <vector>

#include "ittr/generator.hpp"

namespace ittr {

template <typename T>
class PatchGanDiscriminator {
 public:
  PatchGanDiscriminator() = default;
  /// 4x4 convs widening base -> 8 base, strides 2, 2, 2, 1 then a 1-channel
  /// stride-1 logit conv. IN after every conv but the first and the last.
  PatchGanDiscriminator(Index base_channels, Rng& rng);

  /// [B x 3 x H x W] -> [B x 1 x h x w] raw logits (no sigmoid).
  Tensor<T> operator()(const Tensor<T>& x) const;

  Cost cost(Index height, Index width) const;
  void collect(const std::string& prefix, NamedTensors<T>& out) const;
  NamedTensors<T> parameters() const;
  Index base_channels() const { return base_; }

 private:
  struct Stage {
    Conv2d<T> conv;
    bool norm = false;
    InstanceNorm2d<T> in;
  };
  std::vector<Stage> stages_;
  Conv2d<T> head_;
  Index base_ = 0;
};

/// Two-layer MLP (in -> width -> width, ReLU between) with L2-normalised output.
template <typename T>
class ProjectionHead {
 public:
  ProjectionHead() = default;
  ProjectionHead(Index in_features, Index width, Rng& rng);

  /// [..., in] -> [..., width], unit norm along the last axis.
  Tensor<T> operator()(const Tensor<T>& x) const;
  void collect(const std::string& prefix, NamedTensors<T>& out) const;
  Index in_features() const { return fc1.in_features(); }

  Linear<T> fc1, fc2;
};

/// One projection head per tapped layer, created on first use from the
/// layer widths and a seed.
template <typename T>
class ProjectionHeads {
 public:
  explicit ProjectionHeads(std::uint64_t seed = 0, Index width = 256) : seed_(seed), width_(width) {}

  /// Creates the heads if absent; afterwards the widths must match.
  void ensure(const std::vector<Index>& channels);
  bool initialized() const { return !heads_.empty(); }
  std::size_t size() const { return heads_.size(); }
  const ProjectionHead<T>& operator[](std::size_t i) const { return heads_.at(i); }

  void collect(const std::string& prefix, NamedTensors<T>& out) const;
  NamedTensors<T> parameters() const;

 private:
  std::uint64_t seed_;
  Index width_;
  std::vector<ProjectionHead<T>> heads_;
};

/// mean((1 - d_fake)^2)
template <typename T> Tensor<T> lsgan_generator_loss(const Tensor<T>& d_fake);
/// mean((1 - d_real)^2) + mean(d_fake^2)
template <typename T> Tensor<T> lsgan_discriminator_loss(const Tensor<T>& d_real, const Tensor<T>& d_fake);

struct PatchNceOptions {
  double tau = 0.07;
  Index num_patches = 256;
  bool detach_keys = true;  // source-side embeddings carry no gradient
};

/// queries, keys: [G x P x D] embeddings. For each group and position s the
/// positive is keys[s]; the other P-1 key positions are negatives. Returns
/// the mean over G*P of -log softmax(q_s . k / tau)[s].
template <typename T>
Tensor<T> patchnce_contrast(const Tensor<T>& queries, const Tensor<T>& keys, double tau);

/// Samples positions per layer (shared by source and output and across the
/// batch), embeds both through the layer's head and averages
/// patchnce_contrast over layers. Clamps num_patches to the positions
/// available with a diagnostic.
template <typename T>
Tensor<T> patchnce_loss(const std::vector<Tensor<T>>& feats_src, const std::vector<Tensor<T>>& feats_out,
                        ProjectionHeads<T>& heads, const PatchNceOptions& opts, Rng& rng);

/// Scalar loss values of one iteration.
struct LossBundle {
  double loss_g = 0.0;
  double loss_nce_x = 0.0;
  double loss_nce_y = 0.0;
  double loss_total = 0.0;
  double loss_d = 0.0;
  double lambda_x = 1.0;
  double lambda_y = 1.0;

  bool finite() const;
};

template <typename T>
struct GeneratorObjective {
  Tensor<T> total;  // differentiable L_G + lambda_x L_NCE_X + lambda_y L_NCE_Y
  LossBundle values;
};

/// Terms with a zero weight are left out of the graph entirely. Undefined
/// NCE tensors count as zero.
template <typename T>
GeneratorObjective<T> total_generator_objective(const Tensor<T>& loss_g, const Tensor<T>& nce_x,
                                                const Tensor<T>& nce_y, double lambda_x = 1.0,
                                                double lambda_y = 1.0);

}  // namespace ittr
