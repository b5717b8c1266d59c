#include "ittr/objectives.hpp"

#include <cmath>
#include <numeric>

namespace ittr {

template <typename T>
PatchGanDiscriminator<T>::PatchGanDiscriminator(Index base_channels, Rng& rng) : base_(base_channels) {
  if (base_channels < 1) throw ConfigError("discriminator: base channels must be positive");
  Index in = 3;
  const Index widths[] = {base_channels, 2 * base_channels, 4 * base_channels, 8 * base_channels};
  const Index strides[] = {2, 2, 2, 1};
  for (int i = 0; i < 4; ++i) {
    Stage s{Conv2d<T>({in, widths[i], 4, strides[i], 1, 1, true}, rng), i > 0, {}};
    if (s.norm) s.in = InstanceNorm2d<T>(widths[i]);
    stages_.push_back(std::move(s));
    in = widths[i];
  }
  head_ = Conv2d<T>({in, 1, 4, 1, 1, 1, true}, rng);
}

template <typename T>
Tensor<T> PatchGanDiscriminator<T>::operator()(const Tensor<T>& x) const {
  Tensor<T> h = x;
  for (const auto& s : stages_) {
    h = s.conv(h);
    if (s.norm) h = s.in(h);
    h = leaky_relu(h, T(0.2));
  }
  return head_(h);
}

template <typename T>
Cost PatchGanDiscriminator<T>::cost(Index height, Index width) const {
  Cost c;
  Index h = height, w = width;
  for (const auto& s : stages_) {
    c += s.conv.cost(h, w);
    if (s.norm) c += s.in.cost();
    std::tie(h, w) = s.conv.output_size(h, w);
  }
  return c + head_.cost(h, w);
}

template <typename T>
void PatchGanDiscriminator<T>::collect(const std::string& prefix, NamedTensors<T>& out) const {
  for (size_t i = 0; i < stages_.size(); ++i) {
    stages_[i].conv.collect(prefix + "disc." + std::to_string(i) + ".conv", out);
    if (stages_[i].norm) stages_[i].in.collect(prefix + "disc." + std::to_string(i) + ".norm", out);
  }
  head_.collect(prefix + "disc.head", out);
}

template <typename T>
NamedTensors<T> PatchGanDiscriminator<T>::parameters() const {
  NamedTensors<T> out;
  collect("", out);
  return out;
}

template <typename T>
ProjectionHead<T>::ProjectionHead(Index in_features, Index width, Rng& rng)
    : fc1(in_features, width, true, rng), fc2(width, width, true, rng) {}

template <typename T>
Tensor<T> ProjectionHead<T>::operator()(const Tensor<T>& x) const {
  return l2_normalize_tokens(fc2(relu(fc1(x))));
}

template <typename T>
void ProjectionHead<T>::collect(const std::string& prefix, NamedTensors<T>& out) const {
  fc1.collect(prefix + ".fc1", out);
  fc2.collect(prefix + ".fc2", out);
}

template <typename T>
void ProjectionHeads<T>::ensure(const std::vector<Index>& channels) {
  if (heads_.empty()) {
    for (size_t i = 0; i < channels.size(); ++i) {
      Rng rng = derive_rng(seed_, {0x4EADULL, i});
      heads_.emplace_back(channels[i], width_, rng);
    }
    return;
  }
  if (channels.size() != heads_.size())
    throw ShapeError("projection heads: " + std::to_string(channels.size()) + " layers given, " +
                     std::to_string(heads_.size()) + " heads exist");
  for (size_t i = 0; i < channels.size(); ++i)
    if (heads_[i].in_features() != channels[i])
      throw ShapeError("projection head " + std::to_string(i) + " expects " +
                       std::to_string(heads_[i].in_features()) + " channels, got " +
                       std::to_string(channels[i]));
}

template <typename T>
void ProjectionHeads<T>::collect(const std::string& prefix, NamedTensors<T>& out) const {
  for (size_t i = 0; i < heads_.size(); ++i) heads_[i].collect(prefix + "head." + std::to_string(i), out);
}

template <typename T>
NamedTensors<T> ProjectionHeads<T>::parameters() const {
  NamedTensors<T> out;
  collect("", out);
  return out;
}

template <typename T>
Tensor<T> lsgan_generator_loss(const Tensor<T>& d_fake) {
  return mean_squared_error(d_fake, T(1));
}

template <typename T>
Tensor<T> lsgan_discriminator_loss(const Tensor<T>& d_real, const Tensor<T>& d_fake) {
  return mean_squared_error(d_real, T(1)) + mean_squared_error(d_fake, T(0));
}

template <typename T>
Tensor<T> patchnce_contrast(const Tensor<T>& queries, const Tensor<T>& keys, double tau) {
  if (!(tau > 0)) throw ConfigError("patchnce: temperature must be positive");
  if (queries.rank() != 3 || queries.shape() != keys.shape())
    throw ShapeError("patchnce: queries " + to_string(queries.shape()) + " and keys " +
                     to_string(keys.shape()) + " must both be [G x P x D]");
  const Index groups = queries.dim(0), patches = queries.dim(1);
  const auto logits = scale(matmul(queries, transpose_last2(keys)), static_cast<T>(1.0 / tau));
  std::vector<Index> targets(static_cast<size_t>(groups * patches));
  for (Index i = 0; i < groups * patches; ++i) targets[i] = i % patches;
  return cross_entropy(reshape(logits, {groups * patches, patches}), targets);
}

template <typename T>
Tensor<T> patchnce_loss(const std::vector<Tensor<T>>& feats_src, const std::vector<Tensor<T>>& feats_out,
                        ProjectionHeads<T>& heads, const PatchNceOptions& opts, Rng& rng) {
  if (feats_src.empty() || feats_src.size() != feats_out.size())
    throw ShapeError("patchnce: source and output tap lists differ in length");
  std::vector<Index> channels;
  for (size_t l = 0; l < feats_src.size(); ++l) {
    if (feats_src[l].shape() != feats_out[l].shape() || feats_src[l].rank() != 4)
      throw ShapeError("patchnce: layer " + std::to_string(l) + " shapes " +
                       to_string(feats_src[l].shape()) + " vs " + to_string(feats_out[l].shape()));
    channels.push_back(feats_src[l].dim(1));
  }
  heads.ensure(channels);
  if (opts.num_patches < 1) throw ConfigError("patchnce: num_patches must be positive");

  Tensor<T> total;
  for (size_t l = 0; l < feats_src.size(); ++l) {
    const Index batch = feats_src[l].dim(0);
    const Index positions = feats_src[l].dim(2) * feats_src[l].dim(3);
    Index count = opts.num_patches;
    if (count > positions) {
      thread_local Index warned_for = -1;
      if (warned_for != positions) {
        warned_for = positions;
        emit_diagnostic("patchnce: " + std::to_string(count) + " patches requested but layer " +
                        std::to_string(l) + " has only " + std::to_string(positions) +
                        " positions; using all of them");
      }
      count = positions;
    }
    std::vector<Index> ids(static_cast<size_t>(positions));
    std::iota(ids.begin(), ids.end(), Index{0});
    shuffle(ids.begin(), ids.end(), rng);
    ids.resize(static_cast<size_t>(count));
    const std::vector<std::vector<Index>> rows(static_cast<size_t>(batch), ids);

    const auto q = heads[l](gather_rows(to_tokens(feats_out[l]), rows));
    auto k = heads[l](gather_rows(to_tokens(feats_src[l]), rows));
    if (opts.detach_keys) k = k.detach();
    const auto term = patchnce_contrast(q, k, opts.tau);
    total = total.defined() ? total + term : term;
  }
  return scale(total, static_cast<T>(1.0 / static_cast<double>(feats_src.size())));
}

bool LossBundle::finite() const {
  for (double v : {loss_g, loss_nce_x, loss_nce_y, loss_total, loss_d})
    if (!std::isfinite(v)) return false;
  return true;
}

template <typename T>
GeneratorObjective<T> total_generator_objective(const Tensor<T>& loss_g, const Tensor<T>& nce_x,
                                                const Tensor<T>& nce_y, double lambda_x,
                                                double lambda_y) {
  GeneratorObjective<T> obj;
  obj.values.lambda_x = lambda_x;
  obj.values.lambda_y = lambda_y;
  obj.values.loss_g = static_cast<double>(loss_g.item());
  obj.total = loss_g;
  if (nce_x.defined()) {
    obj.values.loss_nce_x = static_cast<double>(nce_x.item());
    if (lambda_x != 0.0) obj.total = obj.total + scale(nce_x, static_cast<T>(lambda_x));
  }
  if (nce_y.defined()) {
    obj.values.loss_nce_y = static_cast<double>(nce_y.item());
    if (lambda_y != 0.0) obj.total = obj.total + scale(nce_y, static_cast<T>(lambda_y));
  }
  obj.values.loss_total = static_cast<double>(obj.total.item());
  return obj;
}

#define ITTR_INSTANTIATE(T)                                                                         \
  template class PatchGanDiscriminator<T>;                                                         \
  template class ProjectionHead<T>;                                                                \
  template class ProjectionHeads<T>;                                                               \
  template Tensor<T> lsgan_generator_loss(const Tensor<T>&);                                       \
  template Tensor<T> lsgan_discriminator_loss(const Tensor<T>&, const Tensor<T>&);                 \
  template Tensor<T> patchnce_contrast(const Tensor<T>&, const Tensor<T>&, double);               \
  template Tensor<T> patchnce_loss(const std::vector<Tensor<T>>&, const std::vector<Tensor<T>>&,   \
                                   ProjectionHeads<T>&, const PatchNceOptions&, Rng&);             \
  template GeneratorObjective<T> total_generator_objective(const Tensor<T>&, const Tensor<T>&,     \
                                                           const Tensor<T>&, double, double);
ITTR_INSTANTIATE(float)
ITTR_INSTANTIATE(double)
#undef ITTR_INSTANTIATE

}  // namespace ittr
