// Transformer generator: convolutional stem (overlapping patch embedding,
// x4 downsampling), a body of hybrid perception blocks, and a mirrored
// convolutional decoder.
#pragma once

#include <map>
#include <string>
#include <vector>

#include "ittr/attention.hpp"

namespace ittr {

struct ConvStage {
  Index out_channels = 0;
  Index kernel = 3;
  Index stride = 1;
  friend bool operator==(const ConvStage&, const ConvStage&) = default;
};

struct ReceptiveField {
  Index size = 1;
  Index stride = 1;
};

/// rf += (k - 1) * jump; jump *= stride, over the stage list.
ReceptiveField receptive_field(const std::vector<ConvStage>& stages);

struct GeneratorSpec {
  Index channels = 256;
  Index hpb_count = 9;
  Index ffn_expansion = 4;
  Index heads = 8;
  Index sparse_tokens = 0;  // 0: floor(sqrt(min(h, w))) of the body grid
  Index local_kernel = 3;
  bool l2_normalize = true;
  AttentionVariant attention = AttentionVariant::dpsa;
  bool enable_local = true;
  bool enable_global = true;
  std::vector<ConvStage> stem;           // empty: derived from channels
  std::vector<Index> decoder_channels;   // empty: derived from channels
  Index output_kernel = 7;
  std::vector<Index> feature_taps = {0, 1, 3, 5, 7, 9};  // 0 = stem, i = HPB i

  /// Fills derived stage plans and checks every invariant (throws ConfigError).
  GeneratorSpec& finalize();
  void validate() const;
  Index total_stride() const;

  std::map<std::string, std::string> to_manifest() const;
  static GeneratorSpec from_manifest(const std::map<std::string, std::string>& kv);

  friend bool operator==(const GeneratorSpec&, const GeneratorSpec&) = default;
};

struct HpbConfig {
  Index channels = 256;
  Index local_kernel = 3;
  AttentionConfig attention;
  Index ffn_expansion = 4;
  bool enable_local = true;
  bool enable_global = true;

  Index fusion_width() const { return 2 * channels; }
  void validate() const;
};

template <typename T>
class HybridPerceptionBlock {
 public:
  HybridPerceptionBlock() = default;
  HybridPerceptionBlock(const HpbConfig& cfg, Rng& rng);

  /// u = IN(x); mixed = x + Fuse[DW(u), Attn(u)]; out = mixed + FFN(IN(mixed)).
  /// A disabled branch contributes u unchanged to the fusion input.
  Tensor<T> operator()(const Tensor<T>& x) const;

  Cost cost(Index height, Index width) const;
  void collect(const std::string& prefix, NamedTensors<T>& out) const;
  const HpbConfig& config() const { return cfg_; }

  InstanceNorm2d<T> norm1, norm2;
  Conv2d<T> local;
  SelfAttention<T> global;
  Conv2d<T> fuse;
  Conv2d<T> ffn_expand, ffn_dw, ffn_reduce;

 private:
  HpbConfig cfg_;
};

template <typename T>
struct GeneratorOutput {
  Tensor<T> image;
  std::vector<Tensor<T>> features;
  std::vector<std::string> feature_tags;
};

template <typename T>
class Generator {
 public:
  Generator() = default;
  Generator(GeneratorSpec spec, Rng& rng);

  GeneratorOutput<T> forward(const Tensor<T>& x) const;
  Tensor<T> translate(const Tensor<T>& x) const;
  /// Tapped features only; stops after the deepest tap.
  std::vector<Tensor<T>> encode(const Tensor<T>& x) const;

  Tensor<T> stem_forward(const Tensor<T>& x) const;
  Tensor<T> decoder_forward(const Tensor<T>& x) const;

  Cost cost(Index height, Index width) const;
  Cost stem_cost(Index height, Index width) const;
  Cost body_cost(Index height, Index width) const;
  Cost decoder_cost(Index height, Index width) const;

  void collect(const std::string& prefix, NamedTensors<T>& out) const;
  NamedTensors<T> parameters() const;
  const GeneratorSpec& spec() const { return spec_; }

  std::vector<HybridPerceptionBlock<T>> body;

 private:
  void check_input(const Tensor<T>& x) const;
  Tensor<T> run(const Tensor<T>& x, bool decode, std::vector<Tensor<T>>* taps) const;

  struct NormedConv {
    Conv2d<T> conv;
    InstanceNorm2d<T> norm;
  };
  GeneratorSpec spec_;
  std::vector<NormedConv> stem_;
  std::vector<NormedConv> decoder_;
  Conv2d<T> to_rgb_;
};

/// Copies tensors named `prefix + name` from `source` into `params` (shapes
/// must agree). Throws FormatError naming the first missing or mismatched tensor.
template <typename T>
void assign_parameters(const NamedTensors<T>& params, const NamedTensors<T>& source,
                       const std::string& prefix = "");

}  // namespace ittr
