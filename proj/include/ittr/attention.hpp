// Dense multi-head self-attention and dual pruned self-attention (DPSA).
//
// DPSA ranks the rows and columns of the key grid by a factored contribution
// score, keeps the intersection of the top-N_s rows and top-N_s columns
// (N_s^2 tokens), and attends from every query to that pruned set only.
// Queries and keys are token-wise L2-normalised, so logits are cosines in
// [-1, 1] and no 1/sqrt(D_h) temperature is applied.
#pragma once

#include <functional>
#include <string>
#include <vector>

#include "ittr/layers.hpp"

namespace ittr {

enum class AttentionVariant { dense, dpsa };

std::string to_string(AttentionVariant v);
AttentionVariant parse_attention_variant(const std::string& s);

struct AttentionConfig {
  Index channels = 256;
  Index heads = 8;
  Index sparse_tokens = 8;  // N_s: rows and columns kept; 0 picks floor(sqrt(min(H, W)))
  bool l2_normalize = true;
  AttentionVariant variant = AttentionVariant::dpsa;
  double eps = 1e-12;

  Index head_dim() const { return channels / heads; }
  Index resolved_sparse_tokens(Index height, Index width) const;
  /// Copy with sparse_tokens resolved for an H x W grid.
  AttentionConfig resolved(Index height, Index width) const;
  /// Throws ConfigError. `height`/`width` <= 0 skips the grid checks.
  void validate(Index height = 0, Index width = 0) const;
};

/// Row and column contribution scores of one head plus the selected indices.
template <typename T>
struct ScoreVectors {
  std::vector<T> row;  // [H]
  std::vector<T> col;  // [W]
  std::vector<Index> row_index;
  std::vector<Index> col_index;
};

/// Receives diagnostics (e.g. scoring unnormalised tokens). Defaults to stderr.
using DiagnosticSink = std::function<void(const std::string&)>;
void set_diagnostic_sink(DiagnosticSink sink);
void emit_diagnostic(const std::string& message);

/// Score_r[r] = (sum_i q_i) . (sum_j k_rj), Score_c[c] = (sum_i q_i) . (sum_j k_jc).
/// q: N x D row-major, k: H x W x D row-major. Never forms the N x N map.
/// Emits a diagnostic (once per thread) when `normalized` is false.
template <typename T>
ScoreVectors<T> contribution_scores(std::span<const T> q, std::span<const T> k, Index height,
                                    Index width, Index dim, bool normalized = true);

/// Indices of the `count` largest scores, descending, ties to the lower index.
template <typename T>
std::vector<Index> select_topk(std::span<const T> scores, Index count);

/// Holds DPSA selections fixed across repeated forward passes (gradient
/// checks treat selection as a constant). Install with SelectionScope.
class FrozenSelection {
 public:
  /// Restarts the per-pass call cursor; after the first pass, selections replay.
  void rewind();
  bool recorded() const { return frozen_; }

  std::vector<std::vector<Index>> next(const std::function<std::vector<std::vector<Index>>()>& compute);

 private:
  std::vector<std::vector<std::vector<Index>>> calls_;
  size_t cursor_ = 0;
  bool frozen_ = false;
};

class SelectionScope {
 public:
  explicit SelectionScope(FrozenSelection& sel);
  ~SelectionScope();
  SelectionScope(const SelectionScope&) = delete;
  SelectionScope& operator=(const SelectionScope&) = delete;

 private:
  FrozenSelection* previous_;
};

template <typename T>
struct QkvHeads {
  Tensor<T> q, k, v;  // each [B*heads x N x D_h]
};

/// Projection weights shared by both variants. `out` has a bias only for dense.
template <typename T>
struct AttentionWeights {
  Linear<T> wq, wk, wv, out;

  AttentionWeights() = default;
  AttentionWeights(const AttentionConfig& cfg, Rng& rng);
  void collect(const std::string& prefix, NamedTensors<T>& out_list) const;
};

/// Optional capture of DPSA internals for inspection.
template <typename T>
struct DpsaTrace {
  std::vector<ScoreVectors<T>> scores;  // one per (sample, head)
  Tensor<T> logits;                     // [B*heads x N x N_s^2]
  Tensor<T> attention;                  // softmax(logits)
};

/// tokens: [B x N x C] -> per-head Q, K, V (Q and K L2-normalised if configured).
template <typename T>
QkvHeads<T> qkv_project(const Tensor<T>& tokens, const AttentionWeights<T>& w,
                        const AttentionConfig& cfg);

/// [B x N x C] -> [B x N x C]: softmax(QK^T / sqrt(D_h)) V per head, then W + b.
template <typename T>
Tensor<T> dense_mhsa(const Tensor<T>& tokens, const AttentionWeights<T>& w,
                     const AttentionConfig& cfg);

/// tokens: [B x H*W x C] on an H x W grid -> [B x H*W x C].
template <typename T>
Tensor<T> dpsa(const Tensor<T>& tokens, Index height, Index width, const AttentionWeights<T>& w,
               const AttentionConfig& cfg, DpsaTrace<T>* trace = nullptr);

/// MACs of Q K^T plus A V for one head over N queries.
std::int64_t attention_map_macs_per_head(const AttentionConfig& cfg, Index tokens);

/// Spatial self-attention module over [B x C x H x W] feature maps.
template <typename T>
class SelfAttention {
 public:
  SelfAttention() = default;
  SelfAttention(const AttentionConfig& cfg, Rng& rng);

  Tensor<T> operator()(const Tensor<T>& x) const;

  Cost cost(Index height, Index width) const;
  void collect(const std::string& prefix, NamedTensors<T>& out) const { weights.collect(prefix, out); }
  const AttentionConfig& config() const { return cfg_; }

  AttentionWeights<T> weights;

 private:
  AttentionConfig cfg_;
};

}  // namespace ittr
