#include "ittr/attention.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <numeric>

namespace ittr {

std::string to_string(AttentionVariant v) { return v == AttentionVariant::dense ? "dense" : "dpsa"; }

AttentionVariant parse_attention_variant(const std::string& s) {
  if (s == "dense") return AttentionVariant::dense;
  if (s == "dpsa") return AttentionVariant::dpsa;
  throw ConfigError("unknown attention variant '" + s + "' (expected dense or dpsa)");
}

void AttentionConfig::validate(Index height, Index width) const {
  if (channels <= 0 || heads <= 0 || channels % heads != 0)
    throw ConfigError("attention: channels " + std::to_string(channels) +
                      " must be a positive multiple of heads " + std::to_string(heads));
  if (sparse_tokens < 0) throw ConfigError("attention: sparse token budget must be >= 1 (or 0 for auto)");
  if (!(eps > 0)) throw ConfigError("attention: eps must be positive");
  if (variant == AttentionVariant::dpsa && height > 0 && width > 0 &&
      resolved_sparse_tokens(height, width) > std::min(height, width))
    throw ConfigError("attention: sparse token budget " + std::to_string(sparse_tokens) +
                      " exceeds grid " + std::to_string(height) + "x" + std::to_string(width));
}

Index AttentionConfig::resolved_sparse_tokens(Index height, Index width) const {
  if (sparse_tokens > 0) return sparse_tokens;
  const auto side = static_cast<Index>(std::floor(std::sqrt(static_cast<double>(std::min(height, width)))));
  return std::max<Index>(1, side);
}

AttentionConfig AttentionConfig::resolved(Index height, Index width) const {
  AttentionConfig c = *this;
  c.sparse_tokens = resolved_sparse_tokens(height, width);
  return c;
}

namespace {

DiagnosticSink& sink() {
  static DiagnosticSink s = [](const std::string& m) { std::cerr << "ittr: " << m << '\n'; };
  return s;
}

thread_local FrozenSelection* t_selection = nullptr;

template <typename T>
Tensor<T> split_heads(const Tensor<T>& t, Index heads) {
  const Index b = t.dim(0), n = t.dim(1), c = t.dim(2);
  return reshape(permute(reshape(t, {b, n, heads, c / heads}), {0, 2, 1, 3}),
                 {b * heads, n, c / heads});
}

template <typename T>
Tensor<T> merge_heads(const Tensor<T>& t, Index batch, Index heads) {
  const Index n = t.dim(1), d = t.dim(2);
  return reshape(permute(reshape(t, {batch, heads, n, d}), {0, 2, 1, 3}), {batch, n, heads * d});
}

}  // namespace

void set_diagnostic_sink(DiagnosticSink s) { sink() = std::move(s); }
void emit_diagnostic(const std::string& message) {
  if (sink()) sink()(message);
}

template <typename T>
ScoreVectors<T> contribution_scores(std::span<const T> q, std::span<const T> k, Index height,
                                    Index width, Index dim, bool normalized) {
  if (static_cast<Index>(k.size()) != height * width * dim || dim <= 0 ||
      static_cast<Index>(q.size()) % dim != 0)
    throw ShapeError("contribution_scores: key grid " + std::to_string(k.size()) +
                     " values does not match " + std::to_string(height) + "x" +
                     std::to_string(width) + "x" + std::to_string(dim));
  if (!normalized) {
    thread_local bool warned = false;
    if (!warned) {
      warned = true;
      emit_diagnostic(
          "contribution scores computed on tokens without L2 normalisation; the row/column "
          "ranking is not bounded and may be dominated by large-norm tokens");
    }
  }
  const Index n = static_cast<Index>(q.size()) / dim;
  std::vector<double> qsum(static_cast<size_t>(dim), 0.0);
  for (Index i = 0; i < n; ++i)
    for (Index d = 0; d < dim; ++d) qsum[d] += q[i * dim + d];

  ScoreVectors<T> s;
  s.row.assign(static_cast<size_t>(height), T(0));
  s.col.assign(static_cast<size_t>(width), T(0));
  std::vector<double> colsum(static_cast<size_t>(width * dim), 0.0);
  std::vector<double> rowsum(static_cast<size_t>(dim));
  for (Index r = 0; r < height; ++r) {
    std::fill(rowsum.begin(), rowsum.end(), 0.0);
    for (Index c = 0; c < width; ++c) {
      const T* tok = k.data() + (r * width + c) * dim;
      for (Index d = 0; d < dim; ++d) {
        rowsum[d] += tok[d];
        colsum[c * dim + d] += tok[d];
      }
    }
    double acc = 0.0;
    for (Index d = 0; d < dim; ++d) acc += qsum[d] * rowsum[d];
    s.row[r] = static_cast<T>(acc);
  }
  for (Index c = 0; c < width; ++c) {
    double acc = 0.0;
    for (Index d = 0; d < dim; ++d) acc += qsum[d] * colsum[c * dim + d];
    s.col[c] = static_cast<T>(acc);
  }
  return s;
}

template <typename T>
std::vector<Index> select_topk(std::span<const T> scores, Index count) {
  const Index n = static_cast<Index>(scores.size());
  if (count < 1 || count > n)
    throw ConfigError("select_topk: requested " + std::to_string(count) + " of " +
                      std::to_string(n) + " scores");
  std::vector<Index> idx(static_cast<size_t>(n));
  std::iota(idx.begin(), idx.end(), Index{0});
  std::partial_sort(idx.begin(), idx.begin() + count, idx.end(), [&](Index a, Index b) {
    return scores[a] > scores[b] || (scores[a] == scores[b] && a < b);
  });
  idx.resize(static_cast<size_t>(count));
  return idx;
}

void FrozenSelection::rewind() {
  if (!calls_.empty()) frozen_ = true;
  cursor_ = 0;
}

std::vector<std::vector<Index>> FrozenSelection::next(
    const std::function<std::vector<std::vector<Index>>()>& compute) {
  if (!frozen_) {
    calls_.push_back(compute());
    return calls_.back();
  }
  if (cursor_ >= calls_.size())
    throw ContractError("frozen selection replayed more DPSA calls than were recorded");
  return calls_[cursor_++];
}

SelectionScope::SelectionScope(FrozenSelection& sel) : previous_(t_selection) { t_selection = &sel; }
SelectionScope::~SelectionScope() { t_selection = previous_; }

template <typename T>
AttentionWeights<T>::AttentionWeights(const AttentionConfig& cfg, Rng& rng)
    : wq(cfg.channels, cfg.channels, false, rng),
      wk(cfg.channels, cfg.channels, false, rng),
      wv(cfg.channels, cfg.channels, false, rng),
      out(cfg.channels, cfg.channels, cfg.variant == AttentionVariant::dense, rng) {}

template <typename T>
void AttentionWeights<T>::collect(const std::string& prefix, NamedTensors<T>& out_list) const {
  wq.collect(prefix + ".q", out_list);
  wk.collect(prefix + ".k", out_list);
  wv.collect(prefix + ".v", out_list);
  out.collect(prefix + ".out", out_list);
}

template <typename T>
QkvHeads<T> qkv_project(const Tensor<T>& tokens, const AttentionWeights<T>& w,
                        const AttentionConfig& cfg) {
  cfg.validate();
  if (tokens.rank() != 3 || tokens.dim(2) != cfg.channels)
    throw ShapeError("qkv_project: tokens " + to_string(tokens.shape()) + " do not have " +
                     std::to_string(cfg.channels) + " channels");
  QkvHeads<T> h{split_heads(w.wq(tokens), cfg.heads), split_heads(w.wk(tokens), cfg.heads),
                split_heads(w.wv(tokens), cfg.heads)};
  if (cfg.l2_normalize) {
    h.q = l2_normalize_tokens(h.q, static_cast<T>(cfg.eps));
    h.k = l2_normalize_tokens(h.k, static_cast<T>(cfg.eps));
  }
  return h;
}

template <typename T>
Tensor<T> dense_mhsa(const Tensor<T>& tokens, const AttentionWeights<T>& w,
                     const AttentionConfig& cfg) {
  const auto h = qkv_project(tokens, w, cfg);
  const T temperature = T(1) / std::sqrt(static_cast<T>(cfg.head_dim()));
  const auto attn = softmax(scale(matmul(h.q, transpose_last2(h.k)), temperature), -1);
  return w.out(merge_heads(matmul(attn, h.v), tokens.dim(0), cfg.heads));
}

template <typename T>
Tensor<T> dpsa(const Tensor<T>& tokens, Index height, Index width, const AttentionWeights<T>& w,
               const AttentionConfig& cfg, DpsaTrace<T>* trace) {
  if (cfg.variant != AttentionVariant::dpsa)
    throw ConfigError("dpsa: attention config variant is " + to_string(cfg.variant));
  cfg.validate(height, width);
  if (tokens.rank() != 3 || tokens.dim(1) != height * width)
    throw ShapeError("dpsa: tokens " + to_string(tokens.shape()) + " are not a " +
                     std::to_string(height) + "x" + std::to_string(width) + " grid");
  const auto h = qkv_project(tokens, w, cfg);
  const Index groups = h.q.dim(0), n = h.q.dim(1), dh = h.q.dim(2);
  const Index ns = cfg.resolved_sparse_tokens(height, width);

  std::vector<ScoreVectors<T>> scores;
  auto compute = [&] {
    std::vector<std::vector<Index>> kept(static_cast<size_t>(groups));
    for (Index g = 0; g < groups; ++g) {
      auto s = contribution_scores<T>(h.q.data().subspan(g * n * dh, n * dh),
                                      h.k.data().subspan(g * n * dh, n * dh), height, width, dh,
                                      cfg.l2_normalize);
      s.row_index = select_topk<T>(s.row, ns);
      s.col_index = select_topk<T>(s.col, ns);
      kept[g].reserve(static_cast<size_t>(ns * ns));
      for (Index r : s.row_index)
        for (Index c : s.col_index) kept[g].push_back(r * width + c);
      if (trace) scores.push_back(std::move(s));
    }
    return kept;
  };
  const auto kept = t_selection ? t_selection->next(compute) : compute();

  const auto k_s = gather_rows(h.k, kept);
  const auto v_s = gather_rows(h.v, kept);
  const auto logits = matmul(h.q, transpose_last2(k_s));
  const auto attn = softmax(logits, -1);
  auto out = w.out(merge_heads(matmul(attn, v_s), tokens.dim(0), cfg.heads));
  if (trace) {
    trace->scores = std::move(scores);
    trace->logits = logits;
    trace->attention = attn;
  }
  return out;
}

std::int64_t attention_map_macs_per_head(const AttentionConfig& cfg, Index tokens) {
  const Index kept = cfg.variant == AttentionVariant::dense ? tokens
                                                            : cfg.sparse_tokens * cfg.sparse_tokens;
  return 2 * tokens * kept * cfg.head_dim();
}

template <typename T>
SelfAttention<T>::SelfAttention(const AttentionConfig& cfg, Rng& rng) : weights(cfg, rng), cfg_(cfg) {
  cfg.validate();
}

template <typename T>
Tensor<T> SelfAttention<T>::operator()(const Tensor<T>& x) const {
  const Index h = x.dim(2), w = x.dim(3);
  const auto tokens = to_tokens(x);
  const auto y = cfg_.variant == AttentionVariant::dense ? dense_mhsa(tokens, weights, cfg_)
                                                         : dpsa(tokens, h, w, weights, cfg_);
  return from_tokens(y, h, w);
}

template <typename T>
Cost SelfAttention<T>::cost(Index height, Index width) const {
  const Index n = height * width;
  const AttentionConfig cfg = cfg_.resolved(height, width);
  Cost c = weights.wq.cost(n) + weights.wk.cost(n) + weights.wv.cost(n) + weights.out.cost(n);
  c.macs += cfg.heads * attention_map_macs_per_head(cfg, n);
  if (cfg.variant == AttentionVariant::dpsa) c.macs += cfg.heads * (height + width) * cfg.head_dim();
  return c;
}

#define ITTR_INSTANTIATE(T)                                                                      \
  template ScoreVectors<T> contribution_scores(std::span<const T>, std::span<const T>, Index,   \
                                               Index, Index, bool);                             \
  template std::vector<Index> select_topk(std::span<const T>, Index);                           \
  template struct AttentionWeights<T>;                                                          \
  template QkvHeads<T> qkv_project(const Tensor<T>&, const AttentionWeights<T>&,                 \
                                   const AttentionConfig&);                                     \
  template Tensor<T> dense_mhsa(const Tensor<T>&, const AttentionWeights<T>&,                    \
                                const AttentionConfig&);                                        \
  template Tensor<T> dpsa(const Tensor<T>&, Index, Index, const AttentionWeights<T>&,            \
                          const AttentionConfig&, DpsaTrace<T>*);                               \
  template class SelfAttention<T>;
ITTR_INSTANTIATE(float)
ITTR_INSTANTIATE(double)
#undef ITTR_INSTANTIATE

}  // namespace ittr
