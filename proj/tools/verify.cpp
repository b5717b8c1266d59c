#include "verify.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <iomanip>

#include "ittr/gradcheck.hpp"
#include "ittr/metrics.hpp"
#include "ittr/objectives.hpp"
#include "ittr/ops.hpp"

namespace ittr::app {

namespace {

std::string bound(const char* op, double limit) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "%s %g", op, limit);
  return buf;
}

PropertyResult below(std::string group, std::string name, double measured, double limit) {
  return {std::move(group), std::move(name), bound("<", limit), measured, measured < limit};
}

PropertyResult above(std::string group, std::string name, double measured, double limit) {
  return {std::move(group), std::move(name), bound(">", limit), measured, measured > limit};
}

double l2(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

void normalize_rows(std::vector<double>& v, Index dim) {
  for (size_t r = 0; r < v.size() / static_cast<size_t>(dim); ++r) {
    double n = 0.0;
    for (Index d = 0; d < dim; ++d) n += v[r * dim + d] * v[r * dim + d];
    n = std::max(std::sqrt(n), 1e-12);
    for (Index d = 0; d < dim; ++d) v[r * dim + d] /= n;
  }
}

template <typename T>
Tensor<T> scaled_tokens(Shape shape, Rng& rng, double lo, double hi) {
  const Index dim = shape.back();
  Tensor<T> t(shape);
  auto d = t.mutable_data();
  for (Index r = 0; r < t.numel() / dim; ++r) {
    const double s = uniform(rng, lo, hi);
    for (Index c = 0; c < dim; ++c) d[r * dim + c] = static_cast<T>(s * normal01(rng));
  }
  return t;
}

// Multi-head cosine attention straight from the definition, in double.
template <typename T>
std::vector<double> cosine_attention_oracle(const Tensor<T>& tokens, const AttentionWeights<T>& w, Index heads) {
  const Index B = tokens.dim(0), N = tokens.dim(1), C = tokens.dim(2), D = C / heads;
  const std::vector<double> x(tokens.data().begin(), tokens.data().end());
  auto project = [&](const Linear<T>& l, const std::vector<double>& in) {
    std::vector<double> y(static_cast<size_t>(B * N * C), 0.0);
    for (Index t = 0; t < B * N; ++t)
      for (Index o = 0; o < C; ++o) {
        double acc = l.bias.defined() ? double(l.bias.data()[o]) : 0.0;
        for (Index i = 0; i < C; ++i) acc += in[t * C + i] * double(l.weight.data()[o * C + i]);
        y[t * C + o] = acc;
      }
    return y;
  };
  auto q = project(w.wq, x), k = project(w.wk, x), v = project(w.wv, x);
  normalize_rows(q, D);
  normalize_rows(k, D);
  std::vector<double> merged(static_cast<size_t>(B * N * C), 0.0);
  std::vector<double> p(static_cast<size_t>(N));
  for (Index b = 0; b < B; ++b)
    for (Index h = 0; h < heads; ++h)
      for (Index i = 0; i < N; ++i) {
        for (Index j = 0; j < N; ++j) {
          double acc = 0.0;
          for (Index d = 0; d < D; ++d) acc += q[(b * N + i) * C + h * D + d] * k[(b * N + j) * C + h * D + d];
          p[j] = acc;
        }
        const double mx = *std::max_element(p.begin(), p.end());
        double z = 0.0;
        for (double& e : p) z += (e = std::exp(e - mx));
        for (Index j = 0; j < N; ++j)
          for (Index d = 0; d < D; ++d)
            merged[(b * N + i) * C + h * D + d] += p[j] / z * v[(b * N + j) * C + h * D + d];
      }
  return project(w.out, merged);
}

AttentionConfig small_attention(Index channels, Index heads, Index ns, AttentionVariant variant) {
  AttentionConfig cfg;
  cfg.channels = channels;
  cfg.heads = heads;
  cfg.sparse_tokens = ns;
  cfg.variant = variant;
  return cfg;
}

template <typename T>
std::vector<Tensor<T>> trainable(const NamedTensors<T>& params) {
  std::vector<Tensor<T>> out;
  for (auto [_, p] : params) out.push_back(p.set_requires_grad());
  return out;
}

PropertyResult gradient_result(const std::string& name, const GradCheckResult& r, double tol) {
  return below("gradients", name, r.rel_error, tol);
}

FeatureStats stats(Eigen::VectorXd mu, Eigen::MatrixXd sigma) {
  FeatureStats s;
  s.mu = std::move(mu);
  s.sigma = std::move(sigma);
  s.n = 100;
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

template <typename T>
Tensor<T> one_hot(Index groups, Index patches, Index dim) {
  Tensor<T> t({groups, patches, dim});
  auto d = t.mutable_data();
  for (Index g = 0; g < groups; ++g)
    for (Index s = 0; s < patches; ++s) d[(g * patches + s) * dim + s] = T(1);
  return t;
}

}  // namespace

std::vector<PropertyResult> factorization_properties(const SuiteOptions& opts) {
  Rng rng = derive_rng(opts.seed, {0xFAC7});
  double worst = 0.0;
  for (int inst = 0; inst < 100; ++inst) {
    const Index h = 1 + static_cast<Index>(uniform_index(rng, 8));
    const Index w = 1 + static_cast<Index>(uniform_index(rng, 8));
    const Index dim = 1 + static_cast<Index>(uniform_index(rng, 16));
    const Index n = h * w;
    const auto q = scaled_tokens<double>({1, n, dim}, rng, 0.2, 5.0);
    const auto k = scaled_tokens<double>({1, n, dim}, rng, 0.2, 5.0);
    const auto qn = opts.break_l2norm ? q : l2_normalize_tokens(q);
    const auto kn = opts.break_l2norm ? k : l2_normalize_tokens(k);
    const auto got = contribution_scores<double>(qn.data(), kn.data(), h, w, dim, true);

    std::vector<double> qd(q.data().begin(), q.data().end()), kd(k.data().begin(), k.data().end());
    normalize_rows(qd, dim);
    normalize_rows(kd, dim);
    std::vector<double> want(static_cast<size_t>(h + w), 0.0);
    for (Index i = 0; i < n; ++i)
      for (Index r = 0; r < h; ++r)
        for (Index c = 0; c < w; ++c) {
          double dot = 0.0;
          for (Index e = 0; e < dim; ++e) dot += qd[i * dim + e] * kd[(r * w + c) * dim + e];
          want[r] += dot;
          want[h + c] += dot;
        }
    std::vector<double> diff(want.size());
    for (Index r = 0; r < h; ++r) diff[r] = got.row[r] - want[r];
    for (Index c = 0; c < w; ++c) diff[h + c] = got.col[c] - want[h + c];
    worst = std::max(worst, l2(diff) / std::max(l2(want), 1e-12));
  }
  return {below("factorization", "factored row/column scores vs brute-force sums (100 grids up to 8x8)", worst,
                1e-5)};
}

std::vector<PropertyResult> oracle_properties(const SuiteOptions& opts) {
  Rng rng = derive_rng(opts.seed, {0x0AC1});
  double worst = 0.0;
  for (Index side : {2, 4, 8}) {
    const auto cfg = small_attention(8, 2, side, AttentionVariant::dpsa);
    const AttentionWeights<float> w(cfg, rng);
    const auto x = random_tensor<float>({2, side * side, 8}, rng, -1, 1, false);
    const auto want = cosine_attention_oracle(x, w, cfg.heads);
    const auto got = dpsa(x, side, side, w, cfg);
    for (size_t i = 0; i < want.size(); ++i) worst = std::max(worst, std::abs(double(got.data()[i]) - want[i]));
  }
  return {below("oracle", "dpsa with N_s = H = W vs dense cosine attention oracle (max abs)", worst, 1e-5)};
}

std::vector<PropertyResult> logit_range_properties(const SuiteOptions& opts) {
  Rng rng = derive_rng(opts.seed, {0x1061});
  double widest = 0.0;
  AttentionWeights<float> w;
  const auto cfg = small_attention(8, 2, 0, AttentionVariant::dpsa);
  for (int set = 0; set < 1000; ++set) {
    if (set % 50 == 0) w = AttentionWeights<float>(cfg, rng);
    const Index h = 2 + static_cast<Index>(uniform_index(rng, 5));
    const Index wd = 2 + static_cast<Index>(uniform_index(rng, 5));
    const auto x = scaled_tokens<float>({1, h * wd, 8}, rng, 0.01, 100.0);
    DpsaTrace<float> trace;
    dpsa(x, h, wd, w, cfg.resolved(h, wd), &trace);
    for (float l : trace.logits.data()) widest = std::max(widest, double(std::abs(l)));
  }
  auto raw = cfg;
  raw.l2_normalize = false;
  const AttentionWeights<float> wr(raw, rng);
  const auto x = scaled_tokens<float>({1, 16, 8}, rng, 20.0, 40.0);
  DpsaTrace<float> trace;
  dpsa(x, 4, 4, wr, raw.resolved(4, 4), &trace);
  double raw_max = 0.0;
  for (float l : trace.logits.data()) raw_max = std::max(raw_max, double(std::abs(l)));
  return {below("logit range", "max |logit| with L2 normalisation (1000 token sets)", widest, 1.0 + 1e-5),
          above("logit range", "max |logit| without L2 normalisation (constructed input)", raw_max, 10.0)};
}

std::vector<PropertyResult> complexity_properties(const SuiteOptions&) {
  double mismatches = 0;
  for (Index channels : {8, 64, 256})
    for (Index heads : {1, 2, 8})
      for (Index side : {4, 8, 16, 64}) {
        const Index n = side * side, ns = static_cast<Index>(std::floor(std::sqrt(double(side))));
        const auto sparse = small_attention(channels, heads, ns, AttentionVariant::dpsa);
        const auto dense = small_attention(channels, heads, ns, AttentionVariant::dense);
        const Index dh = channels / heads;
        if (attention_map_macs_per_head(sparse, n) != 2 * n * ns * ns * dh) ++mismatches;
        if (attention_map_macs_per_head(dense, n) != 2 * n * n * dh) ++mismatches;
      }
  const auto sparse = small_attention(256, 8, 8, AttentionVariant::dpsa);
  const auto dense = small_attention(256, 8, 8, AttentionVariant::dense);
  const auto a = attention_map_macs_per_head(sparse, 4096), b = attention_map_macs_per_head(dense, 4096);
  PropertyResult ratio{"complexity", "dpsa/dense attention-map MACs at 64x64, N_s = 8", "== 1/64",
                       double(a) / double(b), b == 64 * a};
  return {PropertyResult{"complexity", "per-head map MACs equal 2 N N_s^2 D_h and 2 N^2 D_h (mismatches)", "== 0",
                         mismatches, mismatches == 0},
          ratio};
}

std::vector<PropertyResult> gradient_properties(const SuiteOptions& opts) {
  Rng rng = derive_rng(opts.seed, {0x6AAD});
  constexpr double tol = 1e-3;
  std::vector<PropertyResult> out;
  {
    const Linear<float> l(5, 4, true, rng);
    auto in = trainable(NamedTensors<float>{{"w", l.weight}, {"b", l.bias}});
    const auto x = random_tensor<float>({2, 3, 5}, rng);
    in.push_back(x);
    out.push_back(gradient_result("linear", check_gradients<float>([&] { return l(x); }, in), tol));
  }
  {
    const Conv2d<float> c({.in_channels = 2, .out_channels = 3, .kernel = 3, .stride = 2, .padding = 1}, rng);
    auto in = trainable(NamedTensors<float>{{"w", c.weight}, {"b", c.bias}});
    const auto x = random_tensor<float>({1, 2, 5, 5}, rng);
    in.push_back(x);
    out.push_back(gradient_result("conv2d 3x3 stride 2", check_gradients<float>([&] { return c(x); }, in), tol));
  }
  {
    const Conv2d<float> c({.in_channels = 4, .out_channels = 4, .kernel = 3, .padding = 1, .groups = 4}, rng);
    auto in = trainable(NamedTensors<float>{{"w", c.weight}, {"b", c.bias}});
    const auto x = random_tensor<float>({1, 4, 4, 4}, rng);
    in.push_back(x);
    out.push_back(gradient_result("depthwise conv2d", check_gradients<float>([&] { return c(x); }, in), tol));
  }
  {
    InstanceNorm2d<float> n(3);
    fill_uniform(n.gamma, 1.0, rng);
    fill_uniform(n.beta, 1.0, rng);
    auto in = trainable(NamedTensors<float>{{"g", n.gamma}, {"b", n.beta}});
    const auto x = random_tensor<float>({2, 3, 3, 4}, rng);
    in.push_back(x);
    out.push_back(gradient_result("instance norm", check_gradients<float>([&] { return n(x); }, in), tol));
  }
  {
    const auto x = random_tensor<float>({2, 3, 4}, rng, -2, 2);
    out.push_back(gradient_result("gelu", check_gradients<float>([&] { return gelu(x); }, {x}), tol));
    out.push_back(gradient_result("tanh", check_gradients<float>([&] { return ittr::tanh(x); }, {x}), tol));
    out.push_back(gradient_result("softmax", check_gradients<float>([&] { return softmax(x, -1); }, {x}), tol));
    out.push_back(
        gradient_result("l2 normalise", check_gradients<float>([&] { return l2_normalize_tokens(x); }, {x}), tol));
  }
  {
    const auto x = random_tensor<float>({1, 2, 3, 3}, rng);
    out.push_back(
        gradient_result("nearest upsample", check_gradients<float>([&] { return upsample_nearest2x(x); }, {x}), tol));
  }
  for (auto variant : {AttentionVariant::dense, AttentionVariant::dpsa}) {
    const auto cfg = small_attention(8, 2, 2, variant);
    const AttentionWeights<float> w(cfg, rng);
    NamedTensors<float> params;
    w.collect("", params);
    auto in = trainable(params);
    const auto x = random_tensor<float>({1, 16, 8}, rng);
    in.push_back(x);
    FrozenSelection sel;
    SelectionScope scope(sel);
    const auto r = check_gradients<float>(
        [&] {
          sel.rewind();
          return variant == AttentionVariant::dense ? dense_mhsa(x, w, cfg) : dpsa(x, 4, 4, w, cfg);
        },
        in);
    out.push_back(gradient_result(to_string(variant) + " attention (selection fixed)", r, tol));
  }
  {
    HpbConfig cfg;
    cfg.channels = 8;
    cfg.attention = small_attention(8, 2, 0, AttentionVariant::dpsa);
    cfg.ffn_expansion = 2;
    const HybridPerceptionBlock<float> block(cfg, rng);
    NamedTensors<float> params;
    block.collect("", params);
    auto in = trainable(params);
    const auto x = random_tensor<float>({1, 8, 4, 4}, rng);
    in.push_back(x);
    FrozenSelection sel;
    SelectionScope scope(sel);
    const auto r = check_gradients<float>(
        [&] {
          sel.rewind();
          return block(x);
        },
        in, 7, 1e-3, 40);
    out.push_back(gradient_result("hybrid perception block", r, tol));
  }
  {
    GeneratorSpec spec;
    spec.channels = 16;
    spec.heads = 2;
    spec.ffn_expansion = 2;
    const Generator<float> g(spec.finalize(), rng);
    auto params = g.parameters();
    std::vector<Tensor<float>> probe;
    for (int i = 0; i < 8; ++i) probe.push_back(params[uniform_index(rng, params.size())].second.set_requires_grad());
    const auto x = random_tensor<float>({1, 3, 16, 16}, rng, -1, 1, false);
    FrozenSelection sel;
    SelectionScope scope(sel);
    const auto r = check_gradients<float>(
        [&] {
          sel.rewind();
          return g.translate(x);
        },
        probe, 12, 1e-3, 1);
    out.push_back(gradient_result("generator end to end, 16x16 spot check", r, 1e-2));
  }
  return out;
}

std::vector<PropertyResult> objective_properties(const SuiteOptions&) {
  const Tensor<float> fake({4}, {0.5f, -1.0f, 2.0f, 1.0f});
  const Tensor<float> real({4}, {1.0f, 0.0f, 0.5f, 3.0f});
  const double g_err = std::abs(double(lsgan_generator_loss(fake).item()) - 1.3125);
  const double d_err = std::abs(double(lsgan_discriminator_loss(real, fake).item()) - 2.875);
  double nce_err = 0.0;
  for (double tau : {0.07, 1.0})
    for (Index patches : {2, 5, 16}) {
      const double e1 = std::exp(1.0 / tau);
      const double want = -std::log(e1 / (e1 + double(patches - 1)));
      const auto ed = one_hot<double>(3, patches, patches + 2);
      const auto ef = one_hot<float>(3, patches, patches + 2);
      nce_err = std::max(nce_err, std::abs(patchnce_contrast(ed, ed, tau).item() - want));
      nce_err = std::max(nce_err, std::abs(double(patchnce_contrast(ef, ef, tau).item()) - want));
    }
  return {PropertyResult{"objectives", "LSGAN generator loss vs hand value 1.3125", "== 0", g_err, g_err == 0.0},
          PropertyResult{"objectives", "LSGAN discriminator loss vs hand value 2.875", "== 0", d_err, d_err == 0.0},
          below("objectives", "PatchNCE vs -log(e^(1/tau)/(e^(1/tau)+N)), tau in {0.07, 1}", nce_err, 1e-6)};
}

std::vector<PropertyResult> frechet_properties(const SuiteOptions& opts) {
  Rng rng = derive_rng(opts.seed, {0xF1D});
  double same = 0.0, shift = 0.0, commuting = 0.0, symmetry = 0.0;
  for (Index d : {1, 4, 16, 64}) {
    const Eigen::MatrixXd id = Eigen::MatrixXd::Identity(d, d);
    const Eigen::VectorXd zero = Eigen::VectorXd::Zero(d);
    const auto s = stats(random_vector(d, rng), random_spd(d, rng));
    same = std::max(same, frechet_distance(s, s));
    const Eigen::VectorXd mu = random_vector(d, rng), v = random_vector(d, rng);
    shift = std::max(shift, std::abs(frechet_distance(stats(mu, id), stats(mu + v, id)) - v.squaredNorm()));
    commuting = std::max(commuting, std::abs(frechet_distance(stats(zero, 4.0 * id), stats(zero, id)) - double(d)));
    const auto a = stats(random_vector(d, rng), random_spd(d, rng));
    const auto b = stats(random_vector(d, rng), random_spd(d, rng));
    symmetry = std::max(symmetry, std::abs(frechet_distance(a, b) - frechet_distance(b, a)));
  }
  {
    const Index d = 12;
    Eigen::VectorXd ea(d), eb(d);
    for (Index i = 0; i < d; ++i) {
      ea[i] = uniform(rng, 0.1, 5.0);
      eb[i] = uniform(rng, 0.1, 5.0);
    }
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(random_spd(d, rng));
    const Eigen::MatrixXd q = qr.householderQ();
    const Eigen::VectorXd ma = random_vector(d, rng), mb = random_vector(d, rng);
    double want = (ma - mb).squaredNorm();
    for (Index i = 0; i < d; ++i) want += std::pow(std::sqrt(ea[i]) - std::sqrt(eb[i]), 2);
    const double got = frechet_distance(stats(ma, q * ea.asDiagonal() * q.transpose()),
                                        stats(mb, q * eb.asDiagonal() * q.transpose()));
    commuting = std::max(commuting, std::abs(got - want));
  }
  return {below("frechet", "identical statistics", same, 1e-6),
          below("frechet", "shifted identity covariances vs |v|^2", shift, 1e-6),
          below("frechet", "commuting covariances vs closed form", commuting, 1e-6),
          below("frechet", "symmetry |F(a,b) - F(b,a)|", symmetry, 1e-8)};
}

std::vector<PropertyResult> run_property_suite(const SuiteOptions& opts) {
  std::vector<PropertyResult> all;
  for (auto* group : {&factorization_properties, &oracle_properties, &logit_range_properties, &complexity_properties,
                      &gradient_properties, &objective_properties, &frechet_properties}) {
    auto part = (*group)(opts);
    all.insert(all.end(), part.begin(), part.end());
  }
  return all;
}

bool all_pass(const std::vector<PropertyResult>& results) {
  return std::all_of(results.begin(), results.end(), [](const PropertyResult& r) { return r.pass; });
}

void print_table(std::ostream& os, const std::vector<PropertyResult>& results) {
  size_t width = 8;
  for (const auto& r : results) width = std::max(width, r.group.size() + r.name.size() + 2);
  for (const auto& r : results) {
    os << (r.pass ? "PASS  " : "FAIL  ") << std::left << std::setw(static_cast<int>(width))
       << (r.group + ": " + r.name) << "  measured " << std::setw(12) << std::setprecision(4) << r.measured
       << "  tolerance " << r.tolerance << '\n';
  }
  const auto passed = std::count_if(results.begin(), results.end(), [](const PropertyResult& r) { return r.pass; });
  os << passed << "/" << results.size() << " properties passed\n";
}

}  // namespace ittr::app
