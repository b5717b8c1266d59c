#include "ittr/training.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <unordered_map>

#include "ittr/serialize.hpp"

namespace ittr {

namespace fs = std::filesystem;

// ---- Adam -------------------------------------------------------------------

template <typename T>
Adam<T>::Adam(NamedTensors<T> params, AdamConfig cfg) : params_(std::move(params)), cfg_(cfg) {
  if (!(cfg.beta1 >= 0.0 && cfg.beta1 < 1.0) || !(cfg.beta2 >= 0.0 && cfg.beta2 < 1.0))
    throw ConfigError("adam: betas must lie in [0, 1)");
  if (!(cfg.eps > 0.0)) throw ConfigError("adam: eps must be positive");
  for (const auto& [name, p] : params_) {
    m_.emplace_back(static_cast<size_t>(p.numel()), T(0));
    v_.emplace_back(static_cast<size_t>(p.numel()), T(0));
  }
}

template <typename T>
void Adam<T>::step(double lr) {
  ++t_;
  const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (size_t i = 0; i < params_.size(); ++i) {
    Tensor<T>& p = params_[i].second;
    const auto g = p.grad();
    auto value = p.mutable_data();
    auto& m = m_[i];
    auto& v = v_[i];
    for (size_t j = 0; j < value.size(); ++j) {
      const double gj = g.empty() ? 0.0 : static_cast<double>(g[j]);
      const double mj = cfg_.beta1 * m[j] + (1.0 - cfg_.beta1) * gj;
      const double vj = cfg_.beta2 * v[j] + (1.0 - cfg_.beta2) * gj * gj;
      m[j] = static_cast<T>(mj);
      v[j] = static_cast<T>(vj);
      const double update = lr * (mj / c1) / (std::sqrt(vj / c2) + cfg_.eps);
      value[j] = static_cast<T>(static_cast<double>(value[j]) - update);
    }
  }
}

template <typename T>
void Adam<T>::zero_grad() {
  for (auto& [name, p] : params_) p.zero_grad();
}

template <typename T>
void Adam<T>::collect_state(const std::string& prefix, NamedTensors<T>& out) const {
  for (size_t i = 0; i < params_.size(); ++i) {
    const auto& [name, p] = params_[i];
    out.emplace_back(prefix + "m." + name, Tensor<T>(p.shape(), m_[i]));
    out.emplace_back(prefix + "v." + name, Tensor<T>(p.shape(), v_[i]));
  }
  out.emplace_back(prefix + "t", Tensor<T>::scalar(static_cast<T>(t_)));
}

template <typename T>
void Adam<T>::load_state(const std::string& prefix, const NamedTensors<T>& archive) {
  std::unordered_map<std::string, const Tensor<T>*> index;
  for (const auto& [name, t] : archive) index.emplace(name, &t);
  auto fetch = [&](const std::string& key, const Shape& shape) -> const Tensor<T>& {
    const auto it = index.find(key);
    if (it == index.end()) throw FormatError("optimiser state lacks " + key);
    if (it->second->shape() != shape)
      throw FormatError("optimiser state " + key + " has shape " + to_string(it->second->shape()) +
                        ", expected " + to_string(shape));
    return *it->second;
  };
  for (size_t i = 0; i < params_.size(); ++i) {
    const auto& [name, p] = params_[i];
    const auto m = fetch(prefix + "m." + name, p.shape()).data();
    const auto v = fetch(prefix + "v." + name, p.shape()).data();
    m_[i].assign(m.begin(), m.end());
    v_[i].assign(v.begin(), v.end());
  }
  t_ = static_cast<std::int64_t>(std::llround(static_cast<double>(fetch(prefix + "t", Shape{}).item())));
}

// ---- config and schedule ----------------------------------------------------

double TrainConfig::total_epochs(Index domain_size) const {
  if (domain_size < 1) throw ConfigError("training domain is empty");
  return static_cast<double>(iterations) * static_cast<double>(batch) / static_cast<double>(domain_size);
}

double TrainConfig::resolved_constant_epochs(Index domain_size) const {
  return constant_epochs > 0.0 ? constant_epochs : 0.5 * total_epochs(domain_size);
}

void TrainConfig::validate() const {
  auto require = [](bool ok, const std::string& what) {
    if (!ok) throw ConfigError("train config: " + what);
  };
  require(std::isfinite(lr) && lr > 0.0, "lr must be positive");
  require(std::isfinite(constant_epochs) && constant_epochs >= 0.0, "constant_epochs must be >= 0");
  require(iterations >= 1, "iterations must be >= 1");
  require(batch >= 1, "batch must be >= 1");
  require(image_size >= 8, "image_size must be >= 8");
  require(train_size >= 1, "train_size must be >= 1");
  require(test_size >= 2, "test_size must be >= 2");
  require(disc_channels >= 1, "disc_channels must be >= 1");
  require(lambda_x >= 0.0 && lambda_y >= 0.0, "loss weights must be >= 0");
  require(nce.tau > 0.0, "nce tau must be positive");
  require(nce.num_patches >= 1, "nce num_patches must be >= 1");
  require(head_width >= 1, "head_width must be >= 1");
  require(adam.beta1 >= 0.0 && adam.beta1 < 1.0 && adam.beta2 >= 0.0 && adam.beta2 < 1.0,
          "adam betas must lie in [0, 1)");
  require(adam.eps > 0.0, "adam eps must be positive");
  require(checkpoint_every >= 0 && sample_every >= 0 && sample_count >= 0,
          "checkpoint/sample intervals must be >= 0");
}

double lr_at(double base_lr, double constant_epochs, double epoch) {
  if (!(constant_epochs > 0.0)) throw ConfigError("lr schedule: constant epochs must be positive");
  if (!(epoch >= 0.0) || epoch > 2.0 * constant_epochs)
    throw ConfigError("lr schedule: epoch " + std::to_string(epoch) + " outside [0, " +
                      std::to_string(2.0 * constant_epochs) + "]");
  if (epoch < constant_epochs) return base_lr;
  return base_lr * (2.0 * constant_epochs - epoch) / constant_epochs;
}

double lr_at(const TrainConfig& cfg, Index domain_size, double epoch) {
  return lr_at(cfg.lr, cfg.resolved_constant_epochs(domain_size), epoch);
}

// ---- state and step ---------------------------------------------------------

namespace {

template <typename T>
Generator<T> make_generator(const GeneratorSpec& spec, std::uint64_t seed) {
  Rng rng = derive_rng(seed, {0x6E4ULL});
  return Generator<T>(spec, rng);
}

template <typename T>
PatchGanDiscriminator<T> make_discriminator(Index base, std::uint64_t seed) {
  Rng rng = derive_rng(seed, {0xD15CULL});
  return PatchGanDiscriminator<T>(base, rng);
}

std::vector<Index> tap_channels(const GeneratorSpec& spec) {
  std::vector<Index> out;
  for (const Index tap : spec.feature_taps) out.push_back(tap == 0 ? spec.stem.back().out_channels : spec.channels);
  return out;
}

template <typename T>
class FreezeGuard {
 public:
  explicit FreezeGuard(const NamedTensors<T>& params) : params_(params) {
    for (auto& [name, p] : params_) p.set_requires_grad(false);
  }
  ~FreezeGuard() {
    for (auto& [name, p] : params_) p.set_requires_grad(true);
  }
  FreezeGuard(const FreezeGuard&) = delete;
  FreezeGuard& operator=(const FreezeGuard&) = delete;

 private:
  NamedTensors<T> params_;
};

std::string describe(const LossBundle& l) {
  std::ostringstream os;
  os << "loss_g=" << l.loss_g << " loss_nce_x=" << l.loss_nce_x << " loss_nce_y=" << l.loss_nce_y
     << " loss_d=" << l.loss_d;
  return os.str();
}

}  // namespace

template <typename T>
TrainState<T>::TrainState(const GeneratorSpec& spec, const TrainConfig& cfg)
    : generator(make_generator<T>(spec, cfg.seed)),
      discriminator(make_discriminator<T>(cfg.disc_channels, cfg.seed)),
      heads(derive_rng(cfg.seed, {0x4EADULL})(), cfg.head_width),
      seed(cfg.seed) {
  cfg.validate();
  heads.ensure(tap_channels(generator.spec()));
  opt_g = Adam<T>(generator_and_heads(), cfg.adam);
  NamedTensors<T> disc;
  discriminator.collect("D.", disc);
  opt_d = Adam<T>(std::move(disc), cfg.adam);
}

template <typename T>
NamedTensors<T> TrainState<T>::generator_and_heads() const {
  NamedTensors<T> out;
  generator.collect("G.", out);
  heads.collect("H.", out);
  return out;
}

template <typename T>
LossBundle train_step(TrainState<T>& state, const Tensor<T>& x_a, const Tensor<T>& y_b, const TrainConfig& cfg,
                      double lr) {
  const std::uint64_t it = state.iteration;
  Rng rng = derive_rng(state.seed, {0x5EEDULL, it});
  LossBundle values;
  try {
    const auto fake = state.generator.forward(x_a);

    state.opt_d.zero_grad();
    const Tensor<T> loss_d =
        lsgan_discriminator_loss(state.discriminator(y_b), state.discriminator(fake.image.detach()));
    values.loss_d = static_cast<double>(loss_d.item());
    if (!std::isfinite(values.loss_d)) throw NumericError(describe(values));
    loss_d.backward();
    state.opt_d.step(lr);

    state.opt_g.zero_grad();
    GeneratorObjective<T> obj;
    {
      FreezeGuard<T> frozen(state.opt_d.parameters());
      const Tensor<T> loss_g = lsgan_generator_loss(state.discriminator(fake.image));
      Tensor<T> nce_x, nce_y;
      if (cfg.lambda_x > 0.0)
        nce_x = patchnce_loss(fake.features, state.generator.encode(fake.image), state.heads, cfg.nce, rng);
      if (cfg.lambda_y > 0.0) {
        const auto idt = state.generator.forward(y_b);
        nce_y = patchnce_loss(idt.features, state.generator.encode(idt.image), state.heads, cfg.nce, rng);
      }
      obj = total_generator_objective(loss_g, nce_x, nce_y, cfg.lambda_x, cfg.lambda_y);
    }
    obj.values.loss_d = values.loss_d;
    values = obj.values;
    if (!values.finite()) throw NumericError(describe(values));
    obj.total.backward();
    state.opt_g.step(lr);
  } catch (const NumericError& e) {
    throw NumericError("iteration " + std::to_string(it) + ": " + e.what());
  }
  ++state.iteration;
  return values;
}

// ---- checkpoints ------------------------------------------------------------

Manifest read_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open manifest " + path.string());
  Manifest kv;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw FormatError("malformed manifest line in " + path.string() + ": " + line);
    kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  return kv;
}

void write_manifest(const fs::path& path, const Manifest& kv) {
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::trunc);
    if (!out) throw FormatError("cannot write manifest " + tmp.string());
    for (const auto& [k, v] : kv) {
      if (k.find('=') != std::string::npos || k.find('\n') != std::string::npos ||
          v.find('\n') != std::string::npos)
        throw FormatError("manifest entry cannot be stored: " + k);
      out << k << '=' << v << '\n';
    }
    if (!out) throw FormatError("failed writing manifest " + tmp.string());
  }
  fs::rename(tmp, path);
}

namespace {

void check_format(const Manifest& kv, const fs::path& dir) {
  const auto it = kv.find("format.version");
  if (it == kv.end() || it->second != kFormatVersion)
    throw ConfigError("checkpoint in " + dir.string() + " has format " +
                      (it == kv.end() ? std::string("(none)") : it->second) + ", this build reads " + kFormatVersion);
}

template <typename T>
constexpr const char* precision_name() {
  return sizeof(T) == 4 ? "float" : "double";
}

}  // namespace

template <typename T>
void save_checkpoint(const fs::path& dir, const TrainState<T>& state, const Manifest& extra) {
  fs::create_directories(dir);
  NamedTensors<T> archive = state.generator_and_heads();
  archive.insert(archive.end(), state.opt_d.parameters().begin(), state.opt_d.parameters().end());
  state.opt_g.collect_state("opt_g.", archive);
  state.opt_d.collect_state("opt_d.", archive);
  save_tensors<T>(dir / kCheckpointFile, archive);

  Manifest kv = extra;
  for (const auto& [k, v] : state.generator.spec().to_manifest()) kv[k] = v;
  kv["format.version"] = kFormatVersion;
  kv["train.iteration"] = std::to_string(state.iteration);
  kv["train.seed"] = std::to_string(state.seed);
  kv["train.precision"] = precision_name<T>();
  kv["train.disc_channels"] = std::to_string(state.discriminator.base_channels());
  kv["train.heads"] = std::to_string(state.heads.size());
  write_manifest(dir / kManifestFile, kv);
}

template <typename T>
void load_checkpoint(const fs::path& dir, TrainState<T>& state) {
  const Manifest kv = read_manifest(dir / kManifestFile);
  check_format(kv, dir);
  GeneratorSpec spec = GeneratorSpec::from_manifest(kv);
  spec.finalize();
  if (!(spec == state.generator.spec()))
    throw ConfigError("checkpoint in " + dir.string() + " was written for a different generator");
  const auto it = kv.find("train.iteration");
  if (it == kv.end()) throw FormatError("manifest lacks train.iteration");

  const NamedTensors<T> archive = load_tensors<T>(dir / kCheckpointFile);
  assign_parameters(state.generator_and_heads(), archive);
  assign_parameters(state.opt_d.parameters(), archive);
  state.opt_g.load_state("opt_g.", archive);
  state.opt_d.load_state("opt_d.", archive);
  state.iteration = std::stoull(it->second);
}

template <typename T>
Generator<T> load_generator(const fs::path& dir) {
  const Manifest kv = read_manifest(dir / kManifestFile);
  check_format(kv, dir);
  GeneratorSpec spec = GeneratorSpec::from_manifest(kv);
  spec.finalize();
  Rng rng = derive_rng(0, {0x6E4ULL});
  Generator<T> g(spec, rng);
  NamedTensors<T> params;
  g.collect("G.", params);
  assign_parameters(params, load_tensors<T>(dir / kCheckpointFile));
  return g;
}

// ---- loop -------------------------------------------------------------------

namespace {

void prepare_history(const fs::path& path, std::uint64_t keep_until) {
  std::vector<std::string> rows;
  if (keep_until > 0 && fs::exists(path)) {
    std::ifstream in(path);
    std::string line;
    std::getline(in, line);
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      if (std::stoull(line.substr(0, line.find(','))) <= keep_until) rows.push_back(line);
    }
  }
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw FormatError("cannot write " + path.string());
  out << kHistoryHeader << '\n';
  for (const auto& r : rows) out << r << '\n';
}

std::string history_row(std::uint64_t iter, double lr, const LossBundle& l) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%llu,%.9g,%.9g,%.9g,%.9g,%.9g", static_cast<unsigned long long>(iter), lr,
                l.loss_g, l.loss_nce_x, l.loss_nce_y, l.loss_d);
  return buf;
}

template <typename T>
void write_samples(const Generator<T>& g, const std::vector<Image>& samples, const fs::path& dir,
                   std::uint64_t iter) {
  NoGradGuard no_grad;
  std::vector<Image> strip;
  for (const auto& s : samples) {
    strip.push_back(s);
    strip.push_back(from_batch(g.translate(to_batch<T>({s}))));
  }
  fs::create_directories(dir);
  char name[64];
  std::snprintf(name, sizeof name, "iter_%06llu.png", static_cast<unsigned long long>(iter));
  save_image(tile_row(strip), dir / name);
}

}  // namespace

template <typename T>
void run_training(TrainState<T>& state, UnpairedIterator& data, const TrainConfig& cfg, const fs::path& out_dir,
                  const std::vector<Image>& samples, const RunHooks& hooks) {
  cfg.validate();
  const Index domain = data.size_a();
  const double e_const = cfg.resolved_constant_epochs(domain);
  const double span = static_cast<double>(cfg.iterations) * static_cast<double>(data.batch()) /
                      static_cast<double>(domain);
  if (span > 2.0 * e_const * (1.0 + 1e-12))
    throw ConfigError("lr schedule covers " + std::to_string(2.0 * e_const) + " epochs but the run needs " +
                      std::to_string(span));
  if (data.steps() != state.iteration)
    throw ContractError("iterator is at step " + std::to_string(data.steps()) + " but the state is at " +
                        std::to_string(state.iteration));

  fs::create_directories(out_dir);
  const fs::path history_path = out_dir / kHistoryFile;
  prepare_history(history_path, state.iteration);
  std::ofstream history(history_path, std::ios::app);

  const bool want_samples = cfg.sample_every > 0 && !samples.empty();
  const auto total = static_cast<std::uint64_t>(cfg.iterations);
  std::uint64_t last_saved = state.iteration;
  while (state.iteration < total) {
    const double epoch = static_cast<double>(state.iteration) * static_cast<double>(data.batch()) /
                         static_cast<double>(domain);
    const double lr = lr_at(cfg.lr, e_const, std::min(epoch, 2.0 * e_const));
    const auto batch = data.next<T>();
    const LossBundle losses = train_step(state, batch.a, batch.b, cfg, lr);
    history << history_row(state.iteration, lr, losses) << '\n';
    history.flush();
    if (cfg.checkpoint_every > 0 && state.iteration % static_cast<std::uint64_t>(cfg.checkpoint_every) == 0) {
      save_checkpoint(out_dir, state, hooks.manifest);
      last_saved = state.iteration;
    }
    if (want_samples && state.iteration % static_cast<std::uint64_t>(cfg.sample_every) == 0)
      write_samples(state.generator, samples, out_dir / "samples", state.iteration);
    if (hooks.on_step) hooks.on_step(state.iteration, lr, losses);
  }
  if (last_saved != state.iteration || !fs::exists(out_dir / kCheckpointFile))
    save_checkpoint(out_dir, state, hooks.manifest);
}

#define ITTR_INSTANTIATE(T)                                                                                   \
  template class Adam<T>;                                                                                     \
  template struct TrainState<T>;                                                                              \
  template LossBundle train_step<T>(TrainState<T>&, const Tensor<T>&, const Tensor<T>&, const TrainConfig&,   \
                                    double);                                                                  \
  template void save_checkpoint<T>(const fs::path&, const TrainState<T>&, const Manifest&);                   \
  template void load_checkpoint<T>(const fs::path&, TrainState<T>&);                                          \
  template Generator<T> load_generator<T>(const fs::path&);                                                   \
  template void run_training<T>(TrainState<T>&, UnpairedIterator&, const TrainConfig&, const fs::path&,       \
                                const std::vector<Image>&, const RunHooks&);

ITTR_INSTANTIATE(float)
ITTR_INSTANTIATE(double)

}  // namespace ittr
