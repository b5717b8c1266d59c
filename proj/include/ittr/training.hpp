// Adam, the learning-rate schedule and the alternating D / G training loop.
#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>

#include "ittr/data.hpp"
#include "ittr/objectives.hpp"

namespace ittr {

struct AdamConfig {
  double beta1 = 0.5;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adam over a fixed list of named parameters. A parameter without a grad
/// buffer is treated as having a zero gradient.
template <typename T>
class Adam {
 public:
  Adam() = default;
  Adam(NamedTensors<T> params, AdamConfig cfg = {});

  void step(double lr);
  void zero_grad();
  std::int64_t steps() const { return t_; }

  /// Moments as "<prefix>m.<name>", "<prefix>v.<name>" plus "<prefix>t".
  void collect_state(const std::string& prefix, NamedTensors<T>& out) const;
  void load_state(const std::string& prefix, const NamedTensors<T>& archive);

  const NamedTensors<T>& parameters() const { return params_; }

 private:
  NamedTensors<T> params_;
  std::vector<std::vector<T>> m_, v_;
  AdamConfig cfg_;
  std::int64_t t_ = 0;
};

struct TrainConfig {
  double lr = 2e-4;
  double constant_epochs = 0.0;  // E; 0 derives E so that 2E epochs span the run
  Index iterations = 2000;
  Index batch = 1;
  std::uint64_t seed = 0;
  Index image_size = 64;
  Index train_size = 1000;  // synthetic images per domain
  Index test_size = 64;
  Index disc_channels = 64;
  double lambda_x = 1.0;
  double lambda_y = 1.0;
  PatchNceOptions nce;
  Index head_width = 256;
  AdamConfig adam;
  Index checkpoint_every = 500;
  Index sample_every = 0;  // 0 disables sample grids
  Index sample_count = 4;

  /// Epochs covered by `iterations` over a domain of `domain_size` images.
  double total_epochs(Index domain_size) const;
  /// E for a domain of `domain_size` images.
  double resolved_constant_epochs(Index domain_size) const;
  void validate() const;
};

/// lr for epoch < E, lr (2E - epoch) / E on [E, 2E]; ConfigError outside [0, 2E].
double lr_at(double base_lr, double constant_epochs, double epoch);
double lr_at(const TrainConfig& cfg, Index domain_size, double epoch);

template <typename T>
struct TrainState {
  TrainState(const GeneratorSpec& spec, const TrainConfig& cfg);

  Generator<T> generator;
  PatchGanDiscriminator<T> discriminator;
  ProjectionHeads<T> heads;
  Adam<T> opt_g;  // generator and heads
  Adam<T> opt_d;
  std::uint64_t iteration = 0;
  std::uint64_t seed = 0;

  NamedTensors<T> generator_and_heads() const;
};

/// One iteration: D update on detached G(x), then G + heads on
/// L_G + lambda_x NCE(x) + lambda_y NCE(y). Throws NumericError naming the
/// iteration and loss components when a loss is not finite.
template <typename T>
LossBundle train_step(TrainState<T>& state, const Tensor<T>& x_a, const Tensor<T>& y_b,
                      const TrainConfig& cfg, double lr);

// ---- checkpoints ------------------------------------------------------------

inline constexpr const char* kCheckpointFile = "checkpoint.ittr";
inline constexpr const char* kManifestFile = "checkpoint.manifest";
inline constexpr const char* kFormatVersion = "1";
inline constexpr const char* kHistoryFile = "history.csv";
inline constexpr const char* kHistoryHeader = "iter,lr,loss_g,loss_nce_x,loss_nce_y,loss_d";

using Manifest = std::map<std::string, std::string>;

Manifest read_manifest(const std::filesystem::path& path);
void write_manifest(const std::filesystem::path& path, const Manifest& kv);

/// Writes `<dir>/checkpoint.ittr` and `<dir>/checkpoint.manifest` atomically.
/// `extra` lands in the manifest next to the generator spec.
template <typename T>
void save_checkpoint(const std::filesystem::path& dir, const TrainState<T>& state, const Manifest& extra);

/// Restores every tensor, both optimisers and the iteration counter.
template <typename T>
void load_checkpoint(const std::filesystem::path& dir, TrainState<T>& state);

/// Loads only the generator for inference; throws ConfigError when the
/// manifest does not describe a generator this build can construct.
template <typename T>
Generator<T> load_generator(const std::filesystem::path& dir);

// ---- loop -------------------------------------------------------------------

struct RunHooks {
  /// Called after every iteration (and its checkpoint) with (iteration, lr, losses).
  std::function<void(std::uint64_t, double, const LossBundle&)> on_step;
  /// Extra manifest entries written with every checkpoint.
  Manifest manifest;
};

/// Trains from state.iteration up to cfg.iterations, appending one history
/// row per iteration, checkpointing every cfg.checkpoint_every iterations and
/// at the end, and writing sample strips of `samples` when configured.
/// The iterator must already be positioned at state.iteration.
template <typename T>
void run_training(TrainState<T>& state, UnpairedIterator& data, const TrainConfig& cfg,
                  const std::filesystem::path& out_dir, const std::vector<Image>& samples = {},
                  const RunHooks& hooks = {});

}  // namespace ittr
