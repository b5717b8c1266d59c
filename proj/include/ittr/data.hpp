// Images, the synthetic two-domain dataset and unpaired iteration.
//
// Images are 3-channel, planar (CHW) floats in [-1, 1]; pixel p maps to
// 2 p / 255 - 1. Files are 8-bit PNG.
#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "ittr/random.hpp"
#include "ittr/tensor.hpp"

namespace ittr {

struct ImageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Image {
  Index height = 0;
  Index width = 0;
  std::vector<float> pixels;  // [3 x H x W]

  Image() = default;
  Image(Index h, Index w, float fill = -1.0f);

  float& at(Index c, Index y, Index x) { return pixels[static_cast<size_t>((c * height + y) * width + x)]; }
  float at(Index c, Index y, Index x) const { return pixels[static_cast<size_t>((c * height + y) * width + x)]; }
};

/// Stacks images of one size into [B x 3 x H x W].
template <typename T>
Tensor<T> to_batch(const std::vector<Image>& images);

/// Sample `index` of a [B x 3 x H x W] tensor.
template <typename T>
Image from_batch(const Tensor<T>& batch, Index index = 0);

/// Reads an 8-bit PNG (grey, palette and alpha inputs are converted to RGB).
/// With a non-zero target size the image is bilinearly resized.
Image load_image(const std::filesystem::path& path, Index height = 0, Index width = 0);

/// Clamps to [-1, 1] and writes 8-bit RGB, rounding to the nearest level.
void save_image(const Image& image, const std::filesystem::path& path);

/// Bilinear resampling with half-pixel centres and edge clamping.
Image resize_bilinear(const Image& image, Index height, Index width);

/// Box average when the size divides evenly, bilinear otherwise.
Image downsample(const Image& image, Index height, Index width);

/// Tiles images left to right into one strip (all must share a size).
Image tile_row(const std::vector<Image>& images);

// ---- synthetic domains ------------------------------------------------------

enum class ShapeKind { square, circle };

struct ShapeRecord {
  ShapeKind kind = ShapeKind::square;
  double cx = 0.0, cy = 0.0;  // centre in pixels
  double extent = 0.0;        // square half-side or circle radius
  std::array<float, 3> color{};
};

struct SyntheticDomainSpec {
  char domain = 'A';  // 'A': axis-aligned squares, 'B': filled circles
  Index size = 64;
  Index min_shapes = 1;
  Index max_shapes = 3;
  std::uint64_t palette_seed = 0;
  Index palette_size = 6;
  double background_level = -0.6;  // mean background value
  double background_jitter = 0.2;

  ShapeKind kind() const;
  void validate() const;
};

struct SyntheticSample {
  Image image;
  std::vector<ShapeRecord> shapes;
};

/// Deterministic in (spec, seed, index).
SyntheticSample synth_sample(const SyntheticDomainSpec& spec, std::uint64_t seed, Index index);

// ---- domains and iteration --------------------------------------------------

/// An indexable collection of images of one domain.
struct Domain {
  std::string name;
  Index count = 0;
  std::function<Image(Index)> load;
};

Domain synthetic_domain(const SyntheticDomainSpec& spec, std::uint64_t seed, Index count);

/// Every *.png in `dir`, sorted by file name, resized to height x width on load.
Domain folder_domain(const std::filesystem::path& dir, Index height, Index width);

/// `<root>/<split>A` and `<root>/<split>B`; throws ImageError when missing or empty.
std::pair<Domain, Domain> dataset_domains(const std::filesystem::path& root, const std::string& split,
                                          Index height, Index width);

template <typename T>
struct UnpairedBatch {
  Tensor<T> a, b;
  std::vector<Index> index_a, index_b;
};

/// Endless stream of (domain A batch, domain B batch). Each domain walks its
/// own permutation, reshuffled every epoch from (seed, domain, epoch).
class UnpairedIterator {
 public:
  UnpairedIterator(Domain a, Domain b, Index batch, std::uint64_t seed);

  template <typename T>
  UnpairedBatch<T> next();

  /// Advances as if `steps` batches had been drawn, without loading images.
  void skip(std::uint64_t steps);
  std::uint64_t steps() const { return steps_; }
  Index batch() const { return batch_; }
  Index size_a() const { return a_.domain.count; }
  Index size_b() const { return b_.domain.count; }

 private:
  struct Cursor {
    Domain domain;
    std::uint64_t salt = 0;
    std::uint64_t epoch = 0;
    Index position = 0;
    std::vector<Index> order;
  };
  Index take(Cursor& c);
  void reshuffle(Cursor& c);

  Cursor a_, b_;
  Index batch_;
  std::uint64_t seed_;
  std::uint64_t steps_ = 0;
};

}  // namespace ittr
