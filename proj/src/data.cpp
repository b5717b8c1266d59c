#include "ittr/data.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <numeric>

namespace ittr {

Image::Image(Index h, Index w, float fill)
    : height(h), width(w), pixels(static_cast<size_t>(3 * h * w), fill) {
  if (h < 1 || w < 1) throw ImageError("image extents must be positive");
}

template <typename T>
Tensor<T> to_batch(const std::vector<Image>& images) {
  if (images.empty()) throw ImageError("cannot batch zero images");
  const Index h = images[0].height, w = images[0].width;
  Buffer<T> v;
  v.reserve(images.size() * static_cast<size_t>(3 * h * w));
  for (const auto& im : images) {
    if (im.height != h || im.width != w) throw ImageError("batched images must share one size");
    v.insert(v.end(), im.pixels.begin(), im.pixels.end());
  }
  return Tensor<T>({static_cast<Index>(images.size()), 3, h, w}, std::move(v));
}

template <typename T>
Image from_batch(const Tensor<T>& batch, Index index) {
  if (batch.rank() != 4 || batch.dim(1) != 3 || index < 0 || index >= batch.dim(0))
    throw ShapeError("from_batch: expected [B x 3 x H x W] with sample " + std::to_string(index) +
                     ", got " + to_string(batch.shape()));
  Image im(batch.dim(2), batch.dim(3));
  const auto src = batch.data().subspan(static_cast<size_t>(index) * im.pixels.size(), im.pixels.size());
  std::transform(src.begin(), src.end(), im.pixels.begin(), [](T v) { return static_cast<float>(v); });
  return im;
}

Image load_image(const std::filesystem::path& path, Index height, Index width) {
  png_image png{};
  png.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&png, path.string().c_str()))
    throw ImageError("cannot read PNG " + path.string() + ": " + png.message);
  if (png.format & PNG_FORMAT_FLAG_LINEAR) {
    png_image_free(&png);
    throw ImageError("unsupported bit depth in " + path.string() + " (expected 8-bit)");
  }
  png.format = PNG_FORMAT_RGB;
  std::vector<png_byte> buf(PNG_IMAGE_SIZE(png));
  if (!png_image_finish_read(&png, nullptr, buf.data(), 0, nullptr))
    throw ImageError("cannot decode PNG " + path.string() + ": " + png.message);
  Image im(png.height, png.width);
  for (Index y = 0; y < im.height; ++y)
    for (Index x = 0; x < im.width; ++x)
      for (Index c = 0; c < 3; ++c)
        im.at(c, y, x) = 2.0f * static_cast<float>(buf[static_cast<size_t>((y * im.width + x) * 3 + c)]) / 255.0f - 1.0f;
  if (height > 0 && width > 0 && (height != im.height || width != im.width))
    return resize_bilinear(im, height, width);
  return im;
}

void save_image(const Image& image, const std::filesystem::path& path) {
  std::vector<png_byte> buf(static_cast<size_t>(image.height * image.width * 3));
  for (Index y = 0; y < image.height; ++y)
    for (Index x = 0; x < image.width; ++x)
      for (Index c = 0; c < 3; ++c) {
        const float v = std::clamp(image.at(c, y, x), -1.0f, 1.0f);
        buf[static_cast<size_t>((y * image.width + x) * 3 + c)] =
            static_cast<png_byte>(std::lround((v + 1.0f) * 0.5f * 255.0f));
      }
  png_image png{};
  png.version = PNG_IMAGE_VERSION;
  png.width = static_cast<png_uint_32>(image.width);
  png.height = static_cast<png_uint_32>(image.height);
  png.format = PNG_FORMAT_RGB;
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  if (!png_image_write_to_file(&png, path.string().c_str(), 0, buf.data(), 0, nullptr))
    throw ImageError("cannot write PNG " + path.string() + ": " + png.message);
}

Image resize_bilinear(const Image& image, Index height, Index width) {
  Image out(height, width);
  const double sy = static_cast<double>(image.height) / height;
  const double sx = static_cast<double>(image.width) / width;
  for (Index y = 0; y < height; ++y) {
    const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, static_cast<double>(image.height - 1));
    const Index y0 = static_cast<Index>(fy), y1 = std::min(y0 + 1, image.height - 1);
    const double wy = fy - y0;
    for (Index x = 0; x < width; ++x) {
      const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, static_cast<double>(image.width - 1));
      const Index x0 = static_cast<Index>(fx), x1 = std::min(x0 + 1, image.width - 1);
      const double wx = fx - x0;
      for (Index c = 0; c < 3; ++c) {
        const double top = (1 - wx) * image.at(c, y0, x0) + wx * image.at(c, y0, x1);
        const double bot = (1 - wx) * image.at(c, y1, x0) + wx * image.at(c, y1, x1);
        out.at(c, y, x) = static_cast<float>((1 - wy) * top + wy * bot);
      }
    }
  }
  return out;
}

Image downsample(const Image& image, Index height, Index width) {
  if (image.height % height != 0 || image.width % width != 0) return resize_bilinear(image, height, width);
  const Index fy = image.height / height, fx = image.width / width;
  Image out(height, width);
  const double inv = 1.0 / static_cast<double>(fy * fx);
  for (Index c = 0; c < 3; ++c)
    for (Index y = 0; y < height; ++y)
      for (Index x = 0; x < width; ++x) {
        double acc = 0.0;
        for (Index dy = 0; dy < fy; ++dy)
          for (Index dx = 0; dx < fx; ++dx) acc += image.at(c, y * fy + dy, x * fx + dx);
        out.at(c, y, x) = static_cast<float>(acc * inv);
      }
  return out;
}

Image tile_row(const std::vector<Image>& images) {
  if (images.empty()) throw ImageError("cannot tile zero images");
  const Index h = images[0].height, w = images[0].width;
  Image out(h, w * static_cast<Index>(images.size()));
  for (size_t i = 0; i < images.size(); ++i) {
    if (images[i].height != h || images[i].width != w) throw ImageError("tiled images must share one size");
    for (Index c = 0; c < 3; ++c)
      for (Index y = 0; y < h; ++y)
        for (Index x = 0; x < w; ++x) out.at(c, y, static_cast<Index>(i) * w + x) = images[i].at(c, y, x);
  }
  return out;
}

ShapeKind SyntheticDomainSpec::kind() const {
  return domain == 'A' ? ShapeKind::square : ShapeKind::circle;
}

void SyntheticDomainSpec::validate() const {
  if (domain != 'A' && domain != 'B') throw ConfigError("synthetic domain must be 'A' or 'B'");
  if (size < 8 || size % 4 != 0) throw ConfigError("synthetic canvas size must be a multiple of 4, >= 8");
  if (min_shapes < 1 || max_shapes < min_shapes) throw ConfigError("synthetic shape-count range is empty");
  if (palette_size < 1) throw ConfigError("synthetic palette must hold at least one colour");
}

SyntheticSample synth_sample(const SyntheticDomainSpec& spec, std::uint64_t seed, Index index) {
  spec.validate();
  Rng palette_rng = derive_rng(spec.palette_seed, {0xC0105ULL});
  std::vector<std::array<float, 3>> palette(static_cast<size_t>(spec.palette_size));
  for (auto& col : palette)
    for (float& v : col) v = static_cast<float>(uniform(palette_rng, -0.1, 1.0));

  Rng rng = derive_rng(seed, {static_cast<std::uint64_t>(spec.domain), static_cast<std::uint64_t>(index)});
  SyntheticSample s;
  s.image = Image(spec.size, spec.size);
  const Index n = spec.size;
  for (Index c = 0; c < 3; ++c) {
    const double base = spec.background_level + spec.background_jitter * uniform(rng, -1.0, 1.0);
    const double slope = 0.5 * spec.background_jitter * uniform(rng, -1.0, 1.0);
    for (Index y = 0; y < n; ++y) {
      const float v = static_cast<float>(std::clamp(base + slope * (2.0 * y / (n - 1) - 1.0), -1.0, 1.0));
      for (Index x = 0; x < n; ++x) s.image.at(c, y, x) = v;
    }
  }
  const Index count = spec.min_shapes + static_cast<Index>(uniform_index(
                                            rng, static_cast<std::uint64_t>(spec.max_shapes - spec.min_shapes + 1)));
  for (Index i = 0; i < count; ++i) {
    ShapeRecord r;
    r.kind = spec.kind();
    r.extent = uniform(rng, n / 10.0, n / 5.0);
    r.cx = uniform(rng, r.extent, n - r.extent);
    r.cy = uniform(rng, r.extent, n - r.extent);
    r.color = palette[uniform_index(rng, palette.size())];
    const Index x0 = std::max<Index>(0, static_cast<Index>(r.cx - r.extent) - 1);
    const Index x1 = std::min<Index>(n - 1, static_cast<Index>(r.cx + r.extent) + 1);
    const Index y0 = std::max<Index>(0, static_cast<Index>(r.cy - r.extent) - 1);
    const Index y1 = std::min<Index>(n - 1, static_cast<Index>(r.cy + r.extent) + 1);
    for (Index y = y0; y <= y1; ++y)
      for (Index x = x0; x <= x1; ++x) {
        const double dx = x + 0.5 - r.cx, dy = y + 0.5 - r.cy;
        const bool inside = r.kind == ShapeKind::square
                                ? std::abs(dx) <= r.extent && std::abs(dy) <= r.extent
                                : dx * dx + dy * dy <= r.extent * r.extent;
        if (inside)
          for (Index c = 0; c < 3; ++c) s.image.at(c, y, x) = r.color[static_cast<size_t>(c)];
      }
    s.shapes.push_back(r);
  }
  return s;
}

Domain synthetic_domain(const SyntheticDomainSpec& spec, std::uint64_t seed, Index count) {
  spec.validate();
  if (count < 1) throw ConfigError("synthetic domain must hold at least one image");
  return {std::string("synthetic") + spec.domain, count,
          [spec, seed](Index i) { return synth_sample(spec, seed, i).image; }};
}

Domain folder_domain(const std::filesystem::path& dir, Index height, Index width) {
  if (!std::filesystem::is_directory(dir)) throw ImageError("image directory " + dir.string() + " does not exist");
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    auto ext = e.path().extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    if (e.is_regular_file() && ext == ".png") files.push_back(e.path());
  }
  if (files.empty()) throw ImageError("no PNG files in " + dir.string());
  std::sort(files.begin(), files.end());
  return {dir.filename().string(), static_cast<Index>(files.size()),
          [files, height, width](Index i) { return load_image(files.at(static_cast<size_t>(i)), height, width); }};
}

std::pair<Domain, Domain> dataset_domains(const std::filesystem::path& root, const std::string& split,
                                          Index height, Index width) {
  return {folder_domain(root / (split + "A"), height, width), folder_domain(root / (split + "B"), height, width)};
}

UnpairedIterator::UnpairedIterator(Domain a, Domain b, Index batch, std::uint64_t seed)
    : batch_(batch), seed_(seed) {
  if (a.count < 1 || b.count < 1) throw ImageError("unpaired iterator needs two non-empty domains");
  if (batch < 1) throw ConfigError("batch size must be positive");
  a_.domain = std::move(a);
  a_.salt = 0xA;
  b_.domain = std::move(b);
  b_.salt = 0xB;
  reshuffle(a_);
  reshuffle(b_);
}

void UnpairedIterator::reshuffle(Cursor& c) {
  c.order.resize(static_cast<size_t>(c.domain.count));
  std::iota(c.order.begin(), c.order.end(), Index{0});
  Rng rng = derive_rng(seed_, {c.salt, c.epoch});
  shuffle(c.order.begin(), c.order.end(), rng);
  c.position = 0;
}

Index UnpairedIterator::take(Cursor& c) {
  if (c.position == c.domain.count) {
    ++c.epoch;
    reshuffle(c);
  }
  return c.order[static_cast<size_t>(c.position++)];
}

void UnpairedIterator::skip(std::uint64_t steps) {
  for (std::uint64_t s = 0; s < steps; ++s) {
    for (Index i = 0; i < batch_; ++i) {
      take(a_);
      take(b_);
    }
    ++steps_;
  }
}

template <typename T>
UnpairedBatch<T> UnpairedIterator::next() {
  UnpairedBatch<T> out;
  std::vector<Image> ia, ib;
  for (Index i = 0; i < batch_; ++i) {
    out.index_a.push_back(take(a_));
    out.index_b.push_back(take(b_));
    ia.push_back(a_.domain.load(out.index_a.back()));
    ib.push_back(b_.domain.load(out.index_b.back()));
  }
  out.a = to_batch<T>(ia);
  out.b = to_batch<T>(ib);
  ++steps_;
  return out;
}

template Tensor<float> to_batch<float>(const std::vector<Image>&);
template Tensor<double> to_batch<double>(const std::vector<Image>&);
template Image from_batch<float>(const Tensor<float>&, Index);
template Image from_batch<double>(const Tensor<double>&, Index);
template UnpairedBatch<float> UnpairedIterator::next<float>();
template UnpairedBatch<double> UnpairedIterator::next<double>();

}  // namespace ittr
