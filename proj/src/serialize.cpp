#include "ittr/serialize.hpp"

#include <bit>
#include <cstring>
#include <fstream>

namespace ittr {

static_assert(std::endian::native == std::endian::little,
              "archive payloads are written in host order and must be little-endian");

namespace {

constexpr char kMagic[4] = {'I', 'T', 'T', 'R'};

template <typename V>
void put(std::ostream& os, V v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(V));
}

template <typename V>
V get(std::istream& is, const std::filesystem::path& path) {
  V v{};
  if (!is.read(reinterpret_cast<char*>(&v), sizeof(V)))
    throw FormatError("truncated tensor archive: " + path.string());
  return v;
}

template <typename Stored, typename T>
Buffer<T> read_payload(std::istream& is, size_t count, const std::filesystem::path& path) {
  Buffer<Stored> raw(count);
  if (!is.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(count * sizeof(Stored))))
    throw FormatError("truncated tensor payload in " + path.string());
  if constexpr (std::is_same_v<Stored, T>) {
    return raw;
  } else {
    return Buffer<T>(raw.begin(), raw.end());
  }
}

}  // namespace

template <typename T>
void save_tensors(const std::filesystem::path& path, const NamedTensors<T>& tensors) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw FormatError("cannot open " + tmp.string() + " for writing");
    os.write(kMagic, 4);
    put<std::uint32_t>(os, kArchiveVersion);
    put<std::uint32_t>(os, static_cast<std::uint32_t>(tensors.size()));
    for (const auto& [name, t] : tensors) {
      put<std::uint32_t>(os, static_cast<std::uint32_t>(name.size()));
      os.write(name.data(), static_cast<std::streamsize>(name.size()));
      put<std::uint32_t>(os, static_cast<std::uint32_t>(t.rank()));
      for (Index e : t.shape()) put<std::uint64_t>(os, static_cast<std::uint64_t>(e));
      put<std::uint8_t>(os, static_cast<std::uint8_t>(sizeof(T)));
      os.write(reinterpret_cast<const char*>(t.raw()),
               static_cast<std::streamsize>(t.numel() * sizeof(T)));
    }
    if (!os) throw FormatError("failed writing " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

template <typename T>
NamedTensors<T> load_tensors(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("cannot open tensor archive " + path.string());
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0)
    throw FormatError("bad magic in " + path.string());
  const auto version = get<std::uint32_t>(is, path);
  if (version != kArchiveVersion)
    throw FormatError("unsupported archive version " + std::to_string(version));
  const auto count = get<std::uint32_t>(is, path);
  NamedTensors<T> out;
  out.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto len = get<std::uint32_t>(is, path);
    std::string name(len, '\0');
    if (!is.read(name.data(), len)) throw FormatError("truncated tensor name in " + path.string());
    const auto rank = get<std::uint32_t>(is, path);
    Shape shape;
    for (std::uint32_t d = 0; d < rank; ++d)
      shape.push_back(static_cast<Index>(get<std::uint64_t>(is, path)));
    const auto width = get<std::uint8_t>(is, path);
    const auto n = static_cast<size_t>(numel(shape));
    Buffer<T> values;
    if (width == 4) values = read_payload<float, T>(is, n, path);
    else if (width == 8) values = read_payload<double, T>(is, n, path);
    else throw FormatError("unsupported element width " + std::to_string(width));
    out.emplace_back(std::move(name), Tensor<T>(std::move(shape), std::move(values)));
  }
  return out;
}

template void save_tensors<float>(const std::filesystem::path&, const NamedTensors<float>&);
template void save_tensors<double>(const std::filesystem::path&, const NamedTensors<double>&);
template NamedTensors<float> load_tensors<float>(const std::filesystem::path&);
template NamedTensors<double> load_tensors<double>(const std::filesystem::path&);

}  // namespace ittr
