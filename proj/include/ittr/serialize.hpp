// Flat binary tensor archive.
//
//   "ITTR" | u32 version | u32 count |
//   count x ( u32 name_len | name (UTF-8) | u32 rank | u64 extents[rank] |
//             u8 element_bytes (4 = f32, 8 = f64) | little-endian payload )
#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "ittr/tensor.hpp"

namespace ittr {

inline constexpr std::uint32_t kArchiveVersion = 1;

template <typename T>
using NamedTensors = std::vector<std::pair<std::string, Tensor<T>>>;

struct FormatError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Writes to `<path>.tmp` and renames over `path`.
template <typename T>
void save_tensors(const std::filesystem::path& path, const NamedTensors<T>& tensors);

/// Loads every tensor, converting the stored precision to T when it differs.
template <typename T>
NamedTensors<T> load_tensors(const std::filesystem::path& path);

}  // namespace ittr
