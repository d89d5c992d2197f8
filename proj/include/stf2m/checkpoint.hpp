#pragma once

// Parameter checkpoint container:
//
//   "STF2MCKP" | u32 version | u32 entry count
//   per entry: u32 name length | name | u32 dtype (0 = f64, 1 = f32)
//              | u32 rank | u64 extents[rank] | little-endian raw values

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "stf2m/autodiff.hpp"

namespace stf2m {

enum class DType : std::uint32_t { F64 = 0, F32 = 1 };

struct TensorEntry {
  std::string name;
  std::vector<std::uint64_t> shape;
  DType dtype = DType::F64;
  std::vector<double> values;  // widened for f32 entries

  friend bool operator==(const TensorEntry&, const TensorEntry&) = default;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

std::string encode_checkpoint(const std::vector<TensorEntry>& entries);
/// Throws DataError on a malformed or truncated buffer.
std::vector<TensorEntry> decode_checkpoint(const std::string& bytes);

void save_checkpoint(const std::filesystem::path& path, const std::vector<TensorEntry>& entries);
std::vector<TensorEntry> load_checkpoint(const std::filesystem::path& path);

template <typename T>
std::vector<TensorEntry> to_entries(const ad::ParamSet<T>& params);
/// Fresh trainable leaves, one per rank-2 entry.
template <typename T>
ad::ParamSet<T> from_entries(const std::vector<TensorEntry>& entries);

}  // namespace stf2m
