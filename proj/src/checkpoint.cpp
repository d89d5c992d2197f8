#include "stf2m/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "stf2m/errors.hpp"
#include "io_util.hpp"

namespace stf2m {

using detail::ByteReader;
using detail::ByteWriter;

namespace {
constexpr char kMagic[8] = {'S', 'T', 'F', '2', 'M', 'C', 'K', 'P'};
}

std::string encode_checkpoint(const std::vector<TensorEntry>& entries) {
  ByteWriter w;
  w.raw(kMagic, sizeof(kMagic));
  w.u32(kCheckpointVersion);
  w.u32(static_cast<std::uint32_t>(entries.size()));
  for (const auto& e : entries) {
    std::uint64_t count = 1;
    for (auto d : e.shape) count *= d;
    if (count != e.values.size()) throw DataError("checkpoint entry '" + e.name + "': shape does not match value count");
    w.u32(static_cast<std::uint32_t>(e.name.size()));
    w.raw(e.name.data(), e.name.size());
    w.u32(static_cast<std::uint32_t>(e.dtype));
    w.u32(static_cast<std::uint32_t>(e.shape.size()));
    for (auto d : e.shape) w.u64(d);
    for (double v : e.values) {
      if (e.dtype == DType::F64)
        w.f64(v);
      else
        w.f32(static_cast<float>(v));
    }
  }
  return w.take();
}

std::vector<TensorEntry> decode_checkpoint(const std::string& bytes) {
  ByteReader r(bytes, "checkpoint");
  char magic[8];
  r.raw(magic, sizeof(magic));
  if (std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) throw DataError("checkpoint: bad magic");
  const auto version = r.u32();
  if (version != kCheckpointVersion) throw DataError("checkpoint: unsupported version " + std::to_string(version));
  const auto n = r.u32();
  std::vector<TensorEntry> out;
  out.reserve(n);
  for (std::uint32_t i = 0; i < n; ++i) {
    TensorEntry e;
    e.name.resize(r.u32());
    r.raw(e.name.data(), e.name.size());
    const auto dtype = r.u32();
    if (dtype > 1) throw DataError("checkpoint entry '" + e.name + "': unknown dtype " + std::to_string(dtype));
    e.dtype = static_cast<DType>(dtype);
    const auto rank = r.u32();
    std::uint64_t count = 1;
    for (std::uint32_t k = 0; k < rank; ++k) {
      e.shape.push_back(r.u64());
      count *= e.shape.back();
    }
    const std::size_t width = e.dtype == DType::F64 ? 8 : 4;
    if (count > r.remaining() / width) throw DataError("checkpoint entry '" + e.name + "': truncated values");
    e.values.resize(count);
    for (auto& v : e.values) v = e.dtype == DType::F64 ? r.f64() : static_cast<double>(r.f32());
    out.push_back(std::move(e));
  }
  if (r.remaining() != 0) throw DataError("checkpoint: trailing bytes");
  return out;
}

void save_checkpoint(const std::filesystem::path& path, const std::vector<TensorEntry>& entries) {
  detail::write_file_atomic(path, encode_checkpoint(entries));
}

std::vector<TensorEntry> load_checkpoint(const std::filesystem::path& path) {
  return decode_checkpoint(detail::read_file(path));
}

template <typename T>
std::vector<TensorEntry> to_entries(const ad::ParamSet<T>& params) {
  std::vector<TensorEntry> out;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& v = params[i].value();
    TensorEntry e;
    e.name = params.name(i);
    e.shape = {static_cast<std::uint64_t>(v.rows()), static_cast<std::uint64_t>(v.cols())};
    e.dtype = std::is_same_v<T, double> ? DType::F64 : DType::F32;
    e.values.assign(v.data(), v.data() + v.size());
    out.push_back(std::move(e));
  }
  return out;
}

template <typename T>
ad::ParamSet<T> from_entries(const std::vector<TensorEntry>& entries) {
  ad::ParamSet<T> out;
  for (const auto& e : entries) {
    if (e.shape.size() != 2) throw DataError("checkpoint entry '" + e.name + "': expected a rank-2 tensor");
    ad::Matrix<T> m(static_cast<Eigen::Index>(e.shape[0]), static_cast<Eigen::Index>(e.shape[1]));
    for (Eigen::Index k = 0; k < m.size(); ++k) m.data()[k] = static_cast<T>(e.values[static_cast<std::size_t>(k)]);
    out.add(e.name, ad::parameter<T>(std::move(m)));
  }
  return out;
}

template std::vector<TensorEntry> to_entries<double>(const ad::ParamSet<double>&);
template std::vector<TensorEntry> to_entries<float>(const ad::ParamSet<float>&);
template ad::ParamSet<double> from_entries<double>(const std::vector<TensorEntry>&);
template ad::ParamSet<float> from_entries<float>(const std::vector<TensorEntry>&);

}  // namespace stf2m
