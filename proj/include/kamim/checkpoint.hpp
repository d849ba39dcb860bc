#pragma once

// KCPT checkpoint: "KCPT", u32 version=1, u32 parameter count, then for each
// parameter: u32 name length, UTF-8 name, u32 rank, rank x u32 extents,
// numel x f32 values. All little-endian.

#include <cstdint>
#include <string>
#include <vector>

#include "kamim/binary_io.hpp"
#include "kamim/error.hpp"
#include "kamim/tensor.hpp"

namespace kamim {

struct NamedArray {
  std::string name;
  Shape shape;
  std::vector<float> values;
  bool operator==(const NamedArray&) const = default;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

inline std::vector<std::uint8_t> encode_checkpoint(const std::vector<NamedArray>& params) {
  detail::ByteWriter w;
  w.magic("KCPT");
  w.u32(kCheckpointVersion);
  w.u32(static_cast<std::uint32_t>(params.size()));
  for (const auto& p : params) {
    if (static_cast<std::int64_t>(p.values.size()) != shape_numel(p.shape)) {
      throw InvalidArgument("KCPT: parameter '" + p.name + "' value count does not match shape");
    }
    w.u32(static_cast<std::uint32_t>(p.name.size()));
    w.text(p.name);
    w.u32(static_cast<std::uint32_t>(p.shape.size()));
    for (auto d : p.shape) w.u32(static_cast<std::uint32_t>(d));
    for (float v : p.values) w.f32(v);
  }
  return std::move(w.bytes());
}

inline std::vector<NamedArray> decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
  detail::ByteReader r(bytes, "KCPT");
  r.expect_magic("KCPT");
  if (r.u32() != kCheckpointVersion) throw FormatError("KCPT: unsupported version");
  const std::uint32_t count = r.u32();
  std::vector<NamedArray> out;
  for (std::uint32_t i = 0; i < count; ++i) {
    NamedArray p;
    const std::uint32_t len = r.u32();
    const std::uint8_t* name = r.take(len);
    p.name.assign(reinterpret_cast<const char*>(name), len);
    const std::uint32_t rank = r.u32();
    if (rank > 16) throw FormatError("KCPT: implausible rank for '" + p.name + "'");
    for (std::uint32_t d = 0; d < rank; ++d) p.shape.push_back(r.u32());
    const auto n = static_cast<std::uint64_t>(shape_numel(p.shape));
    if (n * 4 > r.remaining()) throw FormatError("KCPT: truncated payload");
    p.values.resize(n);
    for (auto& v : p.values) v = r.f32();
    out.push_back(std::move(p));
  }
  r.expect_end();
  return out;
}

inline void save_checkpoint(const std::vector<NamedArray>& params, const std::string& path) {
  detail::write_file(path, encode_checkpoint(params));
}

inline std::vector<NamedArray> load_checkpoint(const std::string& path) {
  return decode_checkpoint(detail::read_file(path));
}

}  // namespace kamim
