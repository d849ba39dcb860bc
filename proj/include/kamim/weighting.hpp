#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "kamim/binary_io.hpp"
#include "kamim/error.hpp"
#include "kamim/fast.hpp"
#include "kamim/image.hpp"

namespace kamim {

/// Keypoint weighting hyperparameters: the side of the square cell over which
/// keypoint density is pooled, and the temperature dividing it in the exponent.
struct WeightConfig {
  int patch_size = 4;
  double temperature = 0.25;

  void validate() const {
    if (patch_size < 1) throw InvalidArgument("WeightConfig: patch_size must be >= 1");
    if (!(temperature > 0.0)) throw InvalidArgument("WeightConfig: temperature must be > 0");
  }
};

/// Fraction of keypoint pixels per cell.
struct DensityMap {
  int grid_h = 0;
  int grid_w = 0;
  std::vector<double> values;

  double at(int row, int col) const { return values[static_cast<std::size_t>(row) * grid_w + col]; }
};

/// Per-cell loss weights; the smallest cell is exactly 1.
struct WeightMap {
  int grid_h = 0;
  int grid_w = 0;
  std::vector<float> values;

  float at(int row, int col) const { return values[static_cast<std::size_t>(row) * grid_w + col]; }
  bool operator==(const WeightMap&) const = default;
};

/// Strided box average: each cell is the mean of its patch_size x patch_size
/// block of the keypoint map.
inline DensityMap density_map(const fast::KeypointMap& map, int patch_size) {
  if (patch_size < 1) throw InvalidArgument("density_map: patch_size must be >= 1");
  if (map.height % patch_size != 0 || map.width % patch_size != 0) {
    throw InvalidArgument("density_map: " + std::to_string(map.height) + "x" +
                          std::to_string(map.width) + " map is not divisible by patch size " +
                          std::to_string(patch_size));
  }
  DensityMap out;
  out.grid_h = map.height / patch_size;
  out.grid_w = map.width / patch_size;
  out.values.assign(static_cast<std::size_t>(out.grid_h) * out.grid_w, 0.0);
  const double scale = 1.0 / (static_cast<double>(patch_size) * patch_size);
  for (int gy = 0; gy < out.grid_h; ++gy) {
    for (int gx = 0; gx < out.grid_w; ++gx) {
      int count = 0;
      for (int y = gy * patch_size; y < (gy + 1) * patch_size; ++y)
        for (int x = gx * patch_size; x < (gx + 1) * patch_size; ++x) count += map.at(x, y);
      out.values[static_cast<std::size_t>(gy) * out.grid_w + gx] = count * scale;
    }
  }
  return out;
}

/// W = exp(density / T) / min exp(density / T), evaluated as
/// exp((density - min density) / T) in double precision.
inline WeightMap weight_map(const DensityMap& density, double temperature) {
  if (!(temperature > 0.0)) throw InvalidArgument("weight_map: temperature must be > 0");
  WeightMap out{density.grid_h, density.grid_w, std::vector<float>(density.values.size(), 1.0f)};
  if (density.values.empty()) return out;
  const double lo = *std::min_element(density.values.begin(), density.values.end());
  for (std::size_t i = 0; i < density.values.size(); ++i) {
    const double w = std::exp((density.values[i] - lo) / temperature);
    if (!std::isfinite(w) || w > std::numeric_limits<float>::max()) {
      throw NumericError("weight_map: weight overflow, temperature too small");
    }
    out.values[i] = static_cast<float>(w);
  }
  return out;
}

/// Broadcasts each cell weight over its patch_size x patch_size pixel block.
/// Returns a single-channel raster.
inline RasterImage pixel_weights(const WeightMap& weights, int patch_size, int img_h, int img_w) {
  if (patch_size < 1 || weights.grid_h * patch_size != img_h ||
      weights.grid_w * patch_size != img_w) {
    throw InvalidArgument("pixel_weights: weight grid does not match image geometry");
  }
  RasterImage out(img_h, img_w, 1);
  for (int y = 0; y < img_h; ++y)
    for (int x = 0; x < img_w; ++x) out.at(0, y, x) = weights.at(y / patch_size, x / patch_size);
  return out;
}

/// Gray image -> FAST keypoints (with NMS) -> density -> weights.
inline WeightMap keypoint_weights(const GrayImage& gray, const WeightConfig& cfg,
                                  int threshold = fast::kDefaultThreshold) {
  cfg.validate();
  const auto kps = fast::detect(gray, fast::DetectOptions{threshold, true, true});
  const auto map = fast::keypoint_map(kps, gray.height, gray.width);
  return weight_map(density_map(map, cfg.patch_size), cfg.temperature);
}

// ---------------------------------------------------------------------------
// KWMF: "KWMF", u32 version=1, grid_h, grid_w, then grid_h*grid_w f32
// row-major. Little-endian.

inline constexpr std::uint32_t kWeightMapVersion = 1;

inline std::vector<std::uint8_t> encode_weight_map(const WeightMap& w) {
  if (w.values.size() != static_cast<std::size_t>(w.grid_h) * w.grid_w) {
    throw InvalidArgument("KWMF: value count does not match grid");
  }
  detail::ByteWriter out;
  out.magic("KWMF");
  out.u32(kWeightMapVersion);
  out.u32(static_cast<std::uint32_t>(w.grid_h));
  out.u32(static_cast<std::uint32_t>(w.grid_w));
  for (float v : w.values) out.f32(v);
  return std::move(out.bytes());
}

inline WeightMap decode_weight_map(const std::vector<std::uint8_t>& bytes) {
  detail::ByteReader r(bytes, "KWMF");
  r.expect_magic("KWMF");
  if (r.u32() != kWeightMapVersion) throw FormatError("KWMF: unsupported version");
  WeightMap w;
  const std::uint32_t gh = r.u32();
  const std::uint32_t gw = r.u32();
  if (r.remaining() != static_cast<std::uint64_t>(gh) * gw * 4) {
    throw FormatError("KWMF: size mismatch");
  }
  w.grid_h = static_cast<int>(gh);
  w.grid_w = static_cast<int>(gw);
  w.values.resize(static_cast<std::size_t>(gh) * gw);
  for (auto& v : w.values) v = r.f32();
  return w;
}

inline void save_weight_map(const WeightMap& w, const std::string& path) {
  detail::write_file(path, encode_weight_map(w));
}

inline WeightMap load_weight_map(const std::string& path) {
  return decode_weight_map(detail::read_file(path));
}

}  // namespace kamim
