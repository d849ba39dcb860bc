#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "kamim/binary_io.hpp"
#include "kamim/error.hpp"

namespace kamim {

/// 8-bit single-channel raster, row-major.
struct GrayImage {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> data;

  GrayImage() = default;
  GrayImage(int h, int w, std::uint8_t fill = 0)
      : height(h), width(w), data(static_cast<std::size_t>(h) * w, fill) {
    if (h < 0 || w < 0) throw InvalidArgument("GrayImage: negative size");
  }

  std::uint8_t at(int x, int y) const { return data[static_cast<std::size_t>(y) * width + x]; }
  std::uint8_t& at(int x, int y) { return data[static_cast<std::size_t>(y) * width + x]; }

  bool operator==(const GrayImage&) const = default;
};

/// Float raster, channel-planar: element (c, y, x) lives at (c * H + y) * W + x.
struct RasterImage {
  int height = 0;
  int width = 0;
  int channels = 0;
  std::vector<float> data;

  RasterImage() = default;
  RasterImage(int h, int w, int c, float fill = 0.0f)
      : height(h), width(w), channels(c),
        data(static_cast<std::size_t>(h) * w * c, fill) {
    if (h < 0 || w < 0 || c < 0) throw InvalidArgument("RasterImage: negative size");
  }

  std::size_t plane() const { return static_cast<std::size_t>(height) * width; }

  float at(int c, int y, int x) const { return data[c * plane() + static_cast<std::size_t>(y) * width + x]; }
  float& at(int c, int y, int x) { return data[c * plane() + static_cast<std::size_t>(y) * width + x]; }

  bool same_geometry(const RasterImage& o) const {
    return height == o.height && width == o.width && channels == o.channels;
  }
};

/// Labeled collection of 8-bit images sharing one geometry. Pixels of each
/// image are stored channel-planar, images back to back.
struct PackedDataset {
  std::uint32_t count = 0;
  std::uint32_t height = 0;
  std::uint32_t width = 0;
  std::uint32_t channels = 0;
  std::vector<std::uint32_t> labels;
  std::vector<std::uint8_t> pixels;

  std::size_t image_size() const {
    return static_cast<std::size_t>(height) * width * channels;
  }

  std::span<const std::uint8_t> image_bytes(std::size_t i) const {
    return {pixels.data() + i * image_size(), image_size()};
  }

  /// Image i as a float raster scaled to [0, 1].
  RasterImage image(std::size_t i) const {
    if (i >= count) throw InvalidArgument("PackedDataset: index out of range");
    RasterImage img(static_cast<int>(height), static_cast<int>(width),
                    static_cast<int>(channels));
    auto bytes = image_bytes(i);
    for (std::size_t k = 0; k < bytes.size(); ++k) img.data[k] = bytes[k] / 255.0f;
    return img;
  }

  std::uint32_t num_classes() const {
    std::uint32_t n = 0;
    for (auto l : labels) n = std::max(n, l + 1);
    return n;
  }

  void validate() const {
    if (labels.size() != count) throw FormatError("PackedDataset: label count mismatch");
    if (pixels.size() != count * image_size()) {
      throw FormatError("PackedDataset: pixel block size mismatch");
    }
  }

  /// Subset with the given image indices, in order.
  PackedDataset select(std::span<const std::size_t> indices) const {
    PackedDataset out;
    out.height = height;
    out.width = width;
    out.channels = channels;
    out.count = static_cast<std::uint32_t>(indices.size());
    for (auto i : indices) {
      if (i >= count) throw InvalidArgument("PackedDataset: index out of range");
      out.labels.push_back(labels[i]);
      auto bytes = image_bytes(i);
      out.pixels.insert(out.pixels.end(), bytes.begin(), bytes.end());
    }
    return out;
  }

  bool operator==(const PackedDataset&) const = default;
};

/// ITU-R BT.601 luma on the 0..255 scale, rounded half-up. Float inputs are
/// taken to be in [0, 1] and are clamped.
inline GrayImage to_grayscale(const RasterImage& img) {
  if (img.channels != 1 && img.channels != 3) {
    throw InvalidArgument("to_grayscale: unsupported channel count " +
                          std::to_string(img.channels));
  }
  GrayImage out(img.height, img.width);
  const std::size_t plane = img.plane();
  auto to8 = [](double v) {
    v = std::floor(v + 0.5);
    return static_cast<std::uint8_t>(std::clamp(v, 0.0, 255.0));
  };
  auto unit = [](float v) { return std::clamp(static_cast<double>(v), 0.0, 1.0) * 255.0; };
  for (std::size_t i = 0; i < plane; ++i) {
    if (img.channels == 1) {
      out.data[i] = to8(unit(img.data[i]));
    } else {
      const double luma = 0.299 * unit(img.data[i]) + 0.587 * unit(img.data[plane + i]) +
                          0.114 * unit(img.data[2 * plane + i]);
      out.data[i] = to8(luma);
    }
  }
  return out;
}

/// Gray image as a single-channel raster in [0, 1].
inline RasterImage to_raster(const GrayImage& img) {
  RasterImage out(img.height, img.width, 1);
  for (std::size_t i = 0; i < img.data.size(); ++i) out.data[i] = img.data[i] / 255.0f;
  return out;
}

/// Per-channel (x - mean) / std.
inline RasterImage normalize(const RasterImage& img, std::span<const float> mean,
                             std::span<const float> stddev) {
  if (mean.size() != static_cast<std::size_t>(img.channels) ||
      stddev.size() != static_cast<std::size_t>(img.channels)) {
    throw InvalidArgument("normalize: need one mean/std per channel");
  }
  for (float s : stddev) {
    if (!(s > 0.0f)) throw InvalidArgument("normalize: std must be positive");
  }
  RasterImage out = img;
  const std::size_t plane = img.plane();
  for (int c = 0; c < img.channels; ++c) {
    for (std::size_t i = 0; i < plane; ++i) {
      float& v = out.data[c * plane + i];
      v = (v - mean[c]) / stddev[c];
    }
  }
  return out;
}

/// Inverse of normalize.
inline RasterImage denormalize(const RasterImage& img, std::span<const float> mean,
                               std::span<const float> stddev) {
  if (mean.size() != static_cast<std::size_t>(img.channels) ||
      stddev.size() != static_cast<std::size_t>(img.channels)) {
    throw InvalidArgument("denormalize: need one mean/std per channel");
  }
  RasterImage out = img;
  const std::size_t plane = img.plane();
  for (int c = 0; c < img.channels; ++c) {
    for (std::size_t i = 0; i < plane; ++i) {
      float& v = out.data[c * plane + i];
      v = v * stddev[c] + mean[c];
    }
  }
  return out;
}

inline RasterImage flip_horizontal(const RasterImage& img) {
  RasterImage out = img;
  for (int c = 0; c < img.channels; ++c)
    for (int y = 0; y < img.height; ++y)
      for (int x = 0; x < img.width; ++x) out.at(c, y, x) = img.at(c, y, img.width - 1 - x);
  return out;
}

inline RasterImage flip_vertical(const RasterImage& img) {
  RasterImage out = img;
  for (int c = 0; c < img.channels; ++c)
    for (int y = 0; y < img.height; ++y)
      for (int x = 0; x < img.width; ++x) out.at(c, y, x) = img.at(c, img.height - 1 - y, x);
  return out;
}

// ---------------------------------------------------------------------------
// Netpbm

namespace detail {

// Reads one whitespace-delimited header token, skipping '#' comments.
inline std::string pnm_token(const std::vector<std::uint8_t>& bytes, std::size_t& pos) {
  for (;;) {
    while (pos < bytes.size() && std::isspace(bytes[pos])) ++pos;
    if (pos < bytes.size() && bytes[pos] == '#') {
      while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      continue;
    }
    break;
  }
  std::string tok;
  while (pos < bytes.size() && !std::isspace(bytes[pos]) && bytes[pos] != '#') {
    tok.push_back(static_cast<char>(bytes[pos++]));
  }
  if (tok.empty()) throw FormatError("PNM: malformed header");
  return tok;
}

inline int pnm_int(const std::vector<std::uint8_t>& bytes, std::size_t& pos) {
  const std::string tok = pnm_token(bytes, pos);
  if (!std::all_of(tok.begin(), tok.end(), [](char c) { return std::isdigit(c); }) ||
      tok.size() > 9) {
    throw FormatError("PNM: malformed header field '" + tok + "'");
  }
  return std::stoi(tok);
}

}  // namespace detail

inline GrayImage decode_pgm(const std::vector<std::uint8_t>& bytes) {
  std::size_t pos = 0;
  if (detail::pnm_token(bytes, pos) != "P5") throw FormatError("PGM: expected P5 magic");
  const int width = detail::pnm_int(bytes, pos);
  const int height = detail::pnm_int(bytes, pos);
  const int maxval = detail::pnm_int(bytes, pos);
  if (maxval != 255) throw FormatError("PGM: only maxval 255 is supported");
  if (pos >= bytes.size() || !std::isspace(bytes[pos])) {
    throw FormatError("PGM: malformed header");
  }
  ++pos;
  const std::size_t n = static_cast<std::size_t>(width) * height;
  if (bytes.size() - pos < n) throw FormatError("PGM: truncated payload");
  GrayImage img(height, width);
  std::copy_n(bytes.begin() + static_cast<std::ptrdiff_t>(pos), n, img.data.begin());
  return img;
}

inline std::vector<std::uint8_t> encode_pgm(const GrayImage& img) {
  detail::ByteWriter w;
  w.text("P5\n" + std::to_string(img.width) + " " + std::to_string(img.height) + "\n255\n");
  w.raw(img.data.data(), img.data.size());
  return std::move(w.bytes());
}

inline GrayImage load_pgm(const std::string& path) { return decode_pgm(detail::read_file(path)); }

inline void save_pgm(const GrayImage& img, const std::string& path) {
  detail::write_file(path, encode_pgm(img));
}

/// Writes a [0,1] raster as binary PGM (1 channel) or PPM (3 channels).
inline void save_pnm(const RasterImage& img, const std::string& path) {
  if (img.channels != 1 && img.channels != 3) {
    throw InvalidArgument("save_pnm: need 1 or 3 channels");
  }
  detail::ByteWriter w;
  w.text(std::string(img.channels == 1 ? "P5" : "P6") + "\n" + std::to_string(img.width) +
         " " + std::to_string(img.height) + "\n255\n");
  const std::size_t plane = img.plane();
  for (std::size_t i = 0; i < plane; ++i) {
    for (int c = 0; c < img.channels; ++c) {
      const double v = std::clamp(static_cast<double>(img.data[c * plane + i]), 0.0, 1.0);
      const auto byte = static_cast<std::uint8_t>(std::floor(v * 255.0 + 0.5));
      w.raw(&byte, 1);
    }
  }
  detail::write_file(path, w.bytes());
}

// ---------------------------------------------------------------------------
// KIMG packed dataset: "KIMG", u32 version=1, count, H, W, C, count u32
// labels, then count*H*W*C pixel bytes. All integers little-endian.

inline constexpr std::uint32_t kPackedVersion = 1;

inline std::vector<std::uint8_t> encode_packed(const PackedDataset& ds) {
  ds.validate();
  detail::ByteWriter w;
  w.magic("KIMG");
  w.u32(kPackedVersion);
  w.u32(ds.count);
  w.u32(ds.height);
  w.u32(ds.width);
  w.u32(ds.channels);
  for (auto l : ds.labels) w.u32(l);
  w.raw(ds.pixels.data(), ds.pixels.size());
  return std::move(w.bytes());
}

inline PackedDataset decode_packed(const std::vector<std::uint8_t>& bytes) {
  detail::ByteReader r(bytes, "KIMG");
  r.expect_magic("KIMG");
  if (r.u32() != kPackedVersion) throw FormatError("KIMG: unsupported version");
  PackedDataset ds;
  ds.count = r.u32();
  ds.height = r.u32();
  ds.width = r.u32();
  ds.channels = r.u32();
  const std::uint64_t expected =
      static_cast<std::uint64_t>(ds.count) * 4 +
      static_cast<std::uint64_t>(ds.count) * ds.height * ds.width * ds.channels;
  if (r.remaining() != expected) throw FormatError("KIMG: size mismatch");
  ds.labels.resize(ds.count);
  for (auto& l : ds.labels) l = r.u32();
  const std::size_t n = r.remaining();
  const std::uint8_t* p = r.take(n);
  ds.pixels.assign(p, p + n);
  return ds;
}

inline PackedDataset load_packed(const std::string& path) {
  return decode_packed(detail::read_file(path));
}

inline void save_packed(const PackedDataset& ds, const std::string& path) {
  detail::write_file(path, encode_packed(ds));
}

}  // namespace kamim
