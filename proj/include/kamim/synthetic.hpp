#pragma once

// Procedural RGB classes for desk-scale experiments:
//   0 polygons  - hard-edged convex polygons (corner rich)
//   1 blobs     - smooth Gaussian bumps
//   2 stripes   - sinusoidal gratings
//   3 checker   - rotated checkerboards
//   4 dots      - scattered small discs
// Colors, placement and scale are jittered per sample.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <vector>

#include "kamim/error.hpp"
#include "kamim/image.hpp"
#include "kamim/rng.hpp"

namespace kamim {

inline constexpr int kSyntheticKinds = 5;

namespace detail {

using Color = std::array<double, 3>;

inline double luma(const Color& c) { return 0.299 * c[0] + 0.587 * c[1] + 0.114 * c[2]; }

// Foreground/background pair with luma contrast of at least 0.3.
inline std::pair<Color, Color> color_pair(Rng& rng) {
  for (;;) {
    Color a{rng.uniform(), rng.uniform(), rng.uniform()};
    Color b{rng.uniform(), rng.uniform(), rng.uniform()};
    if (std::abs(luma(a) - luma(b)) >= 0.3) return {a, b};
  }
}

struct Canvas {
  int size;
  std::vector<double> alpha;  // foreground coverage per pixel

  explicit Canvas(int s) : size(s), alpha(static_cast<std::size_t>(s) * s, 0.0) {}
  double& at(int x, int y) { return alpha[static_cast<std::size_t>(y) * size + x]; }
};

inline void draw_polygons(Canvas& cv, Rng& rng) {
  const int shapes = 1 + static_cast<int>(rng.below(3));
  const double s = cv.size;
  for (int k = 0; k < shapes; ++k) {
    const int n = 3 + static_cast<int>(rng.below(3));
    const double cx = rng.uniform(0.2, 0.8) * s, cy = rng.uniform(0.2, 0.8) * s;
    const double rad = rng.uniform(0.18, 0.35) * s;
    const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
    std::vector<std::pair<double, double>> pts;
    for (int i = 0; i < n; ++i) {
      const double a = phase + 2.0 * std::numbers::pi * (i + rng.uniform(-0.15, 0.15)) / n;
      pts.emplace_back(cx + rad * std::cos(a), cy + rad * std::sin(a));
    }
    for (int y = 0; y < cv.size; ++y) {
      for (int x = 0; x < cv.size; ++x) {
        const double px = x + 0.5, py = y + 0.5;
        bool inside = true;
        for (int i = 0; i < n && inside; ++i) {
          const auto [x0, y0] = pts[i];
          const auto [x1, y1] = pts[(i + 1) % n];
          inside = (x1 - x0) * (py - y0) - (y1 - y0) * (px - x0) >= 0.0;
        }
        if (inside) cv.at(x, y) = 1.0 - cv.at(x, y);
      }
    }
  }
}

inline void draw_blobs(Canvas& cv, Rng& rng) {
  const int blobs = 1 + static_cast<int>(rng.below(3));
  const double s = cv.size;
  std::vector<std::array<double, 3>> b;
  for (int k = 0; k < blobs; ++k) b.push_back({rng.uniform(0.15, 0.85) * s, rng.uniform(0.15, 0.85) * s, rng.uniform(0.12, 0.25) * s});
  for (int y = 0; y < cv.size; ++y) {
    for (int x = 0; x < cv.size; ++x) {
      double v = 0.0;
      for (const auto& [cx, cy, sig] : b) {
        const double dx = x + 0.5 - cx, dy = y + 0.5 - cy;
        v += std::exp(-(dx * dx + dy * dy) / (2.0 * sig * sig));
      }
      cv.at(x, y) = std::min(1.0, v);
    }
  }
}

inline void draw_stripes(Canvas& cv, Rng& rng) {
  const double theta = rng.uniform(0.0, std::numbers::pi);
  const double period = rng.uniform(0.2, 0.4) * cv.size;
  const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
  for (int y = 0; y < cv.size; ++y) {
    for (int x = 0; x < cv.size; ++x) {
      const double t = (x * std::cos(theta) + y * std::sin(theta)) / period;
      cv.at(x, y) = 0.5 + 0.5 * std::sin(2.0 * std::numbers::pi * t + phase);
    }
  }
}

inline void draw_checker(Canvas& cv, Rng& rng) {
  const double theta = rng.uniform(0.0, std::numbers::pi / 2);
  const double cell = rng.uniform(0.15, 0.3) * cv.size;
  const double ox = rng.uniform(0.0, cell), oy = rng.uniform(0.0, cell);
  for (int y = 0; y < cv.size; ++y) {
    for (int x = 0; x < cv.size; ++x) {
      const double u = (x * std::cos(theta) + y * std::sin(theta) + ox) / cell;
      const double v = (-x * std::sin(theta) + y * std::cos(theta) + oy) / cell;
      cv.at(x, y) = ((static_cast<long>(std::floor(u)) + static_cast<long>(std::floor(v))) & 1) ? 1.0 : 0.0;
    }
  }
}

inline void draw_dots(Canvas& cv, Rng& rng) {
  const int dots = 4 + static_cast<int>(rng.below(6));
  const double s = cv.size;
  for (int k = 0; k < dots; ++k) {
    const double cx = rng.uniform(0.05, 0.95) * s, cy = rng.uniform(0.05, 0.95) * s;
    const double r = rng.uniform(0.04, 0.08) * s;
    for (int y = 0; y < cv.size; ++y)
      for (int x = 0; x < cv.size; ++x)
        if (std::hypot(x + 0.5 - cx, y + 0.5 - cy) <= r) cv.at(x, y) = 1.0;
  }
}

}  // namespace detail

/// One synthetic sample of class `kind`, 8-bit channel-planar RGB.
inline std::vector<std::uint8_t> synthetic_image(int kind, int img_size, Rng& rng) {
  detail::Canvas cv(img_size);
  switch (kind) {
    case 0: detail::draw_polygons(cv, rng); break;
    case 1: detail::draw_blobs(cv, rng); break;
    case 2: detail::draw_stripes(cv, rng); break;
    case 3: detail::draw_checker(cv, rng); break;
    case 4: detail::draw_dots(cv, rng); break;
    default: throw InvalidArgument("synthetic_image: unknown class " + std::to_string(kind));
  }
  const auto [fg, bg] = detail::color_pair(rng);
  const std::size_t plane = static_cast<std::size_t>(img_size) * img_size;
  std::vector<std::uint8_t> out(plane * 3);
  for (int c = 0; c < 3; ++c) {
    for (std::size_t i = 0; i < plane; ++i) {
      const double v = bg[c] + (fg[c] - bg[c]) * cv.alpha[i] + rng.normal(0.0, 2.0 / 255.0);
      out[c * plane + i] = static_cast<std::uint8_t>(std::clamp(std::floor(v * 255.0 + 0.5), 0.0, 255.0));
    }
  }
  return out;
}

/// n_per_class samples of each of the first `classes` kinds, interleaved by
/// class (sample j has label j % classes). Deterministic in `seed`.
inline PackedDataset make_synthetic(int n_per_class, int classes, int img_size, std::uint64_t seed) {
  if (classes < 2 || classes > kSyntheticKinds) {
    throw InvalidArgument("make_synthetic: classes must be in [2, " + std::to_string(kSyntheticKinds) + "]");
  }
  if (n_per_class < 0) throw InvalidArgument("make_synthetic: negative sample count");
  if (img_size < 8) throw InvalidArgument("make_synthetic: image side must be >= 8");
  PackedDataset ds;
  ds.count = static_cast<std::uint32_t>(n_per_class * classes);
  ds.height = ds.width = static_cast<std::uint32_t>(img_size);
  ds.channels = 3;
  ds.pixels.reserve(ds.count * ds.image_size());
  for (int i = 0; i < n_per_class; ++i) {
    for (int c = 0; c < classes; ++c) {
      Rng rng = Rng::derive(seed, static_cast<std::uint64_t>(c), static_cast<std::uint64_t>(i));
      const auto img = synthetic_image(c, img_size, rng);
      ds.pixels.insert(ds.pixels.end(), img.begin(), img.end());
      ds.labels.push_back(static_cast<std::uint32_t>(c));
    }
  }
  return ds;
}

/// First `count` samples (labels stay interleaved, so classes stay balanced).
inline PackedDataset make_synthetic_split(int count, int classes, int img_size, std::uint64_t seed) {
  if (count < 0) throw InvalidArgument("make_synthetic_split: negative sample count");
  const int per_class = (count + classes - 1) / classes;
  PackedDataset full = make_synthetic(per_class, classes, img_size, seed);
  std::vector<std::size_t> idx(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) idx[i] = static_cast<std::size_t>(i);
  return full.select(idx);
}

}  // namespace kamim
