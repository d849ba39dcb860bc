#pragma once

// FAST-12 corner detection: segment test on the radius-3 Bresenham circle,
// optional cardinal pre-test, arc-sum corner score and 8-neighbour
// non-maximal suppression.

#include <array>
#include <cstdint>
#include <cstdlib>
#include <string>
#include <vector>

#include "kamim/error.hpp"
#include "kamim/image.hpp"
#include "kamim/parallel.hpp"

namespace kamim::fast {

struct Offset {
  int dx;
  int dy;
  bool operator==(const Offset&) const = default;
};

inline constexpr int kCircleSize = 16;
inline constexpr int kArcLength = 12;
inline constexpr int kRadius = 3;
inline constexpr int kDefaultThreshold = 20;

/// Radius-3 circle, clockwise (y grows downward) from (0,-3).
/// Indices 0, 4, 8 and 12 are the cardinal points.
inline constexpr std::array<Offset, kCircleSize> circle_offsets() {
  return {{{0, -3}, {1, -3}, {2, -2}, {3, -1}, {3, 0}, {3, 1}, {2, 2}, {1, 3},
           {0, 3}, {-1, 3}, {-2, 2}, {-3, 1}, {-3, 0}, {-3, -1}, {-2, -2}, {-1, -3}}};
}

enum class SegmentResult { none, brighter, darker };

struct Keypoint {
  int x = 0;
  int y = 0;
  float score = 0.0f;
  bool operator==(const Keypoint&) const = default;
};

/// Binary grid, 1 at retained keypoints.
struct KeypointMap {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> data;

  std::uint8_t at(int x, int y) const { return data[static_cast<std::size_t>(y) * width + x]; }
  std::size_t count() const {
    std::size_t n = 0;
    for (auto v : data) n += v;
    return n;
  }
};

struct DetectOptions {
  int threshold = kDefaultThreshold;
  bool nms = true;
  bool high_speed_test = true;
};

namespace detail {

inline void check_fits(const GrayImage& img, int x, int y) {
  if (x < kRadius || y < kRadius || x >= img.width - kRadius || y >= img.height - kRadius) {
    throw InvalidArgument("FAST: circle around (" + std::to_string(x) + "," +
                          std::to_string(y) + ") leaves the image");
  }
}

// Per-circle-position classification: +1 brighter, -1 darker, 0 similar.
inline std::array<int, kCircleSize> classify(const GrayImage& img, int x, int y, int t) {
  constexpr auto circle = circle_offsets();
  const int center = img.at(x, y);
  std::array<int, kCircleSize> state{};
  for (int i = 0; i < kCircleSize; ++i) {
    const int v = img.at(x + circle[i].dx, y + circle[i].dy);
    state[i] = v > center + t ? 1 : (v < center - t ? -1 : 0);
  }
  return state;
}

// Longest cyclic run of `want` in state; returns {length, start}.
inline std::pair<int, int> longest_run(const std::array<int, kCircleSize>& state, int want) {
  int best = 0;
  int best_start = 0;
  int run = 0;
  int run_start = 0;
  for (int i = 0; i < 2 * kCircleSize; ++i) {
    if (state[i % kCircleSize] == want) {
      if (run == 0) run_start = i;
      ++run;
      if (run > best) {
        best = run;
        best_start = run_start % kCircleSize;
      }
    } else {
      run = 0;
    }
  }
  if (best > kCircleSize) best = kCircleSize;
  return {best, best_start};
}

// Any 12-arc contains 3 of the 4 cardinals, so a pixel with fewer than 3
// cardinals on one side cannot pass that side.
inline bool cardinal_pretest(const GrayImage& img, int x, int y, int t) {
  const int center = img.at(x, y);
  const int c[4] = {img.at(x, y - 3), img.at(x + 3, y), img.at(x, y + 3), img.at(x - 3, y)};
  int bright = 0;
  int dark = 0;
  for (int v : c) {
    bright += v > center + t;
    dark += v < center - t;
  }
  return bright >= 3 || dark >= 3;
}

inline SegmentResult segment_test_unchecked(const GrayImage& img, int x, int y, int t) {
  const auto state = classify(img, x, y, t);
  if (longest_run(state, 1).first >= kArcLength) return SegmentResult::brighter;
  if (longest_run(state, -1).first >= kArcLength) return SegmentResult::darker;
  return SegmentResult::none;
}

inline float score_unchecked(const GrayImage& img, int x, int y, int t, SegmentResult kind) {
  constexpr auto circle = circle_offsets();
  const auto state = classify(img, x, y, t);
  const int want = kind == SegmentResult::brighter ? 1 : -1;
  const auto [length, start] = longest_run(state, want);
  const int center = img.at(x, y);
  int sum = 0;
  for (int k = 0; k < length; ++k) {
    const int i = (start + k) % kCircleSize;
    sum += std::abs(img.at(x + circle[i].dx, y + circle[i].dy) - center) - t;
  }
  return static_cast<float>(sum);
}

}  // namespace detail

/// Brighter/darker when at least 12 contiguous circle pixels (cyclic) are all
/// above I_p + t or all below I_p - t.
inline SegmentResult segment_test(const GrayImage& img, int x, int y, int threshold) {
  detail::check_fits(img, x, y);
  return detail::segment_test_unchecked(img, x, y, threshold);
}

/// Sum of (|I_circle - I_p| - t) over the longest passing arc.
inline float corner_score(const GrayImage& img, int x, int y, int threshold) {
  detail::check_fits(img, x, y);
  const SegmentResult kind = detail::segment_test_unchecked(img, x, y, threshold);
  if (kind == SegmentResult::none) {
    throw InvalidArgument("corner_score: (" + std::to_string(x) + "," + std::to_string(y) +
                          ") is not a corner");
  }
  return detail::score_unchecked(img, x, y, threshold, kind);
}

/// All interior corners in (y, x) order. With nms, a corner survives iff it
/// beats every passing 8-neighbour: higher score, or equal score and a
/// lexicographically smaller (y, x).
inline std::vector<Keypoint> detect(const GrayImage& img, const DetectOptions& opts = {}) {
  if (img.width < 2 * kRadius + 1 || img.height < 2 * kRadius + 1) {
    throw InvalidArgument("detect: image must be at least 7x7");
  }
  if (opts.threshold < 0) throw InvalidArgument("detect: negative threshold");
  const int w = img.width;
  const int h = img.height;
  // 0 marks a non-corner; corners store score + 1 so zero-score corners stay visible.
  std::vector<float> score(static_cast<std::size_t>(w) * h, 0.0f);
  parallel_for(kRadius, h - kRadius, [&](std::int64_t yy) {
    const int y = static_cast<int>(yy);
    for (int x = kRadius; x < w - kRadius; ++x) {
      if (opts.high_speed_test && !detail::cardinal_pretest(img, x, y, opts.threshold)) continue;
      const auto kind = detail::segment_test_unchecked(img, x, y, opts.threshold);
      if (kind == SegmentResult::none) continue;
      score[static_cast<std::size_t>(y) * w + x] =
          detail::score_unchecked(img, x, y, opts.threshold, kind) + 1.0f;
    }
  }, 16);

  std::vector<Keypoint> out;
  for (int y = kRadius; y < h - kRadius; ++y) {
    for (int x = kRadius; x < w - kRadius; ++x) {
      const float s = score[static_cast<std::size_t>(y) * w + x];
      if (s == 0.0f) continue;
      bool keep = true;
      if (opts.nms) {
        for (int dy = -1; dy <= 1 && keep; ++dy) {
          for (int dx = -1; dx <= 1; ++dx) {
            if (dx == 0 && dy == 0) continue;
            const float n = score[static_cast<std::size_t>(y + dy) * w + (x + dx)];
            if (n == 0.0f) continue;
            const bool neighbour_first = dy < 0 || (dy == 0 && dx < 0);
            if (n > s || (n == s && neighbour_first)) {
              keep = false;
              break;
            }
          }
        }
      }
      if (keep) out.push_back({x, y, s - 1.0f});
    }
  }
  return out;
}

inline std::vector<Keypoint> detect(const GrayImage& img, int threshold, bool nms) {
  return detect(img, DetectOptions{threshold, nms, true});
}

/// Rasterizes keypoints into a 0/1 grid; duplicates collapse.
inline KeypointMap keypoint_map(const std::vector<Keypoint>& keypoints, int height, int width) {
  if (height < 0 || width < 0) throw InvalidArgument("keypoint_map: negative size");
  KeypointMap map{height, width, std::vector<std::uint8_t>(static_cast<std::size_t>(height) * width, 0)};
  for (const auto& kp : keypoints) {
    if (kp.x < 0 || kp.y < 0 || kp.x >= width || kp.y >= height) {
      throw InvalidArgument("keypoint_map: keypoint (" + std::to_string(kp.x) + "," +
                            std::to_string(kp.y) + ") out of bounds");
    }
    map.data[static_cast<std::size_t>(kp.y) * width + kp.x] = 1;
  }
  return map;
}

/// Map as an 8-bit image (0 -> 0, 1 -> 255).
inline GrayImage to_image(const KeypointMap& map) {
  GrayImage img(map.height, map.width);
  for (std::size_t i = 0; i < map.data.size(); ++i) img.data[i] = map.data[i] ? 255 : 0;
  return img;
}

}  // namespace kamim::fast
