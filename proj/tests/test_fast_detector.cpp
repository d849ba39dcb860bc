#include <gtest/gtest.h>

#include <algorithm>
#include <cstdlib>
#include <set>

#include "kamim/fast.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace kamim;
using namespace kamim::fast;

namespace {

std::set<std::pair<int, int>> as_set(const std::vector<Keypoint>& kps) {
  std::set<std::pair<int, int>> s;
  for (const auto& k : kps) s.insert({k.y, k.x});
  return s;
}

// 7x7 patch with the center at `center` and the circle split into a run of
// `run` pixels at `inside` starting at `start`, the rest at `outside`.
GrayImage arc_patch(int center, int run, int inside, int outside, int start = 0) {
  GrayImage img(7, 7, static_cast<std::uint8_t>(center));
  const auto circle = circle_offsets();
  for (int i = 0; i < 16; ++i) {
    const auto o = circle[(start + i) % 16];
    img.at(3 + o.dx, 3 + o.dy) = static_cast<std::uint8_t>(i < run ? inside : outside);
  }
  return img;
}

}  // namespace

TEST(Circle, SixteenOffsetsWithCardinals) {
  const auto c = circle_offsets();
  ASSERT_EQ(c.size(), 16u);
  EXPECT_EQ(c[0], (Offset{0, -3}));
  EXPECT_EQ(c[4], (Offset{3, 0}));
  EXPECT_EQ(c[8], (Offset{0, 3}));
  EXPECT_EQ(c[12], (Offset{-3, 0}));
}

TEST(Circle, BresenhamShapeAndRotationSymmetry) {
  const auto c = circle_offsets();
  std::set<std::pair<int, int>> pts;
  for (const auto& o : c) {
    const int ax = std::abs(o.dx), ay = std::abs(o.dy);
    EXPECT_TRUE(std::max(ax, ay) == 3 || ax + ay == 4);
    pts.insert({o.dx, o.dy});
  }
  EXPECT_EQ(pts.size(), 16u);
  for (const auto& [x, y] : pts) EXPECT_TRUE(pts.count({-y, x}));
  // clockwise with y down: each step moves to an adjacent circle pixel
  for (int i = 0; i < 16; ++i) {
    const auto a = c[i], b = c[(i + 1) % 16];
    EXPECT_LE(std::max(std::abs(a.dx - b.dx), std::abs(a.dy - b.dy)), 1);
  }
}

TEST(SegmentTest, ConstantImageHasNoCorners) {
  GrayImage img(16, 16, 128);
  for (int y = 3; y < 13; ++y)
    for (int x = 3; x < 13; ++x) EXPECT_EQ(segment_test(img, x, y, 10), SegmentResult::none);
  EXPECT_TRUE(detect(img, 10, false).empty());
}

TEST(SegmentTest, FullCircleBrighter) {
  EXPECT_EQ(segment_test(arc_patch(0, 16, 255, 255), 3, 3, 50), SegmentResult::brighter);
  EXPECT_EQ(segment_test(arc_patch(255, 16, 0, 0), 3, 3, 50), SegmentResult::darker);
}

TEST(SegmentTest, ElevenVersusTwelve) {
  for (int start = 0; start < 16; ++start) {
    EXPECT_EQ(segment_test(arc_patch(100, 11, 200, 100, start), 3, 3, 20), SegmentResult::none) << start;
    EXPECT_EQ(segment_test(arc_patch(100, 12, 200, 100, start), 3, 3, 20), SegmentResult::brighter) << start;
    EXPECT_EQ(segment_test(arc_patch(100, 12, 10, 100, start), 3, 3, 20), SegmentResult::darker) << start;
  }
}

TEST(SegmentTest, ThresholdIsStrict) {
  // exactly p + t is not brighter
  EXPECT_EQ(segment_test(arc_patch(100, 16, 120, 120), 3, 3, 20), SegmentResult::none);
  EXPECT_EQ(segment_test(arc_patch(100, 16, 121, 121), 3, 3, 20), SegmentResult::brighter);
}

TEST(SegmentTest, OutOfBoundsThrows) {
  GrayImage img(10, 10);
  EXPECT_THROW(segment_test(img, 2, 5, 10), InvalidArgument);
  EXPECT_THROW(segment_test(img, 5, 7, 10), InvalidArgument);
}

TEST(CornerScore, Examples) {
  const int t = 20;
  EXPECT_FLOAT_EQ(corner_score(arc_patch(100, 16, 100 + t + 1, 0), 3, 3, t), 16.0f);
  EXPECT_FLOAT_EQ(corner_score(arc_patch(100, 16, 100 + 2 * t, 0), 3, 3, t), 16.0f * t);
  EXPECT_THROW(corner_score(arc_patch(100, 16, 100, 100), 3, 3, t), InvalidArgument);
}

TEST(Detect, TooSmallImage) { EXPECT_THROW(detect(GrayImage(6, 10), 20, false), InvalidArgument); }

TEST(Detect, WhiteSquareMatchesOracle) {
  GrayImage img(32, 32, 0);
  for (int y = 10; y < 22; ++y)
    for (int x = 10; x < 22; ++x) img.at(x, y) = 255;
  const auto raw = detect(img, 20, false);
  EXPECT_EQ(as_set(raw), oracle::corners(img, 20));
  // a right angle leaves only 11 contiguous darker circle pixels
  EXPECT_TRUE(raw.empty());
  const auto kept = as_set(detect(img, 20, true));
  for (const auto& p : kept) EXPECT_TRUE(as_set(raw).count(p));
}

TEST(Detect, SmallSquaresAreCorners) {
  GrayImage img(32, 32, 0);
  for (int y = 10; y < 12; ++y)
    for (int x = 10; x < 12; ++x) img.at(x, y) = 255;
  const auto raw = detect(img, 20, false);
  EXPECT_EQ(as_set(raw), oracle::corners(img, 20));
  EXPECT_EQ(raw.size(), 4u);
  const auto kept = detect(img, 20, true);
  ASSERT_EQ(kept.size(), 1u);
  EXPECT_EQ(kept[0].x, 10);
  EXPECT_EQ(kept[0].y, 10);
}

TEST(Detect, OracleEquivalenceOnRandomImages) {
  Rng rng(17);
  for (int trial = 0; trial < 12; ++trial) {
    const auto img = oracle::structured_image(40, 40, rng);
    for (int t : {10, 20, 40}) {
      EXPECT_EQ(as_set(detect(img, DetectOptions{t, false, true})), oracle::corners(img, t));
    }
  }
}

TEST(Detect, PretestNeverChangesOutput) {
  Rng rng(23);
  for (int trial = 0; trial < 12; ++trial) {
    const auto img = oracle::structured_image(40, 40, rng);
    for (int t : {5, 20, 60}) {
      for (bool nms : {false, true}) {
        EXPECT_EQ(detect(img, DetectOptions{t, nms, true}), detect(img, DetectOptions{t, nms, false}));
      }
    }
  }
}

TEST(Detect, OutputIsRowMajorAndInterior) {
  Rng rng(4);
  const auto img = oracle::structured_image(48, 40, rng);
  const auto kps = detect(img, 10, false);
  for (std::size_t i = 0; i < kps.size(); ++i) {
    EXPECT_GE(kps[i].x, 3);
    EXPECT_GE(kps[i].y, 3);
    EXPECT_LT(kps[i].x, 40 - 3);
    EXPECT_LT(kps[i].y, 48 - 3);
    EXPECT_GE(kps[i].score, 0.0f);
    if (i > 0) {
      EXPECT_LT(std::make_pair(kps[i - 1].y, kps[i - 1].x), std::make_pair(kps[i].y, kps[i].x));
    }
  }
}

TEST(Detect, MonotoneInThreshold) {
  Rng rng(8);
  for (int trial = 0; trial < 6; ++trial) {
    const auto img = oracle::structured_image(40, 40, rng);
    const auto lo = as_set(detect(img, 10, false));
    const auto hi = as_set(detect(img, 30, false));
    for (const auto& p : hi) EXPECT_TRUE(lo.count(p));
  }
}

TEST(Detect, NmsLeavesNoAdjacentPairs) {
  Rng rng(12);
  for (int trial = 0; trial < 6; ++trial) {
    const auto img = oracle::structured_image(48, 48, rng);
    const auto raw = as_set(detect(img, 10, false));
    const auto kept = detect(img, 10, true);
    const auto ks = as_set(kept);
    for (const auto& [y, x] : ks) {
      EXPECT_TRUE(raw.count({y, x}));
      for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx)
          if (dx || dy) {
            EXPECT_FALSE(ks.count({y + dy, x + dx}));
          }
    }
  }
}

TEST(Detect, NmsTieKeepsFirstInRowMajorOrder) {
  // two equal-score neighbours: a 2-pixel bright bar on a dark field
  GrayImage img(11, 12, 0);
  img.at(5, 5) = 200;
  img.at(6, 5) = 200;
  const auto raw = detect(img, 20, false);
  ASSERT_TRUE(as_set(raw).count({5, 5}) && as_set(raw).count({5, 6}));
  const auto kept = as_set(detect(img, 20, true));
  EXPECT_TRUE(kept.count({5, 5}));
  EXPECT_FALSE(kept.count({5, 6}));
}

TEST(Detect, InvariantToBrightnessShift) {
  Rng rng(31);
  for (int trial = 0; trial < 6; ++trial) {
    auto img = oracle::structured_image(40, 40, rng);
    for (auto& v : img.data) v = static_cast<std::uint8_t>(40 + v * 150 / 255);
    auto shifted = img;
    for (auto& v : shifted.data) v = static_cast<std::uint8_t>(v + 50);
    EXPECT_EQ(as_set(detect(img, 15, true)), as_set(detect(shifted, 15, true)));
  }
}

TEST(Detect, DeterministicAcrossThreadCounts) {
  Rng rng(2);
  const auto img = oracle::structured_image(64, 64, rng);
  set_num_threads(1);
  const auto a = detect(img, 15, true);
  set_num_threads(4);
  const auto b = detect(img, 15, true);
  set_num_threads(0);
  EXPECT_EQ(a, b);
}

TEST(KeypointMap, Examples) {
  const auto empty = keypoint_map({}, 8, 8);
  EXPECT_EQ(empty.count(), 0u);
  const auto one = keypoint_map({{3, 5, 1.0f}}, 8, 8);
  EXPECT_EQ(one.count(), 1u);
  EXPECT_EQ(one.at(3, 5), 1);
  const auto dup = keypoint_map({{3, 5, 1.0f}, {3, 5, 2.0f}}, 8, 8);
  EXPECT_EQ(dup.data, one.data);
  EXPECT_THROW(keypoint_map({{8, 0, 0.0f}}, 8, 8), InvalidArgument);
  EXPECT_EQ(to_image(one).at(3, 5), 255);
}
