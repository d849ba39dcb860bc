#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "kamim/binary_io.hpp"
#include "kamim/weighting.hpp"
#include "support.hpp"

using namespace kamim;

namespace {

fast::KeypointMap random_map(int h, int w, double p, Rng& rng) {
  fast::KeypointMap m{h, w, std::vector<std::uint8_t>(static_cast<std::size_t>(h) * w, 0)};
  for (auto& v : m.data) v = rng.uniform() < p ? 1 : 0;
  return m;
}

DensityMap omega(int gh, int gw, std::vector<double> v) { return DensityMap{gh, gw, std::move(v)}; }

}  // namespace

TEST(Density, Examples) {
  fast::KeypointMap zero{16, 16, std::vector<std::uint8_t>(256, 0)};
  EXPECT_EQ(density_map(zero, 8).values, std::vector<double>(4, 0.0));

  auto four = zero;
  four.data[1 * 16 + 1] = four.data[2 * 16 + 5] = four.data[7 * 16 + 0] = four.data[6 * 16 + 7] = 1;
  const auto d = density_map(four, 8);
  ASSERT_EQ(d.grid_h, 2);
  ASSERT_EQ(d.grid_w, 2);
  EXPECT_EQ(d.values, (std::vector<double>{0.0625, 0.0, 0.0, 0.0}));

  fast::KeypointMap full{16, 16, std::vector<std::uint8_t>(256, 1)};
  EXPECT_EQ(density_map(full, 4).values, std::vector<double>(16, 1.0));
}

TEST(Density, NonDivisibleThrows) {
  fast::KeypointMap m{12, 16, std::vector<std::uint8_t>(192, 0)};
  EXPECT_THROW(density_map(m, 8), InvalidArgument);
  EXPECT_THROW(density_map(m, 0), InvalidArgument);
}

TEST(Density, MatchesCount) {
  Rng rng(3);
  const auto m = random_map(24, 16, 0.2, rng);
  const auto d = density_map(m, 4);
  for (int gy = 0; gy < d.grid_h; ++gy) {
    for (int gx = 0; gx < d.grid_w; ++gx) {
      int n = 0;
      for (int y = 0; y < 4; ++y)
        for (int x = 0; x < 4; ++x) n += m.at(gx * 4 + x, gy * 4 + y);
      EXPECT_DOUBLE_EQ(d.at(gy, gx), n / 16.0);
    }
  }
}

TEST(Weights, Examples) {
  const auto uniform = weight_map(omega(2, 2, {0.3, 0.3, 0.3, 0.3}), 0.25);
  EXPECT_EQ(uniform.values, std::vector<float>(4, 1.0f));

  const auto w = weight_map(omega(2, 2, {0.0625, 0, 0, 0}), 0.25);
  EXPECT_NEAR(w.values[0], 1.284025, 1e-5);
  EXPECT_NEAR(w.values[0], std::exp(0.25), 1e-6);
  EXPECT_EQ(w.values[1], 1.0f);
  EXPECT_EQ(w.values[2], 1.0f);
  EXPECT_EQ(w.values[3], 1.0f);

  const auto flat = weight_map(omega(2, 2, {0.0625, 0, 0, 0}), 1e6);
  for (float v : flat.values) EXPECT_LE(std::abs(v - 1.0f), 1e-6);
}

TEST(Weights, BadTemperature) {
  EXPECT_THROW(weight_map(omega(1, 1, {0.0}), 0.0), InvalidArgument);
  EXPECT_THROW(weight_map(omega(1, 1, {0.0}), -1.0), InvalidArgument);
}

TEST(Weights, OverflowIsReported) { EXPECT_THROW(weight_map(omega(1, 2, {0.0, 1.0}), 1e-3), NumericError); }

TEST(Weights, MinIsOneAndShiftInvariant) {
  Rng rng(7);
  for (int trial = 0; trial < 200; ++trial) {
    const int gh = 1 + static_cast<int>(rng.below(6)), gw = 1 + static_cast<int>(rng.below(6));
    std::vector<double> v(static_cast<std::size_t>(gh * gw));
    for (auto& x : v) x = rng.below(17) / 16.0;
    const double T = rng.uniform(0.1, 2.0);
    const auto w = weight_map(omega(gh, gw, v), T);
    const float lo = *std::min_element(w.values.begin(), w.values.end());
    EXPECT_GE(lo, 1.0f);
    EXPECT_LE(lo, 1.0f + 1e-6f);

    const double c = rng.uniform(-3.0, 3.0);
    auto shifted = v;
    for (auto& x : shifted) x += c;
    const auto ws = weight_map(omega(gh, gw, shifted), T);
    for (std::size_t i = 0; i < v.size(); ++i) EXPECT_NEAR(ws.values[i], w.values[i], 1e-6 * w.values[i]);

    const auto hi = std::max_element(v.begin(), v.end()) - v.begin();
    EXPECT_EQ(w.values[static_cast<std::size_t>(hi)], *std::max_element(w.values.begin(), w.values.end()));
  }
}

TEST(Weights, MonotoneInDensity) {
  Rng rng(11);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> b(9), a(9);
    for (auto& x : b) x = rng.uniform(0.1, 0.5);
    b[0] = 0.0;
    for (std::size_t i = 0; i < 9; ++i) a[i] = b[i] + (i == 0 ? 0.0 : rng.uniform(0.0, 0.3));
    const auto wa = weight_map(omega(3, 3, a), 0.25);
    const auto wb = weight_map(omega(3, 3, b), 0.25);
    for (std::size_t i = 0; i < 9; ++i) EXPECT_GE(wa.values[i], wb.values[i]);
  }
}

TEST(Weights, LowerTemperatureSharpens) {
  const auto d = omega(1, 3, {0.0, 0.1, 0.3});
  double prev = 1.0;
  for (double T : {10.0, 1.0, 0.5, 0.25, 0.1}) {
    const auto w = weight_map(d, T);
    const double ratio = *std::max_element(w.values.begin(), w.values.end());
    EXPECT_GT(ratio, prev);
    prev = ratio;
  }
}

TEST(PixelWeights, Broadcast) {
  WeightMap w{2, 2, {1, 2, 3, 4}};
  const auto r = pixel_weights(w, 2, 4, 4);
  const std::vector<float> expected{1, 1, 2, 2, 1, 1, 2, 2, 3, 3, 4, 4, 3, 3, 4, 4};
  EXPECT_EQ(r.data, expected);
  WeightMap ones{2, 2, {1, 1, 1, 1}};
  EXPECT_EQ(pixel_weights(ones, 3, 6, 6).data, std::vector<float>(36, 1.0f));
  EXPECT_THROW(pixel_weights(w, 2, 4, 6), InvalidArgument);
}

TEST(KeypointWeights, ConstantImageIsUniform) {
  GrayImage img(32, 32, 90);
  const auto w = keypoint_weights(img, WeightConfig{8, 0.25});
  EXPECT_EQ(w.values, std::vector<float>(16, 1.0f));
}

TEST(KeypointWeights, CornersRaiseWeight) {
  GrayImage img(32, 32, 0);
  for (int y = 4; y < 6; ++y)
    for (int x = 4; x < 6; ++x) img.at(x, y) = 255;
  const auto w = keypoint_weights(img, WeightConfig{8, 0.25});
  EXPECT_GT(*std::max_element(w.values.begin(), w.values.end()), 1.0f);
  EXPECT_EQ(w.at(3, 3), 1.0f);
}

TEST(Kwmf, Layout) {
  WeightMap w{1, 2, {1.0f, 2.0f}};
  const auto b = encode_weight_map(w);
  ASSERT_EQ(b.size(), 4u + 12u + 8u);
  EXPECT_EQ(std::string(b.begin(), b.begin() + 4), "KWMF");
  EXPECT_EQ(b[4], 1);
  EXPECT_EQ(b[8], 1);
  EXPECT_EQ(b[12], 2);
  // 2.0f = 0x40000000
  EXPECT_EQ(b[23], 0x40);
}

TEST(Kwmf, RandomRoundTrip) {
  test::TempDir dir;
  Rng rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    WeightMap w{1 + static_cast<int>(rng.below(8)), 1 + static_cast<int>(rng.below(8)), {}};
    for (int i = 0; i < w.grid_h * w.grid_w; ++i) w.values.push_back(static_cast<float>(rng.uniform(1.0, 30.0)));
    save_weight_map(w, dir.file("w.kwmf"));
    const auto back = load_weight_map(dir.file("w.kwmf"));
    EXPECT_EQ(back, w);
    EXPECT_EQ(encode_weight_map(back), detail::read_file(dir.file("w.kwmf")));
  }
}

TEST(Kwmf, Errors) {
  auto b = encode_weight_map(WeightMap{1, 1, {1.0f}});
  auto bad = b;
  bad[1] = 'X';
  EXPECT_THROW(decode_weight_map(bad), FormatError);
  b.push_back(0);
  EXPECT_THROW(decode_weight_map(b), FormatError);
}
