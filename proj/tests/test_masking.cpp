#include <gtest/gtest.h>

#include <cmath>

#include "kamim/masking.hpp"
#include "kamim/parallel.hpp"
#include "kamim/tensor.hpp"

using namespace kamim;

TEST(Mask, RatioExtremes) {
  EXPECT_EQ(generate_mask(32, MaskConfig{8, 0.0, 1}).masked_count(), 0u);
  const auto all = generate_mask(32, MaskConfig{8, 1.0, 1});
  EXPECT_EQ(all.masked_count(), 16u);
  for (auto c : all.cells) EXPECT_EQ(c, 1);
}

TEST(Mask, SixteenCellGrid) {
  const auto m = generate_mask(192, MaskConfig{32, 0.6, 3});
  EXPECT_EQ(m.grid_h, 6);
  EXPECT_EQ(m.grid_w, 6);
  EXPECT_EQ(m.masked_count(), 22u);
}

TEST(Mask, CountIsExactAndSetMatchesCells) {
  Rng rng(1);
  for (int trial = 0; trial < 500; ++trial) {
    const int patch = 1 << rng.below(4);
    const int side = patch * (1 + static_cast<int>(rng.below(10)));
    const double ratio = rng.uniform();
    const auto m = generate_mask(side, MaskConfig{patch, ratio, rng.next()});
    const int n = (side / patch) * (side / patch);
    EXPECT_EQ(static_cast<int>(m.masked_count()), static_cast<int>(std::floor(ratio * n + 0.5)));
    int on = 0;
    for (auto c : m.cells) on += c;
    EXPECT_EQ(on, static_cast<int>(m.masked_count()));
    for (int idx : m.masked) EXPECT_EQ(m.cells[idx], 1);
  }
}

TEST(Mask, HalfRoundsUp) {
  EXPECT_EQ(masked_cell_count(0.5, 5), 3);
  EXPECT_EQ(masked_cell_count(0.25, 2), 1);
  EXPECT_EQ(masked_cell_count(0.6, 36), 22);
}

TEST(Mask, SameSeedSameMask) {
  const MaskConfig cfg{8, 0.6, 42};
  EXPECT_EQ(generate_mask(48, cfg), generate_mask(48, cfg));
  set_num_threads(3);
  const auto a = generate_mask(48, cfg);
  set_num_threads(0);
  EXPECT_EQ(a, generate_mask(48, cfg));
}

TEST(Mask, CellFrequencyNearRatio) {
  std::vector<int> hits(36, 0);
  const int draws = 5000;
  for (int s = 0; s < draws; ++s) {
    const auto m = generate_mask(48, MaskConfig{8, 0.6, static_cast<std::uint64_t>(s) * 7919 + 1});
    for (int i = 0; i < 36; ++i) hits[i] += m.cells[i];
  }
  for (int h : hits) EXPECT_NEAR(h / static_cast<double>(draws), 0.6, 0.05);
}

TEST(Mask, GeometryErrors) {
  EXPECT_THROW(generate_mask(30, MaskConfig{8, 0.5, 0}), InvalidArgument);
  EXPECT_THROW(generate_mask(32, MaskConfig{8, 1.5, 0}), InvalidArgument);
  EXPECT_THROW(generate_mask(32, MaskConfig{0, 0.5, 0}), InvalidArgument);
}

TEST(ExpandToTokens, Examples) {
  PatchMask none{2, 2, {0, 0, 0, 0}, {}};
  EXPECT_EQ(expand_to_tokens(none, 32, 16), std::vector<std::uint8_t>(16, 0));
  PatchMask one{2, 2, {0, 1, 0, 0}, {1}};
  const auto t = expand_to_tokens(one, 32, 16);
  int on = 0;
  for (auto v : t) on += v;
  EXPECT_EQ(on, 4);
  EXPECT_EQ(t[2], 1);
  EXPECT_EQ(t[3], 1);
  EXPECT_EQ(t[6], 1);
  EXPECT_EQ(t[7], 1);
  PatchMask full{2, 2, {1, 1, 1, 1}, {0, 1, 2, 3}};
  EXPECT_EQ(expand_to_tokens(full, 8, 4), std::vector<std::uint8_t>(16, 1));
  EXPECT_THROW(expand_to_tokens(one, 32, 12), InvalidArgument);
}

TEST(ExpandToTokens, FractionPreserved) {
  Rng rng(6);
  for (int trial = 0; trial < 50; ++trial) {
    const auto m = generate_mask(32, MaskConfig{8, rng.uniform(), rng.next()});
    const auto t = expand_to_tokens(m, 8, 2);
    int on = 0;
    for (auto v : t) on += v;
    EXPECT_EQ(on * 16, static_cast<int>(m.masked_count()) * static_cast<int>(t.size()));
  }
}

TEST(ApplyMask, Examples) {
  const auto x = Tensor::from_data({3, 2}, {1, 2, 3, 4, 5, 6});
  const auto tok = Tensor::from_data({2}, {9, 8});
  EXPECT_EQ(apply_mask(x, {0, 0, 0}, tok).values(), x.values());
  EXPECT_EQ(apply_mask(x, {1, 1, 1}, tok).values(), (std::vector<float>{9, 8, 9, 8, 9, 8}));
  const auto one = apply_mask(x, {0, 1, 0}, tok).values();
  EXPECT_EQ(one, (std::vector<float>{1, 2, 9, 8, 5, 6}));
  EXPECT_THROW(apply_mask(x, {0, 1}, tok), ShapeError);
  EXPECT_THROW(apply_mask(x, {0, 1, 0}, Tensor::zeros({3})), ShapeError);
}

TEST(ApplyMask, MaskTokenReceivesGradient) {
  auto x = Tensor::from_data({3, 2}, {1, 2, 3, 4, 5, 6}, true);
  auto tok = Tensor::from_data({2}, {0, 0}, true);
  const auto w = Tensor::from_data({3, 2}, {1, 2, 3, 4, 5, 6});
  sum(mul(apply_mask(x, {1, 0, 1}, tok), w)).backward();
  EXPECT_EQ(tok.grad_or_zeros(), (std::vector<float>{6, 8}));
  EXPECT_EQ(x.grad_or_zeros(), (std::vector<float>{0, 0, 3, 4, 0, 0}));
}
