#include <gtest/gtest.h>

#include <cmath>

#include "kamim/binary_io.hpp"
#include "kamim/image.hpp"
#include "support.hpp"

using namespace kamim;

TEST(Grayscale, BlackAndWhite) {
  RasterImage black(4, 5, 3, 0.0f);
  EXPECT_EQ(to_grayscale(black).data, std::vector<std::uint8_t>(20, 0));
  RasterImage white(4, 5, 3, 1.0f);
  EXPECT_EQ(to_grayscale(white).data, std::vector<std::uint8_t>(20, 255));
}

TEST(Grayscale, PureRedIs76) {
  RasterImage red(1, 1, 3, 0.0f);
  red.at(0, 0, 0) = 1.0f;
  EXPECT_EQ(to_grayscale(red).at(0, 0), 76);
}

TEST(Grayscale, SingleChannelCopied) {
  RasterImage g(2, 2, 1);
  g.data = {0.0f, 10 / 255.0f, 200 / 255.0f, 1.0f};
  EXPECT_EQ(to_grayscale(g).data, (std::vector<std::uint8_t>{0, 10, 200, 255}));
}

TEST(Grayscale, RejectsTwoChannels) { EXPECT_THROW(to_grayscale(RasterImage(2, 2, 2)), InvalidArgument); }

TEST(Grayscale, WithinOneOfExactLuma) {
  Rng rng(5);
  RasterImage img(16, 16, 3);
  for (auto& v : img.data) v = static_cast<float>(rng.below(256)) / 255.0f;
  const auto g = to_grayscale(img);
  for (int y = 0; y < 16; ++y) {
    for (int x = 0; x < 16; ++x) {
      const double exact = 255.0 * (0.299 * img.at(0, y, x) + 0.587 * img.at(1, y, x) + 0.114 * img.at(2, y, x));
      EXPECT_LE(std::abs(g.at(x, y) - exact), 1.0);
    }
  }
}

TEST(Normalize, Examples) {
  RasterImage img(2, 2, 1, 0.5f);
  const std::vector<float> zero{0.0f}, one{1.0f}, half{0.5f}, quarter{0.25f};
  EXPECT_EQ(normalize(img, zero, one).data, img.data);
  EXPECT_EQ(normalize(img, half, half).data, std::vector<float>(4, 0.0f));
  RasterImage v(1, 1, 1, 1.0f);
  EXPECT_FLOAT_EQ(normalize(v, half, quarter).data[0], 2.0f);
}

TEST(Normalize, RejectsNonPositiveStd) {
  RasterImage img(1, 1, 1);
  const std::vector<float> m{0.0f}, z{0.0f}, n{-1.0f};
  EXPECT_THROW(normalize(img, m, z), InvalidArgument);
  EXPECT_THROW(normalize(img, m, n), InvalidArgument);
}

TEST(Normalize, DenormalizeRoundTrip) {
  Rng rng(9);
  RasterImage img(8, 8, 3);
  for (auto& v : img.data) v = static_cast<float>(rng.uniform());
  const std::vector<float> mean{0.4f, 0.5f, 0.6f}, sd{0.2f, 0.3f, 0.25f};
  const auto back = denormalize(normalize(img, mean, sd), mean, sd);
  for (std::size_t i = 0; i < img.data.size(); ++i) EXPECT_NEAR(back.data[i], img.data[i], 1e-6);
}

TEST(Flip, TwiceIsIdentity) {
  Rng rng(3);
  RasterImage img(5, 7, 3);
  for (auto& v : img.data) v = static_cast<float>(rng.uniform());
  EXPECT_EQ(flip_horizontal(flip_horizontal(img)).data, img.data);
  EXPECT_EQ(flip_vertical(flip_vertical(img)).data, img.data);
  EXPECT_EQ(flip_horizontal(img).at(1, 2, 0), img.at(1, 2, 6));
  EXPECT_EQ(flip_vertical(img).at(2, 0, 3), img.at(2, 4, 3));
}

TEST(Pgm, HandBuiltFile) {
  std::vector<std::uint8_t> bytes{'P', '5', '\n', '2', ' ', '2', '\n', '2', '5', '5', '\n', 1, 2, 3, 4};
  const auto img = decode_pgm(bytes);
  EXPECT_EQ(img.height, 2);
  EXPECT_EQ(img.width, 2);
  EXPECT_EQ(img.data, (std::vector<std::uint8_t>{1, 2, 3, 4}));
}

TEST(Pgm, CommentsInHeader) {
  const std::string text = "P5\n# made by hand\n1 1\n255\n";
  std::vector<std::uint8_t> bytes(text.begin(), text.end());
  bytes.push_back(42);
  EXPECT_EQ(decode_pgm(bytes).data[0], 42);
}

TEST(Pgm, Errors) {
  const std::string wrong_max = "P5\n2 2\n65535\n";
  EXPECT_THROW(decode_pgm(std::vector<std::uint8_t>(wrong_max.begin(), wrong_max.end())), FormatError);
  const std::string p2 = "P2\n1 1\n255\n0";
  EXPECT_THROW(decode_pgm(std::vector<std::uint8_t>(p2.begin(), p2.end())), FormatError);
  const std::string truncated = "P5\n2 2\n255\n\x01\x02";
  EXPECT_THROW(decode_pgm(std::vector<std::uint8_t>(truncated.begin(), truncated.end())), FormatError);
}

TEST(Pgm, FileRoundTrip) {
  test::TempDir dir;
  Rng rng(1);
  const auto img = test::random_gray(16, 16, rng);
  save_pgm(img, dir.file("a.pgm"));
  const auto back = load_pgm(dir.file("a.pgm"));
  EXPECT_EQ(back, img);
  save_pgm(back, dir.file("b.pgm"));
  EXPECT_EQ(detail::read_file(dir.file("a.pgm")), detail::read_file(dir.file("b.pgm")));
}

TEST(Packed, EmptyDatasetIsValid) {
  PackedDataset ds;
  ds.height = ds.width = 4;
  ds.channels = 1;
  const auto back = decode_packed(encode_packed(ds));
  EXPECT_EQ(back.count, 0u);
  EXPECT_EQ(back, ds);
}

TEST(Packed, FileLength) {
  PackedDataset ds;
  ds.count = 2;
  ds.height = ds.width = 4;
  ds.channels = 1;
  ds.labels = {0, 1};
  ds.pixels.assign(32, 7);
  EXPECT_EQ(encode_packed(ds).size(), 4u + 20u + 8u + 32u);
}

TEST(Packed, LittleEndianHeader) {
  PackedDataset ds;
  ds.count = 1;
  ds.height = 2;
  ds.width = 3;
  ds.channels = 1;
  ds.labels = {258};
  ds.pixels.assign(6, 0);
  const auto b = encode_packed(ds);
  EXPECT_EQ(std::string(b.begin(), b.begin() + 4), "KIMG");
  EXPECT_EQ(b[4], 1);  // version
  EXPECT_EQ(b[8], 1);  // count
  EXPECT_EQ(b[12], 2);
  EXPECT_EQ(b[16], 3);
  EXPECT_EQ(b[20], 1);
  EXPECT_EQ(b[24], 2);  // 258 = 0x0102
  EXPECT_EQ(b[25], 1);
}

TEST(Packed, Errors) {
  PackedDataset ds;
  ds.count = 1;
  ds.height = ds.width = 2;
  ds.channels = 1;
  ds.labels = {0};
  ds.pixels.assign(4, 0);
  auto b = encode_packed(ds);
  auto bad = b;
  bad[0] = 'X';
  EXPECT_THROW(decode_packed(bad), FormatError);
  b.pop_back();
  EXPECT_THROW(decode_packed(b), FormatError);
}

TEST(Packed, RandomRoundTrip) {
  test::TempDir dir;
  Rng rng(2);
  for (int trial = 0; trial < 10; ++trial) {
    PackedDataset ds;
    ds.count = static_cast<std::uint32_t>(rng.below(5));
    ds.height = 1 + static_cast<std::uint32_t>(rng.below(9));
    ds.width = 1 + static_cast<std::uint32_t>(rng.below(9));
    ds.channels = rng.below(2) ? 3 : 1;
    for (std::uint32_t i = 0; i < ds.count; ++i) ds.labels.push_back(static_cast<std::uint32_t>(rng.next()));
    for (std::size_t i = 0; i < ds.count * ds.image_size(); ++i) ds.pixels.push_back(static_cast<std::uint8_t>(rng.next()));
    save_packed(ds, dir.file("d.kimg"));
    const auto back = load_packed(dir.file("d.kimg"));
    EXPECT_EQ(back, ds);
    EXPECT_EQ(encode_packed(back), detail::read_file(dir.file("d.kimg")));
  }
}

TEST(Packed, SelectAndImage) {
  PackedDataset ds;
  ds.count = 3;
  ds.height = ds.width = 1;
  ds.channels = 1;
  ds.labels = {0, 1, 2};
  ds.pixels = {0, 51, 255};
  const std::vector<std::size_t> idx{2, 0};
  const auto s = ds.select(idx);
  EXPECT_EQ(s.labels, (std::vector<std::uint32_t>{2, 0}));
  EXPECT_EQ(s.pixels, (std::vector<std::uint8_t>{255, 0}));
  EXPECT_FLOAT_EQ(ds.image(1).data[0], 0.2f);
  EXPECT_EQ(ds.num_classes(), 3u);
}
