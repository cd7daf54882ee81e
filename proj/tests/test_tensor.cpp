#include <gtest/gtest.h>

#include <filesystem>
#include <random>

#include "fresco/tensor.hpp"
#include "oracles.hpp"

using namespace fresco;

namespace {

LatentTensor random_tensor(Shape s, std::mt19937_64& rng) {
  std::normal_distribution<float> g(0.0f, 1.0f);
  LatentTensor x(s);
  for (float& v : x.data()) v = g(rng);
  return x;
}

LatentTensor index_grid(std::uint32_t h, std::uint32_t w) {
  LatentTensor x(Shape{1, 1, h, w});
  for (std::uint32_t i = 0; i < h; ++i)
    for (std::uint32_t j = 0; j < w; ++j) x(0, 0, i, j) = float(10 * i + j);
  return x;
}

}  // namespace

TEST(Tensor, LayoutIsRowMajorWithWidthFastest) {
  LatentTensor x(Shape{2, 3, 4, 5});
  x(1, 2, 3, 4) = 7.0f;
  EXPECT_EQ(x.data()[((1 * 3 + 2) * 4 + 3) * 5 + 4], 7.0f);
  EXPECT_EQ(x.size(), 120u);
}

TEST(Tensor, ConstructorRejectsWrongDataLength) {
  EXPECT_THROW(LatentTensor(Shape{1, 1, 2, 2}, std::vector<float>(3)), ShapeError);
}

TEST(Tensor, CropPicksWindow) {
  const auto c = crop(index_grid(4, 4), Rect{1, 2, 2, 2});
  EXPECT_EQ(c.shape(), (Shape{1, 1, 2, 2}));
  EXPECT_EQ(c(0, 0, 0, 0), 12.0f);
  EXPECT_EQ(c(0, 0, 0, 1), 13.0f);
  EXPECT_EQ(c(0, 0, 1, 0), 22.0f);
  EXPECT_EQ(c(0, 0, 1, 1), 23.0f);
}

TEST(Tensor, FullCropIsIdentity) {
  std::mt19937_64 rng(1);
  const auto x = random_tensor(Shape{2, 2, 5, 7}, rng);
  EXPECT_EQ(crop(x, Rect{0, 0, 5, 7}), x);
}

TEST(Tensor, CropOutOfBoundsNamesDimension) {
  const auto x = index_grid(4, 4);
  try {
    crop(x, Rect{3, 0, 2, 1});
    FAIL();
  } catch (const BoundsError& e) {
    EXPECT_NE(std::string(e.what()).find("row"), std::string::npos) << e.what();
  }
  try {
    crop(x, Rect{0, 1, 1, 4});
    FAIL();
  } catch (const BoundsError& e) {
    EXPECT_NE(std::string(e.what()).find("col"), std::string::npos) << e.what();
  }
}

TEST(Tensor, ZeroPadPlacesOnes) {
  const auto p = zero_pad(LatentTensor(Shape{1, 1, 2, 2}, 1.0f), Rect{1, 1, 2, 2}, Shape{1, 1, 4, 4});
  int ones = 0;
  for (std::uint32_t i = 0; i < 4; ++i)
    for (std::uint32_t j = 0; j < 4; ++j) {
      const bool inside = i >= 1 && i <= 2 && j >= 1 && j <= 2;
      EXPECT_EQ(p(0, 0, i, j), inside ? 1.0f : 0.0f);
      ones += p(0, 0, i, j) == 1.0f;
    }
  EXPECT_EQ(ones, 4);
}

TEST(Tensor, ZeroPadShapeMismatch) {
  EXPECT_THROW(zero_pad(LatentTensor(Shape{1, 1, 2, 3}), Rect{0, 0, 2, 2}, Shape{1, 1, 4, 4}),
               ShapeError);
  EXPECT_THROW(zero_pad(LatentTensor(Shape{2, 1, 2, 2}), Rect{0, 0, 2, 2}, Shape{1, 1, 4, 4}),
               ShapeError);
}

TEST(Tensor, CropOfZeroPadRoundTrips) {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 200; ++trial) {
    auto u = [&](int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); };
    const Shape canvas{std::uint32_t(u(1, 3)), std::uint32_t(u(1, 3)), std::uint32_t(u(1, 9)),
                       std::uint32_t(u(1, 9))};
    const Rect r{std::uint32_t(u(0, int(canvas.h) - 1)), std::uint32_t(u(0, int(canvas.w) - 1)), 0, 0};
    const Rect rr{r.row, r.col, std::uint32_t(u(1, int(canvas.h - r.row))),
                  std::uint32_t(u(1, int(canvas.w - r.col)))};
    const auto x = random_tensor(Shape{canvas.c, canvas.t, rr.height, rr.width}, rng);
    const auto padded = zero_pad(x, rr, canvas);
    EXPECT_EQ(crop(padded, rr), x);
    double s_pad = 0.0, s_x = 0.0;
    for (float v : padded.data()) s_pad += v;
    for (float v : x.data()) s_x += v;
    EXPECT_NEAR(s_pad, s_x, 1e-9);
  }
}

TEST(Resize, IdentityIsBitExact) {
  std::mt19937_64 rng(3);
  const auto x = random_tensor(Shape{2, 3, 5, 6}, rng);
  EXPECT_EQ(trilinear_resize(x, 3, 5, 6), x);
}

TEST(Resize, RampMidpoint) {
  const LatentTensor x(Shape{1, 1, 1, 2}, std::vector<float>{0.0f, 1.0f});
  const auto y = trilinear_resize(x, 1, 1, 3);
  EXPECT_EQ(y.data()[0], 0.0f);
  EXPECT_EQ(y.data()[1], 0.5f);
  EXPECT_EQ(y.data()[2], 1.0f);
}

TEST(Resize, ZeroOutputIsArgumentError) {
  EXPECT_THROW(trilinear_resize(LatentTensor(Shape{1, 1, 2, 2}), 1, 0, 2), ArgumentError);
}

TEST(Resize, MatchesBruteForceOracle) {
  std::mt19937_64 rng(4);
  const auto src = random_tensor(Shape{2, 2, 4, 4}, rng);
  const auto got = trilinear_resize(src, 3, 8, 8);
  const auto want = oracle::trilinear(src, 3, 8, 8);
  for (std::size_t k = 0; k < got.size(); ++k) EXPECT_NEAR(got.data()[k], want.data()[k], 1e-6);
}

TEST(Resize, RandomShapesMatchOracle) {
  std::mt19937_64 rng(5);
  auto u = [&](int lo, int hi) { return std::uint32_t(std::uniform_int_distribution<int>(lo, hi)(rng)); };
  for (int trial = 0; trial < 40; ++trial) {
    const auto x = random_tensor(Shape{u(1, 2), u(1, 4), u(1, 6), u(1, 6)}, rng);
    const std::uint32_t t = u(1, 5), h = u(1, 9), w = u(1, 9);
    const auto got = trilinear_resize(x, t, h, w);
    const auto want = oracle::trilinear(x, t, h, w);
    for (std::size_t k = 0; k < got.size(); ++k) ASSERT_NEAR(got.data()[k], want.data()[k], 1e-5);
  }
}

TEST(Resize, StaysWithinSourceBoundsAndKeepsConstants) {
  std::mt19937_64 rng(6);
  const auto x = random_tensor(Shape{1, 3, 5, 5}, rng);
  const auto [lo, hi] = std::minmax_element(x.data().begin(), x.data().end());
  const auto up = trilinear_resize(x, 7, 13, 11);
  for (float v : up.data()) {
    EXPECT_GE(v, *lo - 1e-6f);
    EXPECT_LE(v, *hi + 1e-6f);
  }
  const auto flat = trilinear_resize(LatentTensor(Shape{2, 2, 3, 3}, 0.3f), 5, 8, 9);
  for (float v : flat.data()) {
    EXPECT_NEAR(v, 0.3f, 1e-6);
  }
}

TEST(Flt1, HeaderLayoutIsLittleEndian) {
  const LatentTensor x(Shape{1, 2, 1, 1}, std::vector<float>{1.0f, -2.0f});
  const auto bytes = flt1::encode(x);
  const std::vector<std::uint8_t> want{'F', 'L', 'T', '1', 1, 0, 0, 0, 1, 0, 0, 0, 2, 0, 0, 0,
                                       1,   0,   0,   0,   1, 0, 0, 0, 0, 0, 0x80, 0x3f,
                                       0,   0,   0,   0xc0};
  EXPECT_EQ(bytes, want);
}

TEST(Flt1, RoundTripIsBitExact) {
  std::mt19937_64 rng(7);
  auto x = random_tensor(Shape{3, 2, 4, 5}, rng);
  x.data()[0] = -0.0f;
  x.data()[1] = std::numeric_limits<float>::denorm_min();
  const auto bytes = flt1::encode(x);
  const auto y = flt1::decode(bytes);
  EXPECT_EQ(flt1::encode(y), bytes);
  EXPECT_TRUE(std::signbit(y.data()[0]));
}

TEST(Flt1, DecodeRejectsBadInput) {
  const auto good = flt1::encode(LatentTensor(Shape{1, 1, 2, 2}, 1.0f));
  auto bad_magic = good;
  bad_magic[0] = 'X';
  EXPECT_THROW(flt1::decode(bad_magic), FormatError);
  auto bad_version = good;
  bad_version[4] = 2;
  EXPECT_THROW(flt1::decode(bad_version), FormatError);
  auto truncated = good;
  truncated.pop_back();
  EXPECT_THROW(flt1::decode(truncated), FormatError);
  EXPECT_THROW(flt1::decode(std::vector<std::uint8_t>(10)), FormatError);
}

TEST(Flt1, FileRoundTripAndTrailingBytes) {
  const auto dir = std::filesystem::temp_directory_path() / "fresco_test_flt1";
  std::filesystem::create_directories(dir);
  std::mt19937_64 rng(8);
  const auto x = random_tensor(Shape{1, 2, 3, 4}, rng);
  flt1::write(dir / "x.flt", x);
  EXPECT_EQ(flt1::read(dir / "x.flt"), x);
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    EXPECT_EQ(e.path().filename(), "x.flt") << "temporary file left behind";
  }
  {
    std::ofstream f(dir / "x.flt", std::ios::app | std::ios::binary);
    f << 'z';
  }
  EXPECT_THROW(flt1::read(dir / "x.flt"), FormatError);
  EXPECT_THROW(flt1::read(dir / "missing.flt"), IoError);
  std::filesystem::remove_all(dir);
}
