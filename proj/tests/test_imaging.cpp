#include <gtest/gtest.h>

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "tbnet/imaging.hpp"

using namespace tbnet;

namespace {

std::vector<std::uint8_t> pgm_bytes(const std::string& header, std::vector<std::uint8_t> payload) {
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.insert(out.end(), payload.begin(), payload.end());
  return out;
}

GrayImage random_image(std::size_t w, std::size_t h, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> px(w * h);
  for (auto& v : px) v = u(rng);
  return GrayImage(w, h, std::move(px));
}

}  // namespace

TEST(Pgm, DecodesAndScalesByMaxval) {
  const auto img = decode_pgm(pgm_bytes("P5 2 2 255\n", {0, 255, 128, 64}));
  ASSERT_EQ(img.width(), 2u);
  ASSERT_EQ(img.height(), 2u);
  EXPECT_DOUBLE_EQ(img(0, 0), 0.0);
  EXPECT_DOUBLE_EQ(img(1, 0), 1.0);
  EXPECT_NEAR(img(0, 1), 0.50196, 1e-5);
  EXPECT_NEAR(img(1, 1), 0.25098, 1e-5);
}

TEST(Pgm, MaxvalOneIdentity) {
  const auto img = decode_pgm(pgm_bytes("P5 1 1 1\n", {1}));
  EXPECT_DOUBLE_EQ(img(0, 0), 1.0);
}

TEST(Pgm, HeaderCommentsAllowed) {
  const auto img = decode_pgm(pgm_bytes("P5\n# made by hand\n1 2\n# depth\n255\n", {10, 20}));
  EXPECT_EQ(img.height(), 2u);
  EXPECT_NEAR(img(0, 1), 20.0 / 255.0, 1e-12);
}

TEST(Pgm, TruncatedPayloadIsRejected) {
  try {
    decode_pgm(pgm_bytes("P5 4 4 255\n", std::vector<std::uint8_t>(8, 7)));
    FAIL() << "expected a decode error";
  } catch (const DecodeError& e) {
    EXPECT_NE(std::string(e.what()).find("truncated"), std::string::npos);
  }
}

TEST(Pgm, BadMagicAndMaxvalNameTheField) {
  try {
    decode_pgm(pgm_bytes("P2 1 1 255\n", {0}));
    FAIL();
  } catch (const DecodeError& e) {
    EXPECT_NE(std::string(e.what()).find("magic"), std::string::npos);
  }
  for (const char* header : {"P5 1 1 0\n", "P5 1 1 256\n"}) {
    try {
      decode_pgm(pgm_bytes(header, {0, 0}));
      FAIL() << header;
    } catch (const DecodeError& e) {
      EXPECT_NE(std::string(e.what()).find("maxval"), std::string::npos);
    }
  }
}

TEST(Pgm, RoundTripOnQuantizedImages) {
  std::mt19937_64 rng(7);
  std::uniform_int_distribution<int> q(0, 255);
  std::uniform_int_distribution<std::size_t> dim(1, 40);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t w = dim(rng), h = dim(rng);
    std::vector<double> px(w * h);
    for (auto& v : px) v = q(rng) / 255.0;
    const GrayImage img(w, h, px);
    EXPECT_EQ(decode_pgm(encode_pgm(img)), img);
  }
}

TEST(GrayImage, RejectsOutOfRangeIntensity) {
  EXPECT_THROW(GrayImage(1, 1, std::vector<double>{1.5}), PreconditionError);
  EXPECT_THROW(GrayImage(2, 1, std::vector<double>{0.5}), ShapeError);
}

TEST(RgbToGray, LuminanceWeights) {
  const std::vector<double> half(4, 0.5);
  const auto gray = rgb_to_gray(2, 2, half, half, half);
  for (double v : gray.pixels()) EXPECT_NEAR(v, 0.5, 1e-12);

  const std::vector<double> one{1.0}, zero{0.0};
  EXPECT_NEAR(rgb_to_gray(1, 1, one, zero, zero)(0, 0), 0.299, 1e-12);

  const std::vector<double> r{0.2}, g{0.4}, b{0.6};
  EXPECT_NEAR(rgb_to_gray(1, 1, r, g, b)(0, 0), 0.3630, 1e-12);

  EXPECT_THROW(rgb_to_gray(2, 2, half, half, one), ShapeError);
}

TEST(Resize, SameSizeIsIdentity) {
  std::mt19937_64 rng(1);
  const auto img = random_image(13, 7, rng);
  const auto out = resize_bilinear(img, 13, 7);
  for (std::size_t i = 0; i < img.size(); ++i) EXPECT_NEAR(out.pixels()[i], img.pixels()[i], 1e-6);
}

TEST(Resize, ConstantStaysConstant) {
  const GrayImage img(5, 3, 0.42);
  for (auto [w, h] : {std::pair{1, 1}, {9, 4}, {2, 11}}) {
    const auto out = resize_bilinear(img, w, h);
    for (double v : out.pixels()) EXPECT_NEAR(v, 0.42, 1e-12);
  }
}

TEST(Resize, TwoByTwoRampToFourByFour) {
  // Source x = (i + 0.5) * 0.5 - 0.5 = -0.25, 0.25, 0.75, 1.25, clamped to [0, 1].
  const GrayImage img(2, 2, std::vector<double>{0, 1, 0, 1});
  const auto out = resize_bilinear(img, 4, 4);
  const double expected[4] = {0.0, 0.25, 0.75, 1.0};
  for (std::size_t y = 0; y < 4; ++y)
    for (std::size_t x = 0; x < 4; ++x) EXPECT_NEAR(out(x, y), expected[x], 1e-12);
}

TEST(Resize, ZeroTargetRejected) { EXPECT_THROW(resize_bilinear(GrayImage(2, 2), 0, 3), PreconditionError); }

TEST(Crop, FullBoxIsIdentityAndSinglePixel) {
  std::mt19937_64 rng(3);
  const auto img = random_image(6, 5, rng);
  EXPECT_EQ(crop(img, BBox{0, 0, 6, 5}), img);
  const auto px = crop(img, BBox{0, 0, 1, 1});
  EXPECT_EQ(px.width(), 1u);
  EXPECT_EQ(px(0, 0), img(0, 0));
}

TEST(Crop, MatchesDoubleLoopCopy) {
  std::vector<double> ramp(16);
  for (std::size_t i = 0; i < 16; ++i) ramp[i] = static_cast<double>(i) / 15.0;
  const GrayImage img(4, 4, ramp);
  const auto out = crop(img, BBox{1, 1, 2, 2});
  for (std::size_t j = 0; j < 2; ++j)
    for (std::size_t i = 0; i < 2; ++i) EXPECT_EQ(out(i, j), ramp[(1 + j) * 4 + (1 + i)]);
}

TEST(Crop, OutOfBoundsRejected) {
  const GrayImage img(4, 4);
  EXPECT_THROW(crop(img, BBox{3, 0, 2, 1}), PreconditionError);
  EXPECT_THROW(crop(img, BBox{0, 0, 0, 1}), PreconditionError);
}
