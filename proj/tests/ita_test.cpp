#include "latent_scan/ita.hpp"

#include <gtest/gtest.h>

#include <random>

#include "latent_scan/png_io.hpp"
#include "test_util.hpp"

namespace latent_scan {
namespace {

TEST(Lab, ReferenceWhite) {
  const Lab w = srgb_to_lab(255, 255, 255);
  EXPECT_NEAR(w.l, 100.0, 1e-9);
  EXPECT_LT(std::abs(w.a), 0.01);
  EXPECT_LT(std::abs(w.b), 0.01);
}

TEST(Lab, Black) {
  const Lab k = srgb_to_lab(0, 0, 0);
  EXPECT_EQ(k.l, 0.0);
  EXPECT_EQ(k.a, 0.0);
  EXPECT_EQ(k.b, 0.0);
}

// Values from an independent CIELab implementation (D65, 2 degree observer).
TEST(Lab, MatchesIndependentConversion) {
  struct Case {
    Rgb8 rgb;
    Lab lab;
  };
  const Case cases[] = {
      {{119, 119, 119}, {50.034438792538225, 0.0, 0.0}},
      {{235, 200, 175}, {82.9496, 8.6419, 17.1030}},
      {{200, 150, 120}, {66.0978, 14.8498, 23.1328}},
      {{120, 80, 60}, {37.9454, 14.2767, 18.5747}},
  };
  for (const auto& c : cases) {
    const Lab got = srgb_to_lab(c.rgb.r, c.rgb.g, c.rgb.b);
    EXPECT_NEAR(got.l, c.lab.l, 0.01);
    EXPECT_NEAR(got.a, c.lab.a, 0.01);
    EXPECT_NEAR(got.b, c.lab.b, 0.01);
  }
}

TEST(Lab, GraysAreNeutralAndOrdered) {
  double previous = -1.0;
  for (int v = 0; v <= 255; ++v) {
    const auto u = static_cast<std::uint8_t>(v);
    const Lab lab = srgb_to_lab(u, u, u);
    EXPECT_LT(std::abs(lab.a), 0.01);
    EXPECT_LT(std::abs(lab.b), 0.01);
    EXPECT_GT(lab.l, previous);
    previous = lab.l;
  }
}

TEST(Ita, CategoryBoundaries) {
  EXPECT_EQ(categorize_ita(41.0), SkinTone::Intermediate);
  EXPECT_EQ(categorize_ita(std::nextafter(41.0, 90.0)), SkinTone::Light);
  EXPECT_EQ(categorize_ita(28.0), SkinTone::Dark);
  EXPECT_EQ(categorize_ita(std::nextafter(28.0, 90.0)), SkinTone::Intermediate);
  EXPECT_EQ(categorize_ita(-90.0), SkinTone::Dark);
  EXPECT_EQ(categorize_ita(90.0), SkinTone::Light);
}

TEST(Ita, AnalyticAngles) {
  EXPECT_NEAR(ita_from_means(70.0, 20.0).degrees, 45.0, 1e-12);
  EXPECT_EQ(categorize_ita(ita_from_means(70.0, 20.0).degrees), SkinTone::Light);
  EXPECT_EQ(ita_from_means(50.0, 17.0).degrees, 0.0);
  EXPECT_EQ(categorize_ita(ita_from_means(50.0, 17.0).degrees), SkinTone::Dark);
  EXPECT_NEAR(ita_from_means(57.0, 10.0).degrees, 34.99202019855866, 1e-12);
}

TEST(Ita, ZeroBUsesTheLimit) {
  EXPECT_EQ(ita_from_means(60.0, 0.0).degrees, 90.0);
  EXPECT_EQ(ita_from_means(40.0, 0.0).degrees, -90.0);
  EXPECT_EQ(ita_from_means(50.0, 0.0).degrees, 0.0);
  EXPECT_TRUE(ita_from_means(60.0, 0.0).degenerate);
  EXPECT_FALSE(ita_from_means(60.0, 1.0).degenerate);
}

TEST(Ita, IncreasesWithLightnessForPositiveB) {
  for (double b = 1.0; b < 40.0; b += 3.0) {
    double previous = -91.0;
    for (double l = 0.0; l <= 100.0; l += 2.5) {
      const double d = ita_from_means(l, b).degrees;
      EXPECT_GT(d, previous);
      previous = d;
    }
  }
}

TEST(Ita, SkinSwatchesFallInTheirCategories) {
  EXPECT_EQ(compute_ita(RgbImage::uniform(4, 4, {235, 200, 175}), std::nullopt).category, SkinTone::Light);
  EXPECT_EQ(compute_ita(RgbImage::uniform(4, 4, {200, 150, 120}), std::nullopt).category, SkinTone::Intermediate);
  EXPECT_EQ(compute_ita(RgbImage::uniform(4, 4, {120, 80, 60}), std::nullopt).category, SkinTone::Dark);
}

TEST(Ita, MaskSelectsPixels) {
  // Left half light skin, right half dark lesion.
  RgbImage img = RgbImage::uniform(4, 2, {235, 200, 175});
  for (std::size_t y = 0; y < 2; ++y)
    for (std::size_t x = 2; x < 4; ++x) img.at(x, y) = {60, 30, 20};
  PixelMask mask{"m", 4, 2, std::vector<bool>(8, false)};
  for (std::size_t y = 0; y < 2; ++y)
    for (std::size_t x = 0; x < 2; ++x) mask.included[y * 4 + x] = true;

  const auto masked = compute_ita(img, mask, "m");
  const auto swatch = compute_ita(RgbImage::uniform(2, 2, {235, 200, 175}), PixelMask::all(2, 2), "s");
  EXPECT_DOUBLE_EQ(masked.ita_degrees, swatch.ita_degrees);
  EXPECT_TRUE(masked.warnings.empty());

  const auto whole = compute_ita(img, std::nullopt, "m");
  EXPECT_LT(whole.ita_degrees, masked.ita_degrees);
  ASSERT_EQ(whole.warnings.size(), 1u);
}

TEST(Ita, BadMasks) {
  const auto img = RgbImage::uniform(3, 3, {200, 150, 120});
  EXPECT_THROW(compute_ita(img, PixelMask::all(3, 2)), InputError);
  EXPECT_THROW(compute_ita(img, PixelMask{"e", 3, 3, std::vector<bool>(9, false)}), InputError);
}

TEST(Png, RoundTrip) {
  testing::TempDir dir;
  std::mt19937_64 rng(1);
  std::uniform_int_distribution<int> byte(0, 255);
  std::vector<Rgb8> px(5 * 3);
  for (auto& p : px)
    p = {static_cast<std::uint8_t>(byte(rng)), static_cast<std::uint8_t>(byte(rng)),
         static_cast<std::uint8_t>(byte(rng))};
  const RgbImage img(5, 3, px);
  write_png_rgb(dir / "a.png", img);
  const RgbImage back = read_png_rgb(dir / "a.png");
  ASSERT_EQ(back.width(), 5u);
  ASSERT_EQ(back.height(), 3u);
  for (std::size_t i = 0; i < px.size(); ++i) {
    EXPECT_EQ(back.pixels()[i].r, px[i].r);
    EXPECT_EQ(back.pixels()[i].g, px[i].g);
    EXPECT_EQ(back.pixels()[i].b, px[i].b);
  }

  PixelMask mask{"a", 5, 3, std::vector<bool>(15, false)};
  mask.included[0] = mask.included[7] = mask.included[14] = true;
  write_png_mask(dir / "m.png", mask);
  EXPECT_EQ(read_png_mask(dir / "m.png").included, mask.included);
}

TEST(Png, GarbageFileIsAnInputError) {
  testing::TempDir dir;
  testing::spit(dir / "bad.png", "not a png");
  EXPECT_THROW(read_png_rgb(dir / "bad.png"), InputError);
  EXPECT_THROW(read_png_rgb(dir / "missing.png"), InputError);
}

}  // namespace
}  // namespace latent_scan
