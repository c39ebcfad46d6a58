#pragma once

// Individual Typology Angle of skin pixels in CIELab (D65, 2 degree observer)
// and the three-way Fitzpatrick grouping used for stratified evaluation.

#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numbers>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "latent_scan/errors.hpp"

namespace latent_scan {

struct Lab {
  double l = 0.0;
  double a = 0.0;
  double b = 0.0;
};

struct Rgb8 {
  std::uint8_t r = 0;
  std::uint8_t g = 0;
  std::uint8_t b = 0;
};

class RgbImage {
 public:
  RgbImage() = default;
  RgbImage(std::size_t width, std::size_t height, std::vector<Rgb8> pixels)
      : width_(width), height_(height), pixels_(std::move(pixels)) {
    require_input(pixels_.size() == width_ * height_, "image pixel count does not match its dimensions");
  }
  static RgbImage uniform(std::size_t width, std::size_t height, Rgb8 color) {
    return RgbImage(width, height, std::vector<Rgb8>(width * height, color));
  }

  std::size_t width() const { return width_; }
  std::size_t height() const { return height_; }
  const std::vector<Rgb8>& pixels() const { return pixels_; }
  Rgb8& at(std::size_t x, std::size_t y) { return pixels_[y * width_ + x]; }
  const Rgb8& at(std::size_t x, std::size_t y) const { return pixels_[y * width_ + x]; }

 private:
  std::size_t width_ = 0;
  std::size_t height_ = 0;
  std::vector<Rgb8> pixels_;
};

// Non-diseased pixels: true = included.
struct PixelMask {
  std::string sample_id;
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<bool> included;

  static PixelMask all(std::size_t width, std::size_t height) {
    return {{}, width, height, std::vector<bool>(width * height, true)};
  }
};

namespace detail {

inline double srgb_to_linear(double c) {
  return c <= 0.04045 ? c / 12.92 : std::pow((c + 0.055) / 1.055, 2.4);
}

inline double lab_f(double t) {
  constexpr double delta = 6.0 / 29.0;
  return t > delta * delta * delta ? std::cbrt(t) : t / (3.0 * delta * delta) + 4.0 / 29.0;
}

// linear sRGB -> XYZ
inline constexpr std::array<std::array<double, 3>, 3> kSrgbToXyz{{
    {0.4124564, 0.3575761, 0.1804375},
    {0.2126729, 0.7151522, 0.0721750},
    {0.0193339, 0.1191920, 0.9503041},
}};

}  // namespace detail

inline Lab srgb_to_lab(std::uint8_t r8, std::uint8_t g8, std::uint8_t b8) {
  const std::array<double, 3> lin{detail::srgb_to_linear(r8 / 255.0), detail::srgb_to_linear(g8 / 255.0),
                                  detail::srgb_to_linear(b8 / 255.0)};
  std::array<double, 3> xyz{};
  std::array<double, 3> white{};  // D65 as the image of linear (1, 1, 1)
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t j = 0; j < 3; ++j) {
      xyz[i] += detail::kSrgbToXyz[i][j] * lin[j];
      white[i] += detail::kSrgbToXyz[i][j];
    }
  }
  const double fx = detail::lab_f(xyz[0] / white[0]);
  const double fy = detail::lab_f(xyz[1] / white[1]);
  const double fz = detail::lab_f(xyz[2] / white[2]);
  return {116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)};
}

enum class SkinTone { Light, Intermediate, Dark };

inline std::string to_string(SkinTone t) {
  switch (t) {
    case SkinTone::Light:
      return "Light";
    case SkinTone::Intermediate:
      return "Intermediate";
    case SkinTone::Dark:
      return "Dark";
  }
  return "Dark";
}

inline SkinTone parse_skin_tone(std::string_view s) {
  if (s == "Light") return SkinTone::Light;
  if (s == "Intermediate") return SkinTone::Intermediate;
  if (s == "Dark") return SkinTone::Dark;
  throw InputError("unknown skin tone category '" + std::string(s) + "'");
}

// Light: > 41, Intermediate: (28, 41], Dark: <= 28 (degrees).
inline SkinTone categorize_ita(double ita_degrees) {
  require_input(std::isfinite(ita_degrees), "ITA must be finite");
  if (ita_degrees > 41.0) return SkinTone::Light;
  if (ita_degrees > 28.0) return SkinTone::Intermediate;
  return SkinTone::Dark;
}

struct ItaValue {
  double degrees = 0.0;
  bool degenerate = false;  // b_mean == 0, limit value used
};

// arctan((L - 50) / b) in degrees. With b == 0 the arctan limit is used:
// +90 above L = 50, -90 below, 0 at L = 50.
inline ItaValue ita_from_means(double l_mean, double b_mean) {
  if (b_mean == 0.0) {
    const double d = l_mean > 50.0 ? 90.0 : (l_mean < 50.0 ? -90.0 : 0.0);
    return {d, true};
  }
  return {std::atan((l_mean - 50.0) / b_mean) * 180.0 / std::numbers::pi, false};
}

struct ItaRecord {
  std::string sample_id;
  double l_mean = 0.0;
  double b_mean = 0.0;
  double ita_degrees = 0.0;
  SkinTone category = SkinTone::Dark;
  std::vector<std::string> warnings;
};

// Means of L* and b* over the masked pixels (row-major order), then the angle.
// Without a mask the whole image is used and a warning is recorded.
inline ItaRecord compute_ita(const RgbImage& image, const std::optional<PixelMask>& mask,
                             std::string sample_id = {}) {
  ItaRecord rec;
  rec.sample_id = std::move(sample_id);
  if (mask) {
    require_input(mask->width == image.width() && mask->height == image.height(),
                  "mask dimensions " + std::to_string(mask->width) + "x" + std::to_string(mask->height) +
                      " do not match image " + std::to_string(image.width()) + "x" +
                      std::to_string(image.height()));
    require_input(mask->included.size() == image.pixels().size(), "mask size does not match image");
  } else {
    rec.warnings.push_back("no mask for '" + rec.sample_id + "'; using the whole image");
  }

  double l_sum = 0.0;
  double b_sum = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < image.pixels().size(); ++i) {
    if (mask && !mask->included[i]) continue;
    const auto& p = image.pixels()[i];
    const Lab lab = srgb_to_lab(p.r, p.g, p.b);
    l_sum += lab.l;
    b_sum += lab.b;
    ++n;
  }
  require_input(n > 0, "mask for '" + rec.sample_id + "' includes no pixels");
  rec.l_mean = l_sum / static_cast<double>(n);
  rec.b_mean = b_sum / static_cast<double>(n);
  const ItaValue ita = ita_from_means(rec.l_mean, rec.b_mean);
  if (ita.degenerate) rec.warnings.push_back("b* mean is zero for '" + rec.sample_id + "'; ITA set to its limit");
  rec.ita_degrees = ita.degrees;
  rec.category = categorize_ita(rec.ita_degrees);
  return rec;
}

}  // namespace latent_scan
