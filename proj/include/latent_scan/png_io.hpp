#pragma once

// 8-bit PNG reading and writing through libpng's simplified API.

#include <png.h>

#include <cstring>
#include <filesystem>
#include <string>
#include <vector>

#include "latent_scan/errors.hpp"
#include "latent_scan/ita.hpp"

namespace latent_scan {

namespace detail {

struct PngImageGuard {
  png_image image;
  PngImageGuard() {
    std::memset(&image, 0, sizeof(image));
    image.version = PNG_IMAGE_VERSION;
  }
  ~PngImageGuard() { png_image_free(&image); }
  PngImageGuard(const PngImageGuard&) = delete;
  PngImageGuard& operator=(const PngImageGuard&) = delete;
};

inline std::vector<png_byte> read_png_pixels(const std::filesystem::path& path, png_uint_32 format,
                                             std::size_t& width, std::size_t& height) {
  PngImageGuard g;
  require_input(png_image_begin_read_from_file(&g.image, path.c_str()) != 0,
                "cannot decode PNG '" + path.string() + "': " + g.image.message);
  g.image.format = format;
  std::vector<png_byte> buffer(PNG_IMAGE_SIZE(g.image));
  require_input(png_image_finish_read(&g.image, nullptr, buffer.data(), 0, nullptr) != 0,
                "cannot decode PNG '" + path.string() + "': " + g.image.message);
  width = g.image.width;
  height = g.image.height;
  return buffer;
}

}  // namespace detail

inline RgbImage read_png_rgb(const std::filesystem::path& path) {
  std::size_t w = 0;
  std::size_t h = 0;
  const auto buf = detail::read_png_pixels(path, PNG_FORMAT_RGB, w, h);
  std::vector<Rgb8> pixels(w * h);
  for (std::size_t i = 0; i < pixels.size(); ++i) pixels[i] = {buf[3 * i], buf[3 * i + 1], buf[3 * i + 2]};
  return RgbImage(w, h, std::move(pixels));
}

// Nonzero gray level = included.
inline PixelMask read_png_mask(const std::filesystem::path& path) {
  PixelMask mask;
  const auto buf = detail::read_png_pixels(path, PNG_FORMAT_GRAY, mask.width, mask.height);
  mask.included.resize(buf.size());
  for (std::size_t i = 0; i < buf.size(); ++i) mask.included[i] = buf[i] != 0;
  mask.sample_id = path.stem().string();
  return mask;
}

inline void write_png_rgb(const std::filesystem::path& path, const RgbImage& img) {
  detail::PngImageGuard g;
  g.image.width = static_cast<png_uint_32>(img.width());
  g.image.height = static_cast<png_uint_32>(img.height());
  g.image.format = PNG_FORMAT_RGB;
  std::vector<png_byte> buf;
  buf.reserve(img.pixels().size() * 3);
  for (const auto& p : img.pixels()) {
    buf.push_back(p.r);
    buf.push_back(p.g);
    buf.push_back(p.b);
  }
  require_input(png_image_write_to_file(&g.image, path.c_str(), 0, buf.data(), 0, nullptr) != 0,
                "cannot write PNG '" + path.string() + "'");
}

inline void write_png_mask(const std::filesystem::path& path, const PixelMask& mask) {
  detail::PngImageGuard g;
  g.image.width = static_cast<png_uint_32>(mask.width);
  g.image.height = static_cast<png_uint_32>(mask.height);
  g.image.format = PNG_FORMAT_GRAY;
  std::vector<png_byte> buf(mask.included.size());
  for (std::size_t i = 0; i < buf.size(); ++i) buf[i] = mask.included[i] ? 255 : 0;
  require_input(png_image_write_to_file(&g.image, path.c_str(), 0, buf.data(), 0, nullptr) != 0,
                "cannot write PNG '" + path.string() + "'");
}

}  // namespace latent_scan
