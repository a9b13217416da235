#pragma once

#include <png.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "msfa/errors.hpp"
#include "msfa/tensor.hpp"

namespace msfa {

/// 8-bit image decoded to interleaved RGBA. `source_channels` records what
/// the file held (1 gray, 2 gray+alpha, 3 RGB, 4 RGBA).
struct Image8 {
  int height = 0;
  int width = 0;
  int source_channels = 0;
  std::vector<std::uint8_t> rgba;

  [[nodiscard]] std::uint8_t at(int y, int x, int c) const {
    return rgba[(static_cast<std::size_t>(y) * width + x) * 4 + static_cast<std::size_t>(c)];
  }
};

inline Image8 read_png(const std::filesystem::path& path) {
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&img, path.c_str()))
    throw IoError("cannot read PNG " + path.string() + ": " + img.message);
  Image8 out;
  out.height = static_cast<int>(img.height);
  out.width = static_cast<int>(img.width);
  const bool color = (img.format & PNG_FORMAT_FLAG_COLOR) != 0;
  const bool alpha = (img.format & PNG_FORMAT_FLAG_ALPHA) != 0;
  out.source_channels = (color ? 3 : 1) + (alpha ? 1 : 0);
  img.format = PNG_FORMAT_RGBA;
  out.rgba.resize(PNG_IMAGE_SIZE(img));
  if (!png_image_finish_read(&img, nullptr, out.rgba.data(), 0, nullptr)) {
    const std::string msg = img.message;
    png_image_free(&img);
    throw IoError("cannot decode PNG " + path.string() + ": " + msg);
  }
  return out;
}

namespace detail {

inline void write_png(const std::filesystem::path& path, int h, int w, std::uint32_t format,
                      const std::vector<std::uint8_t>& data) {
  if (h <= 0 || w <= 0) throw IoError("refusing to write an empty PNG to " + path.string());
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(w);
  img.height = static_cast<png_uint_32>(h);
  img.format = format;
  if (!png_image_write_to_file(&img, path.c_str(), 0, data.data(), 0, nullptr))
    throw IoError("cannot write PNG " + path.string() + ": " + img.message);
}

inline std::uint8_t to_byte(Real v) { return static_cast<std::uint8_t>(std::clamp(std::lround(v * 255.0), 0L, 255L)); }

}  // namespace detail

/// Writes a [1,1,H,W] map in [0,1] as 8-bit grayscale with round(255 p).
inline void write_gray_png(const std::filesystem::path& path, const Tensor& map) {
  if (map.n() != 1 || map.c() != 1) throw ShapeError("gray PNG expects [1,1,H,W], got " + to_string(map.shape()));
  std::vector<std::uint8_t> px(map.size());
  for (std::size_t i = 0; i < px.size(); ++i) px[i] = detail::to_byte(map[i]);
  detail::write_png(path, map.h(), map.w(), PNG_FORMAT_GRAY, px);
}

/// Writes a [1,3,H,W] image in [0,1] as 8-bit RGB.
inline void write_rgb_png(const std::filesystem::path& path, const Tensor& image) {
  if (image.n() != 1 || image.c() != 3) throw ShapeError("RGB PNG expects [1,3,H,W], got " + to_string(image.shape()));
  const int h = image.h(), w = image.w();
  std::vector<std::uint8_t> px(static_cast<std::size_t>(h) * w * 3);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c)
        px[(static_cast<std::size_t>(y) * w + x) * 3 + static_cast<std::size_t>(c)] = detail::to_byte(image.at(0, c, y, x));
  detail::write_png(path, h, w, PNG_FORMAT_RGB, px);
}

/// RGB image scaled to [0,1]; alpha is dropped.
inline Tensor image_tensor(const Image8& im) {
  Tensor t({1, 3, im.height, im.width});
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < im.height; ++y)
      for (int x = 0; x < im.width; ++x) t.at(0, c, y, x) = im.at(y, x, c) / 255.0;
  return t;
}

/// Binary mask from channel 0: value >= 128 is foreground.
inline Tensor mask_tensor(const Image8& im) {
  Tensor t({1, 1, im.height, im.width});
  for (int y = 0; y < im.height; ++y)
    for (int x = 0; x < im.width; ++x) t.at(0, 0, y, x) = im.at(y, x, 0) >= 128 ? 1.0 : 0.0;
  return t;
}

/// Saliency map in [0,1] from channel 0.
inline Tensor gray_tensor(const Image8& im) {
  Tensor t({1, 1, im.height, im.width});
  for (int y = 0; y < im.height; ++y)
    for (int x = 0; x < im.width; ++x) t.at(0, 0, y, x) = im.at(y, x, 0) / 255.0;
  return t;
}

/// Sorted list of `*.png` files directly inside `dir`.
inline std::vector<std::filesystem::path> list_pngs(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw IoError("not a directory: " + dir.string());
  std::vector<std::filesystem::path> out;
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    std::string ext = e.path().extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    if (ext == ".png") out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace msfa
