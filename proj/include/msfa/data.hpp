#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <map>
#include <numbers>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "msfa/image_io.hpp"
#include "msfa/nn.hpp"
#include "msfa/ops.hpp"

namespace msfa {

/// An image with its aligned binary mask. `id` is the shared filename stem.
struct SamplePair {
  std::string id;
  Tensor image;  // [1,3,H,W] in [0,1]
  Tensor mask;   // [1,1,H,W] in {0,1}
};

/// Loads `<image_dir>/<stem>.png` with `<mask_dir>/<stem>.png` in sorted stem
/// order. Unmatched files and unreadable pairs are reported in `warnings` and
/// skipped; colour masks are reduced to channel 0 before thresholding.
inline std::vector<SamplePair> load_pairs(const std::filesystem::path& image_dir, const std::filesystem::path& mask_dir,
                                          std::vector<std::string>* warnings = nullptr) {
  auto warn = [&](std::string msg) {
    if (warnings) warnings->push_back(std::move(msg));
  };
  std::map<std::string, std::filesystem::path> images, masks;
  for (const auto& p : list_pngs(image_dir)) images[p.stem().string()] = p;
  for (const auto& p : list_pngs(mask_dir)) masks[p.stem().string()] = p;
  for (const auto& [stem, p] : masks)
    if (!images.count(stem)) warn("mask without image: " + p.string());

  std::vector<SamplePair> out;
  for (const auto& [stem, ipath] : images) {
    auto it = masks.find(stem);
    if (it == masks.end()) {
      warn("image without mask: " + ipath.string());
      continue;
    }
    try {
      const Image8 im = read_png(ipath);
      const Image8 mk = read_png(it->second);
      if (im.height != mk.height || im.width != mk.width) {
        warn("size mismatch between " + ipath.string() + " and " + it->second.string());
        continue;
      }
      if (mk.source_channels > 1) warn("mask " + it->second.string() + " has colour/alpha channels; using channel 0");
      out.push_back({stem, image_tensor(im), mask_tensor(mk)});
    } catch (const IoError& e) {
      warn(e.what());
    }
  }
  if (out.empty()) throw ValidationError("no usable image/mask pairs in " + image_dir.string() + " and " + mask_dir.string());
  return out;
}

/// Loads a dataset laid out as `<root>/images` and `<root>/masks`.
inline std::vector<SamplePair> load_dataset(const std::filesystem::path& root, std::vector<std::string>* warnings = nullptr) {
  return load_pairs(root / "images", root / "masks", warnings);
}

/// Writes pairs in the `<root>/images`, `<root>/masks` layout.
inline void write_dataset(const std::filesystem::path& root, const std::vector<SamplePair>& pairs) {
  for (const auto& s : pairs) {
    write_rgb_png(root / "images" / (s.id + ".png"), s.image);
    write_gray_png(root / "masks" / (s.id + ".png"), s.mask);
  }
}

/// Random flip, random crop and multi-scale resizing.
struct AugmentConfig {
  bool enabled = true;
  Real hflip_prob = 0.5;
  std::array<Real, 2> crop_ratio_range{0.9, 1.0};
  std::vector<Real> scales{0.75, 1.0, 1.25};

  void validate() const {
    if (hflip_prob < 0 || hflip_prob > 1) throw ConfigError("hflip_prob must lie in [0,1]");
    if (crop_ratio_range[0] <= 0 || crop_ratio_range[0] > crop_ratio_range[1])
      throw ConfigError("crop_ratio_range must satisfy 0 < lo <= hi");
    if (scales.empty()) throw ConfigError("at least one scale is required");
    for (Real s : scales)
      if (s <= 0) throw ConfigError("scales must be positive");
  }
  friend bool operator==(const AugmentConfig&, const AugmentConfig&) = default;
};

inline void to_json(nlohmann::json& j, const AugmentConfig& c) {
  j = {{"enabled", c.enabled}, {"hflip_prob", c.hflip_prob}, {"crop_ratio_range", c.crop_ratio_range}, {"scales", c.scales}};
}

inline void from_json(const nlohmann::json& j, AugmentConfig& c) {
  j.at("enabled").get_to(c.enabled);
  j.at("hflip_prob").get_to(c.hflip_prob);
  j.at("crop_ratio_range").get_to(c.crop_ratio_range);
  j.at("scales").get_to(c.scales);
}

/// Training size for one batch: base * scale rounded to a multiple of 32
/// (at least 32).
inline int multiscale_size(int base, Real scale) {
  const long units = std::lround(base * scale / 32.0);
  return static_cast<int>(std::max(1L, units) * 32);
}

/// Mirrors along the width axis.
inline Tensor hflip(const Tensor& t) {
  Tensor out(t.shape());
  for (int b = 0; b < t.n(); ++b)
    for (int c = 0; c < t.c(); ++c)
      for (int y = 0; y < t.h(); ++y)
        for (int x = 0; x < t.w(); ++x) out.at(b, c, y, x) = t.at(b, c, y, t.w() - 1 - x);
  return out;
}

inline Tensor crop(const Tensor& t, int y0, int x0, int h, int w) {
  Tensor out({t.n(), t.c(), h, w});
  for (int b = 0; b < t.n(); ++b)
    for (int c = 0; c < t.c(); ++c)
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) out.at(b, c, y, x) = t.at(b, c, y0 + y, x0 + x);
  return out;
}

/// Resizes a binary mask bilinearly and re-binarizes at 0.5.
inline Tensor resize_mask(const Tensor& mask, Size2 size) {
  Tensor r = kernels::resize_bilinear(mask, size);
  for (auto& v : r.storage()) v = v >= 0.5 ? 1.0 : 0.0;
  return r;
}

/// Applies one random flip and crop to image and mask together, then resizes
/// both to `out_size`. The crop keeps a fraction r of each side with r drawn
/// from crop_ratio_range (clamped to 1). With augmentation disabled only the
/// resize happens.
inline SamplePair augment(const SamplePair& s, const AugmentConfig& cfg, Rng& rng, Size2 out_size) {
  SamplePair out{s.id, s.image, s.mask};
  if (cfg.enabled) {
    if (rng.uniform() < cfg.hflip_prob) {
      out.image = hflip(out.image);
      out.mask = hflip(out.mask);
    }
    const Real ratio = std::min<Real>(1, rng.uniform(cfg.crop_ratio_range[0], cfg.crop_ratio_range[1]));
    const int h = out.image.h(), w = out.image.w();
    const int ch = std::clamp(static_cast<int>(std::lround(h * ratio)), 1, h);
    const int cw = std::clamp(static_cast<int>(std::lround(w * ratio)), 1, w);
    const int y0 = static_cast<int>(rng.uniform_int(0, h - ch));
    const int x0 = static_cast<int>(rng.uniform_int(0, w - cw));
    if (ch != h || cw != w) {
      out.image = crop(out.image, y0, x0, ch, cw);
      out.mask = crop(out.mask, y0, x0, ch, cw);
    }
  }
  if (out.image.shape().spatial() != out_size) {
    out.image = kernels::resize_bilinear(out.image, out_size);
    for (auto& v : out.image.storage()) v = std::clamp(v, Real{0}, Real{1});
    out.mask = resize_mask(out.mask, out_size);
  }
  return out;
}

/// Synthetic salient-object images: 1-3 filled ellipses, rectangles or
/// polygons in distinct colours over a textured noise background.
struct SyntheticConfig {
  Real min_fg_fraction = 0.02;
  Real max_fg_fraction = 0.6;
  int border_margin = 2;
};

namespace detail {

struct ShapeSpec {
  int kind;  // 0 ellipse, 1 rectangle, 2 polygon
  Real cy, cx, ry, rx, angle;
  std::vector<std::array<Real, 2>> poly;  // (y, x) vertices
  std::array<Real, 3> color;
};

inline bool inside(const ShapeSpec& s, Real y, Real x) {
  const Real dy = y - s.cy, dx = x - s.cx;
  const Real c = std::cos(s.angle), sn = std::sin(s.angle);
  const Real u = c * dx + sn * dy, v = -sn * dx + c * dy;
  switch (s.kind) {
    case 0:
      return (u * u) / (s.rx * s.rx) + (v * v) / (s.ry * s.ry) <= 1;
    case 1:
      return std::abs(u) <= s.rx && std::abs(v) <= s.ry;
    default: {
      bool in = false;
      const std::size_t n = s.poly.size();
      for (std::size_t i = 0, j = n - 1; i < n; j = i++) {
        const auto& a = s.poly[i];
        const auto& b = s.poly[j];
        if ((a[0] > y) != (b[0] > y) && x < (b[1] - a[1]) * (y - a[0]) / (b[0] - a[0]) + a[1]) in = !in;
      }
      return in;
    }
  }
}

inline Real quantize(Real v) { return std::round(std::clamp(v, Real{0}, Real{1}) * 255) / 255; }

inline SamplePair draw_synthetic(const std::string& id, Size2 size, Rng& rng, const SyntheticConfig& cfg) {
  const int h = size.h, w = size.w;
  const Real side = std::min(h, w);
  // Background: base colour, two low-frequency waves and pixel noise.
  std::array<Real, 3> base{};
  for (auto& c : base) c = rng.uniform(0.15, 0.85);
  const Real fy = rng.uniform(1, 4) * 2 * std::numbers::pi / h, fx = rng.uniform(1, 4) * 2 * std::numbers::pi / w;
  const Real phase = rng.uniform(0, 2 * std::numbers::pi), amp = rng.uniform(0.03, 0.1), noise = rng.uniform(0.02, 0.06);

  while (true) {
    const int count = static_cast<int>(rng.uniform_int(1, 3));
    std::vector<ShapeSpec> shapes;
    for (int k = 0; k < count; ++k) {
      ShapeSpec s{};
      s.kind = static_cast<int>(rng.uniform_int(0, 2));
      s.ry = rng.uniform(0.1, 0.3) * side;
      s.rx = rng.uniform(0.1, 0.3) * side;
      s.cy = rng.uniform(0.2, 0.8) * h;
      s.cx = rng.uniform(0.2, 0.8) * w;
      s.angle = rng.uniform(0, std::numbers::pi);
      if (s.kind == 2) {
        const int nv = static_cast<int>(rng.uniform_int(3, 7));
        for (int v = 0; v < nv; ++v) {
          const Real t = 2 * std::numbers::pi * (v + rng.uniform(0, 0.6)) / nv;
          const Real r = rng.uniform(0.6, 1.0);
          s.poly.push_back({s.cy + r * s.ry * std::sin(t), s.cx + r * s.rx * std::cos(t)});
        }
      }
      // A colour clearly separated from the background.
      do {
        for (auto& c : s.color) c = rng.uniform(0, 1);
      } while (std::abs(s.color[0] - base[0]) + std::abs(s.color[1] - base[1]) + std::abs(s.color[2] - base[2]) < 0.6);
      shapes.push_back(std::move(s));
    }

    Tensor mask({1, 1, h, w}, 0.0);
    std::vector<int> owner(static_cast<std::size_t>(h) * w, -1);
    bool touches = false;
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        for (int k = count - 1; k >= 0; --k)
          if (inside(shapes[static_cast<std::size_t>(k)], y + 0.5, x + 0.5)) {
            owner[static_cast<std::size_t>(y) * w + x] = k;
            mask.at(0, 0, y, x) = 1;
            if (y < cfg.border_margin || x < cfg.border_margin || y >= h - cfg.border_margin || x >= w - cfg.border_margin)
              touches = true;
            break;
          }
    const Real frac = mask.mean();
    if (touches || frac < cfg.min_fg_fraction || frac > cfg.max_fg_fraction) continue;

    Tensor image({1, 3, h, w});
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const int k = owner[static_cast<std::size_t>(y) * w + x];
        for (int c = 0; c < 3; ++c) {
          Real v;
          if (k >= 0) {
            v = shapes[static_cast<std::size_t>(k)].color[static_cast<std::size_t>(c)] + rng.uniform(-noise, noise);
          } else {
            v = base[static_cast<std::size_t>(c)] + amp * std::sin(fy * y + phase + c) * std::cos(fx * x - phase) +
                rng.uniform(-noise, noise);
          }
          image.at(0, c, y, x) = quantize(v);
        }
      }
    return {id, std::move(image), std::move(mask)};
  }
}

}  // namespace detail

/// `n` synthetic pairs named synth_0000, synth_0001, ... Each sample draws
/// from its own stream derived from (seed, index), so any subset can be
/// regenerated independently. Pixel values are already 8-bit quantized.
inline std::vector<SamplePair> generate_synthetic(int n, Size2 size, std::uint64_t seed, const SyntheticConfig& cfg = {}) {
  if (n < 1) throw ConfigError("synthetic dataset needs at least one image");
  if (size.h % 32 != 0 || size.w % 32 != 0 || size.h <= 0 || size.w <= 0)
    throw ConfigError("synthetic image size must be a positive multiple of 32, got " + to_string(size));
  std::vector<SamplePair> out;
  out.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(i)));
    char name[32];
    std::snprintf(name, sizeof name, "synth_%04d", i);
    out.push_back(detail::draw_synthetic(name, size, rng, cfg));
  }
  return out;
}

/// Stacks pairs of equal size into an image batch and a mask batch.
inline std::pair<Tensor, Tensor> stack_batch(const std::vector<SamplePair>& items) {
  std::vector<Tensor> imgs, masks;
  for (const auto& s : items) {
    imgs.push_back(s.image);
    masks.push_back(s.mask);
  }
  return {concat_batch(imgs), concat_batch(masks)};
}

}  // namespace msfa
