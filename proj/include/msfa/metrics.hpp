#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "msfa/tensor.hpp"

namespace msfa {

/// F-measure weight used by the threshold curves and adaptive F.
inline constexpr Real kBetaSquared = 0.3;
/// Weight of the object term in the structure measure.
inline constexpr Real kStructureAlpha = 0.5;
inline constexpr int kCurveThresholds = 256;

/// Precision, recall and F per 8-bit threshold t = 0..255, binarizing
/// round(255 * P) >= t.
struct CurveSeries {
  std::array<Real, kCurveThresholds> precision{};
  std::array<Real, kCurveThresholds> recall{};
  std::array<Real, kCurveThresholds> f_beta{};
  /// Set when the ground truth has no foreground; recall is then reported as 0
  /// and the image is left out of dataset curve averages.
  bool gt_empty = false;
};

struct FMeasure {
  Real max_f = 0;
  Real adaptive_f = 0;
};

namespace detail {

inline void check_metric_pair(const Tensor& p, const Tensor& g) {
  if (p.shape() != g.shape()) throw ShapeError("metric inputs differ in shape: " + to_string(p.shape()) + " vs " + to_string(g.shape()));
  if (p.n() != 1 || p.c() != 1) throw ShapeError("metrics expect single [1,1,H,W] maps, got " + to_string(p.shape()));
  if (p.empty()) throw ShapeError("metrics need a non-empty map");
  for (Real v : g.storage())
    if (v != 0 && v != 1) throw ValidationError("ground truth mask must be binary");
}

inline int quantize8(Real p) { return static_cast<int>(std::clamp<long>(std::lround(p * 255.0), 0L, 255L)); }

inline Real f_score(Real precision, Real recall, Real beta2) {
  const Real den = beta2 * precision + recall;
  return den > 0 ? (1 + beta2) * precision * recall / den : 0;
}

inline Real adaptive_threshold(const Tensor& p) { return std::min(2 * p.mean(), Real{1}); }

}  // namespace detail

/// Mean absolute error.
inline Real mae(const Tensor& p, const Tensor& g) {
  detail::check_metric_pair(p, g);
  Real s = 0;
  for (std::size_t i = 0; i < p.size(); ++i) s += std::abs(g[i] - p[i]);
  return s / static_cast<Real>(p.size());
}

/// Threshold curves built from cumulative foreground/background histograms.
inline CurveSeries pr_curve(const Tensor& p, const Tensor& g) {
  detail::check_metric_pair(p, g);
  std::array<std::int64_t, kCurveThresholds> fg{}, bg{};
  std::int64_t n_fg = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const int q = detail::quantize8(p[i]);
    if (g[i] == 1) {
      ++fg[static_cast<std::size_t>(q)];
      ++n_fg;
    } else {
      ++bg[static_cast<std::size_t>(q)];
    }
  }
  CurveSeries c;
  c.gt_empty = n_fg == 0;
  std::int64_t tp = 0, fp = 0;
  for (int t = kCurveThresholds - 1; t >= 0; --t) {
    const auto ti = static_cast<std::size_t>(t);
    tp += fg[ti];
    fp += bg[ti];
    const Real prec = tp + fp > 0 ? static_cast<Real>(tp) / static_cast<Real>(tp + fp) : 0;
    const Real rec = n_fg > 0 ? static_cast<Real>(tp) / static_cast<Real>(n_fg) : 0;
    c.precision[ti] = prec;
    c.recall[ti] = rec;
    c.f_beta[ti] = detail::f_score(prec, rec, kBetaSquared);
  }
  return c;
}

/// Maximum F over the 256 thresholds and F at the adaptive threshold
/// min(2 * mean(P), 1), both on the 8-bit quantized map.
inline FMeasure f_measure(const Tensor& p, const Tensor& g) {
  const CurveSeries c = pr_curve(p, g);
  FMeasure f;
  f.max_f = *std::max_element(c.f_beta.begin(), c.f_beta.end());
  const Real thr = detail::adaptive_threshold(p) * 255.0;
  std::int64_t tp = 0, fp = 0, n_fg = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const bool pos = detail::quantize8(p[i]) >= thr;
    if (g[i] == 1) {
      ++n_fg;
      tp += pos;
    } else {
      fp += pos;
    }
  }
  const Real prec = tp + fp > 0 ? static_cast<Real>(tp) / static_cast<Real>(tp + fp) : 0;
  const Real rec = n_fg > 0 ? static_cast<Real>(tp) / static_cast<Real>(n_fg) : 0;
  f.adaptive_f = detail::f_score(prec, rec, kBetaSquared);
  return f;
}

namespace detail {

/// Exact squared Euclidean distance transform to the nearest foreground
/// pixel, with the index of that pixel. Ties resolve to the smallest column,
/// then the smallest row. Separable two-pass lower-envelope algorithm.
struct DistanceField {
  std::vector<Real> dist2;
  std::vector<std::size_t> nearest;
};

inline DistanceField distance_to_foreground(const std::vector<bool>& fg, int h, int w) {
  const Real inf = std::numeric_limits<Real>::infinity();
  const auto at = [w](int y, int x) { return static_cast<std::size_t>(y) * w + x; };
  // Column pass: nearest foreground row in the same column, preferring the
  // upper one on ties.
  std::vector<Real> col_d2(static_cast<std::size_t>(h) * w, inf);
  std::vector<int> col_row(col_d2.size(), -1);
  for (int x = 0; x < w; ++x) {
    int above = -1;
    std::vector<int> up(static_cast<std::size_t>(h)), down(static_cast<std::size_t>(h));
    for (int y = 0; y < h; ++y) {
      if (fg[at(y, x)]) above = y;
      up[static_cast<std::size_t>(y)] = above;
    }
    int below = -1;
    for (int y = h - 1; y >= 0; --y) {
      if (fg[at(y, x)]) below = y;
      down[static_cast<std::size_t>(y)] = below;
    }
    for (int y = 0; y < h; ++y) {
      const int a = up[static_cast<std::size_t>(y)], b = down[static_cast<std::size_t>(y)];
      int best = -1;
      if (a >= 0 && (b < 0 || y - a <= b - y)) best = a;
      else if (b >= 0) best = b;
      if (best >= 0) {
        col_d2[at(y, x)] = static_cast<Real>(y - best) * (y - best);
        col_row[at(y, x)] = best;
      }
    }
  }
  // Row pass: lower envelope of parabolas (x - q)^2 + col_d2(q).
  DistanceField out{std::vector<Real>(col_d2.size(), inf), std::vector<std::size_t>(col_d2.size(), 0)};
  std::vector<int> v(static_cast<std::size_t>(w));
  std::vector<Real> z(static_cast<std::size_t>(w) + 1);
  for (int y = 0; y < h; ++y) {
    const auto f = [&](int q) { return col_d2[at(y, q)]; };
    int k = -1;
    for (int q = 0; q < w; ++q) {
      if (!std::isfinite(f(q))) continue;
      if (k < 0) {
        k = 0;
        v[0] = q;
        z[0] = -inf;
        z[1] = inf;
        continue;
      }
      Real s;
      while (true) {
        const int p = v[static_cast<std::size_t>(k)];
        s = ((f(q) + static_cast<Real>(q) * q) - (f(p) + static_cast<Real>(p) * p)) / (2.0 * q - 2.0 * p);
        if (s <= z[static_cast<std::size_t>(k)] && k > 0) {
          --k;
          continue;
        }
        break;
      }
      if (s <= z[static_cast<std::size_t>(k)]) {
        // k == 0 and the new parabola dominates everywhere.
        v[0] = q;
        z[0] = -inf;
        z[1] = inf;
        continue;
      }
      ++k;
      v[static_cast<std::size_t>(k)] = q;
      z[static_cast<std::size_t>(k)] = s;
      z[static_cast<std::size_t>(k) + 1] = inf;
    }
    if (k < 0) continue;
    int j = 0;
    for (int x = 0; x < w; ++x) {
      while (z[static_cast<std::size_t>(j) + 1] < x) ++j;
      const int q = v[static_cast<std::size_t>(j)];
      out.dist2[at(y, x)] = static_cast<Real>(x - q) * (x - q) + f(q);
      out.nearest[at(y, x)] = at(col_row[at(y, q)], q);
    }
  }
  return out;
}

/// Normalized 1-D Gaussian taps; the 2-D kernel is their outer product.
inline std::vector<Real> gaussian_taps(int size, Real sigma) {
  std::vector<Real> k(static_cast<std::size_t>(size));
  const int r = size / 2;
  Real s = 0;
  for (int i = -r; i <= r; ++i) {
    k[static_cast<std::size_t>(i + r)] = std::exp(-static_cast<Real>(i * i) / (2 * sigma * sigma));
    s += k[static_cast<std::size_t>(i + r)];
  }
  for (auto& v : k) v /= s;
  return k;
}

/// Correlation with a separable kernel, zero padding, same-size output.
inline std::vector<Real> filter_separable(const std::vector<Real>& img, int h, int w, const std::vector<Real>& k) {
  const int r = static_cast<int>(k.size()) / 2;
  std::vector<Real> tmp(img.size(), 0), out(img.size(), 0);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      Real acc = 0;
      for (int d = -r; d <= r; ++d) {
        const int xx = x + d;
        if (xx >= 0 && xx < w) acc += k[static_cast<std::size_t>(d + r)] * img[static_cast<std::size_t>(y) * w + xx];
      }
      tmp[static_cast<std::size_t>(y) * w + x] = acc;
    }
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      Real acc = 0;
      for (int d = -r; d <= r; ++d) {
        const int yy = y + d;
        if (yy >= 0 && yy < h) acc += k[static_cast<std::size_t>(d + r)] * tmp[static_cast<std::size_t>(yy) * w + x];
      }
      out[static_cast<std::size_t>(y) * w + x] = acc;
    }
  return out;
}

}  // namespace detail

/// Weighted F-measure (beta^2 = 1). Errors are spread among dependent
/// foreground pixels by a 7x7 Gaussian (sigma 5) and background errors are
/// weighted up with proximity to the object. All-background ground truth
/// scores 1 for an all-zero prediction and 0 otherwise.
inline Real weighted_f_measure(const Tensor& p, const Tensor& g) {
  detail::check_metric_pair(p, g);
  const int h = p.h(), w = p.w();
  const std::size_t n = p.size();
  std::vector<bool> fg(n);
  bool any_fg = false;
  for (std::size_t i = 0; i < n; ++i) {
    fg[i] = g[i] == 1;
    any_fg = any_fg || fg[i];
  }
  if (!any_fg) {
    for (Real v : p.storage())
      if (v > 0) return 0;
    return 1;
  }
  const Real eps = std::numeric_limits<Real>::epsilon();
  const auto field = detail::distance_to_foreground(fg, h, w);
  std::vector<Real> err(n), spread(n);
  for (std::size_t i = 0; i < n; ++i) err[i] = std::abs(p[i] - g[i]);
  for (std::size_t i = 0; i < n; ++i) spread[i] = fg[i] ? err[i] : err[field.nearest[i]];
  const auto blurred = detail::filter_separable(spread, h, w, detail::gaussian_taps(7, 5.0));
  Real fg_count = 0, fg_err = 0, bg_err = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (fg[i]) {
      const Real e = blurred[i] < err[i] ? blurred[i] : err[i];
      fg_err += e;
      fg_count += 1;
    } else {
      const Real importance = 2 - std::exp(std::log(0.5) / 5 * std::sqrt(field.dist2[i]));
      bg_err += err[i] * importance;
    }
  }
  const Real tpw = fg_count - fg_err;
  const Real recall = 1 - fg_err / fg_count;
  const Real precision = tpw / (eps + tpw + bg_err);
  return 2 * recall * precision / (eps + recall + precision);
}

namespace detail {

inline Real object_similarity(const std::vector<Real>& vals) {
  if (vals.empty()) return 0;
  Real mean = 0;
  for (Real v : vals) mean += v;
  mean /= static_cast<Real>(vals.size());
  Real sd = 0;
  if (vals.size() > 1) {
    for (Real v : vals) sd += (v - mean) * (v - mean);
    sd = std::sqrt(sd / static_cast<Real>(vals.size() - 1));
  }
  return 2 * mean / (mean * mean + 1 + sd + std::numeric_limits<Real>::epsilon());
}

/// SSIM-style structural similarity of a rectangular block.
inline Real block_ssim(const Tensor& p, const Tensor& g, int y0, int y1, int x0, int x1) {
  const int n = (y1 - y0) * (x1 - x0);
  if (n <= 0) return 0;
  const Real eps = std::numeric_limits<Real>::epsilon();
  Real mx = 0, my = 0;
  for (int y = y0; y < y1; ++y)
    for (int x = x0; x < x1; ++x) {
      mx += p.at(0, 0, y, x);
      my += g.at(0, 0, y, x);
    }
  mx /= n;
  my /= n;
  Real sxx = 0, syy = 0, sxy = 0;
  for (int y = y0; y < y1; ++y)
    for (int x = x0; x < x1; ++x) {
      const Real dx = p.at(0, 0, y, x) - mx, dy = g.at(0, 0, y, x) - my;
      sxx += dx * dx;
      syy += dy * dy;
      sxy += dx * dy;
    }
  const Real norm = n - 1 + eps;
  sxx /= norm;
  syy /= norm;
  sxy /= norm;
  const Real alpha = 4 * mx * my * sxy;
  const Real beta = (mx * mx + my * my) * (sxx + syy);
  if (alpha != 0) return alpha / (beta + eps);
  return beta == 0 ? 1 : 0;
}

}  // namespace detail

/// Structure measure 0.5 * object + 0.5 * region, clamped at 0. An
/// all-background mask scores 1 - mean(P); all-foreground scores mean(P).
inline Real s_measure(const Tensor& p, const Tensor& g) {
  detail::check_metric_pair(p, g);
  const Real fg_frac = g.mean();
  if (fg_frac == 0) return 1 - p.mean();
  if (fg_frac == 1) return p.mean();
  const int h = p.h(), w = p.w();

  std::vector<Real> fg_vals, bg_vals;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (g[i] == 1)
      fg_vals.push_back(p[i]);
    else
      bg_vals.push_back(1 - p[i]);
  }
  const Real object = fg_frac * detail::object_similarity(fg_vals) + (1 - fg_frac) * detail::object_similarity(bg_vals);

  // Centroid in 1-based coordinates, rounded half away from zero; it splits
  // the map into rows [0, cy) / [cy, h) and columns [0, cx) / [cx, w).
  Real sx = 0, sy = 0, cnt = 0;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      if (g.at(0, 0, y, x) == 1) {
        sx += x + 1;
        sy += y + 1;
        cnt += 1;
      }
  const int cx = static_cast<int>(std::round(sx / cnt));
  const int cy = static_cast<int>(std::round(sy / cnt));
  const Real area = static_cast<Real>(h) * w;
  const Real w1 = static_cast<Real>(cx) * cy / area;
  const Real w2 = static_cast<Real>(w - cx) * cy / area;
  const Real w3 = static_cast<Real>(cx) * (h - cy) / area;
  const Real w4 = 1 - w1 - w2 - w3;
  const Real region = w1 * detail::block_ssim(p, g, 0, cy, 0, cx) + w2 * detail::block_ssim(p, g, 0, cy, cx, w) +
                      w3 * detail::block_ssim(p, g, cy, h, 0, cx) + w4 * detail::block_ssim(p, g, cy, h, cx, w);

  const Real s = kStructureAlpha * object + (1 - kStructureAlpha) * region;
  return std::clamp(s, Real{0}, Real{1});
}

/// Enhanced-alignment measure of the prediction binarized at the adaptive
/// threshold: mean over pixels of (xi + 1)^2 / 4 with
/// xi = 2 a b / (a^2 + b^2 + eps) for the mean-removed maps a, b.
inline Real e_measure(const Tensor& p, const Tensor& g) {
  detail::check_metric_pair(p, g);
  const std::size_t n = p.size();
  const Real thr = detail::adaptive_threshold(p);
  std::vector<Real> bin(n);
  for (std::size_t i = 0; i < n; ++i) bin[i] = p[i] >= thr ? 1 : 0;
  const Real g_mean = g.mean();
  Real total = 0;
  if (g_mean == 0) {
    for (Real b : bin) total += 1 - b;
  } else if (g_mean == 1) {
    for (Real b : bin) total += b;
  } else {
    Real p_mean = 0;
    for (Real b : bin) p_mean += b;
    p_mean /= static_cast<Real>(n);
    const Real eps = std::numeric_limits<Real>::epsilon();
    for (std::size_t i = 0; i < n; ++i) {
      const Real a = g[i] - g_mean, b = bin[i] - p_mean;
      const Real xi = 2 * a * b / (a * a + b * b + eps);
      total += (xi + 1) * (xi + 1) / 4;
    }
  }
  return total / static_cast<Real>(n);
}

/// All per-image scores.
struct ImageMetrics {
  std::string id;
  Real mae = 0;
  Real f_beta_max = 0;
  Real f_beta_adaptive = 0;
  Real weighted_f = 0;
  Real s_measure = 0;
  Real e_measure = 0;
  bool gt_empty = false;
  CurveSeries curve;
};

inline ImageMetrics evaluate_pair(const Tensor& p, const Tensor& g, std::string id = {}) {
  ImageMetrics m;
  m.id = std::move(id);
  m.mae = mae(p, g);
  m.curve = pr_curve(p, g);
  m.gt_empty = m.curve.gt_empty;
  const FMeasure f = f_measure(p, g);
  m.f_beta_max = f.max_f;
  m.f_beta_adaptive = f.adaptive_f;
  m.weighted_f = weighted_f_measure(p, g);
  m.s_measure = s_measure(p, g);
  m.e_measure = e_measure(p, g);
  return m;
}

/// Dataset-level summary. F-based scores average only images with a
/// non-empty mask; f_beta_max is the peak of the averaged F curve.
struct MetricReport {
  Real mae = 0;
  Real f_beta_max = 0;
  Real f_beta_adaptive = 0;
  Real weighted_f = 0;
  Real s_measure = 0;
  Real e_measure = 0;
  std::size_t images = 0;
  std::size_t curve_images = 0;
  CurveSeries curve;
  std::vector<ImageMetrics> per_image;
};

/// Aggregates per-image scores. The result is independent of input order.
inline MetricReport aggregate(std::vector<ImageMetrics> items) {
  std::sort(items.begin(), items.end(), [](const auto& a, const auto& b) { return a.id < b.id; });
  MetricReport r;
  r.images = items.size();
  for (const auto& m : items) {
    r.mae += m.mae;
    r.weighted_f += m.weighted_f;
    r.s_measure += m.s_measure;
    r.e_measure += m.e_measure;
    if (m.gt_empty) continue;
    ++r.curve_images;
    r.f_beta_adaptive += m.f_beta_adaptive;
    for (std::size_t t = 0; t < kCurveThresholds; ++t) {
      r.curve.precision[t] += m.curve.precision[t];
      r.curve.recall[t] += m.curve.recall[t];
      r.curve.f_beta[t] += m.curve.f_beta[t];
    }
  }
  if (r.images > 0) {
    const auto n = static_cast<Real>(r.images);
    r.mae /= n;
    r.weighted_f /= n;
    r.s_measure /= n;
    r.e_measure /= n;
  }
  if (r.curve_images > 0) {
    const auto n = static_cast<Real>(r.curve_images);
    r.f_beta_adaptive /= n;
    for (std::size_t t = 0; t < kCurveThresholds; ++t) {
      r.curve.precision[t] /= n;
      r.curve.recall[t] /= n;
      r.curve.f_beta[t] /= n;
    }
    r.f_beta_max = *std::max_element(r.curve.f_beta.begin(), r.curve.f_beta.end());
  }
  r.curve.gt_empty = r.curve_images == 0;
  r.per_image = std::move(items);
  return r;
}

inline nlohmann::json to_json_summary(const MetricReport& r) {
  return {{"mae", r.mae},
          {"f_beta_max", r.f_beta_max},
          {"f_beta_adaptive", r.f_beta_adaptive},
          {"weighted_f", r.weighted_f},
          {"s_measure", r.s_measure},
          {"e_measure", r.e_measure},
          {"images", r.images},
          {"curve_images", r.curve_images}};
}

inline void to_json(nlohmann::json& j, const MetricReport& r) {
  j = to_json_summary(r);
  nlohmann::json per = nlohmann::json::array();
  for (const auto& m : r.per_image) {
    per.push_back({{"id", m.id},
                   {"mae", m.mae},
                   {"f_beta_max", m.f_beta_max},
                   {"f_beta_adaptive", m.f_beta_adaptive},
                   {"weighted_f", m.weighted_f},
                   {"s_measure", m.s_measure},
                   {"e_measure", m.e_measure},
                   {"gt_empty", m.gt_empty}});
  }
  j["per_image"] = per;
}

/// Reads what to_json wrote. Per-image curves are not stored, so they stay empty.
inline void from_json(const nlohmann::json& j, MetricReport& r) {
  j.at("mae").get_to(r.mae);
  j.at("f_beta_max").get_to(r.f_beta_max);
  j.at("f_beta_adaptive").get_to(r.f_beta_adaptive);
  j.at("weighted_f").get_to(r.weighted_f);
  j.at("s_measure").get_to(r.s_measure);
  j.at("e_measure").get_to(r.e_measure);
  j.at("images").get_to(r.images);
  j.at("curve_images").get_to(r.curve_images);
  r.per_image.clear();
  if (!j.contains("per_image")) return;
  for (const auto& p : j.at("per_image")) {
    ImageMetrics m;
    p.at("id").get_to(m.id);
    p.at("mae").get_to(m.mae);
    p.at("f_beta_max").get_to(m.f_beta_max);
    p.at("f_beta_adaptive").get_to(m.f_beta_adaptive);
    p.at("weighted_f").get_to(m.weighted_f);
    p.at("s_measure").get_to(m.s_measure);
    p.at("e_measure").get_to(m.e_measure);
    p.at("gt_empty").get_to(m.gt_empty);
    r.per_image.push_back(std::move(m));
  }
}

/// CSV with columns threshold, precision, recall, f_beta and 256 data rows.
inline std::string curve_csv(const CurveSeries& c) {
  std::string out = "threshold,precision,recall,f_beta\n";
  char buf[128];
  for (int t = 0; t < kCurveThresholds; ++t) {
    const auto i = static_cast<std::size_t>(t);
    std::snprintf(buf, sizeof buf, "%d,%.17g,%.17g,%.17g\n", t, c.precision[i], c.recall[i], c.f_beta[i]);
    out += buf;
  }
  return out;
}

}  // namespace msfa
