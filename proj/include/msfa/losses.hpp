#pragma once

#include <array>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "msfa/heads.hpp"
#include "msfa/ops.hpp"

namespace msfa {

/// Guard for logarithms and ratio denominators in every loss.
inline constexpr Real kLossEps = 1e-7;

/// Default boundary extraction window.
inline constexpr int kBoundaryKernel = 3;

namespace detail {

inline void check_pair(const Shape& p, const Shape& g, const char* what) {
  if (p != g) throw ShapeError(std::string(what) + ": prediction " + to_string(p) + " vs mask " + to_string(g));
  if (p.c != 1) throw ShapeError(std::string(what) + ": saliency maps must be single-channel, got " + to_string(p));
}

inline void check_binary(const Tensor& g, const char* what) {
  for (Real v : g.storage())
    if (v != 0 && v != 1) throw ValidationError(std::string(what) + ": ground truth must be binary");
}

inline std::size_t per_sample(const Shape& s) { return static_cast<std::size_t>(s.c) * s.h * s.w; }

}  // namespace detail

/// Boundary map of a soft or binary map M in [0,1]:
/// maxpool(1 - M, k) - (1 - M), with out-of-image cells ignored.
inline Tensor extract_boundary(const Tensor& m, int kernel = kBoundaryKernel) {
  if (kernel < 1 || kernel % 2 == 0) throw ConfigError("boundary kernel must be odd, got " + std::to_string(kernel));
  Tensor inv = m.map([](Real v) { return 1 - v; });
  Tensor out = kernels::maxpool_same(inv, kernel, kernels::PoolPadding::Excluded);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= inv[i];
  return out;
}

/// Mean binary cross-entropy over every pixel of the batch. Probabilities are
/// clamped to [eps, 1-eps]; the gradient is zero where the clamp is active.
inline Var bce_loss(const Var& p, const Tensor& g) {
  detail::check_pair(p.shape(), g.shape(), "bce_loss");
  detail::check_binary(g, "bce_loss");
  const std::size_t n = g.size();
  if (n == 0) return Var(Tensor(Shape{1, 1, 1, 1}, 0.0));
  Real total = 0;
  std::uint64_t clamp_sig = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const Real raw = p.value()[i];
    const Real q = std::clamp(raw, kLossEps, 1 - kLossEps);
    if (q != raw) clamp_sig = clamp_sig * 31 + i + 1;
    total -= g[i] * std::log(q) + (1 - g[i]) * std::log(1 - q);
  }
  record_branch(clamp_sig);
  return Var::make(Tensor(Shape{1, 1, 1, 1}, total / static_cast<Real>(n)), {p}, [p, g](Node& self) {
    Tensor& gp = p.node()->grad_buffer();
    const Real k = self.grad[0] / static_cast<Real>(g.size());
    for (std::size_t i = 0; i < g.size(); ++i) {
      const Real v = p.value()[i];
      if (v < kLossEps || v > 1 - kLossEps) continue;
      gp[i] += k * (-(g[i] / v) + (1 - g[i]) / (1 - v));
    }
  });
}

/// Soft IoU loss 1 - (sum GP + eps) / (sum(G + P - GP) + eps) per sample,
/// averaged over the batch. An empty prediction on an empty mask scores 0.
inline Var iou_loss(const Var& p, const Tensor& g) {
  detail::check_pair(p.shape(), g.shape(), "iou_loss");
  detail::check_binary(g, "iou_loss");
  const int batch = g.n();
  const std::size_t m = detail::per_sample(g.shape());
  if (batch == 0) return Var(Tensor(Shape{1, 1, 1, 1}, 0.0));
  std::vector<Real> inter(static_cast<std::size_t>(batch)), uni(static_cast<std::size_t>(batch));
  Real total = 0;
  for (int b = 0; b < batch; ++b) {
    Real s = 0, u = 0;
    for (std::size_t i = 0; i < m; ++i) {
      const std::size_t j = b * m + i;
      const Real pv = p.value()[j], gv = g[j];
      s += gv * pv;
      u += gv + pv - gv * pv;
    }
    inter[static_cast<std::size_t>(b)] = s + kLossEps;
    uni[static_cast<std::size_t>(b)] = u + kLossEps;
    total += 1 - (s + kLossEps) / (u + kLossEps);
  }
  return Var::make(Tensor(Shape{1, 1, 1, 1}, total / batch), {p}, [p, g, inter, uni, m, batch](Node& self) {
    Tensor& gp = p.node()->grad_buffer();
    const Real k = self.grad[0] / batch;
    for (int b = 0; b < batch; ++b) {
      const Real s = inter[static_cast<std::size_t>(b)], u = uni[static_cast<std::size_t>(b)];
      for (std::size_t i = 0; i < m; ++i) {
        const std::size_t j = b * m + i;
        const Real gv = g[j];
        gp[j] += -k * (gv * u - s * (1 - gv)) / (u * u);
      }
    }
  });
}

/// Boundary F-measure loss. With boundaries Pb, Gb from extract_boundary,
/// precision = (sum GbPb + eps) / (sum Pb + eps), recall = (sum GbPb + eps) /
/// (sum Gb + eps) and loss = 1 - 2*precision*recall / (precision + recall),
/// per sample and averaged over the batch. Two empty boundaries score 0.
inline Var boundary_loss(const Var& p, const Tensor& g, int kernel = kBoundaryKernel) {
  detail::check_pair(p.shape(), g.shape(), "boundary_loss");
  detail::check_binary(g, "boundary_loss");
  const int batch = g.n();
  if (batch == 0) return Var(Tensor(Shape{1, 1, 1, 1}, 0.0));
  const std::size_t m = detail::per_sample(g.shape());

  Tensor inv = p.value().map([](Real v) { return 1 - v; });
  std::vector<std::ptrdiff_t> arg;
  Tensor pb = kernels::maxpool_same(inv, kernel, kernels::PoolPadding::Excluded, &arg);
  for (std::size_t i = 0; i < pb.size(); ++i) pb[i] -= inv[i];
  if (detail::kink_sink()) {
    std::uint64_t h = 0;
    for (auto a : arg) h = h * 1099511628211ull + static_cast<std::uint64_t>(a + 2);
    record_branch(h);
  }
  Tensor gb = extract_boundary(g, kernel);

  struct Stats {
    Real s, a, bsum, prec, rec;
  };
  std::vector<Stats> st(static_cast<std::size_t>(batch));
  Real total = 0;
  for (int b = 0; b < batch; ++b) {
    Real s = 0, a = 0, bs = 0;
    for (std::size_t i = 0; i < m; ++i) {
      const std::size_t j = b * m + i;
      s += gb[j] * pb[j];
      a += pb[j];
      bs += gb[j];
    }
    const Real prec = (s + kLossEps) / (a + kLossEps);
    const Real rec = (s + kLossEps) / (bs + kLossEps);
    st[static_cast<std::size_t>(b)] = {s + kLossEps, a + kLossEps, bs + kLossEps, prec, rec};
    total += 1 - 2 * prec * rec / (prec + rec);
  }

  return Var::make(Tensor(Shape{1, 1, 1, 1}, total / batch), {p},
                   [p, gb = std::move(gb), arg = std::move(arg), st, m, batch](Node& self) {
    const Real k = self.grad[0] / batch;
    // Gradient with respect to the boundary map Pb.
    Tensor g_pb(gb.shape());
    for (int b = 0; b < batch; ++b) {
      const auto& t = st[static_cast<std::size_t>(b)];
      const Real denom = (t.prec + t.rec) * (t.prec + t.rec);
      const Real dF_dp = 2 * t.rec * t.rec / denom;
      const Real dF_dr = 2 * t.prec * t.prec / denom;
      for (std::size_t i = 0; i < m; ++i) {
        const std::size_t j = b * m + i;
        const Real dp = (gb[j] * t.a - t.s) / (t.a * t.a);
        const Real dr = gb[j] / t.bsum;
        g_pb[j] = -k * (dF_dp * dp + dF_dr * dr);
      }
    }
    // Pb = maxpool(q) - q with q = 1 - P, so dL/dP = g_pb - route(g_pb).
    Tensor& gp = p.node()->grad_buffer();
    for (std::size_t j = 0; j < g_pb.size(); ++j) {
      gp[j] += g_pb[j];
      if (arg[j] >= 0) gp[static_cast<std::size_t>(arg[j])] -= g_pb[j];
    }
  });
}

inline Real bce_loss(const Tensor& p, const Tensor& g) {
  NoGradGuard ng;
  return bce_loss(Var(p), g).item();
}
inline Real iou_loss(const Tensor& p, const Tensor& g) {
  NoGradGuard ng;
  return iou_loss(Var(p), g).item();
}
inline Real boundary_loss(const Tensor& p, const Tensor& g, int kernel = kBoundaryKernel) {
  NoGradGuard ng;
  return boundary_loss(Var(p), g, kernel).item();
}

/// Which terms make up the per-map loss.
struct LossTerms {
  bool bce = true;
  bool iou = true;
  bool bd = true;

  void validate() const {
    if (!bce) throw ConfigError("the bce term must be enabled");
  }
  friend bool operator==(const LossTerms&, const LossTerms&) = default;
};

/// Deep-supervision weights for maps m2..m5: 1/2^(i-2).
inline constexpr std::array<Real, 4> kLevelWeights{1.0, 0.5, 0.25, 0.125};

struct LevelLoss {
  std::optional<Real> bce, iou, bd;
  Real sum = 0;
};

/// Per-level, per-term values and the weighted total.
struct LossBreakdown {
  std::array<LevelLoss, 4> per_level;  // levels 2..5
  Real total = 0;
  std::array<Real, 4> weights = kLevelWeights;

  /// Recomputes the weighted total from the per-level sums.
  [[nodiscard]] Real weighted_total() const {
    Real t = 0;
    for (std::size_t i = 0; i < 4; ++i) t += weights[i] * per_level[i].sum;
    return t;
  }
};

inline void to_json(nlohmann::json& j, const LossBreakdown& b) {
  j = nlohmann::json::object();
  nlohmann::json levels = nlohmann::json::object();
  for (std::size_t i = 0; i < 4; ++i) {
    nlohmann::json l = nlohmann::json::object();
    const auto& lv = b.per_level[i];
    if (lv.bce) l["bce"] = *lv.bce;
    if (lv.iou) l["iou"] = *lv.iou;
    if (lv.bd) l["bd"] = *lv.bd;
    l["sum"] = lv.sum;
    l["weight"] = b.weights[i];
    levels[std::to_string(i + 2)] = l;
  }
  j["levels"] = levels;
  j["total"] = b.total;
}

/// Per-map loss L = bce + iou + bd over the enabled terms.
inline Var map_loss(const Var& p, const Tensor& g, const LossTerms& terms, LevelLoss* record = nullptr) {
  terms.validate();
  LevelLoss rec;
  Var l = bce_loss(p, g);
  rec.bce = l.item();
  if (terms.iou) {
    Var t = iou_loss(p, g);
    rec.iou = t.item();
    l = add(l, t);
  }
  if (terms.bd) {
    Var t = boundary_loss(p, g);
    rec.bd = t.item();
    l = add(l, t);
  }
  rec.sum = l.item();
  if (record) *record = rec;
  return l;
}

/// Deep-supervised objective: L(m2) + L(m3)/2 + L(m4)/4 + L(m5)/8.
inline Var total_loss(const SaliencyOutputs& outs, const Tensor& g, const LossTerms& terms, LossBreakdown* breakdown = nullptr) {
  LossBreakdown bd;
  const auto maps = outs.all();
  Var total;
  for (std::size_t i = 0; i < 4; ++i) {
    if (maps[i].shape() != g.shape())
      throw ShapeError("map m" + std::to_string(i + 2) + " " + to_string(maps[i].shape()) + " does not match mask " +
                       to_string(g.shape()));
    Var l = scale(map_loss(maps[i], g, terms, &bd.per_level[i]), kLevelWeights[i]);
    total = total.defined() ? add(total, l) : l;
  }
  bd.total = total.item();
  if (breakdown) *breakdown = bd;
  return total;
}

}  // namespace msfa
