#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "msfa/autograd.hpp"
#include "msfa/tensor.hpp"

namespace msfa {

// ---------------------------------------------------------------------------
// Raw kernels on tensors. These carry no graph and are shared by the
// differentiable ops below, the losses and the data pipeline.
// ---------------------------------------------------------------------------
namespace kernels {

using RowMatrix = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixMap = Eigen::Map<RowMatrix>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;

struct ConvGeometry {
  int in_c, in_h, in_w;
  int k, stride, pad;
  int out_h, out_w;
};

inline int conv_out_extent(int in, int k, int stride, int pad) {
  return (in + 2 * pad - k) / stride + 1;
}

/// Unfolds one image [C,H,W] into columns [C*k*k, out_h*out_w].
inline void im2col(const Real* img, const ConvGeometry& g, Real* cols) {
  const int plane = g.out_h * g.out_w;
  for (int c = 0; c < g.in_c; ++c) {
    const Real* src = img + static_cast<std::size_t>(c) * g.in_h * g.in_w;
    for (int ky = 0; ky < g.k; ++ky) {
      for (int kx = 0; kx < g.k; ++kx) {
        Real* dst = cols + (static_cast<std::size_t>((c * g.k + ky) * g.k + kx)) * plane;
        for (int oy = 0; oy < g.out_h; ++oy) {
          const int iy = oy * g.stride - g.pad + ky;
          Real* row = dst + static_cast<std::size_t>(oy) * g.out_w;
          if (iy < 0 || iy >= g.in_h) {
            std::fill(row, row + g.out_w, Real{0});
            continue;
          }
          const Real* srow = src + static_cast<std::size_t>(iy) * g.in_w;
          for (int ox = 0; ox < g.out_w; ++ox) {
            const int ix = ox * g.stride - g.pad + kx;
            row[ox] = (ix >= 0 && ix < g.in_w) ? srow[ix] : Real{0};
          }
        }
      }
    }
  }
}

/// Adjoint of im2col: scatters columns back into an image gradient.
inline void col2im(const Real* cols, const ConvGeometry& g, Real* img) {
  const int plane = g.out_h * g.out_w;
  for (int c = 0; c < g.in_c; ++c) {
    Real* dst = img + static_cast<std::size_t>(c) * g.in_h * g.in_w;
    for (int ky = 0; ky < g.k; ++ky) {
      for (int kx = 0; kx < g.k; ++kx) {
        const Real* src = cols + (static_cast<std::size_t>((c * g.k + ky) * g.k + kx)) * plane;
        for (int oy = 0; oy < g.out_h; ++oy) {
          const int iy = oy * g.stride - g.pad + ky;
          if (iy < 0 || iy >= g.in_h) continue;
          const Real* row = src + static_cast<std::size_t>(oy) * g.out_w;
          Real* drow = dst + static_cast<std::size_t>(iy) * g.in_w;
          for (int ox = 0; ox < g.out_w; ++ox) {
            const int ix = ox * g.stride - g.pad + kx;
            if (ix >= 0 && ix < g.in_w) drow[ix] += row[ox];
          }
        }
      }
    }
  }
}

enum class PoolPadding {
  Zero,      ///< padded cells hold 0 and take part in the max
  Excluded,  ///< padded cells are ignored (equivalent to -inf padding)
};

/// Stride-1 "same" max pooling with odd kernel k. `argmax` receives the flat
/// index into the input of each selected element, or -1 for a padded cell.
inline Tensor maxpool_same(const Tensor& in, int k, PoolPadding padding,
                           std::vector<std::ptrdiff_t>* argmax = nullptr) {
  if (k < 1 || k % 2 == 0) throw ConfigError("max pool kernel must be odd and positive, got " + std::to_string(k));
  const int r = k / 2;
  const Shape s = in.shape();
  Tensor out(s);
  if (argmax) argmax->assign(in.size(), -1);
  const auto& src = in.storage();
  auto& dst = out.storage();
  // Separable: row pass then column pass, tracking the argmax position.
  std::vector<Real> rv(static_cast<std::size_t>(s.h) * s.w);
  std::vector<std::ptrdiff_t> ri(rv.size());
  const bool zero_pad = padding == PoolPadding::Zero;
  for (int b = 0; b < s.n; ++b) {
    for (int c = 0; c < s.c; ++c) {
      const std::size_t base = in.index(b, c, 0, 0);
      for (int y = 0; y < s.h; ++y) {
        for (int x = 0; x < s.w; ++x) {
          Real best = -std::numeric_limits<Real>::infinity();
          std::ptrdiff_t bi = -1;
          for (int dx = -r; dx <= r; ++dx) {
            const int xx = x + dx;
            if (xx < 0 || xx >= s.w) {
              if (zero_pad && Real{0} > best) { best = 0; bi = -1; }
              continue;
            }
            const std::size_t idx = base + static_cast<std::size_t>(y) * s.w + xx;
            if (src[idx] > best) { best = src[idx]; bi = static_cast<std::ptrdiff_t>(idx); }
          }
          rv[static_cast<std::size_t>(y) * s.w + x] = best;
          ri[static_cast<std::size_t>(y) * s.w + x] = bi;
        }
      }
      for (int y = 0; y < s.h; ++y) {
        for (int x = 0; x < s.w; ++x) {
          Real best = -std::numeric_limits<Real>::infinity();
          std::ptrdiff_t bi = -1;
          for (int dy = -r; dy <= r; ++dy) {
            const int yy = y + dy;
            if (yy < 0 || yy >= s.h) {
              if (zero_pad && Real{0} > best) { best = 0; bi = -1; }
              continue;
            }
            const std::size_t j = static_cast<std::size_t>(yy) * s.w + x;
            if (rv[j] > best) { best = rv[j]; bi = ri[j]; }
          }
          const std::size_t o = base + static_cast<std::size_t>(y) * s.w + x;
          dst[o] = best;
          if (argmax) (*argmax)[o] = bi;
        }
      }
    }
  }
  return out;
}

/// Source coordinate and weights for one output position of a bilinear
/// resize with half-pixel centers (align_corners = false).
struct LerpTap {
  int i0, i1;
  Real w0, w1;
};

inline std::vector<LerpTap> bilinear_taps(int in, int out) {
  std::vector<LerpTap> taps(static_cast<std::size_t>(out));
  const Real scale = static_cast<Real>(in) / static_cast<Real>(out);
  for (int o = 0; o < out; ++o) {
    Real src = (static_cast<Real>(o) + 0.5) * scale - 0.5;
    if (src < 0) src = 0;
    int i0 = static_cast<int>(std::floor(src));
    if (i0 > in - 1) i0 = in - 1;
    const int i1 = std::min(i0 + 1, in - 1);
    // Past the last center both taps hit the same pixel; (1-l)a + la is not
    // exactly a, so collapse to a copy.
    const Real l = i1 == i0 ? 0 : src - i0;
    taps[static_cast<std::size_t>(o)] = {i0, i1, 1 - l, l};
  }
  return taps;
}

inline Tensor resize_bilinear(const Tensor& in, Size2 target) {
  const Shape s = in.shape();
  if (target.h < 1 || target.w < 1) throw ShapeError("resize target must be positive");
  if (s.h < 1 || s.w < 1) throw ShapeError("resize source must be non-empty");
  if (target == s.spatial()) return in;
  Tensor out(Shape{s.n, s.c, target.h, target.w});
  const auto ty = bilinear_taps(s.h, target.h);
  const auto tx = bilinear_taps(s.w, target.w);
  for (int b = 0; b < s.n; ++b) {
    for (int c = 0; c < s.c; ++c) {
      auto src = in.plane(b, c);
      auto dst = out.plane(b, c);
      for (int y = 0; y < target.h; ++y) {
        const auto& a = ty[static_cast<std::size_t>(y)];
        const Real* r0 = src.data() + static_cast<std::size_t>(a.i0) * s.w;
        const Real* r1 = src.data() + static_cast<std::size_t>(a.i1) * s.w;
        for (int x = 0; x < target.w; ++x) {
          const auto& t = tx[static_cast<std::size_t>(x)];
          const Real top = t.w0 * r0[t.i0] + t.w1 * r0[t.i1];
          const Real bot = t.w0 * r1[t.i0] + t.w1 * r1[t.i1];
          dst[static_cast<std::size_t>(y) * target.w + x] = a.w0 * top + a.w1 * bot;
        }
      }
    }
  }
  return out;
}

/// Adjoint of resize_bilinear for a gradient of the resized tensor.
inline void resize_bilinear_backward(const Tensor& grad_out, Tensor& grad_in) {
  const Shape s = grad_in.shape();
  const Size2 target = grad_out.shape().spatial();
  if (target == s.spatial()) {
    grad_in += grad_out;
    return;
  }
  const auto ty = bilinear_taps(s.h, target.h);
  const auto tx = bilinear_taps(s.w, target.w);
  for (int b = 0; b < s.n; ++b) {
    for (int c = 0; c < s.c; ++c) {
      auto g = grad_out.plane(b, c);
      auto d = grad_in.plane(b, c);
      for (int y = 0; y < target.h; ++y) {
        const auto& a = ty[static_cast<std::size_t>(y)];
        Real* r0 = d.data() + static_cast<std::size_t>(a.i0) * s.w;
        Real* r1 = d.data() + static_cast<std::size_t>(a.i1) * s.w;
        for (int x = 0; x < target.w; ++x) {
          const auto& t = tx[static_cast<std::size_t>(x)];
          const Real v = g[static_cast<std::size_t>(y) * target.w + x];
          r0[t.i0] += a.w0 * t.w0 * v;
          r0[t.i1] += a.w0 * t.w1 * v;
          r1[t.i0] += a.w1 * t.w0 * v;
          r1[t.i1] += a.w1 * t.w1 * v;
        }
      }
    }
  }
}

inline Real sigmoid(Real x) {
  if (x >= 0) return 1 / (1 + std::exp(-x));
  const Real e = std::exp(x);
  return e / (1 + e);
}

}  // namespace kernels

// ---------------------------------------------------------------------------
// Differentiable ops.
// ---------------------------------------------------------------------------

/// 2-D convolution. weight is [Cout, Cin, k, k]; bias is [1, Cout, 1, 1] or undefined.
inline Var conv2d(const Var& input, const Var& weight, const Var& bias, int stride, int pad) {
  const Shape is = input.shape();
  const Shape ws = weight.shape();
  if (ws.h != ws.w) throw ShapeError("conv2d expects square kernels");
  if (is.c != ws.c)
    throw ShapeError("conv2d channel mismatch: input " + to_string(is) + " weight " + to_string(ws));
  if (bias.defined() && bias.shape() != Shape{1, ws.n, 1, 1})
    throw ShapeError("conv2d bias must be [1,Cout,1,1]");
  kernels::ConvGeometry g{is.c, is.h, is.w, ws.h, stride, pad, 0, 0};
  g.out_h = kernels::conv_out_extent(is.h, g.k, stride, pad);
  g.out_w = kernels::conv_out_extent(is.w, g.k, stride, pad);
  if (g.out_h < 1 || g.out_w < 1) throw ShapeError("conv2d output would be empty for input " + to_string(is));

  const int cout = ws.n;
  const int kdim = is.c * g.k * g.k;
  const int plane = g.out_h * g.out_w;
  Tensor out(Shape{is.n, cout, g.out_h, g.out_w});
  std::vector<Real> cols(static_cast<std::size_t>(kdim) * plane);
  kernels::ConstMatrixMap wm(weight.value().storage().data(), cout, kdim);
  for (int b = 0; b < is.n; ++b) {
    kernels::im2col(&input.value().storage()[input.value().index(b, 0, 0, 0)], g, cols.data());
    kernels::ConstMatrixMap cm(cols.data(), kdim, plane);
    kernels::MatrixMap om(&out.storage()[out.index(b, 0, 0, 0)], cout, plane);
    om.noalias() = wm * cm;
    if (bias.defined()) {
      for (int co = 0; co < cout; ++co) om.row(co).array() += bias.value()[static_cast<std::size_t>(co)];
    }
  }

  return Var::make(std::move(out), {input, weight, bias}, [input, weight, bias, g, cout, kdim, plane](Node& self) {
    const Tensor& go = self.grad;
    const int batch = go.n();
    std::vector<Real> cols(static_cast<std::size_t>(kdim) * plane);
    kernels::ConstMatrixMap wm(weight.value().storage().data(), cout, kdim);
    Tensor* gi = input.requires_grad() ? &input.node()->grad_buffer() : nullptr;
    Tensor* gw = weight.requires_grad() ? &weight.node()->grad_buffer() : nullptr;
    Tensor* gb = bias.requires_grad() ? &bias.node()->grad_buffer() : nullptr;
    for (int b = 0; b < batch; ++b) {
      kernels::ConstMatrixMap gm(&go.storage()[go.index(b, 0, 0, 0)], cout, plane);
      if (gw) {
        kernels::im2col(&input.value().storage()[input.value().index(b, 0, 0, 0)], g, cols.data());
        kernels::ConstMatrixMap cm(cols.data(), kdim, plane);
        kernels::MatrixMap gwm(gw->storage().data(), cout, kdim);
        gwm.noalias() += gm * cm.transpose();
      }
      if (gb) {
        // A plain loop: Eigen's vectorized sum peels by address alignment, so
        // its rounding would depend on where the heap put the buffer.
        for (int co = 0; co < cout; ++co) {
          const Real* row = &go.storage()[go.index(b, co, 0, 0)];
          Real s = 0;
          for (int i = 0; i < plane; ++i) s += row[i];
          (*gb)[static_cast<std::size_t>(co)] += s;
        }
      }
      if (gi) {
        kernels::MatrixMap cm(cols.data(), kdim, plane);
        cm.noalias() = wm.transpose() * gm;
        kernels::col2im(cols.data(), g, &gi->storage()[gi->index(b, 0, 0, 0)]);
      }
    }
  });
}

/// Batch normalization over (N, H, W) per channel. In training mode the
/// batch statistics are used and the running estimates updated in place.
struct BatchNormState {
  Tensor running_mean;  // [1,C,1,1]
  Tensor running_var;   // [1,C,1,1]
  Real momentum = 0.1;
  Real eps = 1e-5;
};

inline Var batch_norm(const Var& input, const Var& gamma, const Var& beta, BatchNormState& state, bool training) {
  const Shape s = input.shape();
  if (gamma.shape() != Shape{1, s.c, 1, 1} || beta.shape() != Shape{1, s.c, 1, 1})
    throw ShapeError("batch_norm affine parameters must be [1,C,1,1] for input " + to_string(s));
  const std::size_t count = static_cast<std::size_t>(s.n) * s.h * s.w;
  std::vector<Real> mean(static_cast<std::size_t>(s.c)), inv_std(static_cast<std::size_t>(s.c));
  const Tensor& x = input.value();
  const bool use_batch = training && count > 0;
  for (int c = 0; c < s.c; ++c) {
    const auto ci = static_cast<std::size_t>(c);
    if (use_batch) {
      Real m = 0;
      for (int b = 0; b < s.n; ++b)
        for (Real v : x.plane(b, c)) m += v;
      m /= static_cast<Real>(count);
      Real var = 0;
      for (int b = 0; b < s.n; ++b)
        for (Real v : x.plane(b, c)) var += (v - m) * (v - m);
      const Real biased = var / static_cast<Real>(count);
      const Real unbiased = count > 1 ? var / static_cast<Real>(count - 1) : biased;
      mean[ci] = m;
      inv_std[ci] = 1 / std::sqrt(biased + state.eps);
      state.running_mean[ci] = (1 - state.momentum) * state.running_mean[ci] + state.momentum * m;
      state.running_var[ci] = (1 - state.momentum) * state.running_var[ci] + state.momentum * unbiased;
    } else {
      mean[ci] = state.running_mean[ci];
      inv_std[ci] = 1 / std::sqrt(state.running_var[ci] + state.eps);
    }
  }
  Tensor xhat(s);
  Tensor out(s);
  for (int b = 0; b < s.n; ++b) {
    for (int c = 0; c < s.c; ++c) {
      const auto ci = static_cast<std::size_t>(c);
      auto src = x.plane(b, c);
      auto xh = xhat.plane(b, c);
      auto dst = out.plane(b, c);
      for (std::size_t i = 0; i < src.size(); ++i) {
        xh[i] = (src[i] - mean[ci]) * inv_std[ci];
        dst[i] = gamma.value()[ci] * xh[i] + beta.value()[ci];
      }
    }
  }
  return Var::make(std::move(out), {input, gamma, beta},
                   [input, gamma, beta, xhat = std::move(xhat), inv_std = std::move(inv_std), use_batch, count](Node& self) {
    const Tensor& go = self.grad;
    const Shape s = go.shape();
    Tensor* gi = input.requires_grad() ? &input.node()->grad_buffer() : nullptr;
    Tensor* gg = gamma.requires_grad() ? &gamma.node()->grad_buffer() : nullptr;
    Tensor* gb = beta.requires_grad() ? &beta.node()->grad_buffer() : nullptr;
    for (int c = 0; c < s.c; ++c) {
      const auto ci = static_cast<std::size_t>(c);
      Real sum_g = 0, sum_gx = 0;
      for (int b = 0; b < s.n; ++b) {
        auto g = go.plane(b, c);
        auto xh = xhat.plane(b, c);
        for (std::size_t i = 0; i < g.size(); ++i) {
          sum_g += g[i];
          sum_gx += g[i] * xh[i];
        }
      }
      if (gg) (*gg)[ci] += sum_gx;
      if (gb) (*gb)[ci] += sum_g;
      if (!gi) continue;
      const Real scale = gamma.value()[ci] * inv_std[ci];
      const Real m = static_cast<Real>(count);
      for (int b = 0; b < s.n; ++b) {
        auto g = go.plane(b, c);
        auto xh = xhat.plane(b, c);
        auto d = gi->plane(b, c);
        for (std::size_t i = 0; i < g.size(); ++i) {
          d[i] += use_batch ? scale * (g[i] - sum_g / m - xh[i] * sum_gx / m) : scale * g[i];
        }
      }
    }
  });
}

inline Var relu(const Var& input) {
  // NaN passes through so a diverged run surfaces as a non-finite loss.
  Tensor out = input.value().map([](Real v) { return v < 0 ? Real{0} : v; });
  if (detail::kink_sink()) {
    std::uint64_t h = 0;
    for (std::size_t i = 0; i < out.size(); ++i)
      if (input.value()[i] > 0) h = h * 31 + i + 1;
    record_branch(h);
  }
  return Var::make(std::move(out), {input}, [input](Node& self) {
    Tensor& gi = input.node()->grad_buffer();
    const Tensor& x = input.value();
    for (std::size_t i = 0; i < gi.size(); ++i)
      if (x[i] > 0) gi[i] += self.grad[i];
  });
}

inline Var sigmoid(const Var& input) {
  Tensor out = input.value().map(kernels::sigmoid);
  return Var::make(out, {input}, [input, out](Node& self) {
    Tensor& gi = input.node()->grad_buffer();
    for (std::size_t i = 0; i < gi.size(); ++i) gi[i] += self.grad[i] * out[i] * (1 - out[i]);
  });
}

inline Var maxpool_same(const Var& input, int k, kernels::PoolPadding padding) {
  std::vector<std::ptrdiff_t> arg;
  Tensor out = kernels::maxpool_same(input.value(), k, padding, &arg);
  if (detail::kink_sink()) {
    std::uint64_t h = 0;
    for (auto a : arg) h = h * 1099511628211ull + static_cast<std::uint64_t>(a + 2);
    record_branch(h);
  }
  return Var::make(std::move(out), {input}, [input, arg = std::move(arg)](Node& self) {
    Tensor& gi = input.node()->grad_buffer();
    for (std::size_t i = 0; i < arg.size(); ++i)
      if (arg[i] >= 0) gi[static_cast<std::size_t>(arg[i])] += self.grad[i];
  });
}

/// Bilinear resize with half-pixel centers; identity when sizes match.
inline Var resize_bilinear(const Var& input, Size2 target) {
  if (target == input.shape().spatial()) return input;
  Tensor out = kernels::resize_bilinear(input.value(), target);
  return Var::make(std::move(out), {input}, [input](Node& self) {
    kernels::resize_bilinear_backward(self.grad, input.node()->grad_buffer());
  });
}

/// Channel-wise concatenation; all parts share N, H, W.
inline Var concat_channels(const std::vector<Var>& parts) {
  if (parts.empty()) throw ShapeError("concat of zero tensors");
  Shape s = parts.front().shape();
  s.c = 0;
  for (const auto& p : parts) {
    const Shape ps = p.shape();
    if (ps.n != s.n || ps.h != s.h || ps.w != s.w)
      throw ShapeError("concat spatial/batch mismatch: " + to_string(ps) + " vs " + to_string(parts.front().shape()));
    s.c += ps.c;
  }
  Tensor out(s);
  const std::size_t hw = static_cast<std::size_t>(s.h) * s.w;
  for (int b = 0; b < s.n; ++b) {
    int offset = 0;
    for (const auto& p : parts) {
      const auto& src = p.value();
      std::copy_n(src.storage().begin() + static_cast<std::ptrdiff_t>(src.index(b, 0, 0, 0)), src.c() * hw,
                  out.storage().begin() + static_cast<std::ptrdiff_t>(out.index(b, offset, 0, 0)));
      offset += src.c();
    }
  }
  return Var::make(std::move(out), parts, [parts, hw](Node& self) {
    const Tensor& go = self.grad;
    for (int b = 0; b < go.n(); ++b) {
      int offset = 0;
      for (const auto& p : parts) {
        const int c = p.shape().c;
        if (p.requires_grad()) {
          Tensor& gi = p.node()->grad_buffer();
          const Real* src = &go.storage()[go.index(b, offset, 0, 0)];
          Real* dst = &gi.storage()[gi.index(b, 0, 0, 0)];
          for (std::size_t i = 0; i < c * hw; ++i) dst[i] += src[i];
        }
        offset += c;
      }
    }
  });
}

/// Channels [first, first+count) of the input.
inline Var slice_channels(const Var& input, int first, int count) {
  const Shape s = input.shape();
  if (first < 0 || count < 0 || first + count > s.c) throw ShapeError("channel slice out of range");
  Tensor out(Shape{s.n, count, s.h, s.w});
  const std::size_t hw = static_cast<std::size_t>(s.h) * s.w;
  for (int b = 0; b < s.n; ++b)
    std::copy_n(input.value().storage().begin() + static_cast<std::ptrdiff_t>(input.value().index(b, first, 0, 0)),
                count * hw, out.storage().begin() + static_cast<std::ptrdiff_t>(out.index(b, 0, 0, 0)));
  return Var::make(std::move(out), {input}, [input, first, count, hw](Node& self) {
    Tensor& gi = input.node()->grad_buffer();
    for (int b = 0; b < self.grad.n(); ++b) {
      const Real* src = &self.grad.storage()[self.grad.index(b, 0, 0, 0)];
      Real* dst = &gi.storage()[gi.index(b, first, 0, 0)];
      for (std::size_t i = 0; i < count * hw; ++i) dst[i] += src[i];
    }
  });
}

inline Var add(const Var& a, const Var& b) {
  a.value().require_same(b.value(), "add");
  Tensor out = a.value();
  out += b.value();
  return Var::make(std::move(out), {a, b}, [a, b](Node& self) {
    if (a.requires_grad()) a.node()->grad_buffer() += self.grad;
    if (b.requires_grad()) b.node()->grad_buffer() += self.grad;
  });
}

/// Elementwise (Hadamard) product; no broadcasting.
inline Var mul(const Var& a, const Var& b) {
  a.value().require_same(b.value(), "mul");
  Tensor out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] * b.value()[i];
  return Var::make(std::move(out), {a, b}, [a, b](Node& self) {
    if (a.requires_grad()) {
      Tensor& g = a.node()->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * b.value()[i];
    }
    if (b.requires_grad()) {
      Tensor& g = b.node()->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * a.value()[i];
    }
  });
}

inline Var scale(const Var& a, Real k) {
  Tensor out = a.value().map([k](Real v) { return v * k; });
  return Var::make(std::move(out), {a}, [a, k](Node& self) {
    Tensor& g = a.node()->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += k * self.grad[i];
  });
}

/// Sum of all elements as a [1,1,1,1] scalar.
inline Var sum_all(const Var& a) {
  Tensor out(Shape{1, 1, 1, 1}, a.value().sum());
  return Var::make(std::move(out), {a}, [a](Node& self) {
    Tensor& g = a.node()->grad_buffer();
    const Real v = self.grad[0];
    for (auto& x : g.storage()) x += v;
  });
}

}  // namespace msfa
