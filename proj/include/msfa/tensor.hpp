#pragma once

#include <algorithm>
#include <cstddef>
#include <functional>
#include <numeric>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "msfa/errors.hpp"

namespace msfa {

using Real = double;

/// Spatial extent of a feature map, rows first.
struct Size2 {
  int h = 0;
  int w = 0;
  friend bool operator==(const Size2&, const Size2&) = default;
};

/// NCHW shape of a 4-D tensor.
struct Shape {
  int n = 0;
  int c = 0;
  int h = 0;
  int w = 0;

  [[nodiscard]] std::size_t numel() const {
    return static_cast<std::size_t>(n) * c * h * w;
  }
  [[nodiscard]] Size2 spatial() const { return {h, w}; }
  friend bool operator==(const Shape&, const Shape&) = default;
};

inline std::string to_string(const Shape& s) {
  std::ostringstream os;
  os << '[' << s.n << ',' << s.c << ',' << s.h << ',' << s.w << ']';
  return os.str();
}

inline std::string to_string(const Size2& s) {
  std::ostringstream os;
  os << '(' << s.h << ',' << s.w << ')';
  return os.str();
}

inline std::ostream& operator<<(std::ostream& os, const Shape& s) { return os << to_string(s); }
inline std::ostream& operator<<(std::ostream& os, const Size2& s) { return os << to_string(s); }

/// Dense row-major NCHW array of doubles with value semantics.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, Real fill = 0.0) : shape_(shape), data_(shape.numel(), fill) {
    if (shape.n < 0 || shape.c < 0 || shape.h < 0 || shape.w < 0)
      throw ShapeError("negative tensor dimension " + to_string(shape));
  }
  Tensor(Shape shape, std::vector<Real> data) : shape_(shape), data_(std::move(data)) {
    if (data_.size() != shape.numel())
      throw ShapeError("tensor data size " + std::to_string(data_.size()) +
                       " does not match shape " + to_string(shape));
  }

  [[nodiscard]] const Shape& shape() const { return shape_; }
  [[nodiscard]] int n() const { return shape_.n; }
  [[nodiscard]] int c() const { return shape_.c; }
  [[nodiscard]] int h() const { return shape_.h; }
  [[nodiscard]] int w() const { return shape_.w; }
  [[nodiscard]] std::size_t size() const { return data_.size(); }
  [[nodiscard]] bool empty() const { return data_.empty(); }

  [[nodiscard]] std::span<Real> data() { return data_; }
  [[nodiscard]] std::span<const Real> data() const { return data_; }
  [[nodiscard]] std::vector<Real>& storage() { return data_; }
  [[nodiscard]] const std::vector<Real>& storage() const { return data_; }

  Real& operator[](std::size_t i) { return data_[i]; }
  Real operator[](std::size_t i) const { return data_[i]; }

  [[nodiscard]] std::size_t index(int b, int ch, int y, int x) const {
    return ((static_cast<std::size_t>(b) * shape_.c + ch) * shape_.h + y) * shape_.w + x;
  }
  Real& at(int b, int ch, int y, int x) { return data_[index(b, ch, y, x)]; }
  [[nodiscard]] Real at(int b, int ch, int y, int x) const { return data_[index(b, ch, y, x)]; }

  /// Contiguous H*W plane for one (batch, channel) pair.
  [[nodiscard]] std::span<Real> plane(int b, int ch) {
    return std::span<Real>(data_).subspan(index(b, ch, 0, 0),
                                          static_cast<std::size_t>(shape_.h) * shape_.w);
  }
  [[nodiscard]] std::span<const Real> plane(int b, int ch) const {
    return std::span<const Real>(data_).subspan(index(b, ch, 0, 0),
                                                static_cast<std::size_t>(shape_.h) * shape_.w);
  }

  void fill(Real v) { std::fill(data_.begin(), data_.end(), v); }

  [[nodiscard]] Real sum() const { return std::accumulate(data_.begin(), data_.end(), Real{0}); }
  [[nodiscard]] Real mean() const { return data_.empty() ? Real{0} : sum() / static_cast<Real>(data_.size()); }
  [[nodiscard]] Real min() const { return *std::min_element(data_.begin(), data_.end()); }
  [[nodiscard]] Real max() const { return *std::max_element(data_.begin(), data_.end()); }

  Tensor& operator+=(const Tensor& o) {
    require_same(o, "+=");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
    return *this;
  }

  /// Elementwise map into a new tensor.
  template <typename F>
  [[nodiscard]] Tensor map(F&& f) const {
    Tensor out(shape_);
    std::transform(data_.begin(), data_.end(), out.data_.begin(), std::forward<F>(f));
    return out;
  }

  /// Copy of batch entries [first, first+count).
  [[nodiscard]] Tensor slice_batch(int first, int count) const {
    if (first < 0 || count < 0 || first + count > shape_.n)
      throw ShapeError("batch slice out of range");
    Shape s = shape_;
    s.n = count;
    const std::size_t per = static_cast<std::size_t>(shape_.c) * shape_.h * shape_.w;
    std::vector<Real> d(data_.begin() + static_cast<std::ptrdiff_t>(first * per),
                        data_.begin() + static_cast<std::ptrdiff_t>((first + count) * per));
    return Tensor(s, std::move(d));
  }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

  void require_same(const Tensor& o, const char* what) const {
    if (o.shape_ != shape_)
      throw ShapeError(std::string(what) + ": shape mismatch " + to_string(shape_) + " vs " +
                       to_string(o.shape_));
  }

 private:
  Shape shape_{};
  std::vector<Real> data_;
};

/// Stack batch entries along N; all parts must agree on C, H, W.
inline Tensor concat_batch(std::span<const Tensor> parts) {
  if (parts.empty()) return Tensor();
  Shape s = parts.front().shape();
  s.n = 0;
  std::vector<Real> d;
  for (const auto& p : parts) {
    if (p.c() != s.c || p.h() != s.h || p.w() != s.w)
      throw ShapeError("concat_batch: inconsistent shapes");
    s.n += p.n();
    d.insert(d.end(), p.storage().begin(), p.storage().end());
  }
  return Tensor(s, std::move(d));
}

}  // namespace msfa
