#pragma once

#include <string>

#include "msfa/nn.hpp"

namespace msfa {

/// Feature enhancement: a learned per-pixel affine gate.
///
///   f' = ConvBnRelu(f)
///   (w, b) = channel halves of Conv3x3(f')
///   out = relu(w * f' + b)
class FeatureEnhance {
 public:
  FeatureEnhance() = default;
  FeatureEnhance(int width, Rng& rng) : width_(width) {
    if (width <= 0) throw ConfigError("feature enhancement width must be positive");
    refine_ = ConvBnRelu(width, width, rng);
    split_ = Conv2d(width, 2 * width, 3, 1, true, rng);
    // Start the multiplicative half near 1 so a fresh gate passes f' through
    // instead of scaling it towards zero.
    Tensor& bias = split_.bias().mutable_value();
    for (int c = 0; c < width; ++c) bias[static_cast<std::size_t>(c)] += 1;
  }

  Var forward(const Var& f, bool training) {
    if (f.shape().c != width_)
      throw ShapeError("feature enhancement expects " + std::to_string(width_) + " channels, got " + to_string(f.shape()));
    const int split_c = split_.out_channels();
    if (split_c % 2 != 0 || split_c / 2 != width_)
      throw ConfigError("feature enhancement split conv must produce exactly twice the working width");
    Var refined = refine_.forward(f, training);
    Var wb = split_.forward(refined);
    Var w = slice_channels(wb, 0, width_);
    Var b = slice_channels(wb, width_, width_);
    return relu(add(mul(w, refined), b));
  }

  void visit(const std::string& prefix, ParamVisitor& v) {
    refine_.visit(join_name(prefix, "refine"), v);
    split_.visit(join_name(prefix, "split"), v);
  }

  void set_bn_bypass(bool on) { refine_.set_bn_bypass(on); }
  ConvBnRelu& refine() { return refine_; }
  Conv2d& split() { return split_; }
  [[nodiscard]] int width() const { return width_; }

 private:
  int width_ = 0;
  ConvBnRelu refine_;
  Conv2d split_;
};

}  // namespace msfa
