#pragma once

#include <memory>
#include <string>

#include "msfa/fe.hpp"
#include "msfa/nn.hpp"

namespace msfa {

/// Bilinear upsampling (half-pixel centers) to a target no smaller than the source.
inline Var upsample(const Var& f, Size2 target) {
  const Size2 src = f.shape().spatial();
  if (target.h < src.h || target.w < src.w)
    throw ShapeError("upsample target " + to_string(target) + " is smaller than source " + to_string(src));
  return resize_bilinear(f, target);
}

/// Intermediates of one composite feature integration, kept for inspection.
struct CfiTrace {
  Var arc, high, mid, low, fused_input;
};

/// Composite feature integration at one level. Neighbour and enhanced-top
/// features are upsampled to this level, convolved once each, and fused with
/// the level's own features through pixel-wise products:
///
///   arc  = C(f_i)
///   high = arc * C(UP(f_next))
///   mid  = arc * C(UP(top))
///   low  = C(UP(f_next)) * C(UP(top))
///   out  = FE(C(Concat(arc, high, mid, low)))
///
/// `enhance` may be null, in which case FE is the identity.
class CompositeFeatureIntegration {
 public:
  CompositeFeatureIntegration() = default;
  CompositeFeatureIntegration(int width, std::shared_ptr<FeatureEnhance> enhance, Rng& rng)
      : width_(width),
        arc_(width, width, rng),
        next_(width, width, rng),
        top_(width, width, rng),
        fuse_(4 * width, width, rng),
        enhance_(std::move(enhance)) {}

  Var forward(const Var& level, const Var& next, const Var& top_enhanced, bool training, CfiTrace* trace = nullptr) {
    for (const Var* v : {&level, &next, &top_enhanced}) {
      if (v->shape().c != width_)
        throw ShapeError("CFI inputs must have width " + std::to_string(width_) + ", got " + to_string(v->shape()));
      if (v->shape().n != level.shape().n) throw ShapeError("CFI inputs disagree on batch size");
    }
    const Size2 size = level.shape().spatial();
    Var arc = arc_.forward(level, training);
    Var next_c = next_.forward(upsample(next, size), training);
    Var top_c = top_.forward(upsample(top_enhanced, size), training);
    if (next_c.shape() != arc.shape() || top_c.shape() != arc.shape())
      throw ShapeError("CFI level-size mismatch after upsampling");
    Var high = mul(arc, next_c);
    Var mid = mul(arc, top_c);
    Var low = mul(next_c, top_c);
    Var cat = concat_channels({arc, high, mid, low});
    Var out = fuse_.forward(cat, training);
    if (enhance_) out = enhance_->forward(out, training);
    if (trace) *trace = {arc, high, mid, low, cat};
    return out;
  }

  void visit(const std::string& prefix, ParamVisitor& v, bool include_enhance = true) {
    arc_.visit(join_name(prefix, "arc"), v);
    next_.visit(join_name(prefix, "next"), v);
    top_.visit(join_name(prefix, "top"), v);
    fuse_.visit(join_name(prefix, "fuse"), v);
    if (enhance_ && include_enhance) enhance_->visit(join_name(prefix, "fe"), v);
  }

  void set_bn_bypass(bool on) {
    for (auto* m : {&arc_, &next_, &top_, &fuse_}) m->set_bn_bypass(on);
    if (enhance_) enhance_->set_bn_bypass(on);
  }

  ConvBnRelu& arc() { return arc_; }
  ConvBnRelu& next_conv() { return next_; }
  ConvBnRelu& top_conv() { return top_; }
  ConvBnRelu& fuse() { return fuse_; }
  [[nodiscard]] const std::shared_ptr<FeatureEnhance>& enhance() const { return enhance_; }

 private:
  int width_ = 0;
  ConvBnRelu arc_, next_, top_, fuse_;
  std::shared_ptr<FeatureEnhance> enhance_;
};

struct DecoderOutputs {
  Var fd3, fd2;
};

/// Top-down decoder over the CFI outputs using pixel-wise addition:
///
///   fd3 = C(UP(cfi4)) + cfi3
///   fd2 = C(C(UP(fd3)) + cfi2)
class FeatureDecoder {
 public:
  FeatureDecoder() = default;
  FeatureDecoder(int width, Rng& rng)
      : width_(width), up4_(width, width, rng), up3_(width, width, rng), out_(width, width, rng) {}

  DecoderOutputs forward(const Var& cfi4, const Var& cfi3, const Var& cfi2, bool training) {
    for (const Var* v : {&cfi4, &cfi3, &cfi2})
      if (v->shape().c != width_)
        throw ShapeError("decoder inputs must have width " + std::to_string(width_) + ", got " + to_string(v->shape()));
    Var lifted4 = up4_.forward(upsample(cfi4, cfi3.shape().spatial()), training);
    if (lifted4.shape() != cfi3.shape()) throw ShapeError("decoder shape mismatch at level 3");
    Var fd3 = add(lifted4, cfi3);
    Var lifted3 = up3_.forward(upsample(fd3, cfi2.shape().spatial()), training);
    if (lifted3.shape() != cfi2.shape()) throw ShapeError("decoder shape mismatch at level 2");
    Var fd2 = out_.forward(add(lifted3, cfi2), training);
    return {fd3, fd2};
  }

  void visit(const std::string& prefix, ParamVisitor& v) {
    up4_.visit(join_name(prefix, "up4"), v);
    up3_.visit(join_name(prefix, "up3"), v);
    out_.visit(join_name(prefix, "out"), v);
  }

  void set_bn_bypass(bool on) {
    for (auto* m : {&up4_, &up3_, &out_}) m->set_bn_bypass(on);
  }

  ConvBnRelu& up4() { return up4_; }
  ConvBnRelu& up3() { return up3_; }
  ConvBnRelu& out() { return out_; }

 private:
  int width_ = 0;
  ConvBnRelu up4_, up3_, out_;
};

}  // namespace msfa
