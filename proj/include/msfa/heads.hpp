#pragma once

#include <array>
#include <string>

#include "msfa/msi.hpp"

namespace msfa {

/// Supervised saliency maps m2..m5, each [N,1,H,W] in (0,1). m2 is the
/// model's prediction; the others exist for deep supervision.
struct SaliencyOutputs {
  Var m2, m3, m4, m5;

  [[nodiscard]] std::array<Var, 4> all() const { return {m2, m3, m4, m5}; }
};

/// Four 3x3 conv -> bilinear upsample -> sigmoid heads.
class SaliencyHeads {
 public:
  SaliencyHeads() = default;
  SaliencyHeads(int width, Rng& rng) {
    for (auto& h : heads_) h = Conv2d(width, 1, 3, 1, true, rng);
  }

  /// Maps level features to probabilities at `out_size`. Sources are, in
  /// order, the features for m2, m3, m4 and m5.
  SaliencyOutputs forward(const Var& src2, const Var& src3, const Var& src4, const Var& src5, Size2 out_size) {
    const std::array<const Var*, 4> src{&src2, &src3, &src4, &src5};
    std::array<Var, 4> maps;
    for (std::size_t i = 0; i < 4; ++i) {
      const Size2 fs = src[i]->shape().spatial();
      if (out_size.h < fs.h || out_size.w < fs.w)
        throw ShapeError("head output size " + to_string(out_size) + " is smaller than feature size " + to_string(fs));
      maps[i] = sigmoid(upsample(heads_[i].forward(*src[i]), out_size));
    }
    return {maps[0], maps[1], maps[2], maps[3]};
  }

  void visit(const std::string& prefix, ParamVisitor& v) {
    for (std::size_t i = 0; i < heads_.size(); ++i) heads_[i].visit(join_name(prefix, "m" + std::to_string(i + 2)), v);
  }

  /// Head for map m_i, i in 2..5.
  Conv2d& head(int i) { return heads_.at(static_cast<std::size_t>(i - 2)); }

 private:
  std::array<Conv2d, 4> heads_;
};

}  // namespace msfa
