#pragma once

#include <array>
#include <memory>
#include <string>
#include <vector>

#include "msfa/nn.hpp"

namespace msfa {

inline constexpr int kPyramidLevels = 5;

/// Stride of pyramid level i (1-based): 4, 8, 16, 32, 32.
constexpr int pyramid_stride(int level) { return level >= 4 ? 32 : (1 << (level + 1)); }

/// Five encoder feature maps bf1..bf5, stored 0-based.
struct FeaturePyramid {
  std::array<Var, kPyramidLevels> levels;
  std::array<int, kPyramidLevels> channels{};
  Size2 input_size;

  /// 1-based accessor matching the level numbering bf1..bf5.
  [[nodiscard]] const Var& level(int i) const { return levels.at(static_cast<std::size_t>(i - 1)); }
};

/// The four deeper levels that feed the decoder; bf1 never leaves the encoder.
struct DecoderInputs {
  Var bf2, bf3, bf4, bf5;
};

inline DecoderInputs pyramid_levels_for_decoder(const FeaturePyramid& p) {
  return {p.level(2), p.level(3), p.level(4), p.level(5)};
}

/// Validates an image batch against the encoder's input contract.
inline void validate_image(const Shape& s) {
  if (s.c != 3) throw ShapeError("image must have 3 channels, got " + to_string(s));
  if (s.h < 32 || s.w < 32 || s.h % 32 != 0 || s.w % 32 != 0)
    throw ShapeError("image spatial size must be a positive multiple of 32, got " + to_string(s.spatial()));
}

/// Wraps raw RGB data as an image batch, clamping values into [0, 1].
inline Tensor make_image_tensor(Tensor raw) {
  validate_image(raw.shape());
  for (auto& v : raw.storage()) v = std::clamp(v, Real{0}, Real{1});
  return raw;
}

/// Any module producing a FeaturePyramid that honours the stride contract.
class Encoder {
 public:
  virtual ~Encoder() = default;
  virtual FeaturePyramid encode(const Var& image, bool training) = 0;
  virtual void visit(const std::string& prefix, ParamVisitor& v) = 0;
  [[nodiscard]] virtual std::array<int, kPyramidLevels> channels() const = 0;
};

/// Small convolutional encoder: a stride-2 stem, then one stage per level.
/// Levels 1-4 each halve the resolution; level 5 repeats stride 32.
class ToyEncoder final : public Encoder {
 public:
  ToyEncoder(std::array<int, kPyramidLevels> channels, Rng& rng) : channels_(channels) {
    for (int c : channels)
      if (c <= 0) throw ConfigError("encoder channel widths must be positive");
    const int stem = std::max(8, channels[0] / 2);
    stem_ = ConvBnRelu(3, stem, rng, 2);
    int in = stem;
    for (int i = 0; i < kPyramidLevels; ++i) {
      const int stride = i < 4 ? 2 : 1;
      Stage st;
      st.down = ConvBnRelu(in, channels[static_cast<std::size_t>(i)], rng, stride);
      st.refine = ConvBnRelu(channels[static_cast<std::size_t>(i)], channels[static_cast<std::size_t>(i)], rng);
      stages_.push_back(std::move(st));
      in = channels[static_cast<std::size_t>(i)];
    }
  }

  FeaturePyramid encode(const Var& image, bool training) override {
    validate_image(image.shape());
    FeaturePyramid p;
    p.channels = channels_;
    p.input_size = image.shape().spatial();
    Var x = stem_.forward(image, training);
    for (int i = 0; i < kPyramidLevels; ++i) {
      auto& st = stages_[static_cast<std::size_t>(i)];
      x = st.refine.forward(st.down.forward(x, training), training);
      p.levels[static_cast<std::size_t>(i)] = x;
    }
    return p;
  }

  void visit(const std::string& prefix, ParamVisitor& v) override {
    stem_.visit(join_name(prefix, "stem"), v);
    for (std::size_t i = 0; i < stages_.size(); ++i) {
      const std::string lvl = join_name(prefix, "level" + std::to_string(i + 1));
      stages_[i].down.visit(join_name(lvl, "0"), v);
      stages_[i].refine.visit(join_name(lvl, "1"), v);
    }
  }

  [[nodiscard]] std::array<int, kPyramidLevels> channels() const override { return channels_; }

 private:
  struct Stage {
    ConvBnRelu down;
    ConvBnRelu refine;
  };
  std::array<int, kPyramidLevels> channels_;
  ConvBnRelu stem_;
  std::vector<Stage> stages_;
};

}  // namespace msfa
