#pragma once

#include <string>
#include <vector>

#include "msfa/nn.hpp"

namespace msfa {

struct DRConfig {
  std::vector<int> kernel_sizes{3, 7, 11};
  int out_channels = 64;

  void validate() const {
    if (kernel_sizes.empty()) throw ConfigError("diverse reception needs at least one kernel size");
    for (int k : kernel_sizes)
      if (k < 3 || k % 2 == 0) throw ConfigError("diverse reception kernels must be odd and >= 3, got " + std::to_string(k));
    if (out_channels <= 0) throw ConfigError("diverse reception out_channels must be positive");
  }
};

/// Diverse reception: stride-1 max pools of several kernel sizes are
/// concatenated with the raw features and compressed by conv+bn+relu.
class DiverseReception {
 public:
  DiverseReception() = default;
  DiverseReception(int in_channels, DRConfig cfg, Rng& rng) : cfg_(std::move(cfg)) {
    cfg_.validate();
    if (in_channels <= 0) throw ShapeError("diverse reception input needs at least one channel");
    in_channels_ = in_channels;
    const int concat = in_channels * static_cast<int>(cfg_.kernel_sizes.size() + 1);
    compress_ = ConvBnRelu(concat, cfg_.out_channels, rng);
  }

  /// Concat(Max_k1(f), ..., Max_kn(f), f), before compression.
  [[nodiscard]] Var enrich(const Var& f) const {
    check_input(f.shape());
    std::vector<Var> parts;
    parts.reserve(cfg_.kernel_sizes.size() + 1);
    for (int k : cfg_.kernel_sizes) parts.push_back(maxpool_same(f, k, kernels::PoolPadding::Zero));
    parts.push_back(f);
    return concat_channels(parts);
  }

  Var forward(const Var& f, bool training) { return compress_.forward(enrich(f), training); }

  void visit(const std::string& prefix, ParamVisitor& v) { compress_.visit(join_name(prefix, "compress"), v); }
  void set_bn_bypass(bool on) { compress_.set_bn_bypass(on); }
  [[nodiscard]] const DRConfig& config() const { return cfg_; }

 private:
  void check_input(const Shape& s) const {
    if (s.c != in_channels_)
      throw ShapeError("diverse reception expects " + std::to_string(in_channels_) + " channels, got " + to_string(s));
    if (s.h < 1 || s.w < 1) throw ShapeError("diverse reception input has empty spatial size " + to_string(s));
  }

  DRConfig cfg_;
  int in_channels_ = 0;
  ConvBnRelu compress_;
};

}  // namespace msfa
