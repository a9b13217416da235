#pragma once

#include <array>
#include <memory>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "msfa/backbone.hpp"
#include "msfa/dr.hpp"
#include "msfa/fe.hpp"
#include "msfa/heads.hpp"
#include "msfa/msi.hpp"

namespace msfa {

struct ModelConfig {
  std::array<int, kPyramidLevels> encoder_channels{32, 64, 128, 256, 256};
  int width = 64;
  std::vector<int> dr_kernels{3, 7, 11};
  bool use_dr = true;
  bool use_msi = true;
  bool use_fe = true;
  bool fe_share_params = false;
  std::uint64_t seed = 0;

  void validate() const {
    if (width <= 0) throw ConfigError("model width must be positive");
    DRConfig{dr_kernels, width}.validate();
    for (int c : encoder_channels)
      if (c <= 0) throw ConfigError("encoder channel widths must be positive");
  }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

inline void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = {{"encoder_channels", c.encoder_channels}, {"width", c.width},   {"dr_kernels", c.dr_kernels},
       {"use_dr", c.use_dr},                     {"use_msi", c.use_msi}, {"use_fe", c.use_fe},
       {"fe_share_params", c.fe_share_params},   {"seed", c.seed}};
}

inline void from_json(const nlohmann::json& j, ModelConfig& c) {
  j.at("encoder_channels").get_to(c.encoder_channels);
  j.at("width").get_to(c.width);
  j.at("dr_kernels").get_to(c.dr_kernels);
  j.at("use_dr").get_to(c.use_dr);
  j.at("use_msi").get_to(c.use_msi);
  j.at("use_fe").get_to(c.use_fe);
  j.at("fe_share_params").get_to(c.fe_share_params);
  j.at("seed").get_to(c.seed);
}

/// Everything computed on the way to the saliency maps.
struct ModelTrace {
  FeaturePyramid pyramid;
  std::array<Var, 4> level_features;  // f2..f5 after DR (or plain projection)
  Var top_enhanced;                   // FE(f5)
  std::array<Var, 3> cfi;             // levels 2, 3, 4
  std::array<CfiTrace, 3> cfi_trace;
  DecoderOutputs fd;
  Var base_fused;  // set only without MSI
};

/// The full saliency network: encoder, per-level diverse reception, composite
/// feature integration, top-down decoder and four supervised heads. The
/// use_* switches replace a component with its plain counterpart:
///   - no DR:  a single conv+bn+relu projects each level to the working width
///   - no MSI: levels are upsampled, concatenated and compressed by one conv
///   - no FE:  every enhancement site becomes the identity
class MsfaModel {
 public:
  explicit MsfaModel(ModelConfig cfg) : cfg_(std::move(cfg)) {
    cfg_.validate();
    Rng rng(cfg_.seed);
    encoder_ = std::make_unique<ToyEncoder>(cfg_.encoder_channels, rng);
    build_decoder(rng);
  }

  /// Substitutes a custom encoder; decoder parameters are drawn from cfg.seed.
  MsfaModel(ModelConfig cfg, std::unique_ptr<Encoder> encoder) : cfg_(std::move(cfg)), encoder_(std::move(encoder)) {
    cfg_.validate();
    cfg_.encoder_channels = encoder_->channels();
    Rng rng(cfg_.seed);
    build_decoder(rng);
  }

  SaliencyOutputs forward(const Var& image, bool training, ModelTrace* trace = nullptr) {
    ModelTrace local;
    ModelTrace& t = trace ? *trace : local;
    t.pyramid = encoder_->encode(image, training);
    const DecoderInputs in = pyramid_levels_for_decoder(t.pyramid);
    const std::array<Var, 4> raw{in.bf2, in.bf3, in.bf4, in.bf5};
    for (std::size_t i = 0; i < 4; ++i)
      t.level_features[i] = cfg_.use_dr ? dr_[i].forward(raw[i], training) : proj_[i].forward(raw[i], training);
    const Size2 out_size = image.shape().spatial();
    t.top_enhanced = enhance(fe_top_, t.level_features[3], training);

    if (!cfg_.use_msi) {
      const Size2 s2 = t.level_features[0].shape().spatial();
      Var cat = concat_channels({t.level_features[0], upsample(t.level_features[1], s2),
                                 upsample(t.level_features[2], s2), upsample(t.level_features[3], s2)});
      t.base_fused = enhance(fe_base_, base_fuse_.forward(cat, training), training);
      return heads_.forward(t.base_fused, t.level_features[1], t.level_features[2], t.top_enhanced, out_size);
    }

    for (std::size_t i = 0; i < 3; ++i)
      t.cfi[i] = cfi_[i].forward(t.level_features[i], t.level_features[i + 1], t.top_enhanced, training, &t.cfi_trace[i]);
    t.fd = decoder_.forward(t.cfi[2], t.cfi[1], t.cfi[0], training);
    Var src3 = enhance(fe_fd3_, t.fd.fd3, training);
    Var src2 = enhance(fe_fd2_, t.fd.fd2, training);
    return heads_.forward(src2, src3, t.cfi[2], t.top_enhanced, out_size);
  }

  void visit(ParamVisitor& v) {
    encoder_->visit("encoder", v);
    for (std::size_t i = 0; i < 4; ++i) {
      const std::string lvl = "l" + std::to_string(i + 2);
      if (cfg_.use_dr)
        dr_[i].visit(join_name("dr", lvl), v);
      else
        proj_[i].visit(join_name("proj", lvl), v);
    }
    if (cfg_.use_fe) {
      if (cfg_.fe_share_params) {
        fe_top_->visit("fe.shared", v);
      } else {
        fe_top_->visit("fe.top", v);
        if (cfg_.use_msi) {
          fe_fd3_->visit("fe.fd3", v);
          fe_fd2_->visit("fe.fd2", v);
        } else {
          fe_base_->visit("fe.base", v);
        }
      }
    }
    if (cfg_.use_msi) {
      for (std::size_t i = 0; i < 3; ++i)
        cfi_[i].visit(join_name("cfi", "l" + std::to_string(i + 2)), v, !cfg_.fe_share_params);
      decoder_.visit("fd", v);
    } else {
      base_fuse_.visit("base.fuse", v);
    }
    heads_.visit("heads", v);
  }

  /// All trainable parameters in visiting order.
  std::vector<Var> parameters() {
    std::vector<Var> out;
    ParamVisitor v{[&](const std::string&, Var& p, ParamKind) { out.push_back(p); }, [](const std::string&, Tensor&) {}};
    visit(v);
    return out;
  }

  [[nodiscard]] std::size_t parameter_count() {
    std::size_t n = 0;
    for (const auto& p : parameters()) n += p.value().size();
    return n;
  }

  void zero_grad() {
    for (auto& p : parameters()) p.zero_grad();
  }

  [[nodiscard]] const ModelConfig& config() const { return cfg_; }
  Encoder& encoder() { return *encoder_; }
  DiverseReception& dr(int level) { return dr_.at(static_cast<std::size_t>(level - 2)); }
  CompositeFeatureIntegration& cfi(int level) { return cfi_.at(static_cast<std::size_t>(level - 2)); }
  FeatureDecoder& decoder() { return decoder_; }
  SaliencyHeads& heads() { return heads_; }

 private:
  void build_decoder(Rng& rng) {
    const int w = cfg_.width;
    const auto ch = encoder_->channels();
    for (std::size_t i = 0; i < 4; ++i) {
      if (cfg_.use_dr)
        dr_[i] = DiverseReception(ch[i + 1], DRConfig{cfg_.dr_kernels, w}, rng);
      else
        proj_[i] = ConvBnRelu(ch[i + 1], w, rng);
    }
    if (cfg_.use_fe) {
      fe_top_ = std::make_shared<FeatureEnhance>(w, rng);
      auto make_fe = [&]() { return cfg_.fe_share_params ? fe_top_ : std::make_shared<FeatureEnhance>(w, rng); };
      if (cfg_.use_msi) {
        for (auto& c : cfi_) c = CompositeFeatureIntegration(w, make_fe(), rng);
        fe_fd3_ = make_fe();
        fe_fd2_ = make_fe();
      } else {
        fe_base_ = make_fe();
      }
    } else if (cfg_.use_msi) {
      for (auto& c : cfi_) c = CompositeFeatureIntegration(w, nullptr, rng);
    }
    if (cfg_.use_msi)
      decoder_ = FeatureDecoder(w, rng);
    else
      base_fuse_ = ConvBnRelu(4 * w, w, rng);
    heads_ = SaliencyHeads(w, rng);
  }

  static Var enhance(const std::shared_ptr<FeatureEnhance>& fe, const Var& x, bool training) {
    return fe ? fe->forward(x, training) : x;
  }

  ModelConfig cfg_;
  std::unique_ptr<Encoder> encoder_;
  std::array<DiverseReception, 4> dr_;
  std::array<ConvBnRelu, 4> proj_;
  std::shared_ptr<FeatureEnhance> fe_top_, fe_fd3_, fe_fd2_, fe_base_;
  std::array<CompositeFeatureIntegration, 3> cfi_;
  FeatureDecoder decoder_;
  ConvBnRelu base_fuse_;
  SaliencyHeads heads_;
};

}  // namespace msfa
