#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "msfa/ops.hpp"

namespace msfa {

/// Seeded generator with platform-independent real sampling. The standard
/// distributions are implementation-defined, so draws are built directly
/// from the 64-bit engine output.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  /// Uniform in [0, 1).
  Real uniform() { return static_cast<Real>(engine_() >> 11) * 0x1.0p-53; }
  Real uniform(Real lo, Real hi) { return lo + (hi - lo) * uniform(); }
  /// Uniform integer in [lo, hi].
  int uniform_int(int lo, int hi) {
    const auto span = static_cast<std::uint64_t>(hi - lo) + 1;
    return lo + static_cast<int>(engine_() % span);
  }
  bool bernoulli(Real p) { return uniform() < p; }
  Real normal() {
    // Box-Muller; one value per call keeps the stream position simple.
    Real u1 = uniform();
    while (u1 <= 0) u1 = uniform();
    const Real u2 = uniform();
    return std::sqrt(-2 * std::log(u1)) * std::cos(2 * 3.14159265358979323846 * u2);
  }
  std::uint64_t next() { return engine_(); }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      const auto j = static_cast<std::size_t>(engine_() % i);
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::mt19937_64 engine_;
};

/// Deterministic sub-seed from a parent seed and a stream label.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ull * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

enum class ParamKind { Weight, Bias, Norm };

/// Receives every trainable parameter and persistent buffer of a module tree.
struct ParamVisitor {
  std::function<void(const std::string&, Var&, ParamKind)> param;
  std::function<void(const std::string&, Tensor&)> buffer;
};

inline std::string join_name(const std::string& prefix, const std::string& name) {
  return prefix.empty() ? name : prefix + "." + name;
}

class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(int in_c, int out_c, int k, int stride, bool with_bias, Rng& rng)
      : stride_(stride), pad_(k / 2) {
    if (in_c <= 0 || out_c <= 0) throw ConfigError("conv channels must be positive");
    if (k % 2 == 0) throw ConfigError("conv kernel must be odd");
    const Real bound = 1 / std::sqrt(static_cast<Real>(in_c * k * k));
    Tensor w(Shape{out_c, in_c, k, k});
    for (auto& v : w.storage()) v = rng.uniform(-bound, bound);
    weight_ = Var(std::move(w), true);
    if (with_bias) {
      Tensor b(Shape{1, out_c, 1, 1});
      for (auto& v : b.storage()) v = rng.uniform(-bound, bound);
      bias_ = Var(std::move(b), true);
    }
  }

  Var forward(const Var& x) const { return conv2d(x, weight_, bias_, stride_, pad_); }

  void visit(const std::string& prefix, ParamVisitor& v) {
    v.param(join_name(prefix, "weight"), weight_, ParamKind::Weight);
    if (bias_.defined()) v.param(join_name(prefix, "bias"), bias_, ParamKind::Bias);
  }

  [[nodiscard]] int out_channels() const { return weight_.shape().n; }
  [[nodiscard]] int in_channels() const { return weight_.shape().c; }
  Var& weight() { return weight_; }
  Var& bias() { return bias_; }

 private:
  Var weight_;
  Var bias_;
  int stride_ = 1;
  int pad_ = 1;
};

class BatchNorm2d {
 public:
  BatchNorm2d() = default;
  explicit BatchNorm2d(int channels, Real momentum = 0.1, Real eps = 1e-5)
      : gamma_(Tensor(Shape{1, channels, 1, 1}, 1.0), true),
        beta_(Tensor(Shape{1, channels, 1, 1}, 0.0), true) {
    state_.running_mean = Tensor(Shape{1, channels, 1, 1}, 0.0);
    state_.running_var = Tensor(Shape{1, channels, 1, 1}, 1.0);
    state_.momentum = momentum;
    state_.eps = eps;
  }

  Var forward(const Var& x, bool training) {
    if (bypass_) return x;
    return batch_norm(x, gamma_, beta_, state_, training);
  }

  /// Turns the layer into the identity; used to isolate algebraic behaviour in tests.
  void set_bypass(bool on) { bypass_ = on; }

  void visit(const std::string& prefix, ParamVisitor& v) {
    v.param(join_name(prefix, "gamma"), gamma_, ParamKind::Norm);
    v.param(join_name(prefix, "beta"), beta_, ParamKind::Norm);
    v.buffer(join_name(prefix, "running_mean"), state_.running_mean);
    v.buffer(join_name(prefix, "running_var"), state_.running_var);
  }

  BatchNormState& state() { return state_; }

 private:
  Var gamma_;
  Var beta_;
  BatchNormState state_;
  bool bypass_ = false;
};

/// 3x3 convolution followed by batch normalization and relu.
class ConvBnRelu {
 public:
  ConvBnRelu() = default;
  ConvBnRelu(int in_c, int out_c, Rng& rng, int stride = 1, int k = 3)
      : conv_(in_c, out_c, k, stride, false, rng), bn_(out_c) {}

  Var forward(const Var& x, bool training) { return relu(bn_.forward(conv_.forward(x), training)); }

  void visit(const std::string& prefix, ParamVisitor& v) {
    conv_.visit(join_name(prefix, "conv"), v);
    bn_.visit(join_name(prefix, "bn"), v);
  }

  Conv2d& conv() { return conv_; }
  BatchNorm2d& bn() { return bn_; }
  void set_bn_bypass(bool on) { bn_.set_bypass(on); }
  [[nodiscard]] int out_channels() const { return conv_.out_channels(); }

 private:
  Conv2d conv_;
  BatchNorm2d bn_;
};

}  // namespace msfa
