#pragma once

#include <string>
#include <vector>

#include "msfa/nn.hpp"

namespace msfa {

/// Momentum SGD with the usual heavy-ball update:
///   d = grad + wd * p;  v = mu * v + d  (v = d on the first step);  p -= lr * v
/// Weight decay applies to conv/linear weights, and to biases and norm
/// parameters only when `decay_norm_and_bias` is set.
class Sgd {
 public:
  struct Slot {
    std::string name;
    Var param;
    bool decay;
    Tensor velocity;
  };

  template <typename Module>
  Sgd(Module& module, Real momentum, Real weight_decay, bool decay_norm_and_bias)
      : momentum_(momentum), weight_decay_(weight_decay) {
    ParamVisitor v{[&](const std::string& n, Var& p, ParamKind kind) {
                     slots_.push_back({n, p, kind == ParamKind::Weight || decay_norm_and_bias, Tensor()});
                   },
                   [](const std::string&, Tensor&) {}};
    module.visit(v);
  }

  void zero_grad() {
    for (auto& s : slots_) s.param.zero_grad();
  }

  void step(Real lr) {
    for (auto& s : slots_) {
      const Tensor& g = s.param.grad();
      if (g.empty()) continue;  // unused in this forward pass
      Tensor& p = s.param.mutable_value();
      const Real wd = s.decay ? weight_decay_ : 0;
      if (s.velocity.empty()) {
        s.velocity = Tensor(p.shape());
        for (std::size_t i = 0; i < p.size(); ++i) s.velocity[i] = g[i] + wd * p[i];
      } else {
        for (std::size_t i = 0; i < p.size(); ++i) s.velocity[i] = momentum_ * s.velocity[i] + g[i] + wd * p[i];
      }
      for (std::size_t i = 0; i < p.size(); ++i) p[i] -= lr * s.velocity[i];
    }
  }

  [[nodiscard]] const std::vector<Slot>& slots() const { return slots_; }

 private:
  Real momentum_;
  Real weight_decay_;
  std::vector<Slot> slots_;
};

}  // namespace msfa
