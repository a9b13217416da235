#pragma once

// Central finite-difference gradient checker. Lives in test code only and
// never calls into the analytic backward path except to fetch the value it
// is compared against.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <vector>

#include "msfa/autograd.hpp"
#include "msfa/nn.hpp"

namespace msfa::testing {

struct GradCheckResult {
  int checked = 0;
  int skipped_kinks = 0;
  double max_rel_error = 0;
};

/// Relative error with a floor on the scale so that exact zeros compare by
/// absolute difference.
inline double rel_error(double analytic, double numeric, double floor = 1e-6) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

/// Checks d(loss)/d(x) at `points` random coordinates of x. `loss` must
/// rebuild the graph from x on every call. Coordinates whose +/-h
/// evaluations take a different branch of any relu, max or clamp are
/// rejected and replaced by fresh draws.
inline GradCheckResult check_gradient(const std::function<Var()>& loss, Var& x, int points, std::uint64_t seed,
                                      double h = 1e-6) {
  x.zero_grad();
  Var l = loss();
  backward(l);
  const Tensor analytic = x.grad();

  Rng rng(seed);
  GradCheckResult r;
  const auto n = static_cast<int>(x.value().size());
  int attempts = 0;
  while (r.checked < points && attempts < points * 20) {
    ++attempts;
    const auto i = static_cast<std::size_t>(rng.uniform_int(0, n - 1));
    Real& v = x.mutable_value()[i];
    const Real orig = v;
    std::uint64_t sig0, sig_plus, sig_minus;
    double f_plus, f_minus;
    {
      NoGradGuard ng;
      {
        KinkProbe probe;
        (void)loss();
        sig0 = probe.signature();
      }
      v = orig + h;
      {
        KinkProbe probe;
        f_plus = loss().item();
        sig_plus = probe.signature();
      }
      v = orig - h;
      {
        KinkProbe probe;
        f_minus = loss().item();
        sig_minus = probe.signature();
      }
      v = orig;
    }
    if (sig_plus != sig0 || sig_minus != sig0) {
      ++r.skipped_kinks;
      continue;
    }
    const double numeric = (f_plus - f_minus) / (2 * h);
    r.max_rel_error = std::max(r.max_rel_error, rel_error(analytic[i], numeric));
    ++r.checked;
  }
  return r;
}

}  // namespace msfa::testing
