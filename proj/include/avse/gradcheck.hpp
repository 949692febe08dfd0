#pragma once

// Central finite-difference gradient verification. Only forward evaluations
// are used for the numeric side, so the check is independent of the backward
// implementation it validates.

#include <functional>
#include <string>

#include "avse/tensor.hpp"

namespace avse {

struct GradCheckResult {
  double max_rel_err = 0.0;
  std::string worst;  // "param[index]" of the worst deviation
  int checked = 0;
};

// `build_loss` must construct a fresh scalar loss from the current parameter
// values. For each parameter, up to `samples_per_param` randomly chosen
// entries are perturbed by ±step and compared against the analytic gradient.
inline GradCheckResult grad_check(const std::function<Tensor()>& build_loss,
                                  const std::vector<std::pair<std::string, Tensor>>& params,
                                  int samples_per_param, double step, Rng& rng) {
  // analytic gradients
  for (auto& [name, p] : params) const_cast<Tensor&>(p).zero_grad();
  Tensor loss = build_loss();
  backward(loss);

  GradCheckResult res;
  for (auto& [name, p] : params) {
    const int64_t n = p.size();
    for (int s = 0; s < samples_per_param; ++s) {
      const int64_t i = n == 1 ? 0 : rng.uniform_int(0, n - 1);
      double* slot = &const_cast<Tensor&>(p).data()[static_cast<size_t>(i)];
      const double saved = *slot;
      *slot = saved + step;
      const double lp = build_loss().item();
      *slot = saved - step;
      const double lm = build_loss().item();
      *slot = saved;
      const double numeric = (lp - lm) / (2.0 * step);
      const double analytic = p.grad()[static_cast<size_t>(i)];
      const double mag = std::fabs(numeric) + std::fabs(analytic);
      if (mag < 1e-6) {  // both effectively zero
        ++res.checked;
        continue;
      }
      const double rel = std::fabs(numeric - analytic) / mag;
      if (rel > res.max_rel_err) {
        res.max_rel_err = rel;
        res.worst = name + "[" + std::to_string(i) + "]";
      }
      ++res.checked;
    }
  }
  return res;
}

}  // namespace avse
