#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "lfss/types.hpp"

namespace lfss {

struct GradCheckCase {
  std::string name;
  int instances = 0;
  int failures = 0;
  Scalar worst_error = 0;  // max of |analytic - numeric| / max(|a|, |n|, 1e-4)
};

struct GradCheckReport {
  std::vector<GradCheckCase> cases;
  Scalar tolerance = 1e-4;

  bool passed() const;
  std::string summary() const;
};

/// Central-difference verification (step 1e-5) of the analytic logit
/// gradients of every loss — weighted and unbiased cross-entropy, both
/// distillation modes, Lovasz-Softmax, the base loss and every fine-tune
/// flag combination — plus end-to-end parameter gradients of the pixel
/// classifier on a small image. Lovasz instances are resampled until the
/// per-class errors are tie-free so the surrogate is differentiable at the
/// probe point.
GradCheckReport run_gradient_checks(std::uint64_t seed, int instances_per_case);

}  // namespace lfss
