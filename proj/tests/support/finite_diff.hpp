#pragma once

// Central-finite-difference oracle for gradient checks. Lives in test code
// and stays independent of the tape's backward pass.

#include <cmath>
#include <functional>
#include <vector>

#include "psst/tensor.hpp"

namespace test_fd {

inline constexpr double kEps = 1e-5;

// d f / d x by central differences; f re-evaluates the full forward pass.
inline double central_diff(const std::function<double()>& f, double* x,
                           double eps = kEps) {
  const double x0 = *x;
  *x = x0 + eps;
  const double fp = f();
  *x = x0 - eps;
  const double fm = f();
  *x = x0;
  return (fp - fm) / (2.0 * eps);
}

// Max relative mismatch between an analytic gradient and finite differences
// over every coordinate of the given tensors.
inline double max_rel_error(
    const std::function<double()>& f,
    const std::vector<std::pair<psst::ad::Tensor*, const psst::ad::Tensor*>>&
        param_and_grad,
    double eps = kEps, double abs_floor = 1e-7) {
  double worst = 0.0;
  for (const auto& [param, grad] : param_and_grad) {
    for (std::size_t i = 0; i < param->numel(); ++i) {
      const double fd = central_diff(f, &(*param)[i], eps);
      const double an = (*grad)[i];
      const double scale =
          std::max({std::fabs(fd), std::fabs(an), abs_floor});
      worst = std::max(worst, std::fabs(fd - an) / scale);
    }
  }
  return worst;
}

}  // namespace test_fd
