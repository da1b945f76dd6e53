#pragma once

#include <stdexcept>

namespace qgnn {

// Expected-gradient-norm bound after T steps of lr alpha on an L2-smooth loss
// with per-step gradient variance Q^2:
//   2 (L(w_1) - L*) / (T (2 alpha - alpha^2 L2)) + alpha L2 Q^2 / (2 - alpha L2).
// Requires alpha < 2 / L2, where the denominator is positive.
inline double convergence_bound(double loss_gap, double lipschitz, double alpha, double steps,
                                double q) {
  if (lipschitz <= 0.0) throw std::invalid_argument("convergence_bound: lipschitz must be > 0");
  if (steps <= 0.0) throw std::invalid_argument("convergence_bound: steps must be > 0");
  if (alpha <= 0.0 || alpha >= 2.0 / lipschitz)
    throw std::invalid_argument("convergence_bound: need 0 < alpha < 2 / lipschitz");
  const double first = 2.0 * loss_gap / (steps * (2.0 * alpha - alpha * alpha * lipschitz));
  const double second = alpha * lipschitz * q * q / (2.0 - alpha * lipschitz);
  return first + second;
}

}  // namespace qgnn
