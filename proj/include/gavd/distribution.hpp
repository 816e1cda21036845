#pragma once

#include <cmath>

#include "gavd/types.hpp"

namespace gavd {

// Entropy in nats of a normalized weight vector; 0 * ln 0 == 0.
// Works on any Eigen expression so restricted blocks can be passed directly.
template <typename Derived>
auto entropy_nats(const Eigen::MatrixBase<Derived>& p) -> double {
  double h = 0.0;
  for (Index i = 0; i < p.size(); ++i) {
    const double v = p(i);
    if (v > 0.0) h -= v * std::log(v);
  }
  return h;
}

// Clamp entries to at least eps, then renormalize. Keeps KL finite.
Vector smoothed(const Vector& w, double eps);

// Weights at the layout's visual positions, ascending position order.
// With renormalize set, divided by the visual mass (DegenerateDistribution
// if that mass is not positive).
ProbVec restrict_to_visual(const AttentionRow& row, const TokenLayout& layout,
                           bool renormalize);

double entropy(const ProbVec& p);

// KL(p || q) in nats. Both arguments are clamped to eps and renormalized
// first, so kl_divergence(p, p) is exactly zero even when p has empty bins.
double kl_divergence(const ProbVec& p, const ProbVec& q, double eps = 1e-8);

// Temperature sharpening: p_i^(1/tau), renormalized. tau == 1 is the
// identity; tau -> 0 approaches argmax. Computed in log space so tiny
// weights survive large exponents.
ProbVec sharpen(const ProbVec& p, double tau);

}  // namespace gavd
