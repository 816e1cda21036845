#include "gavd/distribution.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "gavd/errors.hpp"

namespace gavd {

void TokenLayout::validate() const {
  if (seq_len <= 0) throw ValidationError("layout.seq_len: must be positive");
  if (static_cast<Index>(roles.size()) != seq_len)
    throw ValidationError("layout.roles: expected " + std::to_string(seq_len) +
                          " entries, got " + std::to_string(roles.size()));
  if (last_prompt_index < 0 || last_prompt_index >= seq_len)
    throw ValidationError("layout.last_prompt_index: out of range");

  std::vector<bool> covered(static_cast<size_t>(seq_len), false);
  Index prev_end = -1;
  for (size_t s = 0; s < frame_spans.size(); ++s) {
    const FrameSpan& span = frame_spans[s];
    const std::string where = "layout.frame_spans[" + std::to_string(s) + "]";
    if (span.begin < 0 || span.end > seq_len || span.begin >= span.end)
      throw ValidationError(where + ": invalid range");
    if (span.begin < prev_end)
      throw ValidationError(where + ": overlaps or disorders previous span");
    prev_end = span.end;
    for (Index i = span.begin; i < span.end; ++i) {
      if (roles[static_cast<size_t>(i)] != Role::visual)
        throw ValidationError(where + ": covers non-visual position " +
                              std::to_string(i));
      covered[static_cast<size_t>(i)] = true;
    }
  }
  for (Index i = 0; i < seq_len; ++i) {
    if (roles[static_cast<size_t>(i)] == Role::visual && !covered[static_cast<size_t>(i)])
      throw ValidationError("layout.frame_spans: visual position " +
                            std::to_string(i) + " not covered by any span");
  }
}

auto TokenLayout::visual_positions() const -> std::vector<Index> {
  std::vector<Index> out;
  for (Index i = 0; i < seq_len; ++i)
    if (roles[static_cast<size_t>(i)] == Role::visual) out.push_back(i);
  return out;
}

auto TokenLayout::num_visual() const -> Index {
  Index n = 0;
  for (Role r : roles)
    if (r == Role::visual) ++n;
  return n;
}

void AttentionRow::validate(const TokenLayout& layout, double sum_tol) const {
  if (weights.size() != layout.seq_len)
    throw ValidationError("row.weights: expected " +
                          std::to_string(layout.seq_len) + " entries, got " +
                          std::to_string(weights.size()));
  double sum = 0.0;
  for (Index i = 0; i < weights.size(); ++i) {
    const double w = weights(i);
    if (!std::isfinite(w) || w < 0.0)
      throw ValidationError("row.weights[" + std::to_string(i) +
                            "]: negative or non-finite");
    sum += w;
  }
  if (std::abs(sum - 1.0) > sum_tol)
    throw ValidationError("row.weights: sum " + std::to_string(sum) +
                          " deviates from 1 beyond tolerance");
}

auto ProbVec::is_normalized(double tol) const -> bool {
  return std::abs(values.sum() - 1.0) <= tol;
}

auto ProbVec::uniform(Index n) -> ProbVec {
  if (n <= 0) throw EmptyInput("uniform distribution needs a positive support");
  ProbVec p;
  p.values = Vector::Constant(n, 1.0 / static_cast<double>(n));
  return p;
}

auto smoothed(const Vector& w, double eps) -> Vector {
  Vector out = w.cwiseMax(eps);
  return out / out.sum();
}

auto restrict_to_visual(const AttentionRow& row, const TokenLayout& layout,
                        bool renormalize) -> ProbVec {
  if (row.weights.size() != layout.seq_len)
    throw ShapeError("attention row length does not match layout");
  const std::vector<Index> vis = layout.visual_positions();
  ProbVec out;
  out.values.resize(static_cast<Index>(vis.size()));
  for (size_t i = 0; i < vis.size(); ++i)
    out.values(static_cast<Index>(i)) = row.weights(vis[i]);
  if (renormalize) {
    const double mass = out.values.sum();
    if (!(mass > 0.0))
      throw DegenerateDistribution("zero attention mass on visual tokens");
    out.values /= mass;
  }
  return out;
}

auto entropy(const ProbVec& p) -> double { return entropy_nats(p.values); }

auto kl_divergence(const ProbVec& p, const ProbVec& q, double eps) -> double {
  if (p.support_size() != q.support_size())
    throw ShapeError("KL arguments have different support sizes");
  const Vector ps = smoothed(p.values, eps);
  const Vector qs = smoothed(q.values, eps);
  double d = 0.0;
  for (Index i = 0; i < ps.size(); ++i)
    if (ps(i) > 0.0) d += ps(i) * std::log(ps(i) / qs(i));
  return d;
}

auto sharpen(const ProbVec& p, double tau) -> ProbVec {
  if (!(tau > 0.0)) throw DegenerateDistribution("sharpening needs tau > 0");
  if (tau == 1.0) return p;
  const Index n = p.support_size();
  if (n == 0) throw EmptyInput("sharpen over empty support");

  // Work with (ln p_i) / tau minus its max, so one entry always
  // exponentiates to 1 and the rest cannot all underflow.
  Vector logp(n);
  double maxv = -std::numeric_limits<double>::infinity();
  for (Index i = 0; i < n; ++i) {
    const double v = p.values(i);
    logp(i) = v > 0.0 ? std::log(v) / tau : -std::numeric_limits<double>::infinity();
    maxv = std::max(maxv, logp(i));
  }
  if (!std::isfinite(maxv))
    throw DegenerateDistribution("sharpen input has no positive mass");

  ProbVec out;
  out.values.resize(n);
  double sum = 0.0;
  for (Index i = 0; i < n; ++i) {
    const double e = std::isfinite(logp(i)) ? std::exp(logp(i) - maxv) : 0.0;
    out.values(i) = e;
    sum += e;
  }
  out.values /= sum;
  return out;
}

}  // namespace gavd
