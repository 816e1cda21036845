#include "gavd/objectives.hpp"

#include <cmath>
#include <string>

#include "gavd/distribution.hpp"
#include "gavd/errors.hpp"

namespace gavd {

auto cross_entropy_loss(const Matrix& logits, const std::vector<int>& targets)
    -> CrossEntropyResult {
  const Index steps = logits.rows();
  const Index vocab = logits.cols();
  if (steps == 0) throw EmptyInput("cross entropy over zero steps");
  if (static_cast<Index>(targets.size()) != steps)
    throw ShapeError("targets count does not match logit rows");

  CrossEntropyResult out;
  out.grad = Matrix::Zero(steps, vocab);
  const double inv_steps = 1.0 / static_cast<double>(steps);
  for (Index s = 0; s < steps; ++s) {
    const int t = targets[static_cast<size_t>(s)];
    if (t < 0 || t >= vocab)
      throw IndexError("target " + std::to_string(t) + " outside vocab " +
                       std::to_string(vocab));
    const double m = logits.row(s).maxCoeff();
    double z = 0.0;
    for (Index v = 0; v < vocab; ++v) z += std::exp(logits(s, v) - m);
    const double lse = m + std::log(z);
    out.value += (lse - logits(s, t)) * inv_steps;
    for (Index v = 0; v < vocab; ++v)
      out.grad(s, v) = std::exp(logits(s, v) - lse) * inv_steps;
    out.grad(s, t) -= inv_steps;
  }
  return out;
}

auto entropy_loss(const std::vector<ProbVec>& rows, const LossConfig& cfg)
    -> ValueGrads {
  if (!(cfg.tau_entropy > 0.0))
    throw DegenerateDistribution("entropy temperature must be positive");
  ValueGrads out;
  if (rows.empty()) return out;
  const double inv_k = 1.0 / static_cast<double>(rows.size());
  for (const ProbVec& p : rows) {
    const ProbVec q = sharpen(p, cfg.tau_entropy);
    const double h = entropy(q);
    out.value += h * inv_k;
    // d H(softmax(z / tau)) / dz = -q (ln q + H) / tau, and sharpening the
    // row is exactly that softmax of its logits over temperature.
    Vector g = Vector::Zero(q.support_size());
    for (Index i = 0; i < q.support_size(); ++i) {
      const double qi = q.values(i);
      if (qi > 0.0) g(i) = -qi * (std::log(qi) + h) / cfg.tau_entropy * inv_k;
    }
    out.grads.push_back(std::move(g));
  }
  return out;
}

auto consistency_loss(const std::vector<ProbVec>& gen_rows,
                      const std::vector<ProbVec>& ver_rows,
                      const MatchResult& match, const LossConfig& cfg)
    -> ValueGrads {
  const size_t k = match.pairs.size();
  if (gen_rows.size() != k || ver_rows.size() != k)
    throw SelectionMismatch("row lists do not align with the matched pairs");
  ValueGrads out;
  if (k == 0) return out;
  const double inv_k = 1.0 / static_cast<double>(k);
  const bool ver_fixed = cfg.sg_direction == SgDirection::verification_fixed;
  for (size_t i = 0; i < k; ++i) {
    const ProbVec& trainable = ver_fixed ? gen_rows[i] : ver_rows[i];
    const ProbVec& reference = ver_fixed ? ver_rows[i] : gen_rows[i];
    if (trainable.support_size() != reference.support_size())
      throw ShapeError("matched rows have different support sizes");
    out.value += kl_divergence(reference, trainable, cfg.epsilon) * inv_k;
    // d KL(r || softmax(z)) / dz = softmax(z) - r. The reference enters as
    // a constant: no gradient is produced for it (exact while no entry of
    // the trainable row sits under the smoothing floor).
    out.grads.push_back((trainable.values - reference.values) * inv_k);
  }
  return out;
}

auto total_loss(double l_ce, const std::vector<ProbVec>& gen_rows,
                const std::vector<ProbVec>& ver_rows, const MatchResult& match,
                const LossConfig& cfg) -> LossBundle {
  const bool ver_fixed = cfg.sg_direction == SgDirection::verification_fixed;
  const std::vector<ProbVec>& trainable = ver_fixed ? gen_rows : ver_rows;

  LossBundle bundle;
  bundle.l_ce = l_ce;
  for (const ProbVec& p : trainable)
    bundle.grad_logits.push_back(Vector::Zero(p.support_size()));

  // Zero-weight terms are skipped outright and logged as exactly 0 so a
  // disabled term cannot leak into traces or gradients.
  if (cfg.weights.entropy != 0.0) {
    ValueGrads ent = entropy_loss(trainable, cfg);
    bundle.l_entropy = ent.value;
    for (size_t i = 0; i < ent.grads.size(); ++i)
      bundle.grad_logits[i] += cfg.weights.entropy * ent.grads[i];
  }
  if (cfg.weights.consistency != 0.0) {
    ValueGrads con = consistency_loss(gen_rows, ver_rows, match, cfg);
    bundle.l_consistency = con.value;
    for (size_t i = 0; i < con.grads.size(); ++i)
      bundle.grad_logits[i] += cfg.weights.consistency * con.grads[i];
  }
  bundle.l_total = cfg.weights.ce * bundle.l_ce +
                   cfg.weights.entropy * bundle.l_entropy +
                   cfg.weights.consistency * bundle.l_consistency;
  return bundle;
}

}  // namespace gavd
