#pragma once

#include <vector>

#include "gavd/matching.hpp"
#include "gavd/types.hpp"

namespace gavd {

// Which pathway the consistency term treats as a fixed reference. The other
// pathway is the trainable one: it receives the attention-loss gradients.
enum class SgDirection { verification_fixed, generation_fixed };

struct LossWeights {
  double ce = 1.0;
  double entropy = 1.0;
  double consistency = 1.0;
};

struct LossConfig {
  double tau_entropy = 0.03;
  LossWeights weights;
  SgDirection sg_direction = SgDirection::verification_fixed;
  double epsilon = 1e-8;  // KL smoothing floor
};

// A loss value plus its gradient with respect to each head's attention
// logits (the scores whose softmax restricted to visual tokens gives the
// head's distribution). One gradient vector per input row, same order.
struct ValueGrads {
  double value = 0.0;
  std::vector<Vector> grads;
};

struct CrossEntropyResult {
  double value = 0.0;
  Matrix grad;  // d(mean NLL)/d(logits), same shape as the logits
};

// Mean next-token NLL over steps; logits is steps x vocab.
CrossEntropyResult cross_entropy_loss(const Matrix& logits,
                                      const std::vector<int>& targets);

// Mean entropy of the tau-sharpened rows. The gradient of H(sharpen(p, tau))
// with respect to the row's logits is -q (ln q + H) / tau with
// q = sharpen(p, tau), scaled by 1/K.
ValueGrads entropy_loss(const std::vector<ProbVec>& rows,
                        const LossConfig& cfg);

// Mean KL between matched rows, fixed side as the KL reference. Rows are
// aligned pairwise (gen_rows[i] matched with ver_rows[i], as listed by
// `match`). The gradient goes to the trainable side's logits and equals
// (trainable - reference) / K per pair; the fixed side gets none.
ValueGrads consistency_loss(const std::vector<ProbVec>& gen_rows,
                            const std::vector<ProbVec>& ver_rows,
                            const MatchResult& match, const LossConfig& cfg);

struct LossBundle {
  double l_ce = 0.0;
  double l_entropy = 0.0;
  double l_consistency = 0.0;
  double l_total = 0.0;
  // Per matched trainable head: gradient of
  // w_ent * l_entropy + w_con * l_consistency w.r.t. that head's logits.
  std::vector<Vector> grad_logits;
};

// Weighted combination. A term with zero weight is skipped entirely and
// reported as exactly 0 so disabled terms leave no trace. The entropy term
// applies to whichever side is trainable under cfg.sg_direction.
LossBundle total_loss(double l_ce, const std::vector<ProbVec>& gen_rows,
                      const std::vector<ProbVec>& ver_rows,
                      const MatchResult& match, const LossConfig& cfg);

}  // namespace gavd
