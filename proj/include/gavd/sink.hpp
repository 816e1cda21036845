#pragma once

#include <set>
#include <vector>

#include "gavd/types.hpp"

namespace gavd {

struct SinkConfig {
  std::vector<Index> sink_dims;  // hidden dimensions that spike on sink tokens
  double threshold = 20.0;       // heuristic cutoff on the sink score

  void validate(Index hidden_dim) const;
};

// Hidden vectors entering `layer`, one row per sequence position.
struct HiddenStates {
  int layer = 0;
  Matrix states;
};

// Heads of one layer ordered by a ranking score (VNSR by default),
// descending; `vnsr[i]` is the score of `heads[i]`.
struct HeadSelection {
  int layer = 0;
  std::vector<int> heads;
  std::vector<double> vnsr;
};

// max over sink dims of |x[d]| / RMS(x). DegenerateHidden on zero RMS.
double sink_dimension_value(const Eigen::Ref<const Vector>& x,
                            const SinkConfig& cfg);

// Visual positions whose hidden vector scores at or above the threshold.
std::set<Index> detect_sink_tokens(const HiddenStates& hidden,
                                   const TokenLayout& layout,
                                   const SinkConfig& cfg);

// Fraction of visual attention mass on non-sink visual tokens, in [0, 1];
// 1 when the sink set misses the row's visual support entirely.
double vnsr(const AttentionRow& row, const TokenLayout& layout,
            const std::set<Index>& sinks);

// Top k heads by VNSR, descending; ties prefer the lower head index.
HeadSelection select_top_k_heads(const std::vector<AttentionRow>& rows,
                                 const TokenLayout& layout,
                                 const std::set<Index>& sinks, int k);

// Baseline ranking by visual attention mass instead of VNSR; the score
// column of the result carries that mass.
HeadSelection select_top_k_by_attention_sum(
    const std::vector<AttentionRow>& rows, const TokenLayout& layout, int k);

}  // namespace gavd
