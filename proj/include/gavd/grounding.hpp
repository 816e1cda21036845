#pragma once

#include <optional>
#include <vector>

#include "gavd/dump.hpp"
#include "gavd/types.hpp"

namespace gavd {

// How the three quality components combine into one score. `sum` is the
// primary definition; `product` is kept for comparison runs.
enum class ScoreMode { sum, product };

struct QualityReport {
  int layer = 0;
  std::optional<int> head;  // absent for a head-averaged layer report
  double selectiveness = 0.0;
  double vision_centricity = 0.0;
  std::optional<double> keyframe_auroc;  // absent without an annotation
  double score = 0.0;
};

// Elementwise mean of rows with identical length. Layer/head are taken from
// the first row; head is meaningful only if all inputs agree.
AttentionRow mean_attention(const std::vector<AttentionRow>& rows);

// 1 - H(visual distribution) / ln N_vis, in [0, 1]. A single visual token
// is trivially one-hot, so N_vis == 1 yields 1.
double selectiveness(const AttentionRow& row, const TokenLayout& layout);

// Total attention mass on visual positions.
double vision_centricity(const AttentionRow& row, const TokenLayout& layout);

// Rank-based AUROC of visual attention weights against token-level keyframe
// flags; tied scores get half credit. Throws DegenerateLabels when every
// token is (or no token is) a keyframe token.
double keyframe_auroc(const AttentionRow& row, const TokenLayout& layout,
                      const KeyframeAnnotation& ann);

QualityReport quality_score(const AttentionRow& row, const TokenLayout& layout,
                            const KeyframeAnnotation& ann,
                            ScoreMode mode = ScoreMode::sum);

// Without an annotation the AUROC component is absent and the score covers
// the remaining components.
QualityReport quality_score(const AttentionRow& row, const TokenLayout& layout,
                            ScoreMode mode = ScoreMode::sum);

// One head-averaged report per layer plus one report per (layer, head),
// sorted by descending score; ties resolve by ascending (layer, head) with
// the layer-average preceding its heads.
std::vector<QualityReport> rank_layers_heads(
    const AttentionDump& dump, const KeyframeAnnotation* ann = nullptr,
    ScoreMode mode = ScoreMode::sum);

}  // namespace gavd
