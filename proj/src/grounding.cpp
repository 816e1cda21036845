#include "gavd/grounding.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "gavd/distribution.hpp"
#include "gavd/errors.hpp"

namespace gavd {

auto KeyframeAnnotation::token_flags(const TokenLayout& layout) const
    -> std::vector<std::uint8_t> {
  std::vector<std::uint8_t> per_position(static_cast<size_t>(layout.seq_len), 0);
  for (const FrameSpan& span : layout.frame_spans) {
    if (span.frame < 0 || static_cast<size_t>(span.frame) >= frame_flags.size())
      throw ShapeError("annotation covers " + std::to_string(frame_flags.size()) +
                       " frames but layout references frame " +
                       std::to_string(span.frame));
    const std::uint8_t flag = frame_flags[static_cast<size_t>(span.frame)];
    for (Index i = span.begin; i < span.end; ++i)
      per_position[static_cast<size_t>(i)] = flag;
  }
  std::vector<std::uint8_t> out;
  for (Index i = 0; i < layout.seq_len; ++i)
    if (layout.roles[static_cast<size_t>(i)] == Role::visual)
      out.push_back(per_position[static_cast<size_t>(i)]);
  return out;
}

auto KeyframeAnnotation::any() const -> bool {
  return std::any_of(frame_flags.begin(), frame_flags.end(),
                     [](std::uint8_t f) { return f != 0; });
}

auto mean_attention(const std::vector<AttentionRow>& rows) -> AttentionRow {
  if (rows.empty()) throw EmptyInput("mean over zero attention rows");
  const Index n = rows.front().weights.size();
  AttentionRow out;
  out.layer = rows.front().layer;
  out.head = rows.front().head;
  out.weights = Vector::Zero(n);
  for (const AttentionRow& r : rows) {
    if (r.weights.size() != n)
      throw ShapeError("attention rows differ in length");
    out.weights += r.weights;
  }
  out.weights /= static_cast<double>(rows.size());
  return out;
}

auto selectiveness(const AttentionRow& row, const TokenLayout& layout) -> double {
  const Index n_vis = layout.num_visual();
  if (n_vis == 0) throw EmptyInput("layout has no visual tokens");
  if (n_vis == 1) return 1.0;  // single-token support is trivially one-hot
  const ProbVec p = restrict_to_visual(row, layout, true);
  return 1.0 - entropy(p) / std::log(static_cast<double>(n_vis));
}

auto vision_centricity(const AttentionRow& row, const TokenLayout& layout)
    -> double {
  const ProbVec p = restrict_to_visual(row, layout, false);
  return p.values.sum();
}

// Mid-rank AUROC: sort, give tied groups their average rank, then
// (sum of positive ranks - P(P+1)/2) / (P*N). Identical to counting
// pairwise wins with half credit for ties, including bitwise: ranks are
// integers or half-integers, so both sums are exact.
auto keyframe_auroc(const AttentionRow& row, const TokenLayout& layout,
                    const KeyframeAnnotation& ann) -> double {
  const ProbVec scores = restrict_to_visual(row, layout, false);
  const std::vector<std::uint8_t> flags = ann.token_flags(layout);
  const Index n = scores.support_size();

  Index pos = 0;
  for (std::uint8_t f : flags) pos += f ? 1 : 0;
  const Index neg = n - pos;
  if (pos == 0 || neg == 0)
    throw DegenerateLabels("keyframe labels collapse to a single class");

  std::vector<Index> order(static_cast<size_t>(n));
  std::iota(order.begin(), order.end(), Index{0});
  std::sort(order.begin(), order.end(), [&](Index a, Index b) {
    return scores.values(a) < scores.values(b);
  });

  double pos_rank_sum = 0.0;
  size_t i = 0;
  while (i < order.size()) {
    size_t j = i;
    while (j + 1 < order.size() &&
           scores.values(order[j + 1]) == scores.values(order[i]))
      ++j;
    const double mid_rank = (static_cast<double>(i + 1) + static_cast<double>(j + 1)) / 2.0;
    for (size_t k = i; k <= j; ++k)
      if (flags[static_cast<size_t>(order[k])]) pos_rank_sum += mid_rank;
    i = j + 1;
  }
  const double p = static_cast<double>(pos);
  return (pos_rank_sum - p * (p + 1.0) / 2.0) / (p * static_cast<double>(neg));
}

namespace {

auto build_report(const AttentionRow& row, const TokenLayout& layout,
                  const KeyframeAnnotation* ann, ScoreMode mode)
    -> QualityReport {
  QualityReport rep;
  rep.layer = row.layer;
  rep.head = row.head;
  rep.selectiveness = selectiveness(row, layout);
  rep.vision_centricity = vision_centricity(row, layout);
  if (ann != nullptr) rep.keyframe_auroc = keyframe_auroc(row, layout, *ann);
  if (mode == ScoreMode::sum) {
    rep.score = rep.selectiveness + rep.vision_centricity +
                rep.keyframe_auroc.value_or(0.0);
  } else {
    rep.score = rep.selectiveness * rep.vision_centricity *
                rep.keyframe_auroc.value_or(1.0);
  }
  return rep;
}

}  // namespace

auto quality_score(const AttentionRow& row, const TokenLayout& layout,
                   const KeyframeAnnotation& ann, ScoreMode mode)
    -> QualityReport {
  return build_report(row, layout, &ann, mode);
}

auto quality_score(const AttentionRow& row, const TokenLayout& layout,
                   ScoreMode mode) -> QualityReport {
  return build_report(row, layout, nullptr, mode);
}

auto rank_layers_heads(const AttentionDump& dump, const KeyframeAnnotation* ann,
                       ScoreMode mode) -> std::vector<QualityReport> {
  if (ann == nullptr && dump.keyframes.has_value()) ann = &*dump.keyframes;
  std::vector<QualityReport> out;
  for (int l = 0; l < dump.layers; ++l) {
    AttentionRow avg = mean_attention(dump.rows[static_cast<size_t>(l)]);
    QualityReport layer_rep = build_report(avg, dump.layout, ann, mode);
    layer_rep.head.reset();
    out.push_back(layer_rep);
    for (int h = 0; h < dump.heads; ++h)
      out.push_back(build_report(dump.row(l, h), dump.layout, ann, mode));
  }
  std::stable_sort(out.begin(), out.end(),
                   [](const QualityReport& a, const QualityReport& b) {
                     if (a.score != b.score) return a.score > b.score;
                     if (a.layer != b.layer) return a.layer < b.layer;
                     // layer average sorts before its heads
                     return a.head.value_or(-1) < b.head.value_or(-1);
                   });
  return out;
}

}  // namespace gavd
