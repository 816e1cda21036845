#include "gavd/sink.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "gavd/errors.hpp"

namespace gavd {

void SinkConfig::validate(Index hidden_dim) const {
  if (sink_dims.empty()) throw EmptyInput("sink config lists no dimensions");
  for (Index d : sink_dims)
    if (d < 0 || d >= hidden_dim)
      throw IndexError("sink dimension " + std::to_string(d) +
                       " outside hidden size " + std::to_string(hidden_dim));
  if (!(threshold > 0.0))
    throw ValidationError("sink threshold must be positive");
}

auto sink_dimension_value(const Eigen::Ref<const Vector>& x,
                          const SinkConfig& cfg) -> double {
  cfg.validate(x.size());
  const double rms = std::sqrt(x.squaredNorm() / static_cast<double>(x.size()));
  if (!(rms > 0.0)) throw DegenerateHidden("hidden state has zero RMS");
  double best = 0.0;
  for (Index d : cfg.sink_dims) best = std::max(best, std::abs(x(d)) / rms);
  return best;
}

auto detect_sink_tokens(const HiddenStates& hidden, const TokenLayout& layout,
                        const SinkConfig& cfg) -> std::set<Index> {
  if (hidden.states.rows() != layout.seq_len)
    throw ShapeError("hidden states cover " + std::to_string(hidden.states.rows()) +
                     " positions, layout has " + std::to_string(layout.seq_len));
  std::set<Index> sinks;
  for (Index i : layout.visual_positions()) {
    const Vector x = hidden.states.row(i).transpose();
    if (sink_dimension_value(x, cfg) >= cfg.threshold) sinks.insert(i);
  }
  return sinks;
}

auto vnsr(const AttentionRow& row, const TokenLayout& layout,
          const std::set<Index>& sinks) -> double {
  double total = 0.0, non_sink = 0.0;
  for (Index i : layout.visual_positions()) {
    const double w = row.weights(i);
    total += w;
    if (!sinks.contains(i)) non_sink += w;
  }
  if (!(total > 0.0))
    throw DegenerateDistribution("zero attention mass on visual tokens");
  return non_sink / total;
}

namespace {

auto rank_heads(const std::vector<AttentionRow>& rows,
                const std::vector<double>& score, int k) -> HeadSelection {
  if (rows.empty()) throw EmptyInput("head selection over zero rows");
  std::vector<size_t> order(rows.size());
  std::iota(order.begin(), order.end(), size_t{0});
  std::sort(order.begin(), order.end(), [&](size_t a, size_t b) {
    if (score[a] != score[b]) return score[a] > score[b];
    return rows[a].head < rows[b].head;  // ties: lower head index wins
  });

  HeadSelection sel;
  sel.layer = rows.front().layer;
  const size_t take = std::min<size_t>(static_cast<size_t>(std::max(k, 0)), rows.size());
  for (size_t i = 0; i < take; ++i) {
    sel.heads.push_back(rows[order[i]].head);
    sel.vnsr.push_back(score[order[i]]);
  }
  return sel;
}

}  // namespace

auto select_top_k_heads(const std::vector<AttentionRow>& rows,
                        const TokenLayout& layout, const std::set<Index>& sinks,
                        int k) -> HeadSelection {
  std::vector<double> score;
  score.reserve(rows.size());
  for (const AttentionRow& r : rows) score.push_back(vnsr(r, layout, sinks));
  return rank_heads(rows, score, k);
}

auto select_top_k_by_attention_sum(const std::vector<AttentionRow>& rows,
                                   const TokenLayout& layout, int k)
    -> HeadSelection {
  std::vector<double> score;
  score.reserve(rows.size());
  for (const AttentionRow& r : rows) {
    double mass = 0.0;
    for (Index i : layout.visual_positions()) mass += r.weights(i);
    score.push_back(mass);
  }
  return rank_heads(rows, score, k);
}

}  // namespace gavd
