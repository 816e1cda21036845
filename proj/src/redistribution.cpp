#include "gavd/redistribution.hpp"

#include <string>

#include "gavd/errors.hpp"

namespace gavd {

namespace {

// Token-level keyframe mask over the full sequence (non-visual = 0).
auto position_flags(const TokenLayout& layout, const KeyframeAnnotation& ann)
    -> std::vector<std::uint8_t> {
  std::vector<std::uint8_t> flags(static_cast<size_t>(layout.seq_len), 0);
  for (const FrameSpan& span : layout.frame_spans) {
    if (span.frame < 0 || static_cast<size_t>(span.frame) >= ann.frame_flags.size())
      throw ShapeError("annotation covers " +
                       std::to_string(ann.frame_flags.size()) +
                       " frames but layout references frame " +
                       std::to_string(span.frame));
    if (!ann.frame_flags[static_cast<size_t>(span.frame)]) continue;
    for (Index i = span.begin; i < span.end; ++i)
      flags[static_cast<size_t>(i)] = 1;
  }
  return flags;
}

}  // namespace

auto redistribute_proportional(const AttentionRow& row,
                               const TokenLayout& layout,
                               const KeyframeAnnotation& ann) -> AttentionRow {
  if (row.weights.size() != layout.seq_len)
    throw ShapeError("attention row length does not match layout");
  if (!ann.any()) throw EmptyKeyframes("annotation marks no keyframe");

  const std::vector<std::uint8_t> flags = position_flags(layout, ann);
  double visual_mass = 0.0, keyframe_mass = 0.0;
  for (Index i : layout.visual_positions()) {
    visual_mass += row.weights(i);
    if (flags[static_cast<size_t>(i)]) keyframe_mass += row.weights(i);
  }
  if (!(keyframe_mass > 0.0))
    throw DegenerateRedistribution("keyframe tokens carry no attention mass");

  const double scale = visual_mass / keyframe_mass;
  AttentionRow out = row;
  for (Index i : layout.visual_positions())
    out.weights(i) = flags[static_cast<size_t>(i)] ? row.weights(i) * scale : 0.0;
  return out;
}

auto redistribute_uniform(const AttentionRow& row, const TokenLayout& layout)
    -> AttentionRow {
  if (row.weights.size() != layout.seq_len)
    throw ShapeError("attention row length does not match layout");
  const std::vector<Index> vis = layout.visual_positions();
  if (vis.empty()) throw EmptyInput("layout has no visual tokens");
  double visual_mass = 0.0;
  for (Index i : vis) visual_mass += row.weights(i);
  const double share = visual_mass / static_cast<double>(vis.size());
  AttentionRow out = row;
  for (Index i : vis) out.weights(i) = share;
  return out;
}

auto apply_plan(const AttentionDump& dump, const RedistributionPlan& plan,
                const KeyframeAnnotation* ann) -> AttentionDump {
  AttentionDump out = dump;
  if (plan.strategy == RedistributionStrategy::none) return out;

  if (ann == nullptr && dump.keyframes.has_value()) ann = &*dump.keyframes;
  if (plan.strategy == RedistributionStrategy::proportional_keyframes &&
      ann == nullptr)
    throw EmptyKeyframes("proportional redistribution needs an annotation");

  for (const auto& [layer, head] : plan.targets) {
    if (layer < 0 || layer >= dump.layers || head < 0 || head >= dump.heads)
      throw TargetNotFound("no row at layer " + std::to_string(layer) +
                           " head " + std::to_string(head));
    AttentionRow& row =
        out.rows[static_cast<size_t>(layer)][static_cast<size_t>(head)];
    row = plan.strategy == RedistributionStrategy::proportional_keyframes
              ? redistribute_proportional(row, dump.layout, *ann)
              : redistribute_uniform(row, dump.layout);
  }
  return out;
}

}  // namespace gavd
