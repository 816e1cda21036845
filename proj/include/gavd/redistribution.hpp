#pragma once

#include <utility>
#include <vector>

#include "gavd/dump.hpp"
#include "gavd/types.hpp"

namespace gavd {

enum class RedistributionStrategy { none, proportional_keyframes, uniform_all_frames };

struct RedistributionPlan {
  RedistributionStrategy strategy = RedistributionStrategy::none;
  std::vector<std::pair<int, int>> targets;  // (layer, head) rows to rewrite
};

// Concentrate the row's visual mass on keyframe tokens, scaling each
// keyframe token by (visual mass / keyframe mass) and zeroing the other
// visual tokens. Non-visual entries are untouched. Throws EmptyKeyframes
// when the annotation marks no frame, DegenerateRedistribution when the
// keyframe tokens carry no mass.
AttentionRow redistribute_proportional(const AttentionRow& row,
                                       const TokenLayout& layout,
                                       const KeyframeAnnotation& ann);

// Spread the row's visual mass uniformly over all visual tokens.
AttentionRow redistribute_uniform(const AttentionRow& row,
                                  const TokenLayout& layout);

// Apply the plan's strategy to the targeted rows of a dump copy. The
// annotation falls back to the dump's own when null; `none` returns the
// dump unchanged.
AttentionDump apply_plan(const AttentionDump& dump,
                         const RedistributionPlan& plan,
                         const KeyframeAnnotation* ann = nullptr);

}  // namespace gavd
