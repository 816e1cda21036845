#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <vector>

namespace gavd {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using Index = Eigen::Index;

enum class Role : std::uint8_t { system, text, visual };

// Half-open span [begin, end) of sequence positions belonging to one frame.
struct FrameSpan {
  int frame = 0;
  Index begin = 0;
  Index end = 0;
};

// Describes which positions of a token sequence are system / text / visual
// and how the visual positions group into frames.
struct TokenLayout {
  Index seq_len = 0;
  std::vector<Role> roles;            // one entry per position
  std::vector<FrameSpan> frame_spans; // ordered, disjoint, cover exactly the visual positions
  Index last_prompt_index = 0;        // query position attention rows are taken from

  // Throws ValidationError naming the offending field.
  void validate() const;

  std::vector<Index> visual_positions() const;  // ascending
  Index num_visual() const;
};

// One attention row: the post-softmax weights of a single (layer, head)
// at the layout's query position, over the full sequence.
struct AttentionRow {
  int layer = 0;
  int head = 0;
  Vector weights;

  void validate(const TokenLayout& layout, double sum_tol = 1e-6) const;
};

// Nonnegative weights over a discrete support. Produced normalized
// (sum == 1) by every renormalizing operation; entropy / KL / sharpening
// assume that. The un-renormalized visual restriction reuses the type and
// carries the visual mass instead.
struct ProbVec {
  Vector values;

  Index support_size() const { return values.size(); }
  bool is_normalized(double tol = 1e-9) const;

  static ProbVec uniform(Index n);
};

// Per-frame keyframe flags; token-level flags are the per-frame flags
// broadcast over each frame's span.
struct KeyframeAnnotation {
  std::vector<std::uint8_t> frame_flags;

  // One flag per visual position, ascending position order.
  std::vector<std::uint8_t> token_flags(const TokenLayout& layout) const;
  bool any() const;
};

}  // namespace gavd
