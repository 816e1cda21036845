#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "gavd/types.hpp"

namespace gavd {

inline constexpr const char* kDumpFormatVersion = "gavd-1";

// One recorded inference: per-(layer, head) attention rows at the layout's
// query position, optionally the per-layer hidden states feeding each layer
// and a keyframe annotation.
struct AttentionDump {
  std::string version = kDumpFormatVersion;
  TokenLayout layout;
  int layers = 0;
  int heads = 0;
  // rows[l][h].weights has layout.seq_len entries.
  std::vector<std::vector<AttentionRow>> rows;
  // hidden_states[l] is seq_len x D: the hidden vectors entering layer l.
  std::optional<std::vector<Matrix>> hidden_states;
  std::optional<KeyframeAnnotation> keyframes;
  std::map<std::string, std::string> meta;

  const AttentionRow& row(int layer, int head) const;

  // Structural validation; throws ValidationError naming field and index.
  // Row sums are checked against 1 within sum_tol.
  void validate(double sum_tol = 1e-5) const;
};

}  // namespace gavd
