#include "gavd/dump.hpp"

#include <cmath>
#include <string>

#include "gavd/errors.hpp"

namespace gavd {

auto AttentionDump::row(int layer, int head) const -> const AttentionRow& {
  if (layer < 0 || layer >= layers || head < 0 || head >= heads)
    throw IndexError("no row at layer " + std::to_string(layer) + " head " +
                     std::to_string(head));
  return rows[static_cast<size_t>(layer)][static_cast<size_t>(head)];
}

void AttentionDump::validate(double sum_tol) const {
  if (version != kDumpFormatVersion)
    throw UnsupportedVersion("version: expected \"" +
                             std::string(kDumpFormatVersion) + "\", got \"" +
                             version + "\"");
  layout.validate();
  if (layers <= 0 || heads <= 0)
    throw ValidationError("layers/heads: must be positive");
  if (static_cast<int>(rows.size()) != layers)
    throw ValidationError("rows: expected " + std::to_string(layers) +
                          " layers, got " + std::to_string(rows.size()));
  for (int l = 0; l < layers; ++l) {
    const auto& layer_rows = rows[static_cast<size_t>(l)];
    if (static_cast<int>(layer_rows.size()) != heads)
      throw ValidationError("rows[" + std::to_string(l) + "]: expected " +
                            std::to_string(heads) + " heads, got " +
                            std::to_string(layer_rows.size()));
    for (int h = 0; h < heads; ++h) {
      const AttentionRow& r = layer_rows[static_cast<size_t>(h)];
      const std::string where =
          "rows[" + std::to_string(l) + "][" + std::to_string(h) + "]";
      if (r.weights.size() != layout.seq_len)
        throw ValidationError(where + ": expected " +
                              std::to_string(layout.seq_len) +
                              " weights, got " +
                              std::to_string(r.weights.size()));
      double sum = 0.0;
      for (Index i = 0; i < r.weights.size(); ++i) {
        const double w = r.weights(i);
        if (!std::isfinite(w) || w < 0.0)
          throw ValidationError(where + "[" + std::to_string(i) +
                                "]: negative or non-finite weight");
        sum += w;
      }
      if (std::abs(sum - 1.0) > sum_tol)
        throw ValidationError(where + ": weights sum to " +
                              std::to_string(sum) + ", expected 1");
    }
  }
  if (hidden_states.has_value()) {
    if (static_cast<int>(hidden_states->size()) != layers)
      throw ValidationError("hidden_states: expected " +
                            std::to_string(layers) + " layers, got " +
                            std::to_string(hidden_states->size()));
    Index dim = -1;
    for (int l = 0; l < layers; ++l) {
      const Matrix& m = (*hidden_states)[static_cast<size_t>(l)];
      const std::string where = "hidden_states[" + std::to_string(l) + "]";
      if (m.rows() != layout.seq_len)
        throw ValidationError(where + ": expected " +
                              std::to_string(layout.seq_len) + " positions, got " +
                              std::to_string(m.rows()));
      if (dim < 0) dim = m.cols();
      if (m.cols() != dim || dim == 0)
        throw ValidationError(where + ": inconsistent hidden size");
      if (!m.allFinite())
        throw ValidationError(where + ": non-finite hidden value");
    }
  }
  if (keyframes.has_value()) {
    size_t max_frame = 0;
    for (const FrameSpan& s : layout.frame_spans)
      max_frame = std::max(max_frame, static_cast<size_t>(s.frame) + 1);
    if (keyframes->frame_flags.size() < max_frame)
      throw ValidationError("keyframes.frame_flags: " +
                            std::to_string(keyframes->frame_flags.size()) +
                            " flags for " + std::to_string(max_frame) +
                            " frames");
  }
}

}  // namespace gavd
