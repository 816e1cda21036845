#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "gavd/sink.hpp"
#include "gavd/types.hpp"

namespace gavd {

// Pairing cost between unmatched generation heads (rows) and unmatched
// verification heads (columns).
struct CostMatrix {
  Matrix entries;
  std::vector<int> row_heads;
  std::vector<int> col_heads;
};

enum class PairProvenance { exact, hungarian, random };

struct MatchResult {
  struct Pair {
    int gen = 0;
    int ver = 0;
    PairProvenance provenance = PairProvenance::exact;
  };
  std::vector<Pair> pairs;
  double total_hungarian_cost = 0.0;  // cost of the optimally assigned remainder
  std::vector<int> assignment;        // remainder rows -> column index, row order
  bool complete = true;               // false when unmatched heads were discarded
};

struct MatchOptions {
  // Skip the exact-index stage and assign every pair by cost. Required when
  // the two selections come from different layers.
  bool hungarian_only = false;
  double epsilon = 1e-8;  // KL smoothing floor for the cost entries
};

// Minimum-cost assignment of a square nonnegative cost matrix via the
// O(n^3) potentials / augmenting-path method. Among cost-equal optima the
// lexicographically smallest row->column mapping is returned.
std::pair<std::vector<int>, double> hungarian_solve(const CostMatrix& cost);

// Two-stage pairing: shared head indices pair exactly; the remainders pair
// by minimum total KL between their visually restricted rows, with the
// verification row as the KL reference. Rows are looked up by head index.
MatchResult match_heads(const HeadSelection& gen_sel,
                        const HeadSelection& ver_sel,
                        const std::vector<AttentionRow>& gen_rows,
                        const std::vector<AttentionRow>& ver_rows,
                        const TokenLayout& gen_layout,
                        const TokenLayout& ver_layout,
                        const MatchOptions& opts = {});

// Ablation: exact stage as above, remainder paired by a seeded uniform
// permutation (Fisher-Yates over a specified 64-bit generator, so the
// result is reproducible across platforms).
MatchResult match_heads_random(const HeadSelection& gen_sel,
                               const HeadSelection& ver_sel,
                               std::uint64_t seed);

// Ablation: exact pairs only; the remainder is dropped and the result is
// marked incomplete.
MatchResult match_heads_discard(const HeadSelection& gen_sel,
                                const HeadSelection& ver_sel);

}  // namespace gavd
