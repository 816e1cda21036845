#pragma once

// Reference implementations the tests compare the library against.
// Deliberately naive: direct pairwise counting, permutation enumeration,
// explicit loops. Anything clever belongs in the library, not here.

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <random>
#include <utility>
#include <vector>

#include "gavd/types.hpp"

namespace gavd_tests {

// Pairwise AUROC with half credit for ties.
inline double oracle_auroc(const std::vector<double>& scores,
                           const std::vector<int>& labels) {
  double pairs = 0.0, credit = 0.0;
  for (size_t i = 0; i < scores.size(); ++i) {
    if (labels[i] != 1) continue;
    for (size_t j = 0; j < scores.size(); ++j) {
      if (labels[j] != 0) continue;
      pairs += 1.0;
      if (scores[i] > scores[j])
        credit += 1.0;
      else if (scores[i] == scores[j])
        credit += 0.5;
    }
  }
  return credit / pairs;
}

// Minimum-cost assignment by enumerating every permutation in
// lexicographic order; keeping only strict improvements makes the winner
// the lexicographically smallest optimum. The total sums entries in row
// order so it is bitwise comparable with the solver's total.
inline std::pair<std::vector<int>, double> oracle_assignment(
    const gavd::Matrix& cost) {
  const int n = static_cast<int>(cost.rows());
  std::vector<int> perm(static_cast<size_t>(n));
  std::iota(perm.begin(), perm.end(), 0);
  std::vector<int> best_perm = perm;
  double best = -1.0;
  do {
    double total = 0.0;
    for (int i = 0; i < n; ++i) total += cost(i, perm[static_cast<size_t>(i)]);
    if (best < 0.0 || total < best) {
      best = total;
      best_perm = perm;
    }
  } while (std::next_permutation(perm.begin(), perm.end()));
  return {best_perm, best};
}

// The same hand-rolled Fisher-Yates the library pins its random pairing to.
inline std::vector<int> oracle_fisher_yates(size_t n, std::uint64_t seed) {
  std::vector<int> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  std::mt19937_64 rng(seed);
  for (size_t i = n; i > 1; --i) {
    const size_t j = static_cast<size_t>(rng() % i);
    std::swap(perm[i - 1], perm[j]);
  }
  return perm;
}

// Strictly positive weights summing to one; entries bounded away from zero
// so smoothing floors stay inactive.
inline gavd::Vector random_distribution(std::mt19937_64& rng, gavd::Index n) {
  std::uniform_real_distribution<double> u(0.05, 1.0);
  gavd::Vector v(n);
  for (gavd::Index i = 0; i < n; ++i) v(i) = u(rng);
  return v / v.sum();
}

// frames * tokens_per_frame visual positions followed by a text tail; the
// query sits on the last position.
inline gavd::TokenLayout video_layout(int frames, int tokens_per_frame,
                                      int text_tail) {
  gavd::TokenLayout layout;
  layout.seq_len = static_cast<gavd::Index>(frames * tokens_per_frame + text_tail);
  for (int i = 0; i < frames * tokens_per_frame; ++i)
    layout.roles.push_back(gavd::Role::visual);
  for (int i = 0; i < text_tail; ++i) layout.roles.push_back(gavd::Role::text);
  for (int f = 0; f < frames; ++f)
    layout.frame_spans.push_back(
        {f, static_cast<gavd::Index>(f * tokens_per_frame),
         static_cast<gavd::Index>((f + 1) * tokens_per_frame)});
  layout.last_prompt_index = layout.seq_len - 1;
  layout.validate();
  return layout;
}

inline gavd::AttentionRow make_row(int layer, int head,
                                   const gavd::Vector& weights) {
  gavd::AttentionRow row;
  row.layer = layer;
  row.head = head;
  row.weights = weights;
  return row;
}

inline gavd::AttentionRow make_row(std::initializer_list<double> weights) {
  gavd::AttentionRow row;
  row.weights = gavd::Vector(static_cast<gavd::Index>(weights.size()));
  gavd::Index i = 0;
  for (double w : weights) row.weights(i++) = w;
  return row;
}

inline gavd::AttentionRow make_row(int layer, int head,
                                   std::initializer_list<double> weights) {
  gavd::AttentionRow row = make_row(weights);
  row.layer = layer;
  row.head = head;
  return row;
}

inline gavd::ProbVec probvec(std::initializer_list<double> values) {
  gavd::ProbVec p;
  p.values = gavd::Vector(static_cast<gavd::Index>(values.size()));
  gavd::Index i = 0;
  for (double v : values) p.values(i++) = v;
  return p;
}

// Central difference of f along one coordinate slot.
template <class F>
double central_diff(F&& f, double& slot, double h) {
  const double saved = slot;
  slot = saved + h;
  const double up = f();
  slot = saved - h;
  const double down = f();
  slot = saved;
  return (up - down) / (2.0 * h);
}

inline double rel_err(double a, double b, double floor = 1e-3) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

}  // namespace gavd_tests
