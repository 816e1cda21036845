#include "gavd/matching.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <string>

#include "gavd/distribution.hpp"
#include "gavd/errors.hpp"

namespace gavd {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// Potentials / shortest-augmenting-path assignment, O(n^3). Returns the
// minimal total cost; fills row -> column when asked.
auto solve_min_cost(const Matrix& a, std::vector<int>* assignment_out)
    -> double {
  const int n = static_cast<int>(a.rows());
  if (n == 0) {
    if (assignment_out) assignment_out->clear();
    return 0.0;
  }
  std::vector<double> u(static_cast<size_t>(n) + 1, 0.0);
  std::vector<double> v(static_cast<size_t>(n) + 1, 0.0);
  std::vector<int> p(static_cast<size_t>(n) + 1, 0);    // column -> row (1-based)
  std::vector<int> way(static_cast<size_t>(n) + 1, 0);
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::vector<double> minv(static_cast<size_t>(n) + 1, kInf);
    std::vector<bool> used(static_cast<size_t>(n) + 1, false);
    do {
      used[static_cast<size_t>(j0)] = true;
      const int i0 = p[static_cast<size_t>(j0)];
      double delta = kInf;
      int j1 = 0;
      for (int j = 1; j <= n; ++j) {
        if (used[static_cast<size_t>(j)]) continue;
        const double cur = a(i0 - 1, j - 1) - u[static_cast<size_t>(i0)] -
                           v[static_cast<size_t>(j)];
        if (cur < minv[static_cast<size_t>(j)]) {
          minv[static_cast<size_t>(j)] = cur;
          way[static_cast<size_t>(j)] = j0;
        }
        if (minv[static_cast<size_t>(j)] < delta) {
          delta = minv[static_cast<size_t>(j)];
          j1 = j;
        }
      }
      for (int j = 0; j <= n; ++j) {
        if (used[static_cast<size_t>(j)]) {
          u[static_cast<size_t>(p[static_cast<size_t>(j)])] += delta;
          v[static_cast<size_t>(j)] -= delta;
        } else {
          minv[static_cast<size_t>(j)] -= delta;
        }
      }
      j0 = j1;
    } while (p[static_cast<size_t>(j0)] != 0);
    do {
      const int j1 = way[static_cast<size_t>(j0)];
      p[static_cast<size_t>(j0)] = p[static_cast<size_t>(j1)];
      j0 = j1;
    } while (j0 != 0);
  }

  std::vector<int> row_to_col(static_cast<size_t>(n), -1);
  for (int j = 1; j <= n; ++j)
    row_to_col[static_cast<size_t>(p[static_cast<size_t>(j)] - 1)] = j - 1;
  double total = 0.0;
  for (int i = 0; i < n; ++i) total += a(i, row_to_col[static_cast<size_t>(i)]);
  if (assignment_out) *assignment_out = std::move(row_to_col);
  return total;
}

auto submatrix_without(const Matrix& a, int skip_rows,
                       const std::vector<bool>& col_used) -> Matrix {
  const int n = static_cast<int>(a.rows());
  const int m = n - skip_rows;
  Matrix sub(m, m);
  for (int i = 0; i < m; ++i) {
    int cj = 0;
    for (int j = 0; j < n; ++j) {
      if (col_used[static_cast<size_t>(j)]) continue;
      sub(i, cj++) = a(skip_rows + i, j);
    }
  }
  return sub;
}

}  // namespace

auto hungarian_solve(const CostMatrix& cost)
    -> std::pair<std::vector<int>, double> {
  const Matrix& a = cost.entries;
  if (a.rows() != a.cols())
    throw InvalidCost("cost matrix is " + std::to_string(a.rows()) + "x" +
                      std::to_string(a.cols()) + ", expected square");
  for (Index i = 0; i < a.rows(); ++i)
    for (Index j = 0; j < a.cols(); ++j)
      if (!std::isfinite(a(i, j)) || a(i, j) < 0.0)
        throw InvalidCost("cost entry (" + std::to_string(i) + ", " +
                          std::to_string(j) + ") is negative or non-finite");

  const int n = static_cast<int>(a.rows());
  const double best = solve_min_cost(a, nullptr);
  const double tol = 1e-9 * std::max(1.0, std::abs(best));

  // Fix rows in order to the smallest column that still completes to an
  // optimal total; this pins down the lexicographically smallest optimum.
  std::vector<int> assignment(static_cast<size_t>(n), -1);
  std::vector<bool> col_used(static_cast<size_t>(n), false);
  double prefix = 0.0;
  for (int i = 0; i < n; ++i) {
    int fallback = -1;
    double fallback_total = kInf;
    for (int j = 0; j < n; ++j) {
      if (col_used[static_cast<size_t>(j)]) continue;
      col_used[static_cast<size_t>(j)] = true;
      const double rest =
          solve_min_cost(submatrix_without(a, i + 1, col_used), nullptr);
      col_used[static_cast<size_t>(j)] = false;
      const double total = prefix + a(i, j) + rest;
      if (total <= best + tol) {
        fallback = j;
        break;
      }
      if (total < fallback_total) {
        fallback_total = total;
        fallback = j;
      }
    }
    assignment[static_cast<size_t>(i)] = fallback;
    col_used[static_cast<size_t>(fallback)] = true;
    prefix += a(i, fallback);
  }

  double total = 0.0;
  for (int i = 0; i < n; ++i) total += a(i, assignment[static_cast<size_t>(i)]);
  return {assignment, total};
}

namespace {

auto find_row(const std::vector<AttentionRow>& rows, int layer, int head)
    -> const AttentionRow& {
  for (const AttentionRow& r : rows)
    if (r.layer == layer && r.head == head) return r;
  throw SelectionMismatch("no attention row supplied for layer " +
                          std::to_string(layer) + " head " +
                          std::to_string(head));
}

struct SplitSelections {
  std::vector<MatchResult::Pair> exact;
  std::vector<int> gen_rest, ver_rest;  // ascending head index
};

auto split_exact(const HeadSelection& gen_sel, const HeadSelection& ver_sel,
                 bool hungarian_only) -> SplitSelections {
  if (gen_sel.heads.size() != ver_sel.heads.size())
    throw SelectionMismatch("selection sizes differ: " +
                            std::to_string(gen_sel.heads.size()) + " vs " +
                            std::to_string(ver_sel.heads.size()));
  if (gen_sel.layer != ver_sel.layer && !hungarian_only)
    throw SelectionMismatch(
        "selections come from different layers; index-exact matching is "
        "undefined across layers");

  std::vector<int> gen_sorted = gen_sel.heads;
  std::vector<int> ver_sorted = ver_sel.heads;
  std::sort(gen_sorted.begin(), gen_sorted.end());
  std::sort(ver_sorted.begin(), ver_sorted.end());

  SplitSelections out;
  if (hungarian_only) {
    out.gen_rest = gen_sorted;
    out.ver_rest = ver_sorted;
    return out;
  }
  for (int h : gen_sorted) {
    if (std::binary_search(ver_sorted.begin(), ver_sorted.end(), h))
      out.exact.push_back({h, h, PairProvenance::exact});
    else
      out.gen_rest.push_back(h);
  }
  for (int h : ver_sorted)
    if (!std::binary_search(gen_sorted.begin(), gen_sorted.end(), h))
      out.ver_rest.push_back(h);
  return out;
}

}  // namespace

auto match_heads(const HeadSelection& gen_sel, const HeadSelection& ver_sel,
                 const std::vector<AttentionRow>& gen_rows,
                 const std::vector<AttentionRow>& ver_rows,
                 const TokenLayout& gen_layout, const TokenLayout& ver_layout,
                 const MatchOptions& opts) -> MatchResult {
  if (gen_layout.num_visual() != ver_layout.num_visual())
    throw ShapeError("pathways disagree on visual token count");

  SplitSelections split = split_exact(gen_sel, ver_sel, opts.hungarian_only);
  MatchResult result;
  result.pairs = split.exact;

  const int m = static_cast<int>(split.gen_rest.size());
  if (m > 0) {
    CostMatrix cost;
    cost.row_heads = split.gen_rest;
    cost.col_heads = split.ver_rest;
    cost.entries.resize(m, m);
    for (int i = 0; i < m; ++i) {
      const AttentionRow& gr =
          find_row(gen_rows, gen_sel.layer, split.gen_rest[static_cast<size_t>(i)]);
      const ProbVec gp = restrict_to_visual(gr, gen_layout, true);
      for (int j = 0; j < m; ++j) {
        const AttentionRow& vr =
            find_row(ver_rows, ver_sel.layer, split.ver_rest[static_cast<size_t>(j)]);
        const ProbVec vp = restrict_to_visual(vr, ver_layout, true);
        cost.entries(i, j) = kl_divergence(vp, gp, opts.epsilon);
      }
    }
    auto [assignment, total] = hungarian_solve(cost);
    result.assignment = assignment;
    result.total_hungarian_cost = total;
    for (int i = 0; i < m; ++i)
      result.pairs.push_back({split.gen_rest[static_cast<size_t>(i)],
                              split.ver_rest[static_cast<size_t>(assignment[static_cast<size_t>(i)])],
                              PairProvenance::hungarian});
  }
  return result;
}

auto match_heads_random(const HeadSelection& gen_sel,
                        const HeadSelection& ver_sel, std::uint64_t seed)
    -> MatchResult {
  SplitSelections split = split_exact(gen_sel, ver_sel, false);
  MatchResult result;
  result.pairs = split.exact;

  // Hand-rolled Fisher-Yates: mt19937_64 output is pinned by the standard,
  // std::shuffle is not, and this permutation is frozen in tests.
  std::vector<int> perm(split.ver_rest.size());
  for (size_t i = 0; i < perm.size(); ++i) perm[i] = static_cast<int>(i);
  std::mt19937_64 rng(seed);
  for (size_t i = perm.size(); i > 1; --i) {
    const size_t j = static_cast<size_t>(rng() % i);
    std::swap(perm[i - 1], perm[j]);
  }
  result.assignment = perm;
  for (size_t i = 0; i < split.gen_rest.size(); ++i)
    result.pairs.push_back({split.gen_rest[i],
                            split.ver_rest[static_cast<size_t>(perm[i])],
                            PairProvenance::random});
  return result;
}

auto match_heads_discard(const HeadSelection& gen_sel,
                         const HeadSelection& ver_sel) -> MatchResult {
  SplitSelections split = split_exact(gen_sel, ver_sel, false);
  MatchResult result;
  result.pairs = split.exact;
  result.complete = split.gen_rest.empty();
  return result;
}

}  // namespace gavd
