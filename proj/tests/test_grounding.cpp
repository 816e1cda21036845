#include "doctest.h"

#include <cmath>
#include <random>

#include "gavd/dump.hpp"
#include "gavd/errors.hpp"
#include "gavd/grounding.hpp"

#include "support/oracles.hpp"

using namespace gavd;
using namespace gavd_tests;

TEST_CASE("token flags broadcast frame flags over spans") {
  const TokenLayout layout = video_layout(3, 2, 1);
  KeyframeAnnotation ann;
  ann.frame_flags = {0, 1, 0};
  CHECK(ann.token_flags(layout) ==
        std::vector<std::uint8_t>({0, 0, 1, 1, 0, 0}));
  CHECK(ann.any());

  ann.frame_flags = {0, 0};  // too short for frame index 2
  CHECK_THROWS_AS(ann.token_flags(layout), ShapeError);

  ann.frame_flags = {0, 0, 0};
  CHECK_FALSE(ann.any());
}

TEST_CASE("mean attention averages rows elementwise") {
  std::vector<AttentionRow> rows = {make_row({1.0, 0.0, 0.0}),
                                    make_row({0.0, 1.0, 0.0})};
  const AttentionRow avg = mean_attention(rows);
  CHECK(avg.weights(0) == 0.5);
  CHECK(avg.weights(1) == 0.5);
  CHECK(avg.weights(2) == 0.0);

  CHECK_THROWS_AS(mean_attention({}), EmptyInput);
  rows.push_back(make_row({0.5, 0.5}));
  CHECK_THROWS_AS(mean_attention(rows), ShapeError);
}

TEST_CASE("selectiveness edge cases") {
  const TokenLayout layout = video_layout(2, 2, 1);
  CHECK_THROWS_AS(
      selectiveness(make_row({0.0, 0.0, 0.0, 0.0, 1.0}), layout),
      DegenerateDistribution);

  // A single visual token is trivially fully selective.
  TokenLayout one;
  one.seq_len = 2;
  one.roles = {Role::visual, Role::text};
  one.frame_spans = {{0, 0, 1}};
  one.last_prompt_index = 1;
  one.validate();
  CHECK(selectiveness(make_row({0.4, 0.6}), one) == 1.0);

  TokenLayout none = one;
  none.roles = {Role::text, Role::text};
  none.frame_spans.clear();
  none.validate();
  CHECK_THROWS_AS(selectiveness(make_row({0.4, 0.6}), none), EmptyInput);
}

TEST_CASE("selectiveness is restriction-invariant in scale") {
  // Scaling the visual part by the text remainder must not matter: the
  // measure renormalizes over the visual support.
  const TokenLayout layout = video_layout(2, 2, 1);
  const double a =
      selectiveness(make_row({0.4, 0.4, 0.1, 0.1, 0.0}), layout);
  const double b =
      selectiveness(make_row({0.2, 0.2, 0.05, 0.05, 0.5}), layout);
  CHECK(a == doctest::Approx(b).epsilon(1e-14));
}

TEST_CASE("keyframe auroc equals the pairwise oracle bitwise") {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 60; ++trial) {
    const int frames = 2 + static_cast<int>(rng() % 12);
    const int tpf = 1 + static_cast<int>(rng() % 3);
    const TokenLayout layout = video_layout(frames, tpf, 1);
    const Index n_vis = layout.num_visual();

    Vector w(layout.seq_len);
    // Draw from a small grid so ties actually happen.
    for (Index i = 0; i < layout.seq_len; ++i)
      w(i) = static_cast<double>(rng() % 8) / 8.0;
    AttentionRow row = make_row(0, 0, w);

    KeyframeAnnotation ann;
    bool has_pos = false, has_neg = false;
    ann.frame_flags.resize(static_cast<size_t>(frames));
    for (int f = 0; f < frames; ++f) {
      ann.frame_flags[static_cast<size_t>(f)] = rng() % 2;
      (ann.frame_flags[static_cast<size_t>(f)] ? has_pos : has_neg) = true;
    }
    if (!has_pos || !has_neg) {
      ann.frame_flags[0] = 1;
      ann.frame_flags[static_cast<size_t>(frames - 1)] = 0;
    }

    std::vector<double> scores;
    std::vector<int> labels;
    const auto flags = ann.token_flags(layout);
    for (Index i = 0; i < n_vis; ++i) {
      scores.push_back(w(i));
      labels.push_back(flags[static_cast<size_t>(i)] ? 1 : 0);
    }
    const double expected = oracle_auroc(scores, labels);
    CHECK(keyframe_auroc(row, layout, ann) == expected);
  }
}

TEST_CASE("keyframe auroc rejects single-class labels") {
  const TokenLayout layout = video_layout(2, 2, 1);
  const AttentionRow row = make_row({0.25, 0.25, 0.25, 0.25, 0.0});
  KeyframeAnnotation ann;
  ann.frame_flags = {1, 1};
  CHECK_THROWS_AS(keyframe_auroc(row, layout, ann), DegenerateLabels);
  ann.frame_flags = {0, 0};
  CHECK_THROWS_AS(keyframe_auroc(row, layout, ann), DegenerateLabels);
}

TEST_CASE("quality score aggregation modes") {
  const TokenLayout layout = video_layout(4, 1, 1);
  const AttentionRow row = make_row({0.4, 0.1, 0.3, 0.2, 0.0});
  KeyframeAnnotation ann;
  ann.frame_flags = {1, 0, 0, 1};

  const double sel = selectiveness(row, layout);
  const double vc = vision_centricity(row, layout);
  const double auroc = keyframe_auroc(row, layout, ann);

  const QualityReport sum = quality_score(row, layout, ann, ScoreMode::sum);
  CHECK(sum.score == doctest::Approx(sel + vc + auroc).epsilon(1e-15));
  CHECK(sum.keyframe_auroc.has_value());
  CHECK(*sum.keyframe_auroc == auroc);

  const QualityReport prod =
      quality_score(row, layout, ann, ScoreMode::product);
  CHECK(prod.score == doctest::Approx(sel * vc * auroc).epsilon(1e-15));

  // Without an annotation the auroc factor drops out of both modes.
  const QualityReport sum_na = quality_score(row, layout, ScoreMode::sum);
  CHECK_FALSE(sum_na.keyframe_auroc.has_value());
  CHECK(sum_na.score == doctest::Approx(sel + vc).epsilon(1e-15));
  const QualityReport prod_na = quality_score(row, layout, ScoreMode::product);
  CHECK(prod_na.score == doctest::Approx(sel * vc).epsilon(1e-15));
}

namespace {

AttentionDump two_head_dump() {
  AttentionDump dump;
  dump.layout = video_layout(2, 2, 1);
  dump.layers = 1;
  dump.heads = 2;
  AttentionRow h0 = make_row(0, 0, [] {
    Vector v(5);
    v << 0.7, 0.1, 0.1, 0.1, 0.0;
    return v;
  }());
  AttentionRow h1 = make_row(0, 1, [] {
    Vector v(5);
    v << 0.25, 0.25, 0.25, 0.25, 0.0;
    return v;
  }());
  dump.rows = {{h0, h1}};
  return dump;
}

}  // namespace

TEST_CASE("ranking orders by score with the layer average first on ties") {
  AttentionDump dump = two_head_dump();
  const auto reports = rank_layers_heads(dump, nullptr, ScoreMode::sum);
  REQUIRE(reports.size() == 3);

  // Head 0 is selective, head 1 is uniform; the average sits between.
  CHECK(reports[0].head.has_value());
  CHECK(*reports[0].head == 0);
  CHECK_FALSE(reports[1].head.has_value());
  CHECK(*reports[2].head == 1);
  CHECK(reports[0].score >= reports[1].score);
  CHECK(reports[1].score >= reports[2].score);

  // Identical heads tie with their own average: layer entry comes first,
  // then heads ascending.
  dump.rows[0][0].weights = dump.rows[0][1].weights;
  const auto tied = rank_layers_heads(dump, nullptr, ScoreMode::sum);
  CHECK_FALSE(tied[0].head.has_value());
  CHECK(*tied[1].head == 0);
  CHECK(*tied[2].head == 1);
}

TEST_CASE("ranking falls back to the dump's own annotation") {
  AttentionDump dump = two_head_dump();
  KeyframeAnnotation ann;
  ann.frame_flags = {1, 0};
  dump.keyframes = ann;
  const auto with_own = rank_layers_heads(dump);
  CHECK(with_own[0].keyframe_auroc.has_value());

  const auto reports = rank_layers_heads(two_head_dump());
  CHECK_FALSE(reports[0].keyframe_auroc.has_value());
}
