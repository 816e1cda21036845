#include "doctest.h"

#include <cmath>
#include <random>
#include <string>

#include "gavd/distribution.hpp"
#include "gavd/errors.hpp"

#include "support/oracles.hpp"

using namespace gavd;
using namespace gavd_tests;

namespace {

bool message_names(const std::exception& e, const std::string& needle) {
  return std::string(e.what()).find(needle) != std::string::npos;
}

template <class E, class F>
bool throws_naming(F&& fn, const std::string& needle) {
  try {
    fn();
  } catch (const E& e) {
    return message_names(e, needle);
  } catch (...) {
    return false;
  }
  return false;
}

}  // namespace

TEST_CASE("token layout validation names the offending field") {
  TokenLayout base = video_layout(2, 2, 1);
  CHECK_NOTHROW(base.validate());

  TokenLayout l = base;
  l.seq_len = 0;
  CHECK(throws_naming<ValidationError>([&] { l.validate(); }, "layout.seq_len"));

  l = base;
  l.roles.pop_back();
  CHECK(throws_naming<ValidationError>([&] { l.validate(); }, "layout.roles"));

  l = base;
  l.last_prompt_index = 5;
  CHECK(throws_naming<ValidationError>([&] { l.validate(); },
                                       "layout.last_prompt_index"));

  l = base;
  l.frame_spans[1] = {1, 3, 3};
  CHECK(throws_naming<ValidationError>([&] { l.validate(); },
                                       "layout.frame_spans[1]"));

  l = base;
  l.frame_spans[1] = {1, 1, 3};  // overlaps span 0
  CHECK(throws_naming<ValidationError>([&] { l.validate(); },
                                       "layout.frame_spans[1]"));

  l = base;
  l.frame_spans[1] = {1, 2, 5};  // crosses into the text tail
  CHECK(throws_naming<ValidationError>([&] { l.validate(); },
                                       "layout.frame_spans[1]"));

  l = base;
  l.frame_spans.pop_back();  // visual positions 2..3 uncovered
  CHECK(throws_naming<ValidationError>([&] { l.validate(); },
                                       "layout.frame_spans"));
}

TEST_CASE("visual positions are the visual roles in ascending order") {
  TokenLayout l;
  l.seq_len = 5;
  l.roles = {Role::system, Role::visual, Role::text, Role::visual, Role::text};
  l.frame_spans = {{0, 1, 2}, {1, 3, 4}};
  l.last_prompt_index = 4;
  l.validate();
  CHECK(l.visual_positions() == std::vector<Index>({1, 3}));
  CHECK(l.num_visual() == 2);
}

TEST_CASE("attention row validation") {
  const TokenLayout layout = video_layout(2, 2, 1);
  AttentionRow row = make_row({0.25, 0.25, 0.25, 0.25, 0.0});
  CHECK_NOTHROW(row.validate(layout));

  row.weights = Vector::Zero(3);
  CHECK(throws_naming<ValidationError>([&] { row.validate(layout); },
                                       "row.weights"));

  row = make_row({0.5, 0.5, 0.0, -0.1, 0.1});
  CHECK(throws_naming<ValidationError>([&] { row.validate(layout); },
                                       "row.weights[3]"));

  row = make_row({0.5, 0.5, 0.5, 0.0, 0.0});
  CHECK_THROWS_AS(row.validate(layout), ValidationError);
  CHECK_NOTHROW(row.validate(layout, 0.6));
}

TEST_CASE("probvec basics") {
  const ProbVec u = ProbVec::uniform(5);
  CHECK(u.support_size() == 5);
  CHECK(u.is_normalized());
  CHECK(u.values(3) == 0.2);
  CHECK_THROWS_AS(ProbVec::uniform(0), EmptyInput);
  CHECK_FALSE(probvec({0.5, 0.4}).is_normalized());
}

TEST_CASE("smoothing floors and renormalizes") {
  Vector w(3);
  w << 0.5, 0.5, 0.0;
  const Vector s = smoothed(w, 1e-8);
  CHECK(s(2) > 0.0);
  CHECK(s.sum() == doctest::Approx(1.0).epsilon(1e-12));

  const Vector z = smoothed(Vector::Zero(4), 1e-8);
  CHECK(z(0) == doctest::Approx(0.25).epsilon(1e-12));
}

TEST_CASE("visual restriction") {
  const TokenLayout layout = video_layout(2, 2, 1);
  const AttentionRow row = make_row({0.1, 0.2, 0.3, 0.2, 0.2});

  const ProbVec raw = restrict_to_visual(row, layout, false);
  CHECK(raw.support_size() == 4);
  CHECK(raw.values.sum() == doctest::Approx(0.8).epsilon(1e-15));
  CHECK(raw.values(2) == 0.3);

  const ProbVec norm = restrict_to_visual(row, layout, true);
  CHECK(norm.is_normalized());
  CHECK(norm.values(2) == doctest::Approx(0.3 / 0.8).epsilon(1e-15));

  const AttentionRow text_only = make_row({0.0, 0.0, 0.0, 0.0, 1.0});
  CHECK_THROWS_AS(restrict_to_visual(text_only, layout, true),
                  DegenerateDistribution);
  CHECK_NOTHROW(restrict_to_visual(text_only, layout, false));
}

TEST_CASE("entropy in nats") {
  CHECK(entropy(probvec({0.8, 0.2})) ==
        doctest::Approx(0.5004024235381879).epsilon(1e-14));
  // template form works on expressions
  Vector v(4);
  v << 0.5, 0.5, 0.25, 0.25;
  CHECK(entropy_nats(v.head(2)) == doctest::Approx(std::log(2.0)));
}

TEST_CASE("kl divergence") {
  const ProbVec p = probvec({0.75, 0.25});
  const ProbVec q = probvec({0.5, 0.5});
  CHECK(kl_divergence(p, q) ==
        doctest::Approx(0.13081203594113697).epsilon(1e-13));
  CHECK(kl_divergence(p, q) != kl_divergence(q, p));
  CHECK(kl_divergence(p, q) >= 0.0);

  CHECK_THROWS_AS(kl_divergence(p, ProbVec::uniform(3)), ShapeError);

  // Both arguments run through the same smoothing, so self-divergence is
  // exactly zero even when the support has holes.
  const ProbVec holey = probvec({1.0, 0.0});
  CHECK(kl_divergence(holey, holey) == 0.0);

  // A zero in q under positive p mass is finite but large after smoothing.
  const double d = kl_divergence(probvec({0.5, 0.5}), probvec({1.0, 0.0}));
  CHECK(std::isfinite(d));
  CHECK(d > 5.0);
}

TEST_CASE("kl matches a direct sum on random smooth inputs") {
  std::mt19937_64 rng(31);
  for (int trial = 0; trial < 50; ++trial) {
    const Index n = 2 + static_cast<Index>(rng() % 30);
    ProbVec p{random_distribution(rng, n)}, q{random_distribution(rng, n)};
    double direct = 0.0;
    for (Index i = 0; i < n; ++i)
      direct += p.values(i) * std::log(p.values(i) / q.values(i));
    CHECK(kl_divergence(p, q) == doctest::Approx(direct).epsilon(1e-12));
  }
}

TEST_CASE("sharpening") {
  const ProbVec p = probvec({0.8, 0.2});

  SUBCASE("tau one is the identity, bitwise") {
    const ProbVec s = sharpen(p, 1.0);
    CHECK(s.values(0) == p.values(0));
    CHECK(s.values(1) == p.values(1));
  }
  SUBCASE("tau below one concentrates, above one flattens") {
    CHECK(sharpen(p, 0.5).values(0) ==
          doctest::Approx(16.0 / 17.0).epsilon(1e-15));
    CHECK(sharpen(p, 0.5).values(0) > p.values(0));
    CHECK(sharpen(p, 2.0).values(0) < p.values(0));
    CHECK(sharpen(p, 2.0).values.sum() == doctest::Approx(1.0).epsilon(1e-14));
  }
  SUBCASE("a tiny tau approaches one-hot without overflow") {
    const ProbVec s = sharpen(p, 1e-3);
    CHECK(s.values(0) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(std::isfinite(s.values(1)));
  }
  SUBCASE("invalid inputs throw") {
    CHECK_THROWS_AS(sharpen(p, 0.0), DegenerateDistribution);
    CHECK_THROWS_AS(sharpen(p, -1.0), DegenerateDistribution);
    CHECK_THROWS_AS(sharpen(probvec({0.0, 0.0}), 0.5),
                    DegenerateDistribution);
  }
  SUBCASE("zeros stay zero") {
    const ProbVec s = sharpen(probvec({0.7, 0.0, 0.3}), 0.3);
    CHECK(s.values(1) == 0.0);
    CHECK(s.values.sum() == doctest::Approx(1.0).epsilon(1e-14));
  }
}
