#include <cmath>
#include <stdexcept>

#include "doctest.h"
#include "fixtures/welch_fixtures.hpp"
#include "latentscale/analysis.hpp"
#include "latentscale/rng.hpp"
#include "oracles.hpp"

using namespace latentscale;
using analysis::Vectors;

namespace {

Vectors random_points(num::RngStream& rng, std::size_t n, std::size_t d, double scale = 1.0) {
  Vectors out(n, std::vector<double>(d));
  for (auto& row : out)
    for (auto& x : row) x = scale * rng.normal();
  return out;
}

// Random orthogonal matrix by Gram-Schmidt on Gaussian columns.
Vectors random_rotation(num::RngStream& rng, std::size_t d) {
  Vectors q = random_points(rng, d, d);
  for (std::size_t i = 0; i < d; ++i) {
    for (std::size_t k = 0; k < i; ++k) {
      double dot = 0.0;
      for (std::size_t j = 0; j < d; ++j) dot += q[i][j] * q[k][j];
      for (std::size_t j = 0; j < d; ++j) q[i][j] -= dot * q[k][j];
    }
    double n = 0.0;
    for (double x : q[i]) n += x * x;
    for (auto& x : q[i]) x /= std::sqrt(n);
  }
  return q;
}

}  // namespace

TEST_CASE("isoscore analytic anchors") {
  const auto iso = analysis::isoscore_from_eigenvalues({1.0, 1.0});
  CHECK(iso.delta == 0.0);
  CHECK(iso.phi == 1.0);
  CHECK(iso.score == 1.0);
  const auto aniso = analysis::isoscore_from_eigenvalues({1.0, 0.0});
  CHECK(aniso.delta == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(aniso.phi == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(std::abs(aniso.score) <= 1e-15);
  CHECK(analysis::isoscore_from_eigenvalues({1.0, -1e-12}).score == aniso.score);
  CHECK_THROWS_AS(analysis::isoscore_from_eigenvalues({0.0, 0.0}), std::invalid_argument);
}

TEST_CASE("isoscore of isotropic Gaussian samples") {
  num::RngStream rng(0, 1);
  const auto s = random_points(rng, 10000, 16);
  const auto r = analysis::isoscore_star(s);
  CHECK(r.score >= 0.95);
  CHECK_FALSE(r.rank_deficient);
  CHECK(r.eigenvalues.size() == 16u);
}

TEST_CASE("isoscore is rotation and shift invariant and matches the trace oracle") {
  num::RngStream rng(0, 2);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t d = 2 + rng.below(7);
    auto s = random_points(rng, 40, d);
    for (auto& row : s) row[0] *= 3.0;  // anisotropic
    const double base = analysis::isoscore_star(s).score;
    CHECK(std::abs(base - testing::oracle_isoscore(s)) <= 1e-9);
    const auto q = random_rotation(rng, d);
    Vectors rotated(s.size(), std::vector<double>(d, 0.0));
    for (std::size_t i = 0; i < s.size(); ++i)
      for (std::size_t a = 0; a < d; ++a)
        for (std::size_t b = 0; b < d; ++b) rotated[i][a] += q[a][b] * s[i][b];
    CHECK(std::abs(analysis::isoscore_star(rotated).score - base) <= 1e-9);
    for (auto& row : s)
      for (auto& x : row) x += 5.0;
    CHECK(std::abs(analysis::isoscore_star(s).score - base) <= 1e-9);
  }
}

TEST_CASE("isoscore input errors and rank deficiency flag") {
  CHECK_THROWS_AS(analysis::isoscore_star({{1.0, 2.0}}), std::invalid_argument);
  CHECK_THROWS_AS(analysis::isoscore_star({{1.0, 2.0}, {1.0, 2.0}}), std::invalid_argument);
  CHECK(analysis::isoscore_star({{1.0, 2.0, 0.0}, {0.0, 1.0, 3.0}}).rank_deficient);
}

TEST_CASE("hoyer values") {
  CHECK(analysis::hoyer(std::vector<double>{2.0, 2.0, 2.0, 2.0}) == 0.0);
  CHECK(analysis::hoyer(std::vector<double>{0.0, 1.0, 0.0, 0.0}) == doctest::Approx(1.0 / std::sqrt(3.0)));
  CHECK(analysis::hoyer(std::vector<double>{1.0, 1.0, 0.0, 0.0}) ==
        doctest::Approx((2.0 - std::sqrt(2.0)) / std::sqrt(3.0)));
  CHECK(analysis::hoyer(std::vector<double>{0.0, 1.0, 0.0, 0.0}, analysis::HoyerMode::standard) == doctest::Approx(1.0));
  CHECK_THROWS_AS(analysis::hoyer(std::vector<double>{0.0, 0.0}), std::invalid_argument);
  num::RngStream rng(0, 3);
  for (int k = 0; k < 50; ++k) {
    auto v = random_points(rng, 1, 2 + rng.below(30))[0];
    const double h = analysis::hoyer(v);
    CHECK(std::abs(h - testing::oracle_hoyer(v)) <= 1e-12);
    for (auto& x : v) x *= -3.7;
    CHECK(std::abs(analysis::hoyer(v) - h) <= 1e-12);
  }
}

TEST_CASE("dynamics anchors") {
  const auto two = analysis::dynamics({{-1.0, 0.0}, {1.0, 0.0}});
  CHECK(two.compactness == 1.0);
  CHECK(two.straightness == 1.0);
  CHECK(two.curvature == 0.0);
  const auto corner = analysis::dynamics({{0.0, 0.0}, {1.0, 0.0}, {1.0, 1.0}});
  CHECK(corner.curvature == doctest::Approx(M_PI / 2));
  CHECK(corner.straightness == doctest::Approx(std::sqrt(2.0) / 2));
  const auto still = analysis::dynamics({{1.0, 2.0}, {1.0, 2.0}, {1.0, 2.0}});
  CHECK(still.compactness == 0.0);
  CHECK(still.straightness == 0.0);
  CHECK(still.curvature == 0.0);
  CHECK(still.smoothness == doctest::Approx(1.0));
  CHECK_THROWS_AS(analysis::dynamics({{1.0, 2.0}}), std::invalid_argument);
  const auto line = analysis::dynamics({{0.0, 0.0}, {1.0, 1.0}, {3.0, 3.0}, {4.0, 4.0}});
  CHECK(line.straightness == doctest::Approx(1.0));
  const auto back_and_forth = analysis::dynamics({{0.0, 0.0}, {2.0, 0.0}, {1.0, 0.0}});
  CHECK(back_and_forth.straightness < 1.0);
  CHECK(back_and_forth.curvature == doctest::Approx(M_PI));
}

TEST_CASE("dynamics match brute-force oracles") {
  num::RngStream rng(0, 4);
  for (int k = 0; k < 100; ++k) {
    const auto p = random_points(rng, 2 + rng.below(8), 2 + rng.below(20), 1.0 + rng.uniform());
    const auto dyn = analysis::dynamics(p);
    CHECK(std::abs(dyn.compactness - testing::oracle_compactness(p)) <= 1e-9);
    CHECK(std::abs(dyn.curvature - testing::oracle_curvature(p)) <= 1e-9);
    CHECK(std::abs(dyn.smoothness - testing::oracle_smoothness(p)) <= 1e-9);
    CHECK(std::abs(dyn.straightness - testing::oracle_straightness(p)) <= 1e-9);
    CHECK(dyn.straightness <= 1.0 + 1e-15);
    CHECK(dyn.curvature >= 0.0);
    CHECK(dyn.smoothness >= -1.0);
    CHECK(dyn.smoothness <= 1.0);
  }
}

TEST_CASE("group comparison") {
  const std::vector<double> a{1.0, 2.0, 3.0};
  const std::vector<double> b{2.0, 3.0, 4.0};
  const auto r = analysis::group_compare(a, b);
  CHECK(r.cohens_d == doctest::Approx(-1.0));
  const auto same = analysis::group_compare(a, a);
  CHECK(same.cohens_d == 0.0);
  CHECK(same.p_value == doctest::Approx(1.0));
  CHECK_THROWS_AS(analysis::group_compare(std::vector<double>{1.0}, b), std::invalid_argument);
  CHECK_THROWS_AS(analysis::group_compare(std::vector<double>{1.0, 1.0}, std::vector<double>{2.0, 2.0}),
                  std::invalid_argument);
}

TEST_CASE("Welch p-values match the reference fixtures") {
  const auto& fixtures = welch_fixtures();
  REQUIRE(fixtures.size() == 50u);
  for (const auto& f : fixtures) {
    const auto r = analysis::group_compare(f.a, f.b);
    CHECK(r.t == doctest::Approx(f.t).epsilon(1e-9));
    CHECK(std::abs(r.p_value - f.p) <= 1e-6);
    CHECK(r.p_value >= 0.0);
    CHECK(r.p_value <= 1.0);
  }
}

TEST_CASE("majority answer tie-break") {
  CHECK(analysis::majority_answer({"5", "7", "7", "5"}) == "5");
  CHECK(analysis::majority_answer({"5", "7", "7"}) == "7");
  CHECK_THROWS(analysis::majority_answer({}));
}

TEST_CASE("labeled vector export round trip") {
  std::vector<analysis::LabeledVector> rows{{"p0/s1", 2, {0.1, -1.0 / 3.0, 1e-300}, 1, "entire"},
                                            {"p3/s0", 6, {2.5, 0.0, -7.0}, 0, "prm+"}};
  const auto text = analysis::export_labeled_vectors(rows);
  const auto back = analysis::import_labeled_vectors(text);
  REQUIRE(back.size() == rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    CHECK(back[i].vector == rows[i].vector);
    CHECK(back[i].he == rows[i].he);
    CHECK(back[i].step == rows[i].step);
    CHECK(back[i].group == rows[i].group);
  }
}
