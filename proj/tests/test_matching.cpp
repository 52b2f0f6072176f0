#include <catch2/catch_amalgamated.hpp>

#include "augmatch/matching.hpp"
#include "helpers.hpp"

using namespace augmatch;

namespace {

// random scores in (0,1) and a treatment vector with both arms >= m
std::pair<Eigen::VectorXd, Eigen::VectorXi> random_instance(int n, int m, std::uint64_t seed,
                                                            bool with_ties = false) {
  auto rng = make_rng(seed);
  std::uniform_real_distribution<double> u01(0.01, 0.99);
  Eigen::VectorXd scores(n);
  Eigen::VectorXi a(n);
  for (;;) {
    int n1 = 0;
    for (int i = 0; i < n; ++i) {
      scores[i] = with_ties ? std::round(u01(rng) * 20.0) / 20.0 : u01(rng);
      a[i] = u01(rng) < 0.5 ? 1 : 0;
      n1 += a[i];
    }
    if (n1 >= m && n - n1 >= m) return {scores, a};
  }
}

}  // namespace

TEST_CASE("two-unit instance") {
  Eigen::VectorXd s(2);
  s << 0.6, 0.5;
  Eigen::VectorXi a(2);
  a << 1, 0;
  const MatchResult r = match_1m(s, a, 1);
  CHECK(r.sets[0] == std::vector<int>{1});
  CHECK(r.sets[1] == std::vector<int>{0});
  CHECK(r.counts == std::vector<int>{1, 1});

  Eigen::VectorXd y(2);
  y << 3, 1;
  CHECK(ate_matching(y, a, r) == Catch::Approx(2.0));
}

TEST_CASE("nearest by inspection with reuse") {
  Eigen::VectorXd s(3);
  s << 0.1, 0.2, 0.9;
  Eigen::VectorXi a(3);
  a << 1, 0, 0;
  const MatchResult r = match_1m(s, a, 1);
  CHECK(r.sets[0] == std::vector<int>{1});
  CHECK(r.sets[1] == std::vector<int>{0});
  CHECK(r.sets[2] == std::vector<int>{0});
  CHECK(r.counts == std::vector<int>{2, 1, 0});
}

TEST_CASE("agrees with the exhaustive oracle") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const int m = 1 + static_cast<int>(seed % 3);
    const bool ties = seed % 2 == 0;
    const auto [s, a] = random_instance(500, m, seed + 100, ties);
    const MatchResult fast = match_1m(s, a, m);
    const MatchResult oracle = testutil::brute_force_match(s, a, m);
    REQUIRE(fast.sets == oracle.sets);
    REQUIRE(fast.counts == oracle.counts);
  }
}

TEST_CASE("count identities") {
  const auto [s, a] = random_instance(300, 2, 7);
  const MatchResult r = match_1m(s, a, 2);
  const int n = 300;
  int total = 0, over_treated = 0, over_controls = 0, n1 = 0;
  for (int i = 0; i < n; ++i) {
    REQUIRE(static_cast<int>(r.sets[i].size()) == 2);
    for (int j : r.sets[i]) REQUIRE(a[j] == 1 - a[i]);
    total += r.counts[i];
    (a[i] == 1 ? over_treated : over_controls) += r.counts[i];
    n1 += a[i];
  }
  CHECK(total == 2 * n);
  CHECK(over_controls == 2 * n1);        // controls matched to treated units
  CHECK(over_treated == 2 * (n - n1));
}

TEST_CASE("dual representations of psi agree") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto [s, a] = random_instance(200, 1, seed + 500);
    auto rng = make_rng(seed + 900);
    std::normal_distribution<double> norm;
    Eigen::VectorXd y(200);
    for (int i = 0; i < 200; ++i) y[i] = norm(rng);
    const MatchResult r = match_1m(s, a, 1);
    CHECK(std::fabs(ate_matching(y, a, r) - testutil::psi_via_sets(y, a, r)) <= 1e-12);
  }
}

TEST_CASE("constant outcome gives zero estimate") {
  const auto [s, a] = random_instance(100, 1, 3);
  const Eigen::VectorXd y = Eigen::VectorXd::Constant(100, 4.5);
  CHECK(std::fabs(ate_matching(y, a, match_1m(s, a, 1))) < 1e-12);
}

TEST_CASE("affine-transform invariance") {
  // nearest-neighbor sets depend on score distances, so invariance holds for
  // increasing affine maps; nonlinear monotone maps can re-rank distances
  const auto [s, a] = random_instance(250, 2, 11);
  const MatchResult base = match_1m(s, a, 2);

  Eigen::VectorXd affine = 2.0 * s.array() + 1.0;
  CHECK(match_1m(affine, a, 2).sets == base.sets);
  CHECK(match_1m(affine, a, 2).counts == base.counts);

  Eigen::VectorXd shifted = s.array() - 0.25;
  CHECK(match_1m(shifted, a, 2).sets == base.sets);
}

TEST_CASE("permutation symmetry of the estimator") {
  const auto [s, a] = random_instance(120, 1, 13);
  auto rng = make_rng(77);
  std::normal_distribution<double> norm;
  Eigen::VectorXd y(120);
  for (int i = 0; i < 120; ++i) y[i] = norm(rng);
  const double psi = ate_matching(y, a, match_1m(s, a, 1));

  std::vector<int> perm(120);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  Eigen::VectorXd s2(120), y2(120);
  Eigen::VectorXi a2(120);
  for (int i = 0; i < 120; ++i) {
    s2[i] = s[perm[i]];
    a2[i] = a[perm[i]];
    y2[i] = y[perm[i]];
  }
  const double psi2 = ate_matching(y2, a2, match_1m(s2, a2, 1));
  CHECK(psi2 == Catch::Approx(psi).margin(1e-12));
}

TEST_CASE("error paths") {
  Eigen::VectorXd s(3);
  s << 0.1, 0.2, 0.3;
  Eigen::VectorXi a(3);
  a << 1, 1, 0;
  CHECK_THROWS_AS(match_1m(s, a, 2), validation_error);  // only one control
  CHECK_THROWS_AS(match_1m(s, a, 0), validation_error);
  Eigen::VectorXd bad = s;
  bad[0] = std::nan("");
  CHECK_THROWS_AS(match_1m(bad, a, 1), validation_error);
}
