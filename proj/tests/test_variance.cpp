#include <catch2/catch_amalgamated.hpp>

#include "augmatch/simulate.hpp"
#include "augmatch/variance.hpp"
#include "helpers.hpp"

using namespace augmatch;

namespace {

// nuisances with pi = 1/2 everywhere, constant per-arm means, for the
// closed-form checks
NuisanceFit flat_nuisances(int p, double mu0, double mu1) {
  NuisanceFit nf;
  nf.pi_fit.vartheta = Eigen::VectorXd::Zero(p + 1);
  nf.mu[0] = [mu0](const Eigen::RowVectorXd&) { return mu0; };
  nf.mu[1] = [mu1](const Eigen::RowVectorXd&) { return mu1; };
  nf.mu_bar[0] = [mu0](double) { return mu0; };
  nf.mu_bar[1] = [mu1](double) { return mu1; };
  return nf;
}

}  // namespace

TEST_CASE("strata are equal-count and bin_of is consistent") {
  std::vector<std::pair<double, int>> pi_idx;
  for (int i = 0; i < 10; ++i) pi_idx.push_back({0.1 * (i + 1), i});
  const Strata st = Strata::build(pi_idx, 3);
  REQUIRE(st.members.size() == 3);
  CHECK(st.members[0].size() + st.members[1].size() + st.members[2].size() == 10);
  for (std::size_t b = 0; b < st.members.size(); ++b) {
    for (int i : st.members[b]) {
      CHECK(st.bin_of(0.1 * (i + 1)) == static_cast<int>(b));
    }
  }
  CHECK(st.bin_of(99.0) == 2);  // beyond the last edge falls in the last bin
  CHECK(default_n_bins(1000) == 10);
}

TEST_CASE("estimate_sigma2_M at flat plug-ins matches closed forms") {
  const Dataset d = testutil::random_dataset(400, 2, 1);
  const NuisanceFit nf = flat_nuisances(2, 1.0, 3.0);
  const double s2 = 2.0;
  const auto sbar2 = [s2](int, double) { return s2; };

  const auto [s1, s2m] = estimate_sigma2_M(d, nf, 1, 2.0, sbar2);
  CHECK(s1 == Catch::Approx(4.0 * s2).margin(1e-12));          // 4 s^2
  CHECK(s2m == Catch::Approx(1.5 * s2).margin(1e-12));         // 1.5 s^2 / M

  SECTION("second component scales exactly as 1/M") {
    const auto [s1_4, s2m_4] = estimate_sigma2_M(d, nf, 4, 2.0, sbar2);
    CHECK(s1_4 == Catch::Approx(s1).margin(1e-14));
    CHECK(s2m / s2m_4 == Catch::Approx(4.0).margin(1e-12));
  }
  SECTION("m < 1 rejected") {
    CHECK_THROWS_AS(estimate_sigma2_M(d, nf, 0, 2.0, sbar2), validation_error);
  }
}

TEST_CASE("unaugmented plug-in variance tracks the scenario-2 population value") {
  // published theoretical variance (matching on the estimated score) is 42.62;
  // the plug-in target is sigma2_M - gain(empty)
  const Dataset d = gen_scenario(Scenario::table(2), 50000, 3);
  const NuisanceFit nf = fit_nuisances(d);
  const Eigen::VectorXd pi = nf.pi_all(d.v);
  const PiStratifiedVariance sbar2(d, pi, 0,
                                   [&nf](int arm, double p) { return nf.mu_bar_at(arm, p); });

  const Eigen::VectorXd scores = fitted_scores(DesignSpec::base(d), nf.pi_fit.vartheta);
  const double psi = ate_from_scores(d, scores, 1);
  const auto [s1, s2m] = estimate_sigma2_M(d, nf, 1, psi, std::cref(sbar2));
  const Eigen::VectorXd c = estimate_c_vector(d, nf);
  const double g = gain(c, fisher_info(DesignSpec::base(d), nf.pi_fit.vartheta));
  CHECK(s1 + s2m - g == Catch::Approx(42.62).epsilon(0.10));
}

TEST_CASE("c vector vanishes with a single covariate") {
  // pi strictly monotone in the only covariate: conditioning on pi fixes W,
  // so every conditional covariance (hence c) is near zero
  auto rng = make_rng(5);
  std::uniform_real_distribution<double> u(-2.0, 2.0);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  const int n = 10000;
  Eigen::MatrixXd v(n, 1);
  Eigen::VectorXi a(n);
  Eigen::VectorXd y(n);
  for (int i = 0; i < n; ++i) {
    v(i, 0) = u(rng);
    const double pi = expit(v(i, 0));
    a[i] = u01(rng) < pi ? 1 : 0;
    y[i] = v(i, 0);
  }
  const Dataset d = Dataset::make(std::move(v), std::move(a), std::move(y));

  NuisanceFit nf;
  nf.pi_fit.vartheta = Eigen::Vector2d(0.0, 1.0);
  for (int arm : {0, 1}) {
    nf.mu[arm] = [](const Eigen::RowVectorXd& w) { return w[0]; };
    nf.mu_bar[arm] = [](double p) { return logit(p); };
  }
  int skipped = 0;
  const Eigen::VectorXd c = estimate_c_vector(d, nf, nullptr, &skipped);
  // the equal-count stratification leaves O(n^{-1/3}) within-bin covariance,
  // ~0.01 here, on top of sampling noise
  CHECK(c.lpNorm<Eigen::Infinity>() <= 0.02);
  CHECK(skipped == 0);
}

TEST_CASE("gain closed forms") {
  SECTION("c = 0 gives 0") {
    CHECK(gain(Eigen::VectorXd::Zero(3), Eigen::MatrixXd::Identity(3, 3)) == 0.0);
  }
  SECTION("identity information") {
    Eigen::VectorXd c(2);
    c << 3.0, 4.0;
    CHECK(gain(c, Eigen::MatrixXd::Identity(2, 2)) == Catch::Approx(25.0).margin(1e-12));
  }
  SECTION("matches explicit inverse on random PD input") {
    auto rng = make_rng(7);
    std::normal_distribution<double> norm;
    for (int rep = 0; rep < 20; ++rep) {
      Eigen::MatrixXd b(4, 4);
      for (int i = 0; i < 4; ++i) {
        for (int j = 0; j < 4; ++j) b(i, j) = norm(rng);
      }
      const Eigen::MatrixXd info =
          b * b.transpose() + 0.5 * Eigen::MatrixXd::Identity(4, 4);
      Eigen::VectorXd c(4);
      for (int i = 0; i < 4; ++i) c[i] = norm(rng);
      const double expected = c.dot(info.inverse() * c);
      CHECK(gain(c, info) == Catch::Approx(expected).margin(1e-10));
    }
  }
  SECTION("non-PD information rejected") {
    Eigen::MatrixXd bad = -Eigen::MatrixXd::Identity(2, 2);
    CHECK_THROWS_AS(gain(Eigen::VectorXd::Ones(2), bad), numerical_error);
    CHECK_THROWS_AS(gain(Eigen::VectorXd::Ones(3), Eigen::MatrixXd::Identity(2, 2)),
                    validation_error);
  }
}

TEST_CASE("gain of the empty augmentation on the Gaussian design") {
  // the stratified route is unbiased but a single draw can carry several
  // percent of sampling noise, so compare the average over a few datasets
  AnalyticDesign dz;
  const NuisanceFit nf = testutil::oracle_nuisances(dz);
  double g_sum = 0.0;
  for (std::uint64_t seed : {11ull, 41ull, 43ull}) {
    const Dataset d = gen_scenario(Scenario::analytic_design(dz), 50000, seed);
    const Eigen::VectorXd c = estimate_c_vector(d, nf);
    g_sum += gain(c, fisher_info(DesignSpec::base(d), nf.pi_fit.vartheta));
  }
  const double target =
      dz.beta[2] * dz.beta[2] / e_pi_one_minus_pi(dz.theta0, dz.theta1);
  CHECK(g_sum / 3.0 == Catch::Approx(target).epsilon(0.05));
}

TEST_CASE("gain_h_direct") {
  AnalyticDesign dz;
  SECTION("zero for h identically zero") {
    const Dataset d = gen_scenario(Scenario::analytic_design(dz), 200, 13);
    auto nf = std::make_shared<NuisanceFit>(testutil::oracle_nuisances(dz));
    // make mu equal to mu_bar so the augmentation vanishes
    const NuisanceFit* raw = nf.get();
    for (int arm : {0, 1}) {
      nf->mu[arm] = [raw, arm](const Eigen::RowVectorXd& v) {
        return raw->mu_bar_at(arm, raw->pi_at(v));
      };
    }
    const AugmentationFn h{std::shared_ptr<const NuisanceFit>(nf)};
    CHECK(gain_h_direct(d, *nf, h) == Catch::Approx(0.0).margin(1e-20));
  }
  SECTION("recovers the closed form with oracle nuisances") {
    const Dataset d = gen_scenario(Scenario::analytic_design(dz), 50000, 17);
    auto nf = std::make_shared<const NuisanceFit>(testutil::oracle_nuisances(dz));
    const AugmentationFn h(nf);
    const double target =
        2.0 * dz.beta[2] * dz.beta[2] * (1.0 + std::exp(dz.theta1 * dz.theta1 / 2.0));
    CHECK(gain_h_direct(d, *nf, h) == Catch::Approx(target).epsilon(0.05));
  }
  SECTION("agrees with the c-vector route") {
    // the stratified route carries ~3% sampling noise per draw, so compare
    // the two routes on the average over a few independent datasets
    auto nf = std::make_shared<const NuisanceFit>(testutil::oracle_nuisances(dz));
    const AugmentationFn h(nf);
    Eigen::VectorXd vartheta(4);
    vartheta << dz.theta0, dz.theta1, dz.theta2, 0.0;
    double direct_sum = 0.0, routed_sum = 0.0;
    for (std::uint64_t seed : {19ull, 23ull, 29ull}) {
      const Dataset d = gen_scenario(Scenario::analytic_design(dz), 20000, seed);
      direct_sum += gain_h_direct(d, *nf, h);
      const Eigen::VectorXd c_aug = estimate_c_vector(d, *nf, &h);
      const Eigen::MatrixXd info = fisher_info(DesignSpec::augmented(d, h.evaluate(d.v)), vartheta);
      routed_sum += gain(c_aug, info);
    }
    CHECK(std::fabs(direct_sum - routed_sum) / direct_sum <= 0.10);
  }
}

TEST_CASE("np_bound") {
  SECTION("flat case gives 4 s^2") {
    const Dataset d = testutil::random_dataset(300, 2, 23);
    const NuisanceFit nf = flat_nuisances(2, 1.0, 3.0);
    const auto s2 = [](int, const Eigen::RowVectorXd&) { return 1.7; };
    CHECK(np_bound(d, nf, s2, 2.0) == Catch::Approx(4.0 * 1.7).margin(1e-12));
  }
  SECTION("Gaussian-design closed form") {
    AnalyticDesign dz;
    dz.beta << 2.0, 1.0, 1.0;
    dz.gamma << 1.0, 1.0, 1.0;  // gamma1 = beta1: bound is 2(1 + e^{1/2})
    const Dataset d = gen_scenario(Scenario::analytic_design(dz), 50000, 29);
    const NuisanceFit nf = testutil::oracle_nuisances(dz);
    const auto s2 = [](int, const Eigen::RowVectorXd&) { return 1.0; };
    const double target = 2.0 * (1.0 + std::exp(0.5));
    CHECK(np_bound(d, nf, s2, 1.0) == Catch::Approx(target).epsilon(0.05));
  }
  SECTION("scenario-2 published bound") {
    const Scenario sc = Scenario::table(2);
    const Dataset d = gen_scenario(sc, 50000, 31);
    NuisanceFit nf;
    nf.pi_fit.vartheta = sc.theta;
    const Eigen::Vector3d beta = sc.beta, gamma = sc.gamma;
    nf.mu[1] = [beta](const Eigen::RowVectorXd& v) {
      return beta[0] + beta[1] * v[0] + beta[2] * v[1];
    };
    nf.mu[0] = [gamma](const Eigen::RowVectorXd& v) {
      return gamma[0] + gamma[1] * v[0] + gamma[2] * v[1];
    };
    const auto s2 = [](int, const Eigen::RowVectorXd&) { return 1.0; };
    CHECK(np_bound(d, nf, s2, -2.0) == Catch::Approx(19.17).epsilon(0.10));
  }
}

TEST_CASE("delta_M plug-in recovers the Gaussian-design closed form") {
  AnalyticDesign dz;
  const Dataset d = gen_scenario(Scenario::analytic_design(dz), 20000, 37);
  const NuisanceFit nf = testutil::oracle_nuisances(dz);
  const auto s2 = [](int, const Eigen::RowVectorXd&) { return 1.0; };
  const PiStratifiedZeta zeta(d, nf);
  const double target = (dz.sigma * dz.sigma + dz.beta[2] * dz.beta[2]) *
                        (1.0 + 2.0 * std::exp(dz.theta1 * dz.theta1 / 2.0)) / 2.0;
  CHECK(estimate_delta_M(d, nf, 1, s2, zeta) == Catch::Approx(target).epsilon(0.10));
}

TEST_CASE("wald_ci") {
  SECTION("two-sigma interval") {
    const double level = 2.0 * (0.5 - std::erfc(2.0 / std::sqrt(2.0)) / 2.0);
    const auto [lo, hi] = wald_ci(0.0, 1.0, 1, level);
    CHECK(lo == Catch::Approx(-2.0).margin(1e-3));
    CHECK(hi == Catch::Approx(2.0).margin(1e-3));
  }
  SECTION("zero variance degenerates") {
    const auto [lo, hi] = wald_ci(1.5, 0.0, 100, 0.95);
    CHECK(lo == 1.5);
    CHECK(hi == 1.5);
  }
  SECTION("published augmented analysis interval") {
    const double se = 0.025;
    const auto [lo, hi] = wald_ci(-0.04, se * se, 1, 0.95);
    CHECK(lo == Catch::Approx(-0.089).margin(5e-4));
    CHECK(hi == Catch::Approx(0.009).margin(5e-4));
  }
  SECTION("invalid inputs") {
    CHECK_THROWS_AS(wald_ci(0.0, -1.0, 10, 0.95), validation_error);
    CHECK_THROWS_AS(wald_ci(0.0, 1.0, 10, 1.5), validation_error);
    CHECK_THROWS_AS(wald_ci(0.0, 1.0, 0, 0.95), validation_error);
  }
}
