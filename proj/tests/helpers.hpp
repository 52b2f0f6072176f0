#ifndef AUGMATCH_TEST_HELPERS_HPP
#define AUGMATCH_TEST_HELPERS_HPP

#include <Eigen/Dense>
#include <algorithm>
#include <random>
#include <vector>

#include "augmatch/analytic.hpp"
#include "augmatch/data.hpp"
#include "augmatch/logit.hpp"
#include "augmatch/matching.hpp"
#include "augmatch/nuisance.hpp"

namespace testutil {

using namespace augmatch;

// ---------------------------------------------------------------------------
// matching oracle: exhaustive O(n^2) scan with the same tie rule
// (sort candidates by (distance, index), take the first m)
inline MatchResult brute_force_match(const Eigen::VectorXd& scores, const Eigen::VectorXi& a,
                                     int m) {
  const int n = static_cast<int>(scores.size());
  MatchResult res;
  res.m = m;
  res.sets.assign(n, {});
  res.counts.assign(n, 0);
  for (int i = 0; i < n; ++i) {
    std::vector<std::pair<double, int>> cand;
    for (int j = 0; j < n; ++j) {
      if (a[j] == 1 - a[i]) cand.push_back({std::fabs(scores[j] - scores[i]), j});
    }
    std::sort(cand.begin(), cand.end());
    for (int t = 0; t < m; ++t) res.sets[i].push_back(cand[t].second);
    std::sort(res.sets[i].begin(), res.sets[i].end());
    for (int j : res.sets[i]) ++res.counts[j];
  }
  return res;
}

// psi_n via the matched-set representation (the "first" representation)
inline double psi_via_sets(const Eigen::VectorXd& y, const Eigen::VectorXi& a,
                           const MatchResult& match) {
  const int n = static_cast<int>(y.size());
  double acc = 0.0;
  for (int i = 0; i < n; ++i) {
    double mean_match = 0.0;
    for (int j : match.sets[i]) mean_match += y[j];
    mean_match /= match.m;
    acc += (2.0 * a[i] - 1.0) * (y[i] - mean_match);
  }
  return acc / n;
}

// ---------------------------------------------------------------------------
// finite-difference derivatives of the logistic log-likelihood
inline Eigen::VectorXd fd_gradient(const DesignSpec& design, const Eigen::VectorXi& a,
                                   const Eigen::VectorXd& vartheta, double step = 1e-6) {
  Eigen::VectorXd g(vartheta.size());
  for (Eigen::Index j = 0; j < vartheta.size(); ++j) {
    Eigen::VectorXd hi = vartheta, lo = vartheta;
    hi[j] += step;
    lo[j] -= step;
    g[j] = (log_likelihood(design, a, hi) - log_likelihood(design, a, lo)) / (2.0 * step);
  }
  return g;
}

inline Eigen::MatrixXd fd_hessian(const DesignSpec& design, const Eigen::VectorXi& a,
                                  const Eigen::VectorXd& vartheta, double step = 1e-4) {
  const auto dim = vartheta.size();
  Eigen::MatrixXd h(dim, dim);
  for (Eigen::Index j = 0; j < dim; ++j) {
    Eigen::VectorXd hi = vartheta, lo = vartheta;
    hi[j] += step;
    lo[j] -= step;
    h.col(j) = (fd_gradient(design, a, hi, step) - fd_gradient(design, a, lo, step)) /
               (2.0 * step);
  }
  return (h + h.transpose()) / 2.0;
}

// grid-search oracle for a 1-covariate logistic fit: coarse-to-fine scan of
// the slope at resolution 1e-4, intercept profiled by bisection on its score
inline std::pair<double, double> grid_search_logit(const Eigen::VectorXd& x,
                                                   const Eigen::VectorXi& a) {
  const int n = static_cast<int>(x.size());
  auto profile_intercept = [&](double slope) {
    double lo = -30.0, hi = 30.0;
    for (int it = 0; it < 200; ++it) {
      const double mid = (lo + hi) / 2.0;
      double u = 0.0;
      for (int i = 0; i < n; ++i) u += a[i] - expit(mid + slope * x[i]);
      (u > 0.0 ? lo : hi) = mid;
    }
    return (lo + hi) / 2.0;
  };
  auto profile_ll = [&](double slope) {
    const double b0 = profile_intercept(slope);
    double ll = 0.0;
    for (int i = 0; i < n; ++i) {
      const double e = b0 + slope * x[i];
      const double m = e > 0.0 ? e : 0.0;
      ll += a[i] * e - m - std::log1p(std::exp(-std::fabs(e)));
    }
    return ll;
  };

  double best_slope = -10.0, best_ll = -std::numeric_limits<double>::infinity();
  for (double s = -10.0; s <= 10.0 + 1e-9; s += 0.01) {
    const double ll = profile_ll(s);
    if (ll > best_ll) {
      best_ll = ll;
      best_slope = s;
    }
  }
  for (double s = best_slope - 0.01; s <= best_slope + 0.01 + 1e-12; s += 1e-4) {
    const double ll = profile_ll(s);
    if (ll > best_ll) {
      best_ll = ll;
      best_slope = s;
    }
  }
  return {profile_intercept(best_slope), best_slope};
}

// ---------------------------------------------------------------------------
// random instances
inline Dataset random_dataset(int n, int p, std::uint64_t seed) {
  auto rng = make_rng(seed);
  std::normal_distribution<double> norm;
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  Eigen::MatrixXd v(n, p);
  Eigen::VectorXi a(n);
  Eigen::VectorXd y(n);
  int n1 = 0;
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < p; ++j) v(i, j) = norm(rng);
    a[i] = u01(rng) < 0.5 ? 1 : 0;
    n1 += a[i];
    y[i] = norm(rng) + a[i];
  }
  // both arms nonempty
  if (n1 == 0) a[0] = 1;
  if (n1 == n) a[0] = 0;
  return Dataset::make(std::move(v), std::move(a), std::move(y));
}

// ---------------------------------------------------------------------------
// oracle nuisances for the bivariate-Gaussian design with theta2 = 0:
// exact pi, linear mu, and the closed-form reduced regression
//   mu_bar(a, p) = c0 + c1 (logit(p) - theta0)/theta1.
inline NuisanceFit oracle_nuisances(const AnalyticDesign& dz) {
  if (dz.theta2 != 0.0) throw validation_error("oracle nuisances require theta2 = 0");
  NuisanceFit nf;
  nf.pi_fit.vartheta = Eigen::Vector3d(dz.theta0, dz.theta1, dz.theta2);
  nf.pi_fit.converged = true;
  const Eigen::Vector3d beta = dz.beta, gamma = dz.gamma;
  nf.mu[1] = [beta](const Eigen::RowVectorXd& v) {
    return beta[0] + beta[1] * v[0] + beta[2] * v[1];
  };
  nf.mu[0] = [gamma](const Eigen::RowVectorXd& v) {
    return gamma[0] + gamma[1] * v[0] + gamma[2] * v[1];
  };
  const double t0 = dz.theta0, t1 = dz.theta1;
  nf.mu_bar[1] = [beta, t0, t1](double p) {
    return beta[0] + beta[1] * (logit(p) - t0) / t1;
  };
  nf.mu_bar[0] = [gamma, t0, t1](double p) {
    return gamma[0] + gamma[1] * (logit(p) - t0) / t1;
  };
  return nf;
}

}  // namespace testutil

#endif  // AUGMATCH_TEST_HELPERS_HPP
