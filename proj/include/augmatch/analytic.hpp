#ifndef AUGMATCH_ANALYTIC_HPP
#define AUGMATCH_ANALYTIC_HPP

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>
#include <cmath>
#include <vector>

#include "augmatch/common.hpp"

namespace augmatch {

// Bivariate-Gaussian design: W1, W2 iid N(0,1),
//   logit pi(w) = theta0 + theta1 w1 + theta2 w2,
//   E[Y|A=a,W=w] = a (beta . (1,w)) + (1-a) (gamma . (1,w)),  sd sigma.
struct AnalyticDesign {
  double theta0 = 0.0, theta1 = 1.0, theta2 = 0.0;
  Eigen::Vector3d beta{2.0, 1.0, 1.0};
  Eigen::Vector3d gamma{1.0, 1.0, 1.0};
  double sigma = 1.0;
  int m = 1;

  void validate() const {
    if (!(sigma > 0.0)) throw validation_error("analytic design: sigma must be positive");
    if (m < 1) throw validation_error("analytic design: m must be >= 1");
  }
};

// Gauss-Hermite nodes/weights (physicists' convention) via Golub-Welsch.
inline std::vector<std::pair<double, double>> gauss_hermite(int n) {
  Eigen::MatrixXd jac = Eigen::MatrixXd::Zero(n, n);
  for (int i = 1; i < n; ++i) {
    const double b = std::sqrt(i / 2.0);
    jac(i, i - 1) = b;
    jac(i - 1, i) = b;
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(jac);
  const double mu0 = std::sqrt(M_PI);
  std::vector<std::pair<double, double>> out(n);
  for (int i = 0; i < n; ++i) {
    const double w = mu0 * es.eigenvectors()(0, i) * es.eigenvectors()(0, i);
    out[i] = {es.eigenvalues()[i], w};
  }
  return out;
}

// E[f(Z)] for Z ~ N(0,1)
template <typename F>
double gauss_hermite_expectation(F&& f, int nodes = 64) {
  double acc = 0.0;
  for (const auto& [x, w] : gauss_hermite(nodes)) {
    acc += w * f(std::sqrt(2.0) * x);
  }
  return acc / std::sqrt(M_PI);
}

// E[pi(W)(1 - pi(W))] for pi = expit(theta0 + theta1 W1), W1 ~ N(0,1).
inline double e_pi_one_minus_pi(double theta0, double theta1, int nodes = 64) {
  if (theta1 == 0.0) {
    const double p = expit(theta0);  // constant integrand
    return p * (1.0 - p);
  }
  return gauss_hermite_expectation(
      [&](double z) {
        const double p = expit(theta0 + theta1 * z);
        return p * (1.0 - p);
      },
      nodes);
}

struct AnalyticQuantities {
  double sigma2_np = 0.0;
  double gain_empty = 0.0;
  double gain_h = 0.0;
  double sigma2_M = 0.0;
  double delta_M = 0.0;
  double sigma2_star = 0.0;  // sigma2_M - gain_empty
  double sigma2_opt = 0.0;   // sigma2_M - gain_h
};

// Closed forms for the precision-variable case (theta2 = 0, gamma2 = beta2):
//   sigma2_np   = 2 sigma^2 (1 + e^{theta1^2/2}) + (gamma1 - beta1)^2
//   gain(empty) = beta2^2 / E[pi(1-pi)]
//   gain(h0)    = 2 beta2^2 (1 + e^{theta1^2/2})
//   delta_M     = (sigma^2 + beta2^2)(1 + 2 e^{theta1^2/2}) / (2M)
//   sigma2_M    = sigma2_np + gain(h0) + delta_M
inline AnalyticQuantities analytic_quantities(const AnalyticDesign& dz, int nodes = 64) {
  dz.validate();
  if (dz.theta2 != 0.0 || dz.gamma[2] != dz.beta[2]) {
    throw validation_error(
        "analytic_quantities: closed forms require theta2 = 0 and gamma2 = beta2");
  }
  const double e_half = std::exp(dz.theta1 * dz.theta1 / 2.0);
  const double beta2 = dz.beta[2];
  const double s2 = dz.sigma * dz.sigma;

  AnalyticQuantities q;
  q.sigma2_np = 2.0 * s2 * (1.0 + e_half) +
                (dz.gamma[1] - dz.beta[1]) * (dz.gamma[1] - dz.beta[1]);
  q.gain_empty = beta2 * beta2 / e_pi_one_minus_pi(dz.theta0, dz.theta1, nodes);
  q.gain_h = 2.0 * beta2 * beta2 * (1.0 + e_half);
  q.delta_M = (s2 + beta2 * beta2) * (1.0 + 2.0 * e_half) / (2.0 * dz.m);
  q.sigma2_M = q.sigma2_np + q.gain_h + q.delta_M;
  q.sigma2_star = q.sigma2_M - q.gain_empty;
  q.sigma2_opt = q.sigma2_M - q.gain_h;
  return q;
}

// Relative efficiency of the unaugmented estimator versus its optimally
// augmented counterpart, in standardized coefficients (beta/sigma):
//   RE = 1 + b2^2 [2(1+e^{t1^2/2}) - 1/E(pi(1-pi))]
//              / [2(1+e^{t1^2/2}) + (g1-b1)^2 + (1+b2^2)(1+2e^{t1^2/2})/(2M)].
inline double relative_efficiency(double theta1, double beta2bar, double beta1bar,
                                  double gamma1bar, double theta0 = 0.0, int m = 1,
                                  int nodes = 64) {
  if (m < 1) throw validation_error("relative_efficiency: m must be >= 1");
  const double e_half = std::exp(theta1 * theta1 / 2.0);
  const double num =
      2.0 * (1.0 + e_half) - 1.0 / e_pi_one_minus_pi(theta0, theta1, nodes);
  const double den = 2.0 * (1.0 + e_half) + (gamma1bar - beta1bar) * (gamma1bar - beta1bar) +
                     (1.0 + beta2bar * beta2bar) * (1.0 + 2.0 * e_half) / (2.0 * m);
  return 1.0 + beta2bar * beta2bar * num / den;
}

}  // namespace augmatch

#endif  // AUGMATCH_ANALYTIC_HPP
