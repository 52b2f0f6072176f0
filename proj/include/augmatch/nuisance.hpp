#ifndef AUGMATCH_NUISANCE_HPP
#define AUGMATCH_NUISANCE_HPP

#include <Eigen/Dense>
#include <array>
#include <functional>
#include <memory>
#include <vector>

#include "augmatch/common.hpp"
#include "augmatch/data.hpp"
#include "augmatch/logit.hpp"
#include "augmatch/regression.hpp"

namespace augmatch {

struct NuisanceOptions {
  // stand-in for the ensemble learner: candidates selected by k-fold CV MSE
  std::vector<RegressorSpec> mu_stack = {RegressorSpec::linear(), RegressorSpec::polynomial(3)};
  std::vector<RegressorSpec> mu_bar_stack = {RegressorSpec::polynomial(3)};
  int cv_folds = 5;
  std::uint64_t seed = 0;
};

// Fitted nuisances of Algorithm steps 3-5: outcome regressions mu(a,.) on the
// covariates, propensity-reduced regressions mu_bar(a,.) on the fitted score,
// and the base (unaugmented) propensity fit. The callables allow externally
// supplied (e.g. closed-form) nuisances behind the same interface.
struct NuisanceFit {
  std::array<std::function<double(const Eigen::RowVectorXd&)>, 2> mu;
  std::array<std::function<double(double)>, 2> mu_bar;  // input: propensity value
  PropensityFit pi_fit;  // base model fit backing pi_at

  // pi evaluated at a covariate row (without intercept), clamped
  double pi_at(const Eigen::RowVectorXd& v_row) const {
    double eta = pi_fit.vartheta[0];
    for (int j = 0; j < v_row.size(); ++j) eta += pi_fit.vartheta[j + 1] * v_row[j];
    return clamp_score(expit(eta));
  }

  Eigen::VectorXd pi_all(const Eigen::MatrixXd& v) const {
    Eigen::VectorXd out(v.rows());
    for (int i = 0; i < v.rows(); ++i) out[i] = pi_at(v.row(i));
    return out;
  }

  double mu_at(int arm, const Eigen::RowVectorXd& v_row) const { return mu[arm](v_row); }

  double mu_bar_at(int arm, double pi) const { return mu_bar[arm](pi); }

  static std::function<double(const Eigen::RowVectorXd&)> wrap(Regressor r) {
    auto ptr = std::make_shared<const Regressor>(std::move(r));
    return [ptr](const Eigen::RowVectorXd& x) { return ptr->predict(x); };
  }

  static std::function<double(double)> wrap_scalar(Regressor r) {
    auto ptr = std::make_shared<const Regressor>(std::move(r));
    return [ptr](double p) {
      Eigen::RowVectorXd x(1);
      x[0] = p;
      return ptr->predict(x);
    };
  }
};

namespace detail {

inline std::vector<int> arm_indices(const Dataset& d, int arm) {
  std::vector<int> idx;
  for (int i = 0; i < d.n(); ++i) {
    if (d.a[i] == arm) idx.push_back(i);
  }
  return idx;
}

}  // namespace detail

// Regress Y on the covariates within the given arm.
inline Regressor fit_outcome_regression(const Dataset& d, int arm,
                                        const std::vector<RegressorSpec>& stack,
                                        int cv_folds = 5, std::uint64_t seed = 0) {
  const auto idx = detail::arm_indices(d, arm);
  if (idx.size() < 2) throw validation_error("fit_outcome_regression: arm too small");
  Eigen::MatrixXd x(idx.size(), d.p());
  Eigen::VectorXd y(idx.size());
  for (std::size_t r = 0; r < idx.size(); ++r) {
    x.row(static_cast<Eigen::Index>(r)) = d.v.row(idx[r]);
    y[static_cast<Eigen::Index>(r)] = d.y[idx[r]];
  }
  return fit_best(x, y, stack, cv_folds, seed);
}

inline Regressor fit_outcome_regression(const Dataset& d, int arm, const RegressorSpec& spec) {
  return fit_outcome_regression(d, arm, std::vector<RegressorSpec>{spec});
}

// Nested reduced regression: the responses are the fitted values mu(arm, W_i),
// not the raw outcomes, regressed on the fitted score within the arm.
inline Regressor fit_reduced_regression(const Dataset& d, int arm, const Regressor& mu,
                                        const PropensityFit& pi_fit,
                                        const std::vector<RegressorSpec>& stack,
                                        int cv_folds = 5, std::uint64_t seed = 0) {
  const auto idx = detail::arm_indices(d, arm);
  if (idx.size() < 2) throw validation_error("fit_reduced_regression: arm too small");
  Eigen::MatrixXd p(idx.size(), 1);
  Eigen::VectorXd resp(idx.size());
  for (std::size_t r = 0; r < idx.size(); ++r) {
    const int i = idx[r];
    double eta = pi_fit.vartheta[0];
    for (int j = 0; j < d.p(); ++j) eta += pi_fit.vartheta[j + 1] * d.v(i, j);
    p(static_cast<Eigen::Index>(r), 0) = clamp_score(expit(eta));
    resp[static_cast<Eigen::Index>(r)] = mu.predict(d.v.row(i));
  }
  const double p_range = p.col(0).maxCoeff() - p.col(0).minCoeff();
  const double r_range = resp.maxCoeff() - resp.minCoeff();
  if (p_range < 1e-12) {
    if (r_range > 1e-9) {
      throw numerical_error("fit_reduced_regression: degenerate propensity values");
    }
    return Regressor::fit(p, resp, RegressorSpec::polynomial(0));
  }
  return fit_best(p, resp, stack, cv_folds, seed);
}

inline Regressor fit_reduced_regression(const Dataset& d, int arm, const Regressor& mu,
                                        const PropensityFit& pi_fit, const RegressorSpec& spec) {
  return fit_reduced_regression(d, arm, mu, pi_fit, std::vector<RegressorSpec>{spec});
}

inline NuisanceFit fit_nuisances(const Dataset& d, const NuisanceOptions& opt = {}) {
  NuisanceFit nf;
  nf.pi_fit = fit_mle(DesignSpec::base(d), d.a);
  for (int arm : {0, 1}) {
    Regressor mu = fit_outcome_regression(d, arm, opt.mu_stack, opt.cv_folds, opt.seed + arm);
    Regressor mu_bar = fit_reduced_regression(d, arm, mu, nf.pi_fit, opt.mu_bar_stack,
                                              opt.cv_folds, opt.seed + 2 + arm);
    nf.mu[arm] = NuisanceFit::wrap(std::move(mu));
    nf.mu_bar[arm] = NuisanceFit::wrap_scalar(std::move(mu_bar));
  }
  return nf;
}

// The estimated optimal augmentation covariate
//   h(w) = {mu(1,w) - mu_bar(1,pi(w))}/pi(w) + {mu(0,w) - mu_bar(0,pi(w))}/{1-pi(w)},
// with the score clamp keeping both denominators away from zero.
class AugmentationFn {
 public:
  explicit AugmentationFn(std::shared_ptr<const NuisanceFit> nf) : nf_(std::move(nf)) {}

  double operator()(const Eigen::RowVectorXd& v_row) const {
    const double pi = nf_->pi_at(v_row);
    return (nf_->mu_at(1, v_row) - nf_->mu_bar_at(1, pi)) / pi +
           (nf_->mu_at(0, v_row) - nf_->mu_bar_at(0, pi)) / (1.0 - pi);
  }

  Eigen::VectorXd evaluate(const Eigen::MatrixXd& v) const {
    Eigen::VectorXd out(v.rows());
    for (int i = 0; i < v.rows(); ++i) out[i] = (*this)(v.row(i));
    return out;
  }

  const NuisanceFit& nuisances() const { return *nf_; }

  double mean = 0.0;      // diagnostics over the fitting sample
  double variance = 0.0;

 private:
  std::shared_ptr<const NuisanceFit> nf_;
};

inline AugmentationFn build_h(std::shared_ptr<const NuisanceFit> nf, const Dataset& fit_sample) {
  AugmentationFn h(std::move(nf));
  const Eigen::VectorXd vals = h.evaluate(fit_sample.v);
  h.mean = vals.mean();
  h.variance = (vals.array() - h.mean).square().sum() / std::max(1, fit_sample.n() - 1);
  return h;
}

inline AugmentationFn build_h(const NuisanceFit& nf, const Dataset& fit_sample) {
  return build_h(std::make_shared<const NuisanceFit>(nf), fit_sample);
}

}  // namespace augmatch

#endif  // AUGMATCH_NUISANCE_HPP
