#ifndef AUGMATCH_LOGIT_HPP
#define AUGMATCH_LOGIT_HPP

#include <Eigen/Dense>
#include <cmath>
#include <optional>
#include <string>

#include "augmatch/common.hpp"
#include "augmatch/data.hpp"

namespace augmatch {

// Design matrix for the (possibly augmented) logistic propensity model:
// columns are w = (1, v) plus an optional augmentation column h(w).
struct DesignSpec {
  Eigen::MatrixXd cols;

  static DesignSpec base(const Dataset& d) { return DesignSpec{d.w}; }

  static DesignSpec augmented(const Dataset& d, const Eigen::VectorXd& h) {
    if (h.size() != d.n()) throw validation_error("augmentation column length mismatch");
    DesignSpec s;
    s.cols.resize(d.n(), d.w.cols() + 1);
    s.cols.leftCols(d.w.cols()) = d.w;
    s.cols.col(d.w.cols()) = h;
    return s;
  }

  int n() const { return static_cast<int>(cols.rows()); }
  int dim() const { return static_cast<int>(cols.cols()); }
};

struct FitOptions {
  double tol = 1e-10;          // max-norm of the score vector
  int max_iter = 100;
  double separation_bound = 30.0;  // ||vartheta||_inf guard
  double cond_threshold = 1e10;    // rank check on r^T r
};

struct PropensityFit {
  Eigen::VectorXd vartheta;
  bool converged = false;
  int n_iter = 0;
  double grad_norm = 0.0;
  Eigen::VectorXd scores;  // fitted pi values, clamped into (0,1)

  struct Disc {
    double k;
    int n;
  };
  std::optional<Disc> disc;
};

// Sum-over-units score vector U(vartheta) = sum_i r_i (a_i - pi(r_i^T vartheta)).
inline Eigen::VectorXd score(const DesignSpec& design, const Eigen::VectorXi& a,
                             const Eigen::VectorXd& vartheta) {
  if (a.size() != design.n() || vartheta.size() != design.dim()) {
    throw validation_error("score: dimension mismatch");
  }
  Eigen::VectorXd eta = design.cols * vartheta;
  Eigen::VectorXd resid(design.n());
  for (int i = 0; i < design.n(); ++i) resid[i] = a[i] - expit(eta[i]);
  return design.cols.transpose() * resid;
}

// Sample average of pi (1-pi) r r^T at vartheta; the plug-in information matrix.
inline Eigen::MatrixXd fisher_info(const DesignSpec& design, const Eigen::VectorXd& vartheta) {
  if (vartheta.size() != design.dim()) throw validation_error("fisher_info: dimension mismatch");
  Eigen::VectorXd eta = design.cols * vartheta;
  Eigen::VectorXd wgt(design.n());
  for (int i = 0; i < design.n(); ++i) {
    const double pi = expit(eta[i]);
    wgt[i] = pi * (1.0 - pi);
  }
  Eigen::MatrixXd info =
      design.cols.transpose() * wgt.asDiagonal() * design.cols / static_cast<double>(design.n());
  return (info + info.transpose()) / 2.0;
}

inline double log_likelihood(const DesignSpec& design, const Eigen::VectorXi& a,
                             const Eigen::VectorXd& vartheta) {
  Eigen::VectorXd eta = design.cols * vartheta;
  double ll = 0.0;
  for (int i = 0; i < design.n(); ++i) {
    // a*log(pi) + (1-a)*log(1-pi) written stably via log1p(exp(-|eta|))
    const double e = eta[i];
    const double m = e > 0.0 ? e : 0.0;
    ll += a[i] * e - m - std::log1p(std::exp(-std::fabs(e)));
  }
  return ll;
}

inline void check_full_rank(const DesignSpec& design, double cond_threshold = 1e10) {
  Eigen::MatrixXd gram = design.cols.transpose() * design.cols;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(gram);
  const double lmax = es.eigenvalues().maxCoeff();
  const double lmin = es.eigenvalues().minCoeff();
  if (lmin <= 0.0 || lmax / lmin > cond_threshold) {
    throw numerical_error("design matrix rank-deficient (condition number above threshold)");
  }
}

// Newton-Raphson MLE with step-halving; the logistic likelihood is concave
// so accepted steps never decrease it.
inline PropensityFit fit_mle(const DesignSpec& design, const Eigen::VectorXi& a,
                             const FitOptions& opt = {}) {
  if (a.size() != design.n()) throw validation_error("fit_mle: dimension mismatch");
  const int n1 = a.sum();
  if (n1 == 0 || n1 == a.size()) throw validation_error("fit_mle: one treatment arm is empty");
  check_full_rank(design, opt.cond_threshold);

  Eigen::VectorXd vartheta = Eigen::VectorXd::Zero(design.dim());
  double ll = log_likelihood(design, a, vartheta);
  PropensityFit fit;

  // the score is a sum of n terms of column scale, so its floating-point
  // floor grows with the column mass; keep the tolerance above that floor
  const double col_mass = design.cols.cwiseAbs().colwise().sum().maxCoeff();
  const double tol = std::max(opt.tol, 1e-12 * col_mass);

  for (int iter = 1; iter <= opt.max_iter; ++iter) {
    Eigen::VectorXd u = score(design, a, vartheta);
    fit.grad_norm = u.lpNorm<Eigen::Infinity>();
    fit.n_iter = iter - 1;
    if (fit.grad_norm <= tol) {
      fit.converged = true;
      break;
    }
    Eigen::MatrixXd hess = fisher_info(design, vartheta) * static_cast<double>(design.n());
    Eigen::LDLT<Eigen::MatrixXd> ldlt(hess);
    if (ldlt.info() != Eigen::Success) {
      throw numerical_error("fit_mle: Hessian factorization failed");
    }
    Eigen::VectorXd step = ldlt.solve(u);

    double scale = 1.0;
    Eigen::VectorXd cand;
    double ll_new;
    // slack keeps the line search from stalling when the true improvement is
    // below the floating-point resolution of the log-likelihood
    const double slack = 1e-10 * (std::fabs(ll) + 1.0);
    for (int half = 0; half < 50; ++half) {
      cand = vartheta + scale * step;
      ll_new = log_likelihood(design, a, cand);
      if (ll_new >= ll - slack) break;
      scale /= 2.0;
    }
    vartheta = cand;
    ll = ll_new;
    if (vartheta.lpNorm<Eigen::Infinity>() > opt.separation_bound) {
      throw numerical_error("fit_mle: separation detected (coefficient norm diverging)");
    }
  }
  if (!fit.converged) {
    Eigen::VectorXd u = score(design, a, vartheta);
    fit.grad_norm = u.lpNorm<Eigen::Infinity>();
    fit.n_iter = opt.max_iter;
    if (fit.grad_norm <= tol) {
      fit.converged = true;
    } else {
      throw numerical_error("fit_mle: no convergence within iteration cap (grad norm " +
                            std::to_string(fit.grad_norm) + ")");
    }
  }

  fit.vartheta = vartheta;
  Eigen::VectorXd eta = design.cols * vartheta;
  fit.scores.resize(design.n());
  double max_resid = 0.0;
  for (int i = 0; i < design.n(); ++i) {
    const double pi = expit(eta[i]);
    fit.scores[i] = clamp_score(pi);
    max_resid = std::max(max_resid, std::fabs(a[i] - pi));
  }
  // a vanishing gradient with every unit classified almost perfectly is the
  // separated-likelihood plateau, not an interior maximum
  if (max_resid < 1e-3) {
    throw numerical_error("fit_mle: separation detected (perfect classification)");
  }
  return fit;
}

// Rounds each coefficient to the grid of spacing 1/(k sqrt(n)); half-integers
// round half-away-from-zero (std::round semantics).
inline Eigen::VectorXd discretize(const Eigen::VectorXd& vartheta, double k, int n) {
  if (!(k > 0.0)) throw validation_error("discretize: k must be positive");
  if (n < 1) throw validation_error("discretize: n must be >= 1");
  const double scale = k * std::sqrt(static_cast<double>(n));
  Eigen::VectorXd out(vartheta.size());
  for (Eigen::Index j = 0; j < vartheta.size(); ++j) out[j] = std::round(scale * vartheta[j]) / scale;
  return out;
}

inline Eigen::VectorXd fitted_scores(const DesignSpec& design, const Eigen::VectorXd& vartheta) {
  Eigen::VectorXd eta = design.cols * vartheta;
  Eigen::VectorXd s(design.n());
  for (int i = 0; i < design.n(); ++i) s[i] = clamp_score(expit(eta[i]));
  return s;
}

}  // namespace augmatch

#endif  // AUGMATCH_LOGIT_HPP
