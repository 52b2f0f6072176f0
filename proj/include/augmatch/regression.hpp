#ifndef AUGMATCH_REGRESSION_HPP
#define AUGMATCH_REGRESSION_HPP

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "augmatch/common.hpp"

namespace augmatch {

enum class RegressorKind { linear, polynomial, knn, local_linear };

struct RegressorSpec {
  RegressorKind kind = RegressorKind::linear;
  int degree = 3;         // polynomial
  int k = 0;              // knn; 0 = ceil(n^0.7) capped at n/4
  double bandwidth = 0.0; // local_linear; 0 = Silverman rule

  static RegressorSpec linear() { return {RegressorKind::linear}; }
  static RegressorSpec polynomial(int degree) { return {RegressorKind::polynomial, degree}; }
  static RegressorSpec knn(int k = 0) { return {RegressorKind::knn, 0, k}; }
  static RegressorSpec local_linear(double bw = 0.0) {
    return {RegressorKind::local_linear, 0, 0, bw};
  }
};

namespace detail {

// all monomial exponent vectors over `dims` variables with total degree <= deg
inline std::vector<std::vector<int>> monomial_exponents(int dims, int deg) {
  std::vector<std::vector<int>> out;
  std::vector<int> cur(dims, 0);
  auto rec = [&](auto&& self, int pos, int left) -> void {
    if (pos == dims) {
      out.push_back(cur);
      return;
    }
    for (int e = 0; e <= left; ++e) {
      cur[pos] = e;
      self(self, pos + 1, left - e);
    }
    cur[pos] = 0;
  };
  rec(rec, 0, deg);
  return out;
}

inline double quantile_sorted(const std::vector<double>& sorted, double q) {
  const double pos = q * (sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = static_cast<std::size_t>(std::ceil(pos));
  const double frac = pos - lo;
  return sorted[lo] * (1.0 - frac) + sorted[hi] * frac;
}

}  // namespace detail

// Fitted mean regressor. Immutable after fit; predict is deterministic.
class Regressor {
 public:
  Regressor() = default;

  static Regressor fit(const Eigen::MatrixXd& x, const Eigen::VectorXd& y,
                       const RegressorSpec& spec) {
    if (x.rows() != y.size()) throw validation_error("regressor: length mismatch");
    if (x.rows() < 2) throw validation_error("regressor: need at least 2 observations");
    Regressor r;
    r.spec_ = spec;
    r.dims_ = static_cast<int>(x.cols());
    switch (spec.kind) {
      case RegressorKind::linear:
        r.fit_poly(x, y, 1, 0.0);
        break;
      case RegressorKind::polynomial:
        r.fit_poly(x, y, spec.degree, 1e-8);
        r.set_clamp(x);
        break;
      case RegressorKind::knn: {
        r.x_ = x;
        r.y_ = y;
        int k = spec.k;
        if (k <= 0) {
          k = static_cast<int>(std::ceil(std::pow(static_cast<double>(x.rows()), 0.7)));
          k = std::min<int>(k, static_cast<int>(x.rows()) / 4);
        }
        r.k_ = std::max(1, std::min<int>(k, static_cast<int>(x.rows())));
        break;
      }
      case RegressorKind::local_linear: {
        if (x.cols() != 1) throw validation_error("local_linear: univariate input only");
        r.x_ = x;
        r.y_ = y;
        double bw = spec.bandwidth;
        if (bw <= 0.0) {
          const double mean = x.col(0).mean();
          const double sd = std::sqrt((x.col(0).array() - mean).square().sum() /
                                      std::max<int>(1, static_cast<int>(x.rows()) - 1));
          bw = 1.06 * std::max(sd, 1e-12) * std::pow(static_cast<double>(x.rows()), -0.2);
        }
        r.bandwidth_ = bw;
        break;
      }
    }
    return r;
  }

  double predict(Eigen::RowVectorXd xr) const {
    if (xr.size() != dims_) throw validation_error("regressor: prediction dimension mismatch");
    switch (spec_.kind) {
      case RegressorKind::linear:
      case RegressorKind::polynomial: {
        if (!clamp_lo_.empty()) {
          for (int j = 0; j < dims_; ++j) {
            xr[j] = std::clamp(xr[j], clamp_lo_[j], clamp_hi_[j]);
          }
        }
        if (!center_.empty()) {
          for (int j = 0; j < dims_; ++j) xr[j] = (xr[j] - center_[j]) / scale_[j];
        }
        double acc = 0.0;
        for (std::size_t t = 0; t < exponents_.size(); ++t) {
          double term = coef_[static_cast<Eigen::Index>(t)];
          for (int j = 0; j < dims_; ++j) {
            for (int e = 0; e < exponents_[t][j]; ++e) term *= xr[j];
          }
          acc += term;
        }
        return acc;
      }
      case RegressorKind::knn: {
        std::vector<std::pair<double, int>> dist(x_.rows());
        for (int i = 0; i < x_.rows(); ++i) {
          dist[i] = {(x_.row(i) - xr).squaredNorm(), i};
        }
        std::nth_element(dist.begin(), dist.begin() + (k_ - 1), dist.end());
        double acc = 0.0;
        for (int i = 0; i < k_; ++i) acc += y_[dist[i].second];
        return acc / k_;
      }
      case RegressorKind::local_linear: {
        const double x0 = xr[0];
        double s0 = 0, s1 = 0, s2 = 0, t0 = 0, t1 = 0;
        for (int i = 0; i < x_.rows(); ++i) {
          const double u = (x_(i, 0) - x0) / bandwidth_;
          const double w = std::exp(-0.5 * u * u);
          const double dx = x_(i, 0) - x0;
          s0 += w;
          s1 += w * dx;
          s2 += w * dx * dx;
          t0 += w * y_[i];
          t1 += w * dx * y_[i];
        }
        const double det = s0 * s2 - s1 * s1;
        if (s0 <= 0.0) throw numerical_error("local_linear: zero kernel mass");
        if (std::fabs(det) < 1e-12 * std::max(1.0, s0 * s2)) return t0 / s0;
        return (s2 * t0 - s1 * t1) / det;
      }
    }
    throw numerical_error("regressor: unknown kind");
  }

  Eigen::VectorXd predict_many(const Eigen::MatrixXd& x) const {
    Eigen::VectorXd out(x.rows());
    for (int i = 0; i < x.rows(); ++i) out[i] = predict(x.row(i));
    return out;
  }

  const RegressorSpec& spec() const { return spec_; }
  const Eigen::VectorXd& coefficients() const { return coef_; }
  int input_dim() const { return dims_; }

 private:
  void fit_poly(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, int degree, double ridge) {
    exponents_ = detail::monomial_exponents(dims_, degree);
    const int terms = static_cast<int>(exponents_.size());
    if (ridge > 0.0) {
      // standardize inputs so the monomial basis stays well conditioned and
      // the ridge term does not distort the fit on narrow input ranges
      center_.resize(dims_);
      scale_.resize(dims_);
      for (int j = 0; j < dims_; ++j) {
        center_[j] = x.col(j).mean();
        const double sd = std::sqrt((x.col(j).array() - center_[j]).square().sum() /
                                    std::max<int>(1, static_cast<int>(x.rows()) - 1));
        scale_[j] = sd > 1e-12 ? sd : 1.0;
      }
    }
    Eigen::MatrixXd basis(x.rows(), terms);
    for (int i = 0; i < x.rows(); ++i) {
      for (int t = 0; t < terms; ++t) {
        double v = 1.0;
        for (int j = 0; j < dims_; ++j) {
          const double xij = center_.empty() ? x(i, j) : (x(i, j) - center_[j]) / scale_[j];
          for (int e = 0; e < exponents_[static_cast<std::size_t>(t)][j]; ++e) v *= xij;
        }
        basis(i, t) = v;
      }
    }
    if (ridge > 0.0) {
      Eigen::MatrixXd gram = basis.transpose() * basis;
      gram.diagonal().array() += ridge;
      coef_ = Eigen::LDLT<Eigen::MatrixXd>(gram).solve(basis.transpose() * y);
    } else {
      Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(basis);
      if (qr.rank() < terms) throw numerical_error("regressor: rank-deficient design");
      coef_ = qr.solve(y);
    }
  }

  void set_clamp(const Eigen::MatrixXd& x) {
    clamp_lo_.resize(dims_);
    clamp_hi_.resize(dims_);
    std::vector<double> col(x.rows());
    for (int j = 0; j < dims_; ++j) {
      for (int i = 0; i < x.rows(); ++i) col[i] = x(i, j);
      std::sort(col.begin(), col.end());
      clamp_lo_[j] = detail::quantile_sorted(col, 0.01);
      clamp_hi_[j] = detail::quantile_sorted(col, 0.99);
    }
  }

  RegressorSpec spec_;
  int dims_ = 0;
  // linear / polynomial
  std::vector<std::vector<int>> exponents_;
  Eigen::VectorXd coef_;
  std::vector<double> clamp_lo_, clamp_hi_;
  std::vector<double> center_, scale_;  // input standardization for ridge fits
  // knn / local_linear
  Eigen::MatrixXd x_;
  Eigen::VectorXd y_;
  int k_ = 0;
  double bandwidth_ = 0.0;
};

// K-fold cross-validated MSE selection across candidate specs.
inline Regressor fit_best(const Eigen::MatrixXd& x, const Eigen::VectorXd& y,
                          const std::vector<RegressorSpec>& candidates, int folds = 5,
                          std::uint64_t seed = 0) {
  if (candidates.empty()) throw validation_error("fit_best: no candidate specs");
  if (candidates.size() == 1) return Regressor::fit(x, y, candidates[0]);

  const int n = static_cast<int>(x.rows());
  folds = std::min(folds, n);
  std::vector<int> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  auto rng = make_rng(seed, 0xCF);
  std::shuffle(perm.begin(), perm.end(), rng);

  double best_mse = std::numeric_limits<double>::infinity();
  std::size_t best = 0;
  for (std::size_t c = 0; c < candidates.size(); ++c) {
    double sse = 0.0;
    int count = 0;
    bool failed = false;
    for (int f = 0; f < folds && !failed; ++f) {
      std::vector<int> tr, te;
      for (int i = 0; i < n; ++i) (i % folds == f ? te : tr).push_back(perm[i]);
      if (tr.size() < 2 || te.empty()) continue;
      Eigen::MatrixXd xt(tr.size(), x.cols());
      Eigen::VectorXd yt(tr.size());
      for (std::size_t i = 0; i < tr.size(); ++i) {
        xt.row(static_cast<Eigen::Index>(i)) = x.row(tr[i]);
        yt[static_cast<Eigen::Index>(i)] = y[tr[i]];
      }
      try {
        Regressor r = Regressor::fit(xt, yt, candidates[c]);
        for (int i : te) {
          const double e = r.predict(x.row(i)) - y[i];
          sse += e * e;
          ++count;
        }
      } catch (const std::exception&) {
        failed = true;
      }
    }
    if (failed || count == 0) continue;
    const double mse = sse / count;
    if (mse < best_mse) {
      best_mse = mse;
      best = c;
    }
  }
  if (!std::isfinite(best_mse)) {
    throw numerical_error("fit_best: every candidate failed cross-validation");
  }
  return Regressor::fit(x, y, candidates[best]);
}

}  // namespace augmatch

#endif  // AUGMATCH_REGRESSION_HPP
