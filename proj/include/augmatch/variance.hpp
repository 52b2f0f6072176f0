#ifndef AUGMATCH_VARIANCE_HPP
#define AUGMATCH_VARIANCE_HPP

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <functional>
#include <optional>
#include <vector>

#include "augmatch/common.hpp"
#include "augmatch/data.hpp"
#include "augmatch/logit.hpp"
#include "augmatch/nuisance.hpp"

namespace augmatch {

// Equal-count strata of units over their propensity values; conditional
// moments given pi are within-stratum sample moments.
struct Strata {
  std::vector<double> upper;              // inclusive upper pi edge per bin
  std::vector<std::vector<int>> members;  // original unit indices per bin

  static Strata build(std::vector<std::pair<double, int>> pi_idx, int n_bins) {
    std::sort(pi_idx.begin(), pi_idx.end());
    const int total = static_cast<int>(pi_idx.size());
    n_bins = std::max(1, std::min(n_bins, total));
    Strata s;
    s.members.resize(n_bins);
    s.upper.resize(n_bins);
    for (int b = 0; b < n_bins; ++b) {
      const int lo = b * total / n_bins;
      const int hi = (b + 1) * total / n_bins;
      for (int r = lo; r < hi; ++r) s.members[b].push_back(pi_idx[r].second);
      s.upper[b] = pi_idx[hi - 1].first;
    }
    return s;
  }

  int bin_of(double pi) const {
    const auto it = std::lower_bound(upper.begin(), upper.end(), pi);
    return it == upper.end() ? static_cast<int>(upper.size()) - 1
                             : static_cast<int>(it - upper.begin());
  }
};

inline int default_n_bins(int n) {
  return static_cast<int>(std::ceil(std::cbrt(static_cast<double>(n))));
}

// sigma_bar^2(a, p): strata of pi over all units, within-bin variance of Y
// over the arm-a members of the bin.
//
// Two refinements over the naive "within-arm bins of Y" estimator, both
// needed because sigma_bar^2(a, p) enters the variance plug-ins weighted by
// 1/p and 1/(1-p) and is therefore queried most heavily at p values where
// arm a itself has almost no data:
//  - pooled strata: bins are formed from every unit's pi, so the bin serving
//    an extreme-p query is centered at that p. Within-arm bins place such a
//    query into the arm's outermost bin, whose members sit at much more
//    moderate p, silently extrapolating their (often larger) variance into
//    the tail.
//  - residual centering: when a fitted conditional mean mu_bar(a, p) is
//    supplied, the variance is taken over Y - mu_bar(a, pi) instead of Y,
//    removing the drift of the conditional mean across the bin that would
//    otherwise inflate the estimate in wide bins.
// Bins with fewer than 2 arm-a members borrow the nearest usable bin of the
// same arm; an arm with no usable bin at all falls back to its whole-arm
// variance.
class PiStratifiedVariance {
 public:
  using ConditionalMeanFn = std::function<double(int arm, double pi)>;

  PiStratifiedVariance(const Dataset& d, const Eigen::VectorXd& pi, int n_bins = 0,
                       const ConditionalMeanFn& mu_bar = {}) {
    if (n_bins <= 0) n_bins = default_n_bins(d.n());
    std::vector<std::pair<double, int>> pi_idx;
    for (int i = 0; i < d.n(); ++i) pi_idx.push_back({pi[i], i});
    strata_ = Strata::build(std::move(pi_idx), n_bins);
    const int n_b = static_cast<int>(strata_.members.size());
    for (int arm : {0, 1}) {
      std::vector<double> resid(d.n(), 0.0);
      double sum = 0.0, sum2 = 0.0;
      int cnt = 0;
      for (int i = 0; i < d.n(); ++i) {
        if (d.a[i] != arm) continue;
        resid[i] = mu_bar ? d.y[i] - mu_bar(arm, pi[i]) : d.y[i];
        sum += resid[i];
        sum2 += resid[i] * resid[i];
        ++cnt;
      }
      if (cnt < 2) throw validation_error("PiStratifiedVariance: arm too small");
      const double whole_arm = std::max(0.0, (sum2 - sum * sum / cnt) / (cnt - 1));
      var_[arm].assign(n_b, -1.0);
      for (int b = 0; b < n_b; ++b) {
        double m = 0.0;
        int k = 0;
        for (int i : strata_.members[b]) {
          if (d.a[i] != arm) continue;
          m += resid[i];
          ++k;
        }
        if (k < 2) continue;
        m /= k;
        double v = 0.0;
        for (int i : strata_.members[b]) {
          if (d.a[i] == arm) v += (resid[i] - m) * (resid[i] - m);
        }
        var_[arm][b] = v / (k - 1);
      }
      for (int b = 0; b < n_b; ++b) {
        if (var_[arm][b] >= 0.0) continue;
        double nearest = whole_arm;
        for (int k = 1; k < n_b; ++k) {
          if (b - k >= 0 && var_[arm][b - k] >= 0.0) { nearest = var_[arm][b - k]; break; }
          if (b + k < n_b && var_[arm][b + k] >= 0.0) { nearest = var_[arm][b + k]; break; }
        }
        var_[arm][b] = nearest;
      }
    }
  }

  double operator()(int arm, double pi) const { return var_[arm][strata_.bin_of(pi)]; }

 private:
  Strata strata_;
  std::vector<double> var_[2];
};

using ConditionalVarianceFn = std::function<double(int arm, double pi)>;

// Plug-ins of the two components of sigma^2_M, averaged over the sample:
//   sigma^2_1   = E[ sbar2(1,pi)/pi + sbar2(0,pi)/(1-pi)
//                    + {mu_bar(1,pi) - mu_bar(0,pi) - psi}^2 ]
//   sigma^2_2,M = (2M)^{-1} E[ sbar2(1,pi)(1/pi - pi)
//                              + sbar2(0,pi)(1/(1-pi) - 1 + pi) ]
inline std::pair<double, double> estimate_sigma2_M(const Dataset& d, const NuisanceFit& nf,
                                                   int m, double psi_hat,
                                                   const ConditionalVarianceFn& sbar2) {
  if (m < 1) throw validation_error("estimate_sigma2_M: m must be >= 1");
  double s1 = 0.0, s2 = 0.0;
  for (int i = 0; i < d.n(); ++i) {
    const double pi = nf.pi_at(d.v.row(i));
    const double v1 = sbar2(1, pi);
    const double v0 = sbar2(0, pi);
    const double gap = nf.mu_bar_at(1, pi) - nf.mu_bar_at(0, pi) - psi_hat;
    s1 += v1 / pi + v0 / (1.0 - pi) + gap * gap;
    s2 += v1 * (1.0 / pi - pi) + v0 * (1.0 / (1.0 - pi) - 1.0 + pi);
  }
  return {s1 / d.n(), s2 / (2.0 * m * d.n())};
}

namespace detail {

// basis for conditional covariances as functions of p, expressed on the
// pi(1-pi)-stabilized scale: {s, s p, s p^2} spans a smooth bounded
// covariance (quadratic in p) and {1, p} spans the stabilized image of the
// 1/p and 1/(1-p) blow-ups that optimal augmentation covariates carry by
// construction (p(1-p)/p = 1-p and p(1-p)/(1-p) = p are both in span{1, p})
inline constexpr int cov_basis_size = 5;

inline Eigen::VectorXd cov_basis(double p, int k) {
  Eigen::VectorXd b(k);
  const double s = p * (1.0 - p);
  if (k > 0) b[0] = s;
  if (k > 1) b[1] = 1.0;
  if (k > 2) b[2] = p;
  if (k > 3) b[3] = s * p;
  if (k > 4) b[4] = s * p * p;
  return b;
}

}  // namespace detail

// Plug-in of the c vector (optionally extended by the augmentation column):
//   c = E[ pi cov(r, mu(0,.) | A=0, pi) + (1-pi) cov(r, mu(1,.) | A=1, pi) ],
// with conditional covariances from within-arm pi strata. The within-bin
// cross-moments are stabilized by pi(1-pi) and then pooled across bins by a
// least-squares fit on a small basis; treating the bins as piecewise
// constant instead systematically underestimates covariances that grow near
// the pi boundary. Strata with fewer than 2 units contribute nothing; their
// count is reported when requested.
inline Eigen::VectorXd estimate_c_vector(const Dataset& d, const NuisanceFit& nf,
                                         const AugmentationFn* aug = nullptr,
                                         int* skipped_strata = nullptr, int n_bins = 0) {
  const int n = d.n();
  if (n_bins <= 0) n_bins = default_n_bins(n);
  const int dim = d.p() + 1 + (aug != nullptr ? 1 : 0);

  Eigen::VectorXd pi(n);
  Eigen::MatrixXd r(n, dim);
  for (int i = 0; i < n; ++i) {
    pi[i] = nf.pi_at(d.v.row(i));
    r(i, 0) = 1.0;
    r.block(i, 1, 1, d.p()) = d.v.row(i);
    if (aug != nullptr) r(i, dim - 1) = (*aug)(d.v.row(i));
  }

  int skipped = 0;
  Eigen::MatrixXd coef[2];  // basis-coefficient matrix per arm (k x dim)
  int k_arm[2] = {0, 0};
  for (int arm : {0, 1}) {
    std::vector<std::pair<double, int>> pi_idx;
    for (int i = 0; i < n; ++i) {
      if (d.a[i] == arm) pi_idx.push_back({pi[i], i});
    }
    if (pi_idx.empty()) throw validation_error("estimate_c_vector: empty arm");
    const Strata st = Strata::build(std::move(pi_idx), n_bins);

    std::vector<double> cent;
    std::vector<Eigen::VectorXd> phi;
    for (const auto& mem : st.members) {
      if (mem.size() < 2) {
        ++skipped;
        continue;
      }
      Eigen::VectorXd r_mean = Eigen::VectorXd::Zero(dim);
      double mu_mean = 0.0, pi_mean = 0.0;
      std::vector<double> mu_vals(mem.size());
      for (std::size_t t = 0; t < mem.size(); ++t) {
        mu_vals[t] = nf.mu_at(arm, d.v.row(mem[t]));
        mu_mean += mu_vals[t];
        pi_mean += pi[mem[t]];
        r_mean += r.row(mem[t]).transpose();
      }
      mu_mean /= mem.size();
      pi_mean /= static_cast<double>(mem.size());
      r_mean /= static_cast<double>(mem.size());
      Eigen::VectorXd acc = Eigen::VectorXd::Zero(dim);
      for (std::size_t t = 0; t < mem.size(); ++t) {
        const double p = pi[mem[t]];
        acc += p * (1.0 - p) * (r.row(mem[t]).transpose() - r_mean) * (mu_vals[t] - mu_mean);
      }
      phi.push_back(acc / static_cast<double>(mem.size() - 1));
      cent.push_back(pi_mean);
    }
    if (phi.empty()) throw numerical_error("estimate_c_vector: no usable strata in an arm");

    const int n_usable = static_cast<int>(cent.size());
    const int k = std::min(detail::cov_basis_size, n_usable);
    k_arm[arm] = k;
    Eigen::MatrixXd x(n_usable, k);
    Eigen::MatrixXd y(n_usable, dim);
    for (int b = 0; b < n_usable; ++b) {
      x.row(b) = detail::cov_basis(cent[b], k).transpose();
      y.row(b) = phi[static_cast<std::size_t>(b)].transpose();
    }
    Eigen::MatrixXd gram = x.transpose() * x;
    // tiny ridge keeps the solve well-posed when the pi range is narrow and
    // the basis columns become collinear; fitted values are unaffected
    gram.diagonal().array() += 1e-10 * gram.trace();
    coef[arm] = Eigen::LDLT<Eigen::MatrixXd>(gram).solve(x.transpose() * y);
  }
  if (skipped_strata != nullptr) *skipped_strata = skipped;

  Eigen::VectorXd c = Eigen::VectorXd::Zero(dim);
  for (int i = 0; i < n; ++i) {
    const double p = pi[i];
    const double s = p * (1.0 - p);
    c += p * (coef[0].transpose() * detail::cov_basis(p, k_arm[0])) / s;
    c += (1.0 - p) * (coef[1].transpose() * detail::cov_basis(p, k_arm[1])) / s;
  }
  return c / n;
}

// gain(q) = c^T I^{-1} c via a symmetric positive-definite solve.
inline double gain(const Eigen::VectorXd& c, const Eigen::MatrixXd& info) {
  if (info.rows() != info.cols() || info.rows() != c.size()) {
    throw validation_error("gain: dimension mismatch");
  }
  Eigen::LLT<Eigen::MatrixXd> llt(info);
  if (llt.info() != Eigen::Success) {
    throw numerical_error("gain: information matrix not positive definite");
  }
  return c.dot(llt.solve(c));
}

// Direct route for the optimal gain: sample average of pi (1-pi) h^2.
inline double gain_h_direct(const Dataset& d, const NuisanceFit& nf, const AugmentationFn& aug) {
  double acc = 0.0;
  for (int i = 0; i < d.n(); ++i) {
    const double pi = nf.pi_at(d.v.row(i));
    const double h = aug(d.v.row(i));
    acc += pi * (1.0 - pi) * h * h;
  }
  return acc / d.n();
}

// Nonparametric efficiency bound plug-in:
//   E[ s2(1,W)/pi + s2(0,W)/(1-pi) + {mu(1,W) - mu(0,W) - psi}^2 ].
// The mean term uses the treatment-effect contrast.
inline double np_bound(const Dataset& d, const NuisanceFit& nf,
                       const std::function<double(int arm, const Eigen::RowVectorXd&)>& s2,
                       double psi_hat) {
  double acc = 0.0;
  for (int i = 0; i < d.n(); ++i) {
    const auto v_row = d.v.row(i);
    const double pi = nf.pi_at(v_row);
    const double gap = nf.mu_at(1, v_row) - nf.mu_at(0, v_row) - psi_hat;
    acc += s2(1, v_row) / pi + s2(0, v_row) / (1.0 - pi) + gap * gap;
  }
  return acc / d.n();
}

// zeta(a, p) = var{mu(a,W) | pi(W) = p}: strata over all units (no arm
// conditioning), within-bin variance of the fitted mu(a, .).
class PiStratifiedZeta {
 public:
  PiStratifiedZeta(const Dataset& d, const NuisanceFit& nf, int n_bins = 0) {
    if (n_bins <= 0) n_bins = default_n_bins(d.n());
    std::vector<std::pair<double, int>> pi_idx;
    for (int i = 0; i < d.n(); ++i) pi_idx.push_back({nf.pi_at(d.v.row(i)), i});
    strata_ = Strata::build(std::move(pi_idx), n_bins);
    for (int arm : {0, 1}) {
      var_[arm].resize(strata_.members.size());
      for (std::size_t b = 0; b < strata_.members.size(); ++b) {
        const auto& mem = strata_.members[b];
        if (mem.size() < 2) {
          var_[arm][b] = 0.0;
          continue;
        }
        double m = 0.0;
        std::vector<double> vals(mem.size());
        for (std::size_t t = 0; t < mem.size(); ++t) {
          vals[t] = nf.mu_at(arm, d.v.row(mem[t]));
          m += vals[t];
        }
        m /= mem.size();
        double v = 0.0;
        for (double x : vals) v += (x - m) * (x - m);
        var_[arm][b] = v / (mem.size() - 1);
      }
    }
  }

  double operator()(int arm, double pi) const { return var_[arm][strata_.bin_of(pi)]; }

 private:
  Strata strata_;
  std::vector<double> var_[2];
};

// delta_M plug-in (residual inefficiency of the optimally augmented estimator):
//   (2M)^{-1} E[ (1/pi - pi){s2(1,W) + zeta(1,pi)}
//                + (1/(1-pi) - 1 + pi){s2(0,W) + zeta(0,pi)} ].
inline double estimate_delta_M(const Dataset& d, const NuisanceFit& nf, int m,
                               const std::function<double(int, const Eigen::RowVectorXd&)>& s2,
                               const PiStratifiedZeta& zeta) {
  double acc = 0.0;
  for (int i = 0; i < d.n(); ++i) {
    const auto v_row = d.v.row(i);
    const double pi = nf.pi_at(v_row);
    acc += (1.0 / pi - pi) * (s2(1, v_row) + zeta(1, pi)) +
           (1.0 / (1.0 - pi) - 1.0 + pi) * (s2(0, v_row) + zeta(0, pi));
  }
  return acc / (2.0 * m * d.n());
}

inline std::pair<double, double> wald_ci(double psi, double sigma2_adj, int n_eff, double level) {
  if (sigma2_adj < 0.0) throw validation_error("wald_ci: negative variance");
  if (!(level > 0.0 && level < 1.0)) throw validation_error("wald_ci: level must be in (0,1)");
  if (n_eff < 1) throw validation_error("wald_ci: n_eff must be >= 1");
  const double z = normal_quantile((1.0 + level) / 2.0);
  const double se = std::sqrt(sigma2_adj / n_eff);
  return {psi - z * se, psi + z * se};
}

struct VarianceReport {
  double sigma2_1 = 0.0;
  double sigma2_2M = 0.0;
  double sigma2_M = 0.0;   // sigma2_1 + sigma2_2M
  double gain = 0.0;
  double sigma2_adj = 0.0; // sigma2_M - gain
  double sigma2_np = 0.0;
  double delta_M = 0.0;
  double se = 0.0;
  double level = 0.95;
  std::pair<double, double> ci{0.0, 0.0};
  bool delta_M_negative_flag = false;  // plug-in fell below -tolerance
  int skipped_strata = 0;
};

}  // namespace augmatch

#endif  // AUGMATCH_VARIANCE_HPP
