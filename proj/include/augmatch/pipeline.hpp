#ifndef AUGMATCH_PIPELINE_HPP
#define AUGMATCH_PIPELINE_HPP

#include <Eigen/Dense>
#include <memory>
#include <optional>

#include "augmatch/common.hpp"
#include "augmatch/data.hpp"
#include "augmatch/logit.hpp"
#include "augmatch/matching.hpp"
#include "augmatch/nuisance.hpp"
#include "augmatch/variance.hpp"

namespace augmatch {

struct EstimatorConfig {
  int m = 1;
  std::optional<double> disc_k;  // discretization constant; unset = raw MLE
  double split_frac = 0.05;      // 0 disables sample splitting
  double level = 0.95;
  NuisanceOptions nuisance;
  std::vector<RegressorSpec> s2_stack = {RegressorSpec::linear(), RegressorSpec::polynomial(3)};
  std::uint64_t seed = 0;
  int split_floor = 50;

  void validate() const {
    if (m < 1) throw validation_error("config: matches must be >= 1");
    if (split_frac < 0.0 || split_frac > 0.5) {
      throw validation_error("config: split fraction must be in [0, 0.5]");
    }
    if (!(level > 0.0 && level < 1.0)) throw validation_error("config: level must be in (0,1)");
    if (disc_k && !(*disc_k > 0.0)) throw validation_error("config: disc_k must be positive");
  }
};

struct HDiagnostics {
  double mean = 0.0;
  double variance = 0.0;
};

struct EstimateResult {
  double psi = 0.0;
  VarianceReport variance;
  PropensityFit fit_base;
  std::optional<PropensityFit> fit_aug;
  std::optional<HDiagnostics> h_diag;
  std::optional<SplitIndex> split;
  int n_eff = 0;
  bool augmented = false;
  bool aug_dropped = false;  // collinearity fallback engaged
};

namespace detail {

// conditional variance of Y given (A, W): squared residuals smoothed on W,
// floored at zero
inline std::function<double(int, const Eigen::RowVectorXd&)> fit_residual_variance(
    const Dataset& d, const NuisanceFit& nf, const std::vector<RegressorSpec>& stack,
    std::uint64_t seed) {
  auto regs = std::make_shared<std::array<Regressor, 2>>();
  for (int arm : {0, 1}) {
    const auto idx = arm_indices(d, arm);
    Eigen::MatrixXd x(idx.size(), d.p());
    Eigen::VectorXd r2(idx.size());
    for (std::size_t t = 0; t < idx.size(); ++t) {
      x.row(static_cast<Eigen::Index>(t)) = d.v.row(idx[t]);
      const double e = d.y[idx[t]] - nf.mu_at(arm, d.v.row(idx[t]));
      r2[static_cast<Eigen::Index>(t)] = e * e;
    }
    (*regs)[arm] = fit_best(x, r2, stack, 5, seed + arm);
  }
  return [regs](int arm, const Eigen::RowVectorXd& v_row) {
    return std::max(0.0, (*regs)[arm].predict(v_row));
  };
}

inline VarianceReport assemble_variance(const Dataset& est_sample, const NuisanceFit& nf,
                                        const AugmentationFn* aug, int m, double psi, int n_eff,
                                        double level, const std::vector<RegressorSpec>& s2_stack,
                                        std::uint64_t seed) {
  VarianceReport rep;
  rep.level = level;

  PiStratifiedVariance sbar2(est_sample, nf.pi_all(est_sample.v), 0,
                             [&nf](int arm, double p) { return nf.mu_bar_at(arm, p); });
  std::tie(rep.sigma2_1, rep.sigma2_2M) =
      estimate_sigma2_M(est_sample, nf, m, psi, std::cref(sbar2));
  rep.sigma2_M = rep.sigma2_1 + rep.sigma2_2M;

  auto s2 = fit_residual_variance(est_sample, nf, s2_stack, seed);
  rep.sigma2_np = np_bound(est_sample, nf, s2, psi);
  PiStratifiedZeta zeta(est_sample, nf);
  rep.delta_M = estimate_delta_M(est_sample, nf, m, s2, zeta);
  rep.delta_M_negative_flag = rep.delta_M < -0.05 * rep.sigma2_np;

  // Both arms use the projection form gain(q) = c^T I^{-1} c. The direct
  // form E[pi(1-pi)h^2] is an identity only at the exact optimal h: applied
  // to a fitted h it adds the squared estimation error of h, which the
  // 1/pi and 1/(1-pi) factors in h amplify heavily near the boundary. The
  // projection form spans the fitted h, but with an in-sample h its
  // conditional covariances with the fitted outcome regressions inherit
  // their correlated estimation errors, so the raw projection can still
  // overshoot. The theoretical ceiling gain(q) <= gain(h_opt) =
  // sigma2_M - sigma2_np - delta_M holds for every augmentation, and each
  // term on the right has a stable plug-in; the reported gain is clamped by
  // it (equivalently, sigma2_adj never falls below sigma2_np + delta_M).
  if (aug != nullptr) {
    Eigen::VectorXd h_col(est_sample.n());
    for (int i = 0; i < est_sample.n(); ++i) h_col[i] = (*aug)(est_sample.v.row(i));
    const Eigen::VectorXd c =
        estimate_c_vector(est_sample, nf, aug, &rep.skipped_strata);
    // information at the fitted base model: the h coordinate carries a zero
    // coefficient there, so the augmented-design information is the base
    // information bordered by the h cross-moments
    Eigen::VectorXd vt = Eigen::VectorXd::Zero(nf.pi_fit.vartheta.size() + 1);
    vt.head(nf.pi_fit.vartheta.size()) = nf.pi_fit.vartheta;
    const Eigen::MatrixXd info =
        fisher_info(DesignSpec::augmented(est_sample, h_col), vt);
    rep.gain = gain(c, info);
  } else {
    const Eigen::VectorXd c =
        estimate_c_vector(est_sample, nf, nullptr, &rep.skipped_strata);
    const Eigen::MatrixXd info =
        fisher_info(DesignSpec::base(est_sample), nf.pi_fit.vartheta);
    rep.gain = gain(c, info);
  }
  const double gain_ceiling =
      std::max(0.0, rep.sigma2_M - rep.sigma2_np - std::max(0.0, rep.delta_M));
  rep.gain = std::min(rep.gain, gain_ceiling);
  rep.sigma2_adj = rep.sigma2_M - rep.gain;

  const double var_for_ci = std::max(0.0, rep.sigma2_adj);
  rep.se = std::sqrt(var_for_ci / n_eff);
  rep.ci = wald_ci(psi, var_for_ci, n_eff, level);
  return rep;
}

}  // namespace detail

// Unaugmented 1:M matching: MLE in the base model, optional discretization,
// match on fitted scores, variance sigma^2_M - gain(empty).
inline EstimateResult estimate_unaugmented(const Dataset& d, const EstimatorConfig& cfg) {
  cfg.validate();
  if (std::min(d.n_control(), d.n_treated()) < cfg.m) {
    throw validation_error("estimate: an arm has fewer than m units");
  }

  EstimateResult res;
  auto nf = std::make_shared<NuisanceFit>(fit_nuisances(d, cfg.nuisance));
  res.fit_base = nf->pi_fit;

  Eigen::VectorXd theta = nf->pi_fit.vartheta;
  if (cfg.disc_k) {
    theta = discretize(theta, *cfg.disc_k, d.n());
    res.fit_base.disc = PropensityFit::Disc{*cfg.disc_k, d.n()};
  }
  const Eigen::VectorXd scores = fitted_scores(DesignSpec::base(d), theta);
  res.psi = ate_from_scores(d, scores, cfg.m);
  res.n_eff = d.n();
  res.variance = detail::assemble_variance(d, *nf, nullptr, cfg.m, res.psi, res.n_eff,
                                           cfg.level, cfg.s2_stack, cfg.seed);
  return res;
}

// Optimally augmented 1:M matching. With split_frac > 0 the nuisances and h
// come from the small subset and everything else runs on the estimation
// subset; with split_frac = 0 all steps use the full sample.
inline EstimateResult estimate_augmented(const Dataset& d, const EstimatorConfig& cfg) {
  cfg.validate();
  EstimateResult res;
  res.augmented = true;

  std::shared_ptr<const NuisanceFit> nf;
  Dataset est_holder;
  const Dataset* est = &d;
  if (cfg.split_frac > 0.0) {
    SplitIndex split = split_sample(d, cfg.split_frac, cfg.seed, cfg.split_floor);
    Dataset fit_sample = d.subset(split.idx_a);
    est_holder = d.subset(split.idx_b);
    est = &est_holder;
    res.split = std::move(split);
    nf = std::make_shared<const NuisanceFit>(fit_nuisances(fit_sample, cfg.nuisance));
    AugmentationFn h = build_h(nf, fit_sample);
    res.h_diag = HDiagnostics{h.mean, h.variance};
  } else {
    nf = std::make_shared<const NuisanceFit>(fit_nuisances(d, cfg.nuisance));
    AugmentationFn h = build_h(nf, d);
    res.h_diag = HDiagnostics{h.mean, h.variance};
  }
  if (std::min(est->n_control(), est->n_treated()) < cfg.m) {
    throw validation_error("estimate: an arm has fewer than m units");
  }
  AugmentationFn h(nf);

  // standardize the augmentation column: the fitted scores are invariant to
  // the rescaling and the design stays well conditioned when h has heavy tails
  Eigen::VectorXd h_col = h.evaluate(est->v);
  const double h_sd =
      std::sqrt((h_col.array() - h_col.mean()).square().sum() / std::max(1, est->n() - 1));
  if (h_sd > 0.0) h_col /= h_sd;
  res.fit_base = nf->pi_fit;
  res.n_eff = est->n();

  bool use_aug = true;
  DesignSpec design;
  try {
    design = DesignSpec::augmented(*est, h_col);
    check_full_rank(design);
  } catch (const numerical_error&) {
    // degenerate augmentation column (e.g. constant h): gain is zero there,
    // fall back to the unaugmented fit and flag it
    use_aug = false;
  }

  Eigen::VectorXd scores;
  if (use_aug) {
    PropensityFit aug_fit = fit_mle(design, est->a);
    Eigen::VectorXd vartheta = aug_fit.vartheta;
    if (cfg.disc_k) {
      vartheta = discretize(vartheta, *cfg.disc_k, est->n());
      aug_fit.disc = PropensityFit::Disc{*cfg.disc_k, est->n()};
    }
    scores = fitted_scores(design, vartheta);
    res.fit_aug = std::move(aug_fit);
  } else {
    res.aug_dropped = true;
    PropensityFit base_fit = fit_mle(DesignSpec::base(*est), est->a);
    Eigen::VectorXd theta = base_fit.vartheta;
    if (cfg.disc_k) theta = discretize(theta, *cfg.disc_k, est->n());
    scores = fitted_scores(DesignSpec::base(*est), theta);
  }

  res.psi = ate_matching(est->y, est->a, match_1m(scores, est->a, cfg.m));
  res.variance = detail::assemble_variance(*est, *nf, use_aug ? &h : nullptr, cfg.m, res.psi,
                                           res.n_eff, cfg.level, cfg.s2_stack, cfg.seed);
  return res;
}

}  // namespace augmatch

#endif  // AUGMATCH_PIPELINE_HPP
