#pragma once

#include <string>
#include <vector>

#include "tpsim/collapse/collapse.hpp"
#include "tpsim/estimate.hpp"
#include "tpsim/mmrm/design.hpp"
#include "tpsim/mmrm/reml.hpp"

namespace tpsim {

enum class DfMethod { KenwardRoger, Satterthwaite };

inline std::string_view to_string(DfMethod m) { return m == DfMethod::KenwardRoger ? "kr" : "satterthwaite"; }

struct LsMeans {
  std::vector<CellKey> cells;
  std::vector<int> columns;
  Vector means;
  Matrix cov;
};

/// Cell means at a visit with baseline at the grand mean. Because the design
/// centers baseline there, these are the cell intercepts themselves.
inline LsMeans lsmeans(const MmrmFit& fit, const MmrmDesign& design, int visit, DfMethod df = DfMethod::KenwardRoger) {
  LsMeans out;
  out.cells = design.cells(visit);
  const auto k = static_cast<Eigen::Index>(out.cells.size());
  Matrix l = Matrix::Zero(design.p(), k);
  out.means.resize(k);
  for (Eigen::Index c = 0; c < k; ++c) {
    const int col = design.offset(visit) + static_cast<int>(c);
    out.columns.push_back(col);
    l(col, c) = 1.0;
    out.means[c] = fit.beta[col];
  }
  out.cov = fit.contrast_cov(l, df == DfMethod::KenwardRoger);
  return out;
}

/// Standardized mean of one arm: cell means weighted by observed proportions.
/// The last cell is the reference whose weight is one minus the others.
struct ArmPolicy {
  Vector theta;  ///< proportions, summing to one
  Vector means;
  double mean = 0;
  double prop_variance = 0;
  double mean_variance = 0;
  [[nodiscard]] double variance() const { return prop_variance + mean_variance; }
};

struct PolicyEstimate {
  ArmPolicy control;
  ArmPolicy treatment;
  double contrast = 0;
  double se = 0;
  double df = 0;
};

inline double policy_mean(const Vector& means, const Vector& theta) { return theta.dot(means); }

/// Delta-method variance under independence of proportions and cell means:
/// multinomial block for the proportions plus the mean-covariance quadratic form.
inline ArmPolicy policy_variance(const Vector& means, const Matrix& mean_cov, const Vector& theta, int n) {
  if (means.size() != theta.size() || mean_cov.rows() != means.size() || mean_cov.cols() != means.size())
    throw InvalidParameter("policy_variance: dimension mismatch");
  if (n <= 0) throw InvalidParameter("policy_variance: arm size must be positive");
  ArmPolicy a;
  a.theta = theta;
  a.means = means;
  a.mean = policy_mean(means, theta);
  const auto k = means.size();
  if (k > 1) {
    const Vector th = theta.head(k - 1);
    const Vector grad = means.head(k - 1).array() - means[k - 1];
    const Matrix vm = (Matrix(th.asDiagonal()) - th * th.transpose()) / n;
    a.prop_variance = grad.dot(vm * grad);
  }
  a.mean_variance = theta.dot(mean_cov * theta);
  return a;
}

namespace detail {

inline EstimateResult contrast_result(const std::string& method, const MmrmFit& fit, const Vector& l, DfMethod df,
                                      double margin, double alpha) {
  const double est = l.dot(fit.beta);
  const double var = l.dot((df == DfMethod::KenwardRoger ? fit.coef_cov_kr : fit.coef_cov) * l);
  return make_result(method, est, std::sqrt(std::max(var, 0.0)), fit.contrast_df(l), margin, alpha);
}

inline Vector arm_contrast(const MmrmDesign& design) {
  Vector l = Vector::Zero(design.p());
  l[design.cell_column(kPostVisits, {Arm::Treatment, 0})] = 1.0;
  l[design.cell_column(kPostVisits, {Arm::Control, 0})] = -1.0;
  return l;
}

}  // namespace detail

/// Policy estimate from a status or pattern model fit. Proportions come from
/// every randomized patient's level at the final visit.
inline PolicyEstimate policy_estimate(const TrialDataset& ds, const MmrmFit& fit, const MmrmDesign& design,
                                      DfMethod df = DfMethod::KenwardRoger) {
  const LsMeans lm = lsmeans(fit, design, kPostVisits, df);
  PolicyEstimate out;
  Vector l = Vector::Zero(design.p());
  for (Arm arm : kArms) {
    std::vector<Eigen::Index> idx;
    for (std::size_t c = 0; c < lm.cells.size(); ++c)
      if (lm.cells[c].arm == arm) idx.push_back(static_cast<Eigen::Index>(c));
    const auto k = static_cast<Eigen::Index>(idx.size());
    Vector means(k), theta = Vector::Zero(k);
    Matrix cov(k, k);
    for (Eigen::Index a = 0; a < k; ++a) {
      means[a] = lm.means[idx[a]];
      for (Eigen::Index b = 0; b < k; ++b) cov(a, b) = lm.cov(idx[a], idx[b]);
    }
    const int n = ds.count(arm);
    for (const auto& p : ds.patients) {
      if (p.arm != arm) continue;
      const int lvl = design.level_of(p, kPostVisits);
      for (Eigen::Index a = 0; a < k; ++a)
        if (lm.cells[idx[a]].level == lvl) theta[a] += 1.0 / n;
    }
    ArmPolicy ap = policy_variance(means, cov, theta, n);
    const double sign = arm == Arm::Treatment ? 1.0 : -1.0;
    for (Eigen::Index a = 0; a < k; ++a) l[lm.columns[idx[a]]] = sign * theta[a];
    (arm == Arm::Treatment ? out.treatment : out.control) = std::move(ap);
  }
  out.contrast = out.treatment.mean - out.control.mean;
  out.se = std::sqrt(out.treatment.variance() + out.control.variance());
  out.df = fit.contrast_df(l);
  return out;
}

struct MmrmOptions {
  DfMethod df = DfMethod::KenwardRoger;
  double margin = kDefaultMargin;
  double alpha = kDefaultAlpha;
  RemlOptions reml;
};

inline EstimateResult estimate_mmrm_simple(const TrialDataset& ds, const std::string& method, const MmrmOptions& opt) {
  const MmrmDesign design(ds, DesignStructure::Simple);
  const MmrmFit fit = reml_fit(ds, design, opt.reml);
  auto r = detail::contrast_result(method, fit, detail::arm_contrast(design), opt.df, opt.margin, opt.alpha);
  r.collapse_level = 1;
  r.coding = "123456";
  return r;
}

/// MMRM1 (variant 1), retrieved-dropout status model (2) or pattern model (3).
inline EstimateResult estimate_mmrm(const TrialDataset& ds, int variant, const MmrmOptions& opt = {}) {
  const std::string method = "MMRM" + std::to_string(variant);
  try {
    if (variant == 1) return estimate_mmrm_simple(ds, method, opt);
    if (variant != 2 && variant != 3) throw InvalidParameter("MMRM variant must be 1, 2 or 3");
    const auto target = variant == 2 ? CodingTarget::Status : CodingTarget::Pattern;
    PatternCoding coding = plan_collapse(detect_issues(ds), target);
    if (coding.n_patterns == 1) {
      auto r = estimate_mmrm_simple(ds, method, opt);
      r.coding = coding.label;
      return r;
    }
    const MmrmDesign design(ds, variant == 2 ? DesignStructure::Status : DesignStructure::Pattern, coding);
    const MmrmFit fit = reml_fit(ds, design, opt.reml);
    const PolicyEstimate pe = policy_estimate(ds, fit, design, opt.df);
    auto r = make_result(method, pe.contrast, pe.se, pe.df, opt.margin, opt.alpha);
    r.collapse_level = coding.n_patterns;
    r.coding = coding.label;
    return r;
  } catch (const Error& e) {
    throw Error(method + ": " + e.what());
  }
}

}  // namespace tpsim
