#pragma once

#include <array>
#include <cmath>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "tpsim/dgm/trial.hpp"
#include "tpsim/estimate.hpp"
#include "tpsim/mi/impute.hpp"
#include "tpsim/mi/pool.hpp"
#include "tpsim/numcore/linalg.hpp"
#include "tpsim/numcore/rng.hpp"

namespace tpsim {

enum class RbiAssumption { J2R, CIR, CR };

inline constexpr std::array<RbiAssumption, 3> kRbiAssumptions{RbiAssumption::J2R, RbiAssumption::CIR, RbiAssumption::CR};

inline std::string_view to_string(RbiAssumption a) {
  switch (a) {
    case RbiAssumption::J2R: return "J2R";
    case RbiAssumption::CIR: return "CIR";
    case RbiAssumption::CR: return "CR";
  }
  return "?";
}

/// One retained draw of the pre-IE Bayesian MMRM on the change-from-baseline
/// scale. coef rows: control intercept, treatment intercept, baseline slope;
/// columns: visits 1..5. Baseline enters centered at `center`.
struct PosteriorDraw {
  Matrix coef;
  Matrix sigma;
  double center = 0;

  [[nodiscard]] double arm_mean(Arm arm, int visit, double baseline) const {
    return coef(arm_index(arm), visit - 1) + coef(2, visit - 1) * (baseline - center);
  }
};

struct RbiOptions {
  int m = 50;
  int burn_in = 200;
  int thin = 10;
  PoolDf pool_df = PoolDf::BarnardRubin;
  double margin = kDefaultMargin;
  double alpha = kDefaultAlpha;
  double autocorr_threshold = 0.1;
};

struct SamplerDiagnostics {
  double lag1_autocorr = 0;  ///< largest |lag-1 autocorrelation| over monitored quantities
  bool mixing_warning = false;
};

namespace detail {

/// Conditional regression of missing on observed coordinates for one
/// observed-visit mask under a fixed covariance.
struct MaskConditional {
  std::vector<Eigen::Index> obs, mis;
  Matrix gain;   ///< S_mo S_oo^{-1}
  Matrix lower;  ///< Cholesky factor of the conditional covariance
};

inline MaskConditional mask_conditional(const Matrix& sigma, unsigned mask) {
  MaskConditional c;
  for (Eigen::Index v = 0; v < sigma.rows(); ++v) (mask & (1u << v) ? c.obs : c.mis).push_back(v);
  const auto no = static_cast<Eigen::Index>(c.obs.size()), nm = static_cast<Eigen::Index>(c.mis.size());
  Matrix smm(nm, nm), smo(nm, no), soo(no, no);
  for (Eigen::Index a = 0; a < nm; ++a) {
    for (Eigen::Index b = 0; b < nm; ++b) smm(a, b) = sigma(c.mis[a], c.mis[b]);
    for (Eigen::Index b = 0; b < no; ++b) smo(a, b) = sigma(c.mis[a], c.obs[b]);
  }
  for (Eigen::Index a = 0; a < no; ++a)
    for (Eigen::Index b = 0; b < no; ++b) soo(a, b) = sigma(c.obs[a], c.obs[b]);
  if (no > 0 && nm > 0) {
    c.gain = soo.llt().solve(smo.transpose()).transpose();
    smm -= c.gain * smo.transpose();
  } else {
    c.gain = Matrix::Zero(nm, no);
  }
  if (nm > 0) c.lower = cholesky_lower(0.5 * (smm + smm.transpose()), "conditional covariance");
  return c;
}

/// Fill the missing entries of `y` (those not in the mask) with a draw given the observed ones.
template <class URBG>
void fill_conditional(const MaskConditional& c, const Vector& mean, Vector& y, URBG& rng) {
  if (c.mis.empty()) return;
  Vector resid(c.obs.size());
  for (std::size_t b = 0; b < c.obs.size(); ++b) resid[b] = y[c.obs[b]] - mean[c.obs[b]];
  Vector mu(c.mis.size());
  for (std::size_t a = 0; a < c.mis.size(); ++a) mu[a] = mean[c.mis[a]];
  if (!c.obs.empty()) mu += c.gain * resid;
  const Vector draw = mvn_sample_factor(mu, c.lower, rng);
  for (std::size_t a = 0; a < c.mis.size(); ++a) y[c.mis[a]] = draw[a];
}

/// Sigma ~ inverse-Wishart(scale, df) through the Bartlett decomposition of its inverse.
template <class URBG>
Matrix draw_inverse_wishart(const Matrix& scale, double df, URBG& rng) {
  const auto d = scale.rows();
  const Matrix c = cholesky_lower(Matrix(scale.llt().solve(Matrix::Identity(d, d))), "inverse scale");
  Matrix a = Matrix::Zero(d, d);
  std::normal_distribution<double> z;
  for (Eigen::Index i = 0; i < d; ++i) {
    std::chi_squared_distribution<double> chi2(df - static_cast<double>(i));
    a(i, i) = std::sqrt(chi2(rng));
    for (Eigen::Index j = 0; j < i; ++j) a(i, j) = z(rng);
  }
  const Matrix ca = c * a;
  const Matrix w = ca * ca.transpose();
  const Matrix s = w.llt().solve(Matrix::Identity(d, d));
  return 0.5 * (s + s.transpose());
}

inline double lag1_autocorrelation(const std::vector<double>& x) {
  const auto n = x.size();
  if (n < 3) return 0;
  double mean = 0;
  for (double v : x) mean += v;
  mean /= static_cast<double>(n);
  double num = 0, den = 0;
  for (std::size_t i = 0; i < n; ++i) {
    den += (x[i] - mean) * (x[i] - mean);
    if (i > 0) num += (x[i] - mean) * (x[i - 1] - mean);
  }
  return den > 0 ? num / den : 0.0;
}

}  // namespace detail

/// Gibbs sampler with data augmentation for the multivariate regression of
/// pre-IE change from baseline on arm and baseline, shared unstructured Sigma,
/// flat prior on coefficients and Jeffreys prior on Sigma. Each sweep imputes
/// the unavailable outcomes, then draws Sigma and the coefficients from their
/// complete-data posterior.
inline std::vector<PosteriorDraw> fit_bayesian_mmrm(const TrialDataset& ds, int n_draws, const RngStream& rng,
                                                    const RbiOptions& opt = {}, SamplerDiagnostics* diag = nullptr) {
  if (n_draws < 1) throw InvalidParameter("need at least one posterior draw");
  const int d = kPostVisits;
  const double center = ds.baseline_mean();
  std::vector<const PatientRecord*> subj;
  std::vector<unsigned> mask;
  for (const auto& p : ds.patients) {
    unsigned mk = 0;
    for (int v = 1; v <= d; ++v)
      if (p.observed(v) && !p.ie_status(v)) mk |= 1u << (v - 1);
    if (mk == 0) continue;
    subj.push_back(&p);
    mask.push_back(mk);
  }
  const auto n = static_cast<Eigen::Index>(subj.size());
  if (n < d + 4) throw RankDeficient("too few patients with pre-IE outcomes for the Bayesian MMRM");
  Matrix x(n, 3), y(n, d);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& p = *subj[i];
    x(i, 0) = p.arm == Arm::Control;
    x(i, 1) = p.arm == Arm::Treatment;
    x(i, 2) = p.baseline() - center;
    for (int v = 1; v <= d; ++v) y(i, v - 1) = p.change(v);
  }
  const Matrix xtx = x.transpose() * x;
  const Matrix lx = [&] {
    try {
      return cholesky_lower(xtx, "Bayesian MMRM design");
    } catch (const NotPositiveDefinite&) {
      throw RankDeficient("Bayesian MMRM design is rank deficient (an arm has no pre-IE data)");
    }
  }();
  const auto lxv = lx.triangularView<Eigen::Lower>();

  // start: unavailable values at the visit mean of available ones
  for (int v = 0; v < d; ++v) {
    double s = 0;
    int k = 0;
    for (Eigen::Index i = 0; i < n; ++i)
      if (mask[i] & (1u << v)) {
        s += y(i, v);
        ++k;
      }
    if (k == 0) throw RankDeficient("no pre-IE outcome at visit " + std::to_string(v + 1));
    for (Eigen::Index i = 0; i < n; ++i)
      if (!(mask[i] & (1u << v))) y(i, v) = s / k;
  }

  Engine eng = rng.engine();
  std::normal_distribution<double> z;
  std::vector<PosteriorDraw> draws;
  std::vector<double> mon_effect, mon_var;
  const int total = opt.burn_in + n_draws * opt.thin;
  const bool any_missing = [&] {
    for (auto mk : mask)
      if (mk != (1u << d) - 1) return true;
    return false;
  }();
  for (int sweep = 1; sweep <= total; ++sweep) {
    const Matrix bhat = lxv.transpose().solve(lxv.solve(x.transpose() * y));
    const Matrix e = y - x * bhat;
    const Matrix s = e.transpose() * e;
    const Matrix sigma = detail::draw_inverse_wishart(s, static_cast<double>(n - 3), eng);
    const Matrix ls = cholesky_lower(sigma, "posterior covariance draw");
    Matrix zz(3, d);
    for (Eigen::Index r = 0; r < 3; ++r)
      for (Eigen::Index c = 0; c < d; ++c) zz(r, c) = z(eng);
    const Matrix coef = bhat + Matrix(lxv.transpose().solve(zz)) * ls.transpose();

    if (sweep > opt.burn_in && (sweep - opt.burn_in) % opt.thin == 0) {
      draws.push_back({coef, sigma, center});
      mon_effect.push_back(coef(1, d - 1) - coef(0, d - 1));
      mon_var.push_back(sigma(d - 1, d - 1));
    }
    if (!any_missing || sweep == total) continue;
    std::array<std::optional<detail::MaskConditional>, 1 << kPostVisits> cond;
    const Matrix mean = x * coef;
    for (Eigen::Index i = 0; i < n; ++i) {
      if (mask[i] == (1u << d) - 1) continue;
      auto& c = cond[mask[i]];
      if (!c) c = detail::mask_conditional(sigma, mask[i]);
      Vector yi = y.row(i).transpose();
      detail::fill_conditional(*c, Vector(mean.row(i).transpose()), yi, eng);
      y.row(i) = yi.transpose();
    }
  }
  if (diag) {
    diag->lag1_autocorr =
        std::max(std::abs(detail::lag1_autocorrelation(mon_effect)), std::abs(detail::lag1_autocorrelation(mon_var)));
    diag->mixing_warning = diag->lag1_autocorr > opt.autocorr_threshold;
  }
  return draws;
}

/// Mean vector (change scale, visits 1..5) of a patient's marginal imputation
/// distribution. The reference arm is control; the covariance is the draw's Sigma.
inline Vector marginal_mean(RbiAssumption a, Arm arm, std::optional<int> tau, const PosteriorDraw& draw, double baseline) {
  Vector m(kPostVisits);
  for (int v = 1; v <= kPostVisits; ++v) m[v - 1] = draw.arm_mean(arm, v, baseline);
  if (arm == Arm::Control || !tau) return m;
  auto ref = [&](int v) { return v == 0 ? 0.0 : draw.arm_mean(Arm::Control, v, baseline); };
  const int t = *tau;
  switch (a) {
    case RbiAssumption::J2R:
      for (int v = t; v <= kPostVisits; ++v) m[v - 1] = ref(v);
      break;
    case RbiAssumption::CIR: {
      // anchored at the last on-treatment visit; visit 0 is zero change in every arm
      const double anchor = t == 1 ? 0.0 : m[t - 2];
      for (int v = t; v <= kPostVisits; ++v) m[v - 1] = anchor + ref(v) - ref(t - 1);
      break;
    }
    case RbiAssumption::CR:
      for (int v = 1; v <= kPostVisits; ++v) m[v - 1] = ref(v);
      break;
  }
  return m;
}

/// Completed datasets for every assumption from one set of posterior draws.
/// Imputation k uses draw k and its own stream, so control-arm values agree
/// across assumptions.
inline std::array<std::vector<CompletedDataset>, 3> impute_rbi_all(const TrialDataset& ds,
                                                                  const std::vector<PosteriorDraw>& draws,
                                                                  const RngStream& rng) {
  std::array<std::vector<CompletedDataset>, 3> out;
  for (std::size_t k = 0; k < draws.size(); ++k) {
    const auto& draw = draws[k];
    std::array<std::optional<detail::MaskConditional>, 1 << kPostVisits> cond;
    for (std::size_t ai = 0; ai < kRbiAssumptions.size(); ++ai) {
      Engine eng = rng.child(static_cast<std::uint64_t>(k + 1)).engine();
      CompletedDataset c = observed_part(ds, static_cast<int>(k + 1));
      for (std::size_t i = 0; i < ds.patients.size(); ++i) {
        const auto& p = ds.patients[i];
        unsigned mk = 0;
        for (int v = 1; v <= kPostVisits; ++v)
          if (p.observed(v)) mk |= 1u << (v - 1);
        if (mk == (1u << kPostVisits) - 1) continue;
        auto& cd = cond[mk];
        if (!cd) cd = detail::mask_conditional(draw.sigma, mk);
        Vector yi(kPostVisits);
        for (int v = 1; v <= kPostVisits; ++v) yi[v - 1] = p.observed(v) ? p.change(v) : 0.0;
        detail::fill_conditional(*cd, marginal_mean(kRbiAssumptions[ai], p.arm, p.ie_visit, draw, p.baseline()), yi,
                                 eng);
        for (int v = 1; v <= kPostVisits; ++v)
          if (!p.observed(v)) c.y[i][v - 1] = yi[v - 1] + p.baseline();
      }
      out[ai].push_back(std::move(c));
    }
  }
  return out;
}

inline std::vector<CompletedDataset> impute_rbi(const TrialDataset& ds, RbiAssumption a, int m, const RngStream& rng,
                                                const RbiOptions& opt = {}) {
  const auto draws = fit_bayesian_mmrm(ds, m, rng.child(0), opt);
  return std::move(impute_rbi_all(ds, draws, rng.child(1))[static_cast<std::size_t>(a)]);
}

struct RbiResults {
  std::array<EstimateResult, 3> results;  ///< J2R, CIR, CR
  SamplerDiagnostics diagnostics;
};

/// All three assumptions from one posterior sample.
inline RbiResults estimate_rbi_all(const TrialDataset& ds, const RngStream& rng, const RbiOptions& opt = {}) {
  RbiResults out;
  try {
    const auto draws = fit_bayesian_mmrm(ds, opt.m, rng.child(0), opt, &out.diagnostics);
    const auto completed = impute_rbi_all(ds, draws, rng.child(1));
    const MiOptions mo{opt.m, opt.pool_df, opt.margin, opt.alpha};
    for (std::size_t a = 0; a < 3; ++a) {
      out.results[a] = analyse_completed(std::string(to_string(kRbiAssumptions[a])), ds, completed[a], mo);
      out.results[a].collapse_level = 0;
    }
  } catch (const Error& e) {
    throw Error(std::string("RBI: ") + e.what());
  }
  return out;
}

inline EstimateResult estimate_rbi(const TrialDataset& ds, RbiAssumption a, const RngStream& rng,
                                   const RbiOptions& opt = {}) {
  return estimate_rbi_all(ds, rng, opt).results[static_cast<std::size_t>(a)];
}

}  // namespace tpsim
