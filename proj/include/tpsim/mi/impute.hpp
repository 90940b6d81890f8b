#pragma once

#include <algorithm>
#include <array>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "tpsim/collapse/collapse.hpp"
#include "tpsim/estimate.hpp"
#include "tpsim/mi/pool.hpp"
#include "tpsim/numcore/regression.hpp"
#include "tpsim/numcore/rng.hpp"

namespace tpsim {

/// One imputed copy of a dataset. Post-baseline outcomes are complete;
/// `imputed` marks the drawn cells, all other values are the observed ones.
struct CompletedDataset {
  int index = 0;  ///< 1..m
  std::vector<std::array<double, kPostVisits>> y;
  std::vector<std::array<bool, kPostVisits>> imputed;

  [[nodiscard]] std::vector<std::array<double, kPostVisits>> change(const TrialDataset& ds) const {
    auto out = y;
    for (std::size_t i = 0; i < out.size(); ++i)
      for (auto& v : out[i]) v -= ds.patients[i].baseline();
    return out;
  }

  [[nodiscard]] std::vector<double> final_change(const TrialDataset& ds) const {
    std::vector<double> out(y.size());
    for (std::size_t i = 0; i < y.size(); ++i) out[i] = y[i][kPostVisits - 1] - ds.patients[i].baseline();
    return out;
  }
};

inline CompletedDataset observed_part(const TrialDataset& ds, int index) {
  CompletedDataset c;
  c.index = index;
  c.y.resize(ds.patients.size());
  c.imputed.resize(ds.patients.size());
  for (std::size_t i = 0; i < ds.patients.size(); ++i)
    for (int v = 1; v <= kPostVisits; ++v) {
      const auto& p = ds.patients[i];
      c.imputed[i][v - 1] = !p.observed(v);
      c.y[i][v - 1] = p.observed(v) ? p.y_tilde[v] : 0.0;
    }
  return c;
}

namespace detail {

/// Cell intercepts (arm, or arm x coded level at the visit) in a fixed order.
class VisitCells {
 public:
  VisitCells(const TrialDataset& ds, const PatternCoding* coding, int visit) : coding_(coding), visit_(visit) {
    for (const auto& p : ds.patients) {
      const auto key = key_of(p);
      if (std::find(keys_.begin(), keys_.end(), key) == keys_.end()) keys_.push_back(key);
    }
    std::sort(keys_.begin(), keys_.end(), [&](const auto& a, const auto& b) {
      if (a.first != b.first) return a.first < b.first;
      if (!coding_) return false;
      const int ot = coding_->on_treatment_level();
      if ((a.second == ot) != (b.second == ot)) return b.second == ot;
      return a.second < b.second;
    });
  }

  [[nodiscard]] int size() const { return static_cast<int>(keys_.size()); }

  [[nodiscard]] int column(const PatientRecord& p) const {
    const auto key = key_of(p);
    return static_cast<int>(std::find(keys_.begin(), keys_.end(), key) - keys_.begin());
  }

 private:
  [[nodiscard]] std::pair<Arm, int> key_of(const PatientRecord& p) const {
    return {p.arm, coding_ ? coding_->level_of(p, visit_) : 0};
  }

  const PatternCoding* coding_;
  int visit_;
  std::vector<std::pair<Arm, int>> keys_;
};

/// Row of [cells, baseline, lag_1 .. lag_{visit-1}].
inline Vector mi_design_row(const VisitCells& cells, const PatientRecord& p, const std::array<double, kPostVisits>& lags,
                            int visit) {
  Vector x = Vector::Zero(cells.size() + visit);
  x[cells.column(p)] = 1.0;
  x[cells.size()] = p.baseline();
  for (int l = 1; l < visit; ++l) x[cells.size() + l] = lags[l - 1];
  return x;
}

inline Matrix mi_design(const TrialDataset& ds, const VisitCells& cells,
                        const std::vector<std::array<double, kPostVisits>>& lags, int visit,
                        const std::vector<std::size_t>& rows) {
  Matrix x(static_cast<Eigen::Index>(rows.size()), cells.size() + visit);
  for (std::size_t r = 0; r < rows.size(); ++r)
    x.row(static_cast<Eigen::Index>(r)) = mi_design_row(cells, ds.patients[rows[r]], lags[rows[r]], visit).transpose();
  return x;
}

/// Sequential monotone regression imputation. Without a coding the model is
/// arm + baseline + earlier outcomes. With a coding the cells are arm x level
/// and earlier outcomes enter as residuals: each visit's residual is taken
/// from the same model refitted to the completed visit, so the residuals are
/// innovations of the cell-mean residuals.
inline std::vector<CompletedDataset> impute_sequential(const TrialDataset& ds, int m, const RngStream& rng,
                                                       const PatternCoding* coding) {
  if (m < 1) throw InvalidParameter("number of imputations must be positive");
  std::vector<VisitCells> cells;
  for (int v = 1; v <= kPostVisits; ++v) cells.emplace_back(ds, coding, v);
  std::vector<std::vector<std::size_t>> obs_rows(kPostVisits), miss_rows(kPostVisits);
  std::vector<std::size_t> all_rows(ds.patients.size());
  for (std::size_t i = 0; i < ds.patients.size(); ++i) {
    all_rows[i] = i;
    for (int v = 1; v <= kPostVisits; ++v) (ds.patients[i].observed(v) ? obs_rows : miss_rows)[v - 1].push_back(i);
  }
  const bool residual = coding != nullptr;
  std::vector<CompletedDataset> out;
  out.reserve(m);
  for (int k = 1; k <= m; ++k) {
    Engine eng = rng.child(static_cast<std::uint64_t>(k)).engine();
    std::normal_distribution<double> z;
    CompletedDataset c = observed_part(ds, k);
    std::vector<std::array<double, kPostVisits>> resid(ds.patients.size());
    const auto& lags = residual ? resid : c.y;
    for (int v = 1; v <= kPostVisits; ++v) {
      const auto& obs = obs_rows[v - 1];
      Vector yv(static_cast<Eigen::Index>(obs.size()));
      for (std::size_t r = 0; r < obs.size(); ++r) yv[static_cast<Eigen::Index>(r)] = c.y[obs[r]][v - 1];
      RegressionFit fit;
      try {
        fit = ols_fit(mi_design(ds, cells[v - 1], lags, v, obs), yv);
      } catch (const RankDeficient& e) {
        throw RankDeficient("imputation model at visit " + std::to_string(v) + ": " + e.what());
      }
      const RegressionDraw d = bayes_lm_draw(fit, eng);
      const double sd = std::sqrt(d.sigma2);
      for (auto i : miss_rows[v - 1])
        c.y[i][v - 1] = mi_design_row(cells[v - 1], ds.patients[i], lags[i], v).dot(d.coefficients) + sd * z(eng);
      if (residual) {
        // residuals from the imputation model refitted to the completed visit
        Vector yall(static_cast<Eigen::Index>(all_rows.size()));
        for (std::size_t i = 0; i < all_rows.size(); ++i) yall[static_cast<Eigen::Index>(i)] = c.y[i][v - 1];
        const Matrix xall = mi_design(ds, cells[v - 1], resid, v, all_rows);
        const Vector fitted = xall * ols_fit(xall, yall).coefficients;
        for (std::size_t i = 0; i < all_rows.size(); ++i) resid[i][v - 1] = yall[static_cast<Eigen::Index>(i)] - fitted[static_cast<Eigen::Index>(i)];
      }
    }
    out.push_back(std::move(c));
  }
  return out;
}

}  // namespace detail

inline std::vector<CompletedDataset> impute_mi1(const TrialDataset& ds, int m, const RngStream& rng) {
  return detail::impute_sequential(ds, m, rng, nullptr);
}

inline std::vector<CompletedDataset> impute_mi2(const TrialDataset& ds, int m, const RngStream& rng,
                                                const PatternCoding& coding) {
  if (coding.target != CodingTarget::Status) throw InvalidParameter("MI2 needs a status coding");
  return detail::impute_sequential(ds, m, rng, &coding);
}

inline std::vector<CompletedDataset> impute_mi3(const TrialDataset& ds, int m, const RngStream& rng,
                                                const PatternCoding& coding) {
  if (coding.target != CodingTarget::Pattern) throw InvalidParameter("MI3 needs a pattern coding");
  return detail::impute_sequential(ds, m, rng, &coding);
}

struct MiOptions {
  int m = 50;
  PoolDf pool_df = PoolDf::BarnardRubin;
  double margin = kDefaultMargin;
  double alpha = kDefaultAlpha;
};

/// ANCOVA on each completed dataset, pooled by Rubin's rules.
inline EstimateResult analyse_completed(const std::string& method, const TrialDataset& ds,
                                        const std::vector<CompletedDataset>& completed, const MiOptions& opt,
                                        PooledResult* pooled = nullptr) {
  std::vector<double> est, var;
  double df_com = 0;
  for (const auto& c : completed) {
    const AncovaResult a = ancova(ds, c.final_change(ds));
    est.push_back(a.estimate);
    var.push_back(a.se * a.se);
    df_com = a.df;
  }
  const PooledResult pr = rubin_pool(est, var, df_com, opt.pool_df);
  if (pooled) *pooled = pr;
  return make_result(method, pr.qbar, std::sqrt(pr.t), pr.df, opt.margin, opt.alpha);
}

/// MI1, MI2 (status coding) or MI3 (pattern coding), collapsing as MMRM2/3 do.
inline EstimateResult estimate_mi(const TrialDataset& ds, int variant, const RngStream& rng, const MiOptions& opt = {}) {
  const std::string method = "MI" + std::to_string(variant);
  try {
    if (variant == 1) {
      auto r = analyse_completed(method, ds, impute_mi1(ds, opt.m, rng), opt);
      r.collapse_level = 1;
      r.coding = "123456";
      return r;
    }
    if (variant != 2 && variant != 3) throw InvalidParameter("MI variant must be 1, 2 or 3");
    const PatternCoding coding =
        plan_collapse(detect_issues(ds), variant == 2 ? CodingTarget::Status : CodingTarget::Pattern);
    const auto completed =
        coding.n_patterns == 1 ? impute_mi1(ds, opt.m, rng) : detail::impute_sequential(ds, opt.m, rng, &coding);
    auto r = analyse_completed(method, ds, completed, opt);
    r.collapse_level = coding.n_patterns;
    r.coding = coding.label;
    return r;
  } catch (const Error& e) {
    throw Error(method + ": " + e.what());
  }
}

}  // namespace tpsim
