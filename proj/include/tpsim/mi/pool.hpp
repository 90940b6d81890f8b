#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <string_view>
#include <vector>

#include "tpsim/dgm/trial.hpp"
#include "tpsim/error.hpp"
#include "tpsim/numcore/regression.hpp"

namespace tpsim {

/// Completed-data analysis: change at the final visit on arm and baseline.
struct AncovaResult {
  double estimate = 0;
  double se = 0;
  double df = 0;
};

/// `change5[i]` is patient i's completed change from baseline at the final visit.
inline AncovaResult ancova(const TrialDataset& ds, const std::vector<double>& change5) {
  const auto n = static_cast<Eigen::Index>(ds.patients.size());
  if (static_cast<Eigen::Index>(change5.size()) != n) throw InvalidParameter("ancova: outcome length mismatch");
  Matrix x(n, 3);
  Vector y(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& p = ds.patients[i];
    x(i, 0) = 1.0;
    x(i, 1) = p.arm == Arm::Treatment ? 1.0 : 0.0;
    x(i, 2) = p.baseline();
    y[i] = change5[i];
  }
  const RegressionFit fit = ols_fit(x, y);
  return {fit.coefficients[1], std::sqrt(fit.residual_variance * fit.scaled_inverse_gram(1, 1)),
          static_cast<double>(fit.residual_df)};
}

enum class PoolDf { BarnardRubin, Rubin1987 };

inline std::string_view to_string(PoolDf d) { return d == PoolDf::BarnardRubin ? "barnard-rubin" : "rubin1987"; }

struct PooledResult {
  double qbar = 0;
  double ubar = 0;
  double b = 0;
  double t = 0;  ///< ubar + (1 + 1/m) b
  double df = 0;
  int m = 0;
};

inline PooledResult rubin_pool(const std::vector<double>& estimates, const std::vector<double>& variances, double df_com,
                               PoolDf rule = PoolDf::BarnardRubin) {
  const int m = static_cast<int>(estimates.size());
  if (m < 2) throw InvalidParameter("Rubin's rules need at least two imputations");
  if (variances.size() != estimates.size()) throw InvalidParameter("estimate and variance counts differ");
  PooledResult r;
  r.m = m;
  const auto [lo, hi] = std::minmax_element(estimates.begin(), estimates.end());
  for (int i = 0; i < m; ++i) {
    r.qbar += estimates[i];
    r.ubar += variances[i];
  }
  r.ubar /= m;
  if (std::all_of(variances.begin(), variances.end(), [&](double u) { return u == variances[0]; })) r.ubar = variances[0];
  if (*lo == *hi) {
    r.qbar = *lo;
  } else {
    r.qbar /= m;
    for (double q : estimates) r.b += (q - r.qbar) * (q - r.qbar);
    r.b /= m - 1;
  }
  const double between = (1.0 + 1.0 / m) * r.b;
  r.t = r.ubar + between;
  const double inf = std::numeric_limits<double>::infinity();
  if (rule == PoolDf::Rubin1987) {
    if (r.b == 0) {
      r.df = inf;
    } else {
      const double rel = between / r.ubar;
      r.df = (m - 1) * (1 + 1 / rel) * (1 + 1 / rel);
    }
  } else {
    const double lambda = r.t > 0 ? between / r.t : 0.0;
    const double nu_old = lambda > 0 ? (m - 1) / (lambda * lambda) : inf;
    const double nu_obs = std::isinf(df_com) ? inf : (df_com + 1) / (df_com + 3) * df_com * (1 - lambda);
    r.df = 1.0 / (1.0 / nu_old + 1.0 / nu_obs);
  }
  if (!(r.df > 0)) throw InvalidParameter("pooled degrees of freedom are not positive");
  return r;
}

}  // namespace tpsim
