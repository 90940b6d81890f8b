#pragma once

#include <cmath>
#include <string>

#include "tpsim/error.hpp"
#include "tpsim/numcore/distributions.hpp"

namespace tpsim {

inline constexpr double kDefaultMargin = -0.25;
inline constexpr double kDefaultAlpha = 0.05;

/// One method's treatment-effect estimate for one dataset.
struct EstimateResult {
  std::string method;
  double estimate = 0;
  double se = 0;
  double df = 0;
  double ci_lo = 0;
  double ci_hi = 0;
  double p_zero = 1;    ///< two-sided test of no effect
  double p_margin = 1;  ///< one-sided test of effect < margin
  int collapse_level = 0;  ///< number of IE patterns in the fitted model, 0 if not applicable
  std::string coding;
};

/// t-based CI and both p-values.
inline EstimateResult make_result(std::string method, double estimate, double se, double df,
                                  double margin = kDefaultMargin, double alpha = kDefaultAlpha) {
  if (!(df > 0)) throw InvalidParameter(method + ": degrees of freedom must be positive");
  if (!(se >= 0) || !std::isfinite(estimate)) throw InvalidParameter(method + ": non-finite estimate or SE");
  EstimateResult r;
  r.method = std::move(method);
  r.estimate = estimate;
  r.se = se;
  r.df = df;
  const double q = t_quantile(1 - alpha / 2, df);
  r.ci_lo = estimate - q * se;
  r.ci_hi = estimate + q * se;
  r.p_zero = two_sided_p(estimate, se, 0.0, df);
  r.p_margin = lower_tail_p(estimate, se, margin, df);
  return r;
}

}  // namespace tpsim
