#pragma once

#include <cmath>
#include <limits>

#include <boost/math/distributions/normal.hpp>
#include <boost/math/distributions/students_t.hpp>

#include "tpsim/error.hpp"

namespace tpsim {

inline double expit(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline double logit(double p) { return std::log(p / (1.0 - p)); }

/// Student-t CDF; an infinite df falls back to the normal.
inline double t_cdf(double t, double df) {
  if (!(df > 0)) throw InvalidParameter("t distribution needs df > 0");
  if (std::isinf(df)) return boost::math::cdf(boost::math::normal_distribution<>(), t);
  return boost::math::cdf(boost::math::students_t_distribution<>(df), t);
}

inline double t_quantile(double p, double df) {
  if (!(df > 0)) throw InvalidParameter("t distribution needs df > 0");
  if (std::isinf(df)) return boost::math::quantile(boost::math::normal_distribution<>(), p);
  return boost::math::quantile(boost::math::students_t_distribution<>(df), p);
}

/// Two-sided p-value for H0: theta = null.
inline double two_sided_p(double estimate, double se, double null_value, double df) {
  if (se <= 0) return estimate == null_value ? 1.0 : 0.0;
  const double t = (estimate - null_value) / se;
  return 2.0 * t_cdf(-std::abs(t), df);
}

/// One-sided p-value for H0: theta >= margin against H1: theta < margin.
inline double lower_tail_p(double estimate, double se, double margin, double df) {
  if (se <= 0) return estimate < margin ? 0.0 : (estimate == margin ? 0.5 : 1.0);
  return t_cdf((estimate - margin) / se, df);
}

}  // namespace tpsim
