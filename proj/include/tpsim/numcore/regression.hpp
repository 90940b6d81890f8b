#pragma once

#include <cmath>
#include <random>
#include <string>

#include "tpsim/numcore/linalg.hpp"

namespace tpsim {

/// Least-squares fit y = X b + e with the pieces a Bayesian draw needs.
struct RegressionFit {
  Vector coefficients;
  double residual_variance = 0;  ///< sigma-hat^2 = RSS / residual_df
  Matrix scaled_inverse_gram;    ///< (X^T X)^{-1}
  Matrix gram_cholesky;          ///< lower factor of X^T X
  int residual_df = 0;
};

inline RegressionFit ols_fit(const Matrix& x, const Vector& y) {
  if (x.rows() != y.size()) throw InvalidParameter("design and response lengths differ");
  const auto n = x.rows();
  const auto p = x.cols();
  if (n <= p) throw RankDeficient("regression has " + std::to_string(n) + " rows for " + std::to_string(p) + " coefficients");
  RegressionFit fit;
  const Matrix gram = x.transpose() * x;
  try {
    fit.gram_cholesky = cholesky_lower(gram, "regression Gram matrix");
  } catch (const NotPositiveDefinite&) {
    throw RankDeficient("regression design is rank deficient");
  }
  const Matrix& l = fit.gram_cholesky;
  const auto lv = l.triangularView<Eigen::Lower>();
  fit.coefficients = lv.transpose().solve(lv.solve(x.transpose() * y));
  const Matrix linv = lv.solve(Matrix::Identity(p, p));
  fit.scaled_inverse_gram = linv.transpose() * linv;
  fit.residual_df = static_cast<int>(n - p);
  const double rss = (y - x * fit.coefficients).squaredNorm();
  fit.residual_variance = rss / fit.residual_df;
  return fit;
}

struct RegressionDraw {
  Vector coefficients;
  double sigma2 = 0;
};

/// Posterior draw under the noninformative prior p(b, s2) ~ 1/s2:
/// s2* = df s2-hat / chi2(df), b* ~ N(b-hat, s2* (X^T X)^{-1}).
template <class URBG>
RegressionDraw bayes_lm_draw(const RegressionFit& fit, URBG& rng) {
  if (fit.residual_df < 1) throw InvalidParameter("Bayesian regression draw needs residual df >= 1");
  std::chi_squared_distribution<double> chi2(fit.residual_df);
  RegressionDraw d;
  const double c = chi2(rng);
  d.sigma2 = fit.residual_df * fit.residual_variance / c;
  const Vector z = standard_normal_vector(fit.coefficients.size(), rng);
  // (X^T X)^{-1} = L^{-T} L^{-1}, so L^{-T} z has the right covariance.
  d.coefficients = fit.coefficients +
                   std::sqrt(d.sigma2) * fit.gram_cholesky.triangularView<Eigen::Lower>().transpose().solve(z);
  return d;
}

}  // namespace tpsim
