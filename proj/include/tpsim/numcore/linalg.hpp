#pragma once

#include <algorithm>
#include <cmath>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include "tpsim/error.hpp"

namespace tpsim {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// Relative pivot floor used by every positive-definiteness check.
inline constexpr double kPivotTolerance = 1e-10;

/// Lower Cholesky factor with the library's pivot rule: every squared pivot
/// must exceed kPivotTolerance times the largest diagonal entry.
inline Matrix cholesky_lower(const Matrix& m, const char* what = "matrix") {
  if (m.rows() != m.cols()) throw InvalidParameter(std::string(what) + " is not square");
  if (m.rows() == 0) return Matrix(0, 0);
  Eigen::LLT<Matrix> llt(m);
  if (llt.info() != Eigen::Success) throw NotPositiveDefinite(std::string(what) + " is not positive definite");
  Matrix l = llt.matrixL();
  const double max_diag = m.diagonal().maxCoeff();
  for (Eigen::Index i = 0; i < l.rows(); ++i) {
    if (!(l(i, i) * l(i, i) > kPivotTolerance * max_diag))
      throw NotPositiveDefinite(std::string(what) + " is numerically singular");
  }
  return l;
}

/// Symmetric positive-definite covariance matrix. Construction validates.
class CovMatrix {
 public:
  CovMatrix() = default;
  explicit CovMatrix(Matrix m) : m_(std::move(m)) {
    if (m_.rows() != m_.cols()) throw InvalidParameter("covariance matrix is not square");
    const double scale = std::max(1.0, m_.cwiseAbs().maxCoeff());
    if ((m_ - m_.transpose()).cwiseAbs().maxCoeff() > 1e-12 * scale)
      throw InvalidParameter("covariance matrix is not symmetric");
    m_ = 0.5 * (m_ + m_.transpose());
    chol_ = cholesky_lower(m_, "covariance matrix");
  }

  [[nodiscard]] Eigen::Index dim() const { return m_.rows(); }
  [[nodiscard]] const Matrix& matrix() const { return m_; }
  [[nodiscard]] const Matrix& cholesky() const { return chol_; }
  [[nodiscard]] double operator()(Eigen::Index i, Eigen::Index j) const { return m_(i, j); }

 private:
  Matrix m_;
  Matrix chol_;
};

/// Spatial-power covariance: entry (i,j) = sqrt(v_i v_j) rho^{|t_i - t_j| / |t_1 - t_0|}.
inline CovMatrix spatial_power_cov(std::span<const double> variances, std::span<const double> weeks, double rho) {
  const auto n = variances.size();
  if (n != weeks.size()) throw InvalidParameter("variances and visit weeks differ in length");
  if (n < 2) throw InvalidParameter("spatial power structure needs at least two visits");
  if (!(rho > 0 && rho < 1)) throw InvalidParameter("rho must lie in (0, 1)");
  for (std::size_t i = 0; i < n; ++i) {
    if (!(variances[i] > 0)) throw InvalidParameter("variances must be positive");
    if (i > 0 && !(weeks[i] > weeks[i - 1])) throw InvalidParameter("visit weeks must be strictly increasing");
  }
  const double unit = std::abs(weeks[1] - weeks[0]);
  Matrix m(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      m(i, j) = std::sqrt(variances[i] * variances[j]) * std::pow(rho, std::abs(weeks[i] - weeks[j]) / unit);
  return CovMatrix(std::move(m));
}

template <class URBG>
Vector standard_normal_vector(Eigen::Index n, URBG& rng) {
  std::normal_distribution<double> z;
  Vector v(n);
  for (Eigen::Index i = 0; i < n; ++i) v[i] = z(rng);
  return v;
}

template <class URBG>
Vector mvn_sample(const Vector& mean, const CovMatrix& cov, URBG& rng) {
  if (mean.size() != cov.dim()) throw InvalidParameter("mean and covariance dimensions differ");
  return mean + cov.cholesky().template triangularView<Eigen::Lower>() * standard_normal_vector(mean.size(), rng);
}

/// Draw from N(mean, L L^T) given a lower factor L (may be empty).
template <class URBG>
Vector mvn_sample_factor(const Vector& mean, const Matrix& lower, URBG& rng) {
  if (mean.size() == 0) return mean;
  return mean + lower.triangularView<Eigen::Lower>() * standard_normal_vector(mean.size(), rng);
}

struct ObservedValue {
  Eigen::Index index;
  double value;
};

struct ConditionalNormal {
  std::vector<Eigen::Index> missing;  ///< unobserved coordinates, ascending
  Vector mean;                        ///< conditional mean over `missing`
  Matrix cov;                         ///< conditional covariance over `missing`
};

/// Gaussian conditional moments of the unobserved coordinates given observed
/// values. Uses a solve against the observed block; no explicit inverse.
inline ConditionalNormal mvn_condition(const Vector& mean, const Matrix& cov, std::span<const ObservedValue> observed) {
  const Eigen::Index d = mean.size();
  if (cov.rows() != d || cov.cols() != d) throw InvalidParameter("mean and covariance dimensions differ");
  std::vector<char> is_obs(d, 0);
  std::vector<Eigen::Index> obs_idx;
  for (const auto& o : observed) {
    if (o.index < 0 || o.index >= d) throw InvalidParameter("observed index out of range");
    if (is_obs[o.index]) throw InvalidParameter("observed index repeated");
    is_obs[o.index] = 1;
  }
  for (Eigen::Index i = 0; i < d; ++i)
    if (is_obs[i]) obs_idx.push_back(i);
  Vector obs_val(obs_idx.size());
  for (const auto& o : observed) {
    auto pos = std::lower_bound(obs_idx.begin(), obs_idx.end(), o.index) - obs_idx.begin();
    obs_val[pos] = o.value;
  }

  ConditionalNormal out;
  for (Eigen::Index i = 0; i < d; ++i)
    if (!is_obs[i]) out.missing.push_back(i);
  const auto nm = static_cast<Eigen::Index>(out.missing.size());
  const auto no = static_cast<Eigen::Index>(obs_idx.size());
  out.mean.resize(nm);
  out.cov.resize(nm, nm);
  for (Eigen::Index a = 0; a < nm; ++a) {
    out.mean[a] = mean[out.missing[a]];
    for (Eigen::Index b = 0; b < nm; ++b) out.cov(a, b) = cov(out.missing[a], out.missing[b]);
  }
  if (no == 0 || nm == 0) return out;

  Matrix s_oo(no, no), s_mo(nm, no);
  Vector resid(no);
  for (Eigen::Index a = 0; a < no; ++a) {
    resid[a] = obs_val[a] - mean[obs_idx[a]];
    for (Eigen::Index b = 0; b < no; ++b) s_oo(a, b) = cov(obs_idx[a], obs_idx[b]);
  }
  for (Eigen::Index a = 0; a < nm; ++a)
    for (Eigen::Index b = 0; b < no; ++b) s_mo(a, b) = cov(out.missing[a], obs_idx[b]);

  const Matrix l = cholesky_lower(s_oo, "observed covariance block");
  const auto lv = l.triangularView<Eigen::Lower>();
  // whitened: s_mo L^{-T}
  const Matrix a = lv.solve(Matrix(s_mo.transpose())).transpose();
  out.mean += a * lv.solve(resid);
  out.cov -= a * a.transpose();
  out.cov = 0.5 * (out.cov + out.cov.transpose());
  return out;
}

inline double log_det_from_cholesky(const Matrix& lower) {
  double s = 0;
  for (Eigen::Index i = 0; i < lower.rows(); ++i) s += std::log(lower(i, i));
  return 2.0 * s;
}

}  // namespace tpsim
