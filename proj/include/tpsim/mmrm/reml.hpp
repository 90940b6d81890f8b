#pragma once

#include <cmath>
#include <limits>
#include <numbers>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "tpsim/error.hpp"
#include "tpsim/mmrm/design.hpp"
#include "tpsim/numcore/linalg.hpp"
#include "tpsim/numcore/rng.hpp"

namespace tpsim {

/// Unstructured covariance parameters are indexed by lower-triangle pairs
/// (row >= col), row-major: (0,0), (1,0), (1,1), (2,0), ...
inline std::vector<std::pair<int, int>> vech_pairs(int d) {
  std::vector<std::pair<int, int>> out;
  for (int r = 0; r < d; ++r)
    for (int c = 0; c <= r; ++c) out.emplace_back(r, c);
  return out;
}

/// Log-Cholesky parameterisation: Sigma = L L^T, theta holds the strict lower
/// triangle of L and the logs of its diagonal.
inline Matrix lower_from_theta(const Vector& theta, int d) {
  Matrix l = Matrix::Zero(d, d);
  int k = 0;
  for (auto [r, c] : vech_pairs(d)) l(r, c) = r == c ? std::exp(theta[k++]) : theta[k++];
  return l;
}

inline Matrix sigma_from_theta(const Vector& theta, int d) {
  const Matrix l = lower_from_theta(theta, d);
  return l * l.transpose();
}

inline Vector theta_from_sigma(const Matrix& sigma) {
  const Matrix l = cholesky_lower(sigma, "covariance");
  const int d = static_cast<int>(sigma.rows());
  Vector theta(d * (d + 1) / 2);
  int k = 0;
  for (auto [r, c] : vech_pairs(d)) theta[k++] = r == c ? std::log(l(r, c)) : l(r, c);
  return theta;
}

/// d vech(Sigma) / d theta.
inline Matrix sigma_theta_jacobian(const Vector& theta, int d) {
  const Matrix l = lower_from_theta(theta, d);
  const auto pairs = vech_pairs(d);
  const auto q = static_cast<Eigen::Index>(pairs.size());
  Matrix j = Matrix::Zero(q, q);
  for (Eigen::Index t = 0; t < q; ++t) {
    const auto [k, m] = pairs[t];
    const double scale = k == m ? l(k, k) : 1.0;
    for (Eigen::Index s = 0; s < q; ++s) {
      const auto [r, c] = pairs[s];
      // dSigma/dL_km = e_k l_m^T + l_m e_k^T, with l_m the m-th column of L
      double v = 0;
      if (r == k) v += l(c, m);
      if (c == k) v += l(r, m);
      j(s, t) = v * scale;
    }
  }
  return j;
}

namespace detail {

inline void add_block(Matrix& m, int ro, int co, double w, const Matrix& s) {
  m.block(ro, co, s.rows(), s.cols()).noalias() += w * s;
}

inline int local_index(const MaskGroup& g, int visit0) {
  for (std::size_t a = 0; a < g.visits.size(); ++a)
    if (g.visits[a] - 1 == visit0) return static_cast<int>(a);
  return -1;
}

}  // namespace detail

/// Everything the likelihood, its gradient and the information need at one
/// covariance value.
struct RemlEvaluation {
  double loglik = -std::numeric_limits<double>::infinity();
  Matrix sigma;
  Vector beta;
  Matrix phi;  ///< (X^T V^-1 X)^-1
  std::vector<Matrix> vinv;
  std::vector<Matrix> kmat;   ///< K(a,b) = tr(Phi_ab S_ab^T)
  std::vector<Matrix> resid;  ///< sum of residual cross products per group
  Matrix gradient;            ///< dl = tr(G dSigma)
};

inline RemlEvaluation reml_evaluate(const MmrmDesign& design, const MmrmData& data, const Matrix& sigma) {
  RemlEvaluation ev;
  ev.sigma = sigma;
  const int p = design.p();
  const int d = static_cast<int>(sigma.rows());
  Matrix xtvx = Matrix::Zero(p, p);
  Vector xtvy = Vector::Zero(p);
  double logdet_v = 0;
  ev.vinv.resize(data.groups.size());
  for (std::size_t gi = 0; gi < data.groups.size(); ++gi) {
    const auto& g = data.groups[gi];
    const auto k = static_cast<Eigen::Index>(g.visits.size());
    Matrix v(k, k);
    for (Eigen::Index a = 0; a < k; ++a)
      for (Eigen::Index b = 0; b < k; ++b) v(a, b) = sigma(g.visits[a] - 1, g.visits[b] - 1);
    const Matrix l = cholesky_lower(v, "marginal covariance");
    logdet_v += g.n * log_det_from_cholesky(l);
    const auto lv = l.triangularView<Eigen::Lower>();
    const Matrix linv = lv.solve(Matrix::Identity(k, k));
    ev.vinv[gi] = linv.transpose() * linv;
    const Matrix& w = ev.vinv[gi];
    for (Eigen::Index a = 0; a < k; ++a) {
      const int oa = design.offset(g.visits[a]);
      for (Eigen::Index b = 0; b < k; ++b) {
        detail::add_block(xtvx, oa, design.offset(g.visits[b]), w(a, b), g.sxx[a][b]);
        xtvy.segment(oa, g.sxy[a][b].size()).noalias() += w(a, b) * g.sxy[a][b];
      }
    }
  }
  Matrix lx;
  try {
    lx = cholesky_lower(xtvx, "fixed-effect information");
  } catch (const NotPositiveDefinite&) {
    throw RankDeficient("fixed-effect design is rank deficient");
  }
  const auto lxv = lx.triangularView<Eigen::Lower>();
  const Matrix lxinv = lxv.solve(Matrix::Identity(p, p));
  ev.phi = lxinv.transpose() * lxinv;
  ev.beta = ev.phi * xtvy;

  double quad = 0;
  ev.resid.resize(data.groups.size());
  ev.kmat.resize(data.groups.size());
  ev.gradient = Matrix::Zero(d, d);
  for (std::size_t gi = 0; gi < data.groups.size(); ++gi) {
    const auto& g = data.groups[gi];
    const auto k = static_cast<Eigen::Index>(g.visits.size());
    Matrix r(k, k), kk(k, k);
    for (Eigen::Index a = 0; a < k; ++a) {
      const auto ba = ev.beta.segment(design.offset(g.visits[a]), design.size(g.visits[a]));
      for (Eigen::Index b = 0; b < k; ++b) {
        const auto bb = ev.beta.segment(design.offset(g.visits[b]), design.size(g.visits[b]));
        r(a, b) = g.syy(a, b) - ba.dot(g.sxy[a][b]) - bb.dot(g.sxy[b][a]) + ba.dot(g.sxx[a][b] * bb);
        kk(a, b) = ev.phi.block(design.offset(g.visits[a]), design.offset(g.visits[b]), g.sxx[a][b].rows(),
                                g.sxx[a][b].cols())
                       .cwiseProduct(g.sxx[a][b])
                       .sum();
      }
    }
    ev.resid[gi] = r;
    ev.kmat[gi] = kk;
    const Matrix& w = ev.vinv[gi];
    quad += (w.cwiseProduct(r)).sum();
    const Matrix gg = -0.5 * (g.n * w - w * r * w - w * kk * w);
    for (Eigen::Index a = 0; a < k; ++a)
      for (Eigen::Index b = 0; b < k; ++b) ev.gradient(g.visits[a] - 1, g.visits[b] - 1) += gg(a, b);
  }
  const double n_minus_p = data.n_obs - p;
  ev.loglik = -0.5 * (logdet_v + log_det_from_cholesky(lx) + quad + n_minus_p * std::log(2 * std::numbers::pi));
  return ev;
}

/// Score with respect to vech(Sigma).
inline Vector sigma_score(const Matrix& gradient) {
  const int d = static_cast<int>(gradient.rows());
  const auto pairs = vech_pairs(d);
  Vector s(pairs.size());
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const auto [r, c] = pairs[i];
    s[i] = r == c ? gradient(r, r) : gradient(r, c) + gradient(c, r);
  }
  return s;
}

/// Expected REML information I_ij = tr(P V_i P V_j) / 2 for vech(Sigma), and
/// optionally the matrices X^T V^-1 V_i V^-1 X.
inline Matrix reml_information(const MmrmDesign& design, const MmrmData& data, const RemlEvaluation& ev,
                               std::vector<Matrix>* p_mats = nullptr) {
  const int d = static_cast<int>(ev.sigma.rows());
  const int p = design.p();
  const auto pairs = vech_pairs(d);
  const auto q = static_cast<int>(pairs.size());
  Matrix t1 = Matrix::Zero(q, q), t2 = Matrix::Zero(q, q);
  std::vector<Matrix> pm(q, Matrix::Zero(p, p));
  for (std::size_t gi = 0; gi < data.groups.size(); ++gi) {
    const auto& g = data.groups[gi];
    const Matrix& w = ev.vinv[gi];
    const Matrix wk = w * ev.kmat[gi];
    const auto k = static_cast<Eigen::Index>(g.visits.size());
    std::vector<std::pair<int, int>> loc(q);
    for (int i = 0; i < q; ++i)
      loc[i] = {detail::local_index(g, pairs[i].first), detail::local_index(g, pairs[i].second)};
    // tr(M A_j) for the sparse symmetric indicator A_j
    auto tr_with = [&](const Matrix& m, int j) {
      const auto [a, b] = loc[j];
      if (a < 0 || b < 0) return 0.0;
      return a == b ? m(a, a) : m(a, b) + m(b, a);
    };
    for (int i = 0; i < q; ++i) {
      const auto [a, b] = loc[i];
      if (a < 0 || b < 0) continue;
      Matrix di = w.col(a) * w.row(b);
      if (a != b) di += w.col(b) * w.row(a);
      const Matrix h = wk * di;
      for (int j = 0; j < q; ++j) {
        t1(i, j) += g.n * tr_with(di, j);
        t2(i, j) += tr_with(h, j);
      }
      for (Eigen::Index x = 0; x < k; ++x)
        for (Eigen::Index y = 0; y < k; ++y)
          detail::add_block(pm[i], design.offset(g.visits[x]), design.offset(g.visits[y]), di(x, y), g.sxx[x][y]);
    }
  }
  std::vector<Matrix> z(q);
  for (int i = 0; i < q; ++i) z[i] = ev.phi * pm[i];
  Matrix info(q, q);
  for (int i = 0; i < q; ++i)
    for (int j = 0; j <= i; ++j) {
      const double t3 = z[i].cwiseProduct(z[j].transpose()).sum();
      info(i, j) = info(j, i) = 0.5 * (t1(i, j) - 2 * 0.5 * (t2(i, j) + t2(j, i)) + t3);
    }
  if (p_mats) *p_mats = std::move(pm);
  return info;
}

struct RemlOptions {
  int max_iterations = 200;
  double rel_tolerance = 1e-8;
  double gradient_tolerance = 1e-5;
  int restarts = 3;
  double jitter = 0.1;
};

/// Complete-pairs covariance of per-visit OLS residuals.
inline Matrix reml_start(const TrialDataset& ds, const MmrmDesign& design) {
  const int d = kPostVisits;
  std::vector<std::vector<double>> res(d, std::vector<double>(ds.patients.size(), 0.0));
  std::vector<int> df(d);
  for (int v = 1; v <= d; ++v) {
    const int pv = design.size(v);
    Matrix xtx = Matrix::Zero(pv, pv);
    Vector xty = Vector::Zero(pv);
    int n = 0;
    for (const auto& p : ds.patients) {
      if (!p.observed(v)) continue;
      const Vector x = design.local_row(p, v);
      xtx.noalias() += x * x.transpose();
      xty += x * p.change(v);
      ++n;
    }
    if (n <= pv) throw RankDeficient("too few observations at visit " + std::to_string(v));
    const Vector b = xtx.ldlt().solve(xty);
    for (std::size_t i = 0; i < ds.patients.size(); ++i) {
      const auto& p = ds.patients[i];
      if (p.observed(v)) res[v - 1][i] = p.change(v) - design.local_row(p, v).dot(b);
    }
    df[v - 1] = n - pv;
  }
  Matrix s = Matrix::Zero(d, d);
  for (int a = 0; a < d; ++a)
    for (int b = 0; b <= a; ++b) {
      double acc = 0;
      int n = 0;
      for (std::size_t i = 0; i < ds.patients.size(); ++i) {
        const auto& p = ds.patients[i];
        if (p.observed(a + 1) && p.observed(b + 1)) {
          acc += res[a][i] * res[b][i];
          ++n;
        }
      }
      s(a, b) = s(b, a) = a == b ? acc / df[a] : (n > 1 ? acc / n : 0.0);
    }
  // pairwise estimates need not be jointly PD; shrink correlations until they are
  for (int it = 0; it < 60; ++it) {
    Eigen::LLT<Matrix> llt(s);
    if (llt.info() == Eigen::Success && llt.matrixL().toDenseMatrix().diagonal().minCoeff() > 1e-6) break;
    const Vector dg = s.diagonal();
    s *= 0.9;
    s.diagonal() = dg;
  }
  return s;
}

/// Converged REML fit plus what Kenward-Roger inference needs.
struct MmrmFit {
  Vector beta;
  Matrix coef_cov;     ///< (X^T V^-1 X)^-1 at Sigma-hat
  Matrix coef_cov_kr;  ///< Kenward-Roger adjusted
  Matrix sigma;
  double reml_loglik = 0;
  bool converged = false;
  int n_iterations = 0;
  double gradient_norm = 0;
  int n_subjects = 0;
  int n_obs = 0;
  Matrix info_inverse;          ///< W: inverse expected information for vech(Sigma)
  std::vector<Matrix> p_mats;   ///< X^T V^-1 V_i V^-1 X

  /// Satterthwaite / Kenward-Roger df for a single-row contrast.
  [[nodiscard]] double contrast_df(const Vector& l) const {
    const Vector u = coef_cov * l;
    const double c = l.dot(u);
    Vector gvec(p_mats.size());
    for (std::size_t i = 0; i < p_mats.size(); ++i) gvec[i] = u.dot(p_mats[i] * u);
    const double denom = gvec.dot(info_inverse * gvec);
    if (!(denom > 0)) return std::numeric_limits<double>::infinity();
    return 2 * c * c / denom;
  }

  [[nodiscard]] Matrix contrast_cov(const Matrix& l, bool kenward_roger) const {
    return l.transpose() * (kenward_roger ? coef_cov_kr : coef_cov) * l;
  }
};

namespace detail {

struct OptimResult {
  Vector theta;
  RemlEvaluation ev;
  bool converged = false;
  int iterations = 0;
  double gradient_norm = 0;
};

inline OptimResult fisher_scoring(const MmrmDesign& design, const MmrmData& data, Vector theta, const RemlOptions& opt) {
  const int d = kPostVisits;
  OptimResult out;
  out.ev = reml_evaluate(design, data, sigma_from_theta(theta, d));
  double prev = out.ev.loglik;
  for (int it = 0; it < opt.max_iterations; ++it) {
    const Matrix j = sigma_theta_jacobian(theta, d);
    const Vector score = j.transpose() * sigma_score(out.ev.gradient);
    out.gradient_norm = score.norm();
    out.iterations = it;
    const double rel = std::abs(out.ev.loglik - prev) / std::max(1.0, std::abs(out.ev.loglik));
    if (it > 0 && rel <= opt.rel_tolerance && out.gradient_norm <= opt.gradient_tolerance) {
      out.converged = true;
      break;
    }
    const Matrix info = j.transpose() * reml_information(design, data, out.ev) * j;
    Vector step = info.ldlt().solve(score);
    if (!step.allFinite()) step = score;
    double t = 1.0;
    bool accepted = false;
    for (int h = 0; h < 40 && !accepted; ++h, t *= 0.5) {
      const Vector cand = theta + t * step;
      try {
        auto ev = reml_evaluate(design, data, sigma_from_theta(cand, d));
        if (ev.loglik >= out.ev.loglik - 1e-10 * std::abs(out.ev.loglik)) {
          prev = out.ev.loglik;
          theta = cand;
          out.ev = std::move(ev);
          accepted = true;
        }
      } catch (const NotPositiveDefinite&) {
      }
    }
    if (!accepted) {
      out.converged = out.gradient_norm <= opt.gradient_tolerance;
      break;
    }
  }
  out.theta = theta;
  return out;
}

}  // namespace detail

inline MmrmFit reml_fit(const TrialDataset& ds, const MmrmDesign& design, const RemlOptions& opt = {}) {
  const MmrmData data = build_mmrm_data(ds, design);
  if (data.n_subjects < kPostVisits + 1 + design.p() / kPostVisits)
    throw RankDeficient("too few subjects for the fixed-effect structure");
  const Vector theta0 = theta_from_sigma(reml_start(ds, design));
  detail::OptimResult best = detail::fisher_scoring(design, data, theta0, opt);
  Engine jitter_rng = RngStream(0x5eed, {static_cast<std::uint64_t>(design.p())}).engine();
  std::normal_distribution<double> z;
  for (int r = 0; r < opt.restarts && !best.converged; ++r) {
    Vector t = theta0;
    for (Eigen::Index i = 0; i < t.size(); ++i) t[i] += opt.jitter * z(jitter_rng);
    try {
      auto res = detail::fisher_scoring(design, data, t, opt);
      if (res.converged || res.ev.loglik > best.ev.loglik) best = std::move(res);
    } catch (const NotPositiveDefinite&) {
    }
  }
  if (!best.converged)
    throw ConvergenceError("REML did not converge: loglik " + std::to_string(best.ev.loglik) + ", gradient norm " +
                           std::to_string(best.gradient_norm) + " after " + std::to_string(best.iterations) +
                           " iterations");

  MmrmFit fit;
  const auto& ev = best.ev;
  fit.beta = ev.beta;
  fit.coef_cov = ev.phi;
  fit.sigma = ev.sigma;
  fit.reml_loglik = ev.loglik;
  fit.converged = true;
  fit.n_iterations = best.iterations;
  fit.gradient_norm = best.gradient_norm;
  fit.n_subjects = data.n_subjects;
  fit.n_obs = data.n_obs;

  const Matrix info = reml_information(design, data, ev, &fit.p_mats);
  Eigen::LDLT<Matrix> ldlt(info);
  fit.info_inverse = ldlt.solve(Matrix::Identity(info.rows(), info.cols()));

  // Kenward-Roger: Phi_A = Phi + 2 Phi [sum_ij W_ij (Q_ij - P_i Phi P_j)] Phi
  const int p = design.p();
  const auto pairs = vech_pairs(kPostVisits);
  const auto q = static_cast<int>(pairs.size());
  const Matrix& wm = fit.info_inverse;
  Matrix qsum = Matrix::Zero(p, p);
  for (std::size_t gi = 0; gi < data.groups.size(); ++gi) {
    const auto& g = data.groups[gi];
    const Matrix& w = ev.vinv[gi];
    const auto k = static_cast<Eigen::Index>(g.visits.size());
    std::vector<Matrix> a(q, Matrix::Zero(k, k));
    for (int i = 0; i < q; ++i) {
      const int la = detail::local_index(g, pairs[i].first), lb = detail::local_index(g, pairs[i].second);
      if (la < 0 || lb < 0) continue;
      a[i](la, lb) = 1;
      a[i](lb, la) = 1;
    }
    Matrix mbar = Matrix::Zero(k, k);
    for (int i = 0; i < q; ++i) {
      if (a[i].isZero()) continue;
      Matrix abar = Matrix::Zero(k, k);
      for (int j = 0; j < q; ++j) abar += wm(i, j) * a[j];
      mbar += w * a[i] * w * abar * w;
    }
    for (Eigen::Index x = 0; x < k; ++x)
      for (Eigen::Index y = 0; y < k; ++y)
        detail::add_block(qsum, design.offset(g.visits[x]), design.offset(g.visits[y]), mbar(x, y), g.sxx[x][y]);
  }
  Matrix psum = Matrix::Zero(p, p);
  for (int i = 0; i < q; ++i) {
    Matrix ptilde = Matrix::Zero(p, p);
    for (int j = 0; j < q; ++j) ptilde += wm(i, j) * fit.p_mats[j];
    psum += fit.p_mats[i] * ev.phi * ptilde;
  }
  const Matrix adj = qsum - psum;
  fit.coef_cov_kr = ev.phi + 2 * ev.phi * (0.5 * (adj + adj.transpose())) * ev.phi;
  return fit;
}

}  // namespace tpsim
