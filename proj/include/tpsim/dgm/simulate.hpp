#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <vector>

#include "tpsim/dgm/config.hpp"
#include "tpsim/dgm/trial.hpp"
#include "tpsim/numcore/distributions.hpp"
#include "tpsim/numcore/linalg.hpp"
#include "tpsim/numcore/rng.hpp"

namespace tpsim {

/// Stage indices within a replicate's stream.
enum class Stage : std::uint64_t {
  OnTreatment = 0,
  Intercurrent = 1,
  Missingness = 2,
  Truth = 3,
  Analysis = 10,
};

/// Rows of on-treatment outcomes Y ~ MVN(mu_k, Sigma_k), one row per patient.
template <class URBG>
Matrix simulate_on_treatment(const ScenarioConfig& cfg, Arm arm, int n, URBG& rng) {
  const CovMatrix cov = cfg.covariance(arm);
  const auto& mu = cfg.arm(arm).means;
  const Vector mean = Eigen::Map<const Vector>(mu.data(), kVisits);
  Matrix y(n, kVisits);
  for (int i = 0; i < n; ++i) y.row(i) = mvn_sample(mean, cov, rng).transpose();
  return y;
}

/// Sequential logistic IE hazards; returns the first affected visit or none.
/// Five uniforms are consumed per patient whatever happens, so streams stay
/// aligned across parameter settings.
template <class URBG>
std::vector<std::optional<int>> simulate_ie(const ScenarioConfig& cfg, const Matrix& y_on, Arm arm, URBG& rng) {
  const IeCoefficients& b = cfg.ie_coefficients(arm);
  const bool dnar = cfg.mechanism == IeMechanism::Dnar;
  if (dnar && !b.current) throw InvalidParameter("DNAR mechanism needs current-visit coefficients");
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::vector<std::optional<int>> tau(y_on.rows());
  for (Eigen::Index i = 0; i < y_on.rows(); ++i) {
    for (int j = 1; j <= kPostVisits; ++j) {
      const double u = unif(rng);
      if (tau[i]) continue;
      double lp = b.intercept[j - 1] + b.baseline[j - 1] * y_on(i, 0) + b.previous[j - 1] * y_on(i, j - 1);
      if (dnar) lp += (*b.current)[j - 1] * y_on(i, j);
      if (u < expit(lp)) tau[i] = j;
    }
  }
  return tau;
}

/// Shift applied s = j - tau visits after the IE.
inline double offtreatment_shift(ShiftModel model, const ShiftParameters& p, int s) {
  if (model == ShiftModel::Instant) return p.instant;
  return p.gradual_a * std::min<double>(s, p.gradual_b) / p.gradual_b;
}

inline std::array<double, kVisits> apply_offtreatment_shift(const std::array<double, kVisits>& y_on, std::optional<int> tau,
                                                            ShiftModel model, const ShiftParameters& params) {
  auto y = y_on;
  if (!tau) return y;
  for (int j = *tau; j < kVisits; ++j) y[j] += offtreatment_shift(model, params, j - *tau);
  return y;
}

/// Monotone dropout after the IE with a constant per-visit hazard.
template <class URBG>
std::vector<std::array<bool, kPostVisits>> simulate_missingness(const std::vector<std::optional<int>>& tau, double hazard,
                                                                URBG& rng) {
  if (!std::isfinite(hazard)) throw InvalidParameter("missingness hazard must be finite");
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::vector<std::array<bool, kPostVisits>> miss(tau.size());
  for (std::size_t i = 0; i < tau.size(); ++i) {
    bool gone = false;
    for (int j = 1; j <= kPostVisits; ++j) {
      const double u = unif(rng);
      if (!gone && tau[i] && j >= *tau[i] && u < hazard) gone = true;
      miss[i][j - 1] = gone;
    }
  }
  return miss;
}

namespace detail {

inline RngStream replicate_stream(const ScenarioConfig& cfg, std::uint64_t replicate_id) {
  return RngStream(cfg.root_seed)
      .child({static_cast<std::uint64_t>(cfg.mechanism), static_cast<std::uint64_t>(cfg.null_mode), replicate_id});
}

template <class URBG1, class URBG2, class URBG3>
void simulate_arm(const ScenarioConfig& cfg, Arm arm, int n, URBG1& on_rng, URBG2& ie_rng, URBG3* miss_rng,
                  std::vector<PatientRecord>& out) {
  const Matrix y_on = simulate_on_treatment(cfg, arm, n, on_rng);
  const auto tau = simulate_ie(cfg, y_on, arm, ie_rng);
  std::vector<std::array<bool, kPostVisits>> miss(n);
  if (miss_rng) miss = simulate_missingness(tau, cfg.missingness_hazard(), *miss_rng);
  for (int i = 0; i < n; ++i) {
    PatientRecord p;
    p.arm = arm;
    for (int j = 0; j < kVisits; ++j) p.y_on[j] = y_on(i, j);
    p.ie_visit = tau[i];
    p.y_tilde = apply_offtreatment_shift(p.y_on, tau[i], cfg.shift_model, cfg.arm(arm).shift);
    p.missing = miss[i];
    out.push_back(p);
  }
}

}  // namespace detail

/// Full patient-level pipeline for one replicate: on-treatment outcomes, IE
/// times, off-treatment shifts, then dropout. Control patients come first.
inline TrialDataset generate_trial(const ScenarioConfig& cfg, std::uint64_t replicate_id) {
  cfg.validate();
  const RngStream base = detail::replicate_stream(cfg, replicate_id);
  TrialDataset ds;
  ds.visit_weeks = cfg.visit_weeks;
  ds.patients.reserve(2 * cfg.n_per_arm);
  for (Arm arm : kArms) {
    const auto a = static_cast<std::uint64_t>(arm);
    Engine on = base.child({static_cast<std::uint64_t>(Stage::OnTreatment), a}).engine();
    Engine ie = base.child({static_cast<std::uint64_t>(Stage::Intercurrent), a}).engine();
    Engine miss = base.child({static_cast<std::uint64_t>(Stage::Missingness), a}).engine();
    detail::simulate_arm(cfg, arm, cfg.n_per_arm, on, ie, &miss, ds.patients);
  }
  return ds;
}

struct TrueEstimand {
  double delta = 0;
  double mcse = 0;
};

/// Treatment-policy truth: T - C difference in mean change to the last visit
/// on the shifted trajectories, no missingness, n_big patients per arm.
inline TrueEstimand true_estimand(const ScenarioConfig& cfg, int n_big) {
  cfg.validate();
  if (n_big < 2) throw InvalidParameter("truth sample size must be at least 2");
  const RngStream base = RngStream(cfg.root_seed)
                             .child({static_cast<std::uint64_t>(cfg.mechanism), static_cast<std::uint64_t>(cfg.null_mode),
                                     static_cast<std::uint64_t>(Stage::Truth)});
  std::array<double, 2> mean{}, var{};
  constexpr int kChunk = 10000;
  for (Arm arm : kArms) {
    const auto a = static_cast<std::uint64_t>(arm);
    Engine on = base.child({0, a}).engine();
    Engine ie = base.child({1, a}).engine();
    // Welford over chunks keeps memory flat for large n_big.
    double m = 0, m2 = 0;
    long long count = 0;
    std::vector<PatientRecord> chunk;
    for (int done = 0; done < n_big; done += kChunk) {
      chunk.clear();
      detail::simulate_arm<Engine, Engine, Engine>(cfg, arm, std::min(kChunk, n_big - done), on, ie, nullptr, chunk);
      for (const auto& p : chunk) {
        const double x = p.change(kPostVisits);
        ++count;
        const double d = x - m;
        m += d / static_cast<double>(count);
        m2 += d * (x - m);
      }
    }
    mean[arm_index(arm)] = m;
    var[arm_index(arm)] = m2 / static_cast<double>(count - 1);
  }
  TrueEstimand t;
  t.delta = mean[1] - mean[0];
  t.mcse = std::sqrt((var[0] + var[1]) / n_big);
  return t;
}

}  // namespace tpsim
