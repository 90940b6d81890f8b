#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>

#include "tpsim/error.hpp"
#include "tpsim/numcore/linalg.hpp"

namespace tpsim {

inline constexpr int kVisits = 6;      ///< baseline plus five post-baseline visits
inline constexpr int kPostVisits = 5;  ///< J
inline constexpr int kOnTreatmentPattern = 6;

enum class Arm : int { Control = 0, Treatment = 1 };
enum class IeMechanism { Dar, Dnar };
enum class ShiftModel { Instant, Gradual };

/// How the missingness parameter theta maps to the per-visit dropout hazard.
enum class MissingnessScale {
  Probability,  ///< hazard = theta
  Logit,        ///< hazard = expit(theta)
};

inline constexpr std::array<Arm, 2> kArms{Arm::Control, Arm::Treatment};
inline constexpr std::array<double, 6> kThetaGrid{0.1, 0.2, 0.3, 0.4, 0.5, 0.6};

inline int arm_index(Arm a) { return static_cast<int>(a); }

inline std::string_view to_string(Arm a) { return a == Arm::Control ? "C" : "T"; }
inline std::string_view to_string(IeMechanism m) { return m == IeMechanism::Dar ? "DAR" : "DNAR"; }
inline std::string_view to_string(ShiftModel s) { return s == ShiftModel::Instant ? "Instant" : "Gradual"; }
inline std::string_view to_string(MissingnessScale s) { return s == MissingnessScale::Probability ? "probability" : "logit"; }

/// Logistic IE hazard coefficients for visits 1..5:
/// logit p_j = intercept_j + baseline_j Y_0 + previous_j Y_{j-1} [+ current_j Y_j].
struct IeCoefficients {
  std::array<double, kPostVisits> intercept{};
  std::array<double, kPostVisits> baseline{};
  std::array<double, kPostVisits> previous{};
  std::optional<std::array<double, kPostVisits>> current;
};

/// Off-treatment shift: Instant adds `instant` from the first affected visit;
/// Gradual adds a * min(s, b) / b at s visits after it.
struct ShiftParameters {
  double instant = 0;
  double gradual_a = 0;
  double gradual_b = 3;
};

struct ArmParameters {
  std::array<double, kVisits> means{};
  std::array<double, kVisits> variances{};
  IeCoefficients dar;
  IeCoefficients dnar;
  ShiftParameters shift;
};

struct ScenarioConfig {
  int n_per_arm = 200;
  std::array<double, kVisits> visit_weeks{0, 4, 8, 14, 20, 26};
  double rho = 0.8;
  ArmParameters control;
  ArmParameters treatment;
  IeMechanism mechanism = IeMechanism::Dar;
  ShiftModel shift_model = ShiftModel::Instant;
  double missingness_theta = 0.1;
  MissingnessScale missingness_scale = MissingnessScale::Probability;
  bool allow_offgrid = false;
  std::uint64_t root_seed = 20240101;
  bool null_mode = false;

  /// Generative parameters for an arm; null mode gives both arms the control set.
  [[nodiscard]] const ArmParameters& arm(Arm a) const {
    return (a == Arm::Control || null_mode) ? control : treatment;
  }

  [[nodiscard]] const IeCoefficients& ie_coefficients(Arm a) const {
    return mechanism == IeMechanism::Dar ? arm(a).dar : arm(a).dnar;
  }

  [[nodiscard]] CovMatrix covariance(Arm a) const {
    return spatial_power_cov(arm(a).variances, visit_weeks, rho);
  }

  [[nodiscard]] double missingness_hazard() const;

  [[nodiscard]] int theta_scenario() const;

  void validate() const;
};

/// 1-based index of theta within the standard grid, or 0 when off-grid.
inline int theta_grid_index(double theta) {
  for (std::size_t i = 0; i < kThetaGrid.size(); ++i)
    if (std::abs(theta - kThetaGrid[i]) < 1e-9) return static_cast<int>(i) + 1;
  return 0;
}

inline double ScenarioConfig::missingness_hazard() const {
  return missingness_scale == MissingnessScale::Probability ? missingness_theta
                                                            : 1.0 / (1.0 + std::exp(-missingness_theta));
}

inline int ScenarioConfig::theta_scenario() const { return theta_grid_index(missingness_theta); }

inline void ScenarioConfig::validate() const {
  if (n_per_arm < 2) throw InvalidParameter("n_per_arm must be at least 2");
  if (!(rho > 0 && rho < 1)) throw InvalidParameter("rho must lie in (0, 1)");
  for (int j = 1; j < kVisits; ++j)
    if (!(visit_weeks[j] > visit_weeks[j - 1])) throw InvalidParameter("visit weeks must be strictly increasing");
  if (!std::isfinite(missingness_theta)) throw InvalidParameter("missingness theta must be finite");
  if (!allow_offgrid && theta_grid_index(missingness_theta) == 0)
    throw InvalidParameter("missingness theta " + std::to_string(missingness_theta) +
                           " is off the grid {0.1, 0.2, 0.3, 0.4, 0.5, 0.6}");
  if (missingness_scale == MissingnessScale::Probability && !(missingness_theta >= 0 && missingness_theta <= 1))
    throw InvalidParameter("missingness theta must be a probability on the probability scale");
  for (const ArmParameters* p : {&control, &treatment}) {
    for (double v : p->variances)
      if (!(v > 0)) throw InvalidParameter("variances must be positive");
    if (p->dar.current) throw InvalidParameter("DAR coefficients must not include a current-visit term");
    if (!p->dnar.current) throw InvalidParameter("DNAR coefficients need a current-visit term");
    if (!(p->shift.gradual_b > 0)) throw InvalidParameter("gradual shift needs b > 0");
  }
  (void)covariance(Arm::Control);
  (void)covariance(Arm::Treatment);
}

/// PIONEER 1 calibrated parameters (on-treatment means and variances, DAR and
/// DNAR discontinuation hazards, Instant/Gradual shifts).
inline ScenarioConfig pioneer1_defaults() {
  ScenarioConfig cfg;
  cfg.treatment.means = {7.92, 7.55, 7.2, 7.1, 7.05, 7.05};
  cfg.control.means = {7.92, 7.82, 7.8, 7.8, 7.78, 7.78};
  cfg.treatment.variances = {0.48, 0.75, 0.8, 0.9, 1.06, 1.14};
  cfg.control.variances = {0.48, 0.8, 1.1, 1.4, 1.23, 1.48};

  IeCoefficients dar;
  dar.intercept = {-15, -15, -15, -15, -15};
  dar.baseline = {0, 0.3, 0.1, 0.05, 0};
  cfg.treatment.dar = dar;
  cfg.control.dar = dar;
  cfg.treatment.dar.previous = {1.42, 1.14, 1.47, 1.48, 1.40};
  cfg.control.dar.previous = {1.42, 1.14, 1.33, 1.51, 1.46};

  cfg.treatment.dnar = cfg.treatment.dar;
  cfg.control.dnar = cfg.control.dar;
  cfg.treatment.dnar.intercept = {-21, -21, -21, -21, -21};
  cfg.control.dnar.intercept = {-21, -21, -21, -21, -21};
  cfg.treatment.dnar.current = std::array<double, kPostVisits>{0.72, 0.75, 0.77, 0.77, 0.76};
  cfg.control.dnar.current = std::array<double, kPostVisits>{0.69, 0.69, 0.69, 0.72, 0.72};

  cfg.treatment.shift = {-0.2, -0.25, 3};
  cfg.control.shift = {-0.6, -0.8, 3};
  return cfg;
}

}  // namespace tpsim
