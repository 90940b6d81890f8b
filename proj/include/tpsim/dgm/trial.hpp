#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "tpsim/dgm/config.hpp"
#include "tpsim/error.hpp"

namespace tpsim {

/// One simulated patient. Visit indices run 0..5 with 0 = baseline.
struct PatientRecord {
  Arm arm = Arm::Control;
  std::array<double, kVisits> y_on{};     ///< on-treatment (hypothetical) trajectory
  std::optional<int> ie_visit;            ///< first IE-affected visit, 1..5
  std::array<double, kVisits> y_tilde{};  ///< trajectory including off-treatment shifts
  std::array<bool, kPostVisits> missing{};

  [[nodiscard]] double baseline() const { return y_on[0]; }
  /// IE pattern 1..5, or 6 for patients without an IE.
  [[nodiscard]] int pattern() const { return ie_visit.value_or(kOnTreatmentPattern); }
  /// D: the IE happened before `visit`.
  [[nodiscard]] bool ie_status(int visit) const { return ie_visit && visit >= *ie_visit; }
  /// P: `visit` is the first IE-affected visit.
  [[nodiscard]] bool ie_pattern(int visit) const { return ie_visit && visit == *ie_visit; }
  [[nodiscard]] bool observed(int visit) const { return visit == 0 || !missing[visit - 1]; }
  [[nodiscard]] double change(int visit) const { return y_tilde[visit] - y_on[0]; }
  /// Number of post-baseline visits observed (missingness is monotone).
  [[nodiscard]] int n_observed() const {
    int k = 0;
    while (k < kPostVisits && !missing[k]) ++k;
    return k;
  }
};

struct TrialDataset {
  std::vector<PatientRecord> patients;
  std::array<double, kVisits> visit_weeks{0, 4, 8, 14, 20, 26};

  [[nodiscard]] int size() const { return static_cast<int>(patients.size()); }

  [[nodiscard]] int count(Arm a) const {
    int n = 0;
    for (const auto& p : patients) n += p.arm == a;
    return n;
  }

  /// Mean baseline over every randomized patient (both arms).
  [[nodiscard]] double baseline_mean() const {
    double s = 0;
    for (const auto& p : patients) s += p.baseline();
    return patients.empty() ? 0.0 : s / static_cast<double>(patients.size());
  }

  [[nodiscard]] bool any_missing() const {
    for (const auto& p : patients)
      for (bool m : p.missing)
        if (m) return true;
    return false;
  }

  /// Same patients with every outcome observed.
  [[nodiscard]] TrialDataset without_missingness() const {
    TrialDataset out = *this;
    for (auto& p : out.patients) p.missing.fill(false);
    return out;
  }

  /// Checks the structural invariants: missing only after the IE, monotone
  /// missingness, and pre-IE values unshifted.
  void validate() const {
    for (std::size_t i = 0; i < patients.size(); ++i) {
      const auto& p = patients[i];
      const std::string who = "patient " + std::to_string(i);
      if (p.ie_visit && (*p.ie_visit < 1 || *p.ie_visit > kPostVisits)) throw InvalidParameter(who + ": IE visit out of range");
      bool seen_missing = false;
      for (int j = 1; j <= kPostVisits; ++j) {
        const bool m = p.missing[j - 1];
        if (m && !p.ie_status(j)) throw InvalidParameter(who + ": missing before the IE");
        if (seen_missing && !m) throw InvalidParameter(who + ": intermittent missingness");
        seen_missing = seen_missing || m;
      }
      for (int j = 0; j < kVisits; ++j)
        if (!p.ie_status(j) && p.y_tilde[j] != p.y_on[j]) throw InvalidParameter(who + ": pre-IE value shifted");
    }
  }
};

}  // namespace tpsim
