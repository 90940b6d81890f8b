#pragma once

#include <algorithm>
#include <array>
#include <string>
#include <vector>

#include "tpsim/dgm/config.hpp"
#include "tpsim/dgm/trial.hpp"
#include "tpsim/error.hpp"

namespace tpsim {

/// Which IE covariate the coding feeds: binary status (MMRM2/MI2) or the
/// full IE-time pattern (MMRM3/MI3).
enum class CodingTarget { Status, Pattern };

inline std::string_view to_string(CodingTarget t) { return t == CodingTarget::Status ? "status" : "pattern"; }

/// Per-arm pattern counts plus the three indicator sets. Patterns are 1..6
/// (6 = never had an IE); visits 1..5.
struct PatternIssueReport {
  std::array<std::array<int, kOnTreatmentPattern>, 2> patients{};                          ///< [arm][pattern-1]
  std::array<std::array<std::array<int, kPostVisits>, kOnTreatmentPattern>, 2> observed{};  ///< [arm][pattern-1][visit-1]
  std::array<bool, kPostVisits> pattern_issue{};
  std::array<bool, kPostVisits> data_issue{};
  std::array<bool, kPostVisits> estimation_issue{};

  /// Patients in `arm` whose current status at `visit` is `pattern` (pattern 6
  /// collects everyone whose IE is still ahead).
  [[nodiscard]] int current_patients(int arm, int pattern, int visit) const {
    if (pattern <= visit) return patients[arm][pattern - 1];
    if (pattern != kOnTreatmentPattern) return 0;
    int n = 0;
    for (int p = visit + 1; p <= kOnTreatmentPattern; ++p) n += patients[arm][p - 1];
    return n;
  }

  [[nodiscard]] int current_observed(int arm, int pattern, int visit) const {
    if (pattern <= visit) return observed[arm][pattern - 1][visit - 1];
    if (pattern != kOnTreatmentPattern) return 0;
    int n = 0;
    for (int p = visit + 1; p <= kOnTreatmentPattern; ++p) n += observed[arm][p - 1][visit - 1];
    return n;
  }
};

inline PatternIssueReport detect_issues(const TrialDataset& ds) {
  PatternIssueReport r;
  for (const auto& p : ds.patients) {
    const int a = arm_index(p.arm);
    const int pat = p.pattern();
    r.patients[a][pat - 1] += 1;
    for (int v = 1; v <= kPostVisits; ++v) r.observed[a][pat - 1][v - 1] += p.observed(v);
  }
  for (int a = 0; a < 2; ++a) {
    for (int j = 1; j <= kPostVisits; ++j) {
      // missingness is monotone, so observed at the last visit means observed at j..5;
      // an empty pattern has nobody providing data and is an issue too
      if (r.observed[a][j - 1][kPostVisits - 1] == 0) r.pattern_issue[j - 1] = true;
      int post_n = 0, post_obs = 0;
      for (int p = 1; p <= j; ++p) {
        post_n += r.patients[a][p - 1];
        post_obs += r.observed[a][p - 1][j - 1];
      }
      if (post_obs == 0) r.data_issue[j - 1] = true;
      if (post_n > 0 && post_obs == 0) r.estimation_issue[j - 1] = true;
    }
  }
  return r;
}

/// Visit-by-pattern map onto model levels after collapsing.
struct PatternCoding {
  CodingTarget target = CodingTarget::Pattern;
  int n_patterns = 6;
  std::string label;
  std::vector<std::vector<int>> groups;  ///< merged IE patterns, in order; excludes 6
  /// level[visit-1][current pattern-1]
  std::array<std::array<int, kOnTreatmentPattern>, kPostVisits> level{};
  int visit_fixups = 0;  ///< cells moved after grouping because a level had no observed data at a visit

  [[nodiscard]] int on_treatment_level() const { return target == CodingTarget::Status ? 2 : kOnTreatmentPattern; }

  [[nodiscard]] int level_of(const PatientRecord& p, int visit) const {
    const int cur = p.ie_status(visit) ? p.pattern() : kOnTreatmentPattern;
    return level[visit - 1][cur - 1];
  }

  /// Levels in use at a visit, ascending, on-treatment last.
  [[nodiscard]] std::vector<int> levels_at(int visit) const {
    std::vector<int> out;
    for (int cur = 1; cur <= kOnTreatmentPattern; ++cur) {
      if (cur < kOnTreatmentPattern && cur > visit) continue;
      const int l = level[visit - 1][cur - 1];
      bool seen = false;
      for (int x : out) seen = seen || x == l;
      if (!seen) out.push_back(l);
    }
    std::sort(out.begin(), out.end(), [&](int x, int y) {
      const int ot = on_treatment_level();
      if ((x == ot) != (y == ot)) return y == ot;
      return x < y;
    });
    return out;
  }
};

/// Adjacent-merge grouping of patterns 1..5 from the pattern-issue
/// indicators: an issue pattern joins the group before it, or the next one
/// when nothing precedes it. Empty result means the terminal single pattern.
inline std::vector<std::vector<int>> group_patterns(const std::array<bool, kPostVisits>& issue) {
  std::vector<std::vector<int>> groups;
  bool pending = false;  // leading group made only of issue patterns
  for (int j = 1; j <= kPostVisits; ++j) {
    if (issue[j - 1]) {
      if (groups.empty()) {
        groups.push_back({j});
        pending = true;
      } else {
        groups.back().push_back(j);
      }
    } else if (pending) {
      groups.back().push_back(j);
      pending = false;
    } else {
      groups.push_back({j});
    }
  }
  if (pending) groups.clear();
  return groups;
}

inline std::string coding_label(const std::vector<std::vector<int>>& groups) {
  if (groups.empty()) return "123456";
  std::string s;
  for (const auto& g : groups) {
    for (int p : g) s += std::to_string(p);
    s += ", ";
  }
  return s + "6";
}

inline PatternCoding plan_collapse(const PatternIssueReport& report, CodingTarget target) {
  PatternCoding c;
  c.target = target;
  const int ot = c.on_treatment_level();
  auto groups = group_patterns(report.pattern_issue);
  int n_ie = 0;
  for (const auto& arm : report.patients)
    for (int j = 0; j < kPostVisits; ++j) n_ie += arm[j];
  if (n_ie == 0) groups.clear();
  if (target == CodingTarget::Status && !groups.empty()) groups = {{1, 2, 3, 4, 5}};
  c.groups = groups;
  c.label = coding_label(groups);
  c.n_patterns = groups.empty() ? 1 : static_cast<int>(groups.size()) + 1;

  for (auto& row : c.level) row.fill(ot);
  if (groups.empty()) return c;
  for (const auto& g : groups) {
    const int id = target == CodingTarget::Status ? 1 : g.front();
    for (int v = 1; v <= kPostVisits; ++v)
      for (int p : g)
        if (p <= v) c.level[v - 1][p - 1] = id;
  }

  // A level can still be empty of observed data at an earlier visit (or in one
  // arm). Merge it into the nearest previous level that makes it estimable,
  // otherwise fall back to on-treatment.
  for (int v = 1; v <= kPostVisits; ++v) {
    auto& row = c.level[v - 1];
    auto counts = [&](int lvl, int arm) {
      std::pair<int, int> nc{0, 0};
      for (int cur = 1; cur <= kOnTreatmentPattern; ++cur) {
        if (row[cur - 1] != lvl || (cur < kOnTreatmentPattern && cur > v)) continue;
        nc.first += report.current_patients(arm, cur, v);
        nc.second += report.current_observed(arm, cur, v);
      }
      return nc;
    };
    auto estimable = [&](int lvl_a, int lvl_b) {
      for (int arm = 0; arm < 2; ++arm) {
        const auto x = counts(lvl_a, arm);
        const auto y = lvl_b == lvl_a ? std::pair<int, int>{0, 0} : counts(lvl_b, arm);
        if (x.first + y.first > 0 && x.second + y.second == 0) return false;
      }
      return true;
    };
    std::vector<int> kept;
    for (int lvl : c.levels_at(v)) {
      if (lvl == ot) continue;
      if (estimable(lvl, lvl)) {
        kept.push_back(lvl);
        continue;
      }
      int target_lvl = ot;
      for (auto it = kept.rbegin(); it != kept.rend(); ++it)
        if (estimable(*it, lvl)) {
          target_lvl = *it;
          break;
        }
      for (int cur = 1; cur <= v; ++cur)
        if (row[cur - 1] == lvl) row[cur - 1] = target_lvl;
      ++c.visit_fixups;
    }
  }
  return c;
}

/// Checks that every level used at every visit has observed data in each arm
/// that has patients there.
inline bool coding_is_estimable(const PatternIssueReport& report, const PatternCoding& c) {
  for (int v = 1; v <= kPostVisits; ++v) {
    for (int lvl : c.levels_at(v)) {
      for (int arm = 0; arm < 2; ++arm) {
        int n = 0, o = 0;
        for (int cur = 1; cur <= kOnTreatmentPattern; ++cur) {
          if (cur < kOnTreatmentPattern && cur > v) continue;
          if (c.level[v - 1][cur - 1] != lvl) continue;
          n += report.current_patients(arm, cur, v);
          o += report.current_observed(arm, cur, v);
        }
        if (n > 0 && o == 0) return false;
      }
    }
  }
  return true;
}

/// Model covariate level per patient and post-baseline visit.
inline std::vector<std::array<int, kPostVisits>> recode(const TrialDataset& ds, const PatternCoding& c) {
  std::vector<std::array<int, kPostVisits>> out(ds.patients.size());
  for (std::size_t i = 0; i < ds.patients.size(); ++i)
    for (int v = 1; v <= kPostVisits; ++v) out[i][v - 1] = c.level_of(ds.patients[i], v);
  return out;
}

}  // namespace tpsim
