#include <gtest/gtest.h>

#include <set>
#include <string>
#include <vector>

#include "tpsim/collapse/collapse.hpp"
#include "tpsim/dgm/simulate.hpp"
#include "support/collapse_table.hpp"

using namespace tpsim;
using tpsim::testing::issue_bits;
using tpsim::testing::kCollapseTable;
using tpsim::testing::synthetic_report;

namespace {

PatientRecord patient(Arm arm, std::optional<int> tau, int n_obs = kPostVisits) {
  PatientRecord p;
  p.arm = arm;
  p.ie_visit = tau;
  for (int j = 0; j < kPostVisits; ++j) p.missing[j] = j >= n_obs;
  return p;
}

}  // namespace

TEST(CollapseTable, AllThirtyTwoRows) {
  int seen = 0;
  for (const auto& row : kCollapseTable) {
    const auto report = synthetic_report(issue_bits(row.p));
    const auto pc = plan_collapse(report, CodingTarget::Pattern);
    EXPECT_EQ(pc.label, row.label) << row.p;
    EXPECT_EQ(pc.n_patterns, row.n) << row.p;
    const auto sc = plan_collapse(report, CodingTarget::Status);
    EXPECT_EQ(sc.label, row.n == 1 ? "123456" : "12345, 6") << row.p;
    EXPECT_EQ(sc.n_patterns, row.n == 1 ? 1 : 2);
    ++seen;
  }
  EXPECT_EQ(seen, 32);
}

TEST(CollapseTable, RowsAreDistinctCombinations) {
  std::set<std::string> s;
  for (const auto& row : kCollapseTable) s.insert(row.p);
  EXPECT_EQ(s.size(), 32u);
}

TEST(Detect, FullyObservedHasNoIssues) {
  TrialDataset ds;
  for (Arm a : kArms)
    for (int t = 1; t <= kPostVisits; ++t) ds.patients.push_back(patient(a, t));
  ds.patients.push_back(patient(Arm::Control, std::nullopt));
  const auto r = detect_issues(ds);
  for (int j = 0; j < kPostVisits; ++j) {
    EXPECT_FALSE(r.pattern_issue[j]);
    EXPECT_FALSE(r.data_issue[j]);
    EXPECT_FALSE(r.estimation_issue[j]);
  }
  const auto c = plan_collapse(r, CodingTarget::Pattern);
  EXPECT_EQ(c.label, "1, 2, 3, 4, 5, 6");
  EXPECT_EQ(c.visit_fixups, 0);
}

TEST(Detect, PatternOneWithdrawsBeforeEnd) {
  TrialDataset ds;
  for (Arm a : kArms) {
    ds.patients.push_back(patient(a, 1, 3));
    ds.patients.push_back(patient(a, 1, 4));
    ds.patients.push_back(patient(a, 2));
    ds.patients.push_back(patient(a, std::nullopt));
  }
  const auto r = detect_issues(ds);
  EXPECT_TRUE(r.pattern_issue[0]);
  EXPECT_FALSE(r.pattern_issue[1]);
  EXPECT_FALSE(r.estimation_issue[0]);
}

TEST(Detect, EmptyPatternIsAnIssue) {
  TrialDataset ds;
  for (Arm a : kArms) {
    ds.patients.push_back(patient(a, 2));
    ds.patients.push_back(patient(a, std::nullopt));
  }
  ds.patients.push_back(patient(Arm::Control, 3));
  const auto r = detect_issues(ds);
  EXPECT_EQ(r.pattern_issue, (std::array<bool, 5>{true, false, true, true, true}));
  EXPECT_TRUE(r.data_issue[0]);         // nobody post-IE at visit 1
  EXPECT_FALSE(r.estimation_issue[0]);  // ... and nobody needs a level there
  EXPECT_EQ(plan_collapse(r, CodingTarget::Pattern).label, "12345, 6");
}

TEST(Detect, OneArmIsEnough) {
  TrialDataset ds;
  ds.patients.push_back(patient(Arm::Control, 3));
  ds.patients.push_back(patient(Arm::Treatment, 3, 2));
  ds.patients.push_back(patient(Arm::Control, std::nullopt));
  ds.patients.push_back(patient(Arm::Treatment, std::nullopt));
  EXPECT_TRUE(detect_issues(ds).pattern_issue[2]);
}

TEST(Detect, VisitOneDropoutsFallBackToOnTreatment) {
  TrialDataset ds;
  for (Arm a : kArms) {
    ds.patients.push_back(patient(a, 1, 0));  // withdraws at once
    for (int t = 2; t <= kPostVisits; ++t) ds.patients.push_back(patient(a, t));
    ds.patients.push_back(patient(a, std::nullopt));
  }
  const auto r = detect_issues(ds);
  EXPECT_TRUE(r.pattern_issue[0]);
  EXPECT_TRUE(r.estimation_issue[0]);
  const auto c = plan_collapse(r, CodingTarget::Pattern);
  EXPECT_EQ(c.label, "12, 3, 4, 5, 6");
  // visit 1: the merged level holds only the unobserved pattern-1 patients
  EXPECT_EQ(c.level[0][0], kOnTreatmentPattern);
  EXPECT_EQ(c.level[1][0], 1);
  EXPECT_EQ(c.level[1][1], 1);
  EXPECT_TRUE(coding_is_estimable(r, c));
  const auto s = plan_collapse(r, CodingTarget::Status);
  EXPECT_EQ(s.level[0][0], 2);
  EXPECT_EQ(s.level[1][0], 1);
}

TEST(Recode, CodingExamples) {
  const auto full = synthetic_report(issue_bits("00000"));
  const auto pat = plan_collapse(full, CodingTarget::Pattern);
  const auto stat = plan_collapse(full, CodingTarget::Status);
  TrialDataset ds;
  ds.patients.push_back(patient(Arm::Control, std::nullopt));
  ds.patients.push_back(patient(Arm::Control, 3));
  ds.patients.push_back(patient(Arm::Control, 1));
  const auto ls = recode(ds, stat);
  const auto lp = recode(ds, pat);
  EXPECT_EQ(ls[0], (std::array<int, 5>{2, 2, 2, 2, 2}));
  EXPECT_EQ(ls[1], (std::array<int, 5>{2, 2, 1, 1, 1}));
  EXPECT_EQ(lp[0], (std::array<int, 5>{6, 6, 6, 6, 6}));
  EXPECT_EQ(lp[1], (std::array<int, 5>{6, 6, 3, 3, 3}));
  EXPECT_EQ(lp[2], (std::array<int, 5>{1, 1, 1, 1, 1}));
  // total levels per visit: 2, 3, 4, 5, 6
  for (int v = 1; v <= kPostVisits; ++v) EXPECT_EQ(pat.levels_at(v).size(), std::size_t(v + 1));
}

TEST(Collapse, MergedPatternTakesFirstId) {
  const auto c = plan_collapse(synthetic_report(issue_bits("00100")), CodingTarget::Pattern);
  EXPECT_EQ(c.level[2][2], 2);  // visit 3, pattern 3 -> level "23"
  EXPECT_EQ(c.level[4][1], 2);
  EXPECT_EQ(c.level[4][3], 4);
}

TEST(Collapse, StatusCoarsensPattern) {
  auto cfg = pioneer1_defaults();
  cfg.missingness_theta = 0.5;
  for (int rep = 0; rep < 40; ++rep) {
    const auto ds = generate_trial(cfg, rep);
    const auto r = detect_issues(ds);
    const auto p = plan_collapse(r, CodingTarget::Pattern);
    const auto s = plan_collapse(r, CodingTarget::Status);
    if (p.visit_fixups > 0) continue;
    for (int v = 1; v <= kPostVisits; ++v)
      for (int a = 1; a <= kOnTreatmentPattern; ++a)
        for (int b = 1; b <= kOnTreatmentPattern; ++b)
          if (p.level[v - 1][a - 1] == p.level[v - 1][b - 1]) {
            EXPECT_EQ(s.level[v - 1][a - 1], s.level[v - 1][b - 1]);
          }
  }
}

TEST(Collapse, SimulatedCodingsAreEstimable) {
  for (double th : kThetaGrid) {
    auto cfg = pioneer1_defaults();
    cfg.missingness_theta = th;
    for (int rep = 0; rep < 30; ++rep) {
      const auto ds = generate_trial(cfg, rep);
      const auto r = detect_issues(ds);
      for (auto t : {CodingTarget::Status, CodingTarget::Pattern}) {
        const auto c = plan_collapse(r, t);
        EXPECT_TRUE(coding_is_estimable(r, c)) << th << " " << rep << " " << c.label;
      }
    }
  }
}

TEST(Collapse, Idempotent) {
  // Treating each collapsed level as its own pattern leaves nothing to merge.
  auto cfg = pioneer1_defaults();
  cfg.missingness_theta = 0.6;
  for (int rep = 0; rep < 30; ++rep) {
    const auto ds = generate_trial(cfg, rep);
    const auto c = plan_collapse(detect_issues(ds), CodingTarget::Pattern);
    TrialDataset merged = ds;
    for (auto& p : merged.patients) {
      if (!p.ie_visit) continue;
      const int l = c.level[kPostVisits - 1][*p.ie_visit - 1];
      if (l == kOnTreatmentPattern) p.ie_visit.reset();
      else p.ie_visit = l;
    }
    // only the first pattern of each group is still populated
    const auto r2 = detect_issues(merged);
    for (const auto& g : c.groups) EXPECT_FALSE(r2.pattern_issue[g.front() - 1]) << c.label;
  }
}
