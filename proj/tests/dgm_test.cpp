#include <gtest/gtest.h>

#include <cmath>
#include <sstream>
#include <string>

#include "tpsim/dgm/config.hpp"
#include "tpsim/dgm/io.hpp"
#include "tpsim/dgm/simulate.hpp"
#include "tpsim/dgm/trial.hpp"

using namespace tpsim;

namespace {

struct StatusShares {
  double on = 0, disc_obs = 0, disc_miss = 0;
};

StatusShares visit5_status(const TrialDataset& ds, Arm arm) {
  StatusShares s;
  int n = 0;
  for (const auto& p : ds.patients) {
    if (p.arm != arm) continue;
    ++n;
    if (!p.ie_status(5)) {
      s.on += 1;
    } else if (p.observed(5)) {
      s.disc_obs += 1;
    } else {
      s.disc_miss += 1;
    }
  }
  s.on *= 100.0 / n;
  s.disc_obs *= 100.0 / n;
  s.disc_miss *= 100.0 / n;
  return s;
}

ScenarioConfig big(double theta, IeMechanism m = IeMechanism::Dar) {
  auto cfg = pioneer1_defaults();
  cfg.n_per_arm = 100000;
  cfg.missingness_theta = theta;
  cfg.mechanism = m;
  return cfg;
}

}  // namespace

TEST(OnTreatment, MomentsMatchTables) {
  auto cfg = pioneer1_defaults();
  auto eng = RngStream(1).engine();
  const Matrix y = simulate_on_treatment(cfg, Arm::Treatment, 100000, eng);
  for (int j = 0; j < kVisits; ++j) EXPECT_NEAR(y.col(j).mean(), cfg.treatment.means[j], 0.02);
  const Matrix yc = simulate_on_treatment(cfg, Arm::Control, 100000, eng);
  const Vector c5 = yc.col(5).array() - yc.col(5).mean();
  EXPECT_NEAR(c5.squaredNorm() / (c5.size() - 1), 1.48, 0.03);
}

TEST(OnTreatment, NullModeUsesControl) {
  auto cfg = pioneer1_defaults();
  cfg.null_mode = true;
  auto eng = RngStream(2).engine();
  const Matrix y = simulate_on_treatment(cfg, Arm::Treatment, 50000, eng);
  for (int j = 0; j < kVisits; ++j) EXPECT_NEAR(y.col(j).mean(), cfg.control.means[j], 0.02);
}

TEST(Intercurrent, HazardFloorGivesNoEvents) {
  auto cfg = pioneer1_defaults();
  for (auto* a : {&cfg.control, &cfg.treatment}) {
    a->dar.intercept.fill(-50);
    a->dar.baseline.fill(0);
    a->dar.previous.fill(0);
  }
  auto eng = RngStream(3).engine();
  const Matrix y = simulate_on_treatment(cfg, Arm::Control, 2000, eng);
  for (const auto& t : simulate_ie(cfg, y, Arm::Control, eng)) EXPECT_FALSE(t.has_value());
}

TEST(Intercurrent, DarOnTreatmentShares) {
  const auto ds = generate_trial(big(0.1), 0);
  EXPECT_NEAR(visit5_status(ds, Arm::Control).on, 74.5, 1.5);
  EXPECT_NEAR(visit5_status(ds, Arm::Treatment).on, 84.8, 1.5);
}

TEST(Intercurrent, DnarOnTreatmentShares) {
  const auto ds = generate_trial(big(0.1, IeMechanism::Dnar), 0);
  EXPECT_NEAR(visit5_status(ds, Arm::Control).on, 74.5, 1.5);
  EXPECT_NEAR(visit5_status(ds, Arm::Treatment).on, 84.8, 1.5);
}

TEST(Shift, NoEventLeavesTrajectory) {
  const std::array<double, kVisits> y{1, 2, 3, 4, 5, 6};
  EXPECT_EQ(apply_offtreatment_shift(y, std::nullopt, ShiftModel::Gradual, {-0.6, -0.8, 3}), y);
}

TEST(Shift, InstantControl) {
  const auto cfg = pioneer1_defaults();
  const std::array<double, kVisits> y{0, 0, 0, 0, 0, 0};
  const auto t = apply_offtreatment_shift(y, 3, ShiftModel::Instant, cfg.control.shift);
  const std::array<double, kVisits> expect{0, 0, 0, -0.6, -0.6, -0.6};
  EXPECT_EQ(t, expect);
}

TEST(Shift, GradualTreatment) {
  const auto cfg = pioneer1_defaults();
  const std::array<double, kVisits> y{0, 0, 0, 0, 0, 0};
  const auto t = apply_offtreatment_shift(y, 2, ShiftModel::Gradual, cfg.treatment.shift);
  EXPECT_EQ(t[0], 0.0);
  EXPECT_EQ(t[1], 0.0);
  EXPECT_EQ(t[2], 0.0);
  EXPECT_NEAR(t[3], -0.25 / 3, 1e-15);
  EXPECT_NEAR(t[4], -0.25 * 2 / 3, 1e-15);
  EXPECT_NEAR(t[5], -0.25, 1e-15);
}

TEST(Missingness, NoEventNeverMissing) {
  auto eng = RngStream(4).engine();
  const std::vector<std::optional<int>> tau(100);
  for (const auto& m : simulate_missingness(tau, 0.9, eng))
    for (bool b : m) EXPECT_FALSE(b);
}

TEST(Missingness, MonotoneAfterEvent) {
  auto eng = RngStream(5).engine();
  std::vector<std::optional<int>> tau(1000, 2);
  for (const auto& m : simulate_missingness(tau, 0.5, eng)) {
    EXPECT_FALSE(m[0]);
    for (int j = 1; j < kPostVisits; ++j)
      if (m[j - 1]) {
        EXPECT_TRUE(m[j]);
      }
  }
}

class TableCalibration : public ::testing::TestWithParam<int> {};

TEST_P(TableCalibration, StatusSharesAtVisit5) {
  // Visit-5 status percentages for scenarios 1..6.
  static const double c_obs[] = {19.3, 14.4, 10.6, 7.6, 5.3, 3.5};
  static const double c_miss[] = {6.2, 11.1, 14.9, 17.9, 20.2, 22.0};
  static const double t_obs[] = {10.8, 7.5, 5.1, 3.4, 2.2, 1.3};
  static const double t_miss[] = {4.4, 7.7, 10.1, 11.8, 13.0, 13.9};
  static const double c_frac[] = {75.7, 56.6, 41.6, 29.9, 20.9, 13.9};
  static const double t_frac[] = {71.1, 49.5, 33.7, 22.2, 14.3, 8.7};
  const int s = GetParam();
  const auto ds = generate_trial(big(kThetaGrid[s]), 17);
  const auto c = visit5_status(ds, Arm::Control);
  const auto t = visit5_status(ds, Arm::Treatment);
  EXPECT_NEAR(c.on, 74.5, 1.5);
  EXPECT_NEAR(c.disc_obs, c_obs[s], 1.5);
  EXPECT_NEAR(c.disc_miss, c_miss[s], 1.5);
  EXPECT_NEAR(t.on, 84.8, 1.5);
  EXPECT_NEAR(t.disc_obs, t_obs[s], 1.5);
  EXPECT_NEAR(t.disc_miss, t_miss[s], 1.5);
  EXPECT_NEAR(100 * c.disc_obs / (c.disc_obs + c.disc_miss), c_frac[s], 2.5);
  EXPECT_NEAR(100 * t.disc_obs / (t.disc_obs + t.disc_miss), t_frac[s], 2.5);
}

INSTANTIATE_TEST_SUITE_P(Scenarios, TableCalibration, ::testing::Range(0, 6));

TEST(GenerateTrial, DeterministicAndValid) {
  const auto cfg = pioneer1_defaults();
  const auto a = generate_trial(cfg, 5);
  const auto b = generate_trial(cfg, 5);
  const auto c = generate_trial(cfg, 6);
  ASSERT_EQ(a.size(), 400);
  EXPECT_EQ(a.count(Arm::Control), 200);
  EXPECT_EQ(a.count(Arm::Treatment), 200);
  for (int i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a.patients[i].y_tilde, b.patients[i].y_tilde);
    EXPECT_EQ(a.patients[i].missing, b.patients[i].missing);
  }
  EXPECT_NE(a.patients[0].y_on, c.patients[0].y_on);
  EXPECT_NO_THROW(a.validate());
}

TEST(GenerateTrial, InvariantsAcrossSettings) {
  for (auto mech : {IeMechanism::Dar, IeMechanism::Dnar})
    for (auto sh : {ShiftModel::Instant, ShiftModel::Gradual})
      for (double th : kThetaGrid) {
        auto cfg = pioneer1_defaults();
        cfg.mechanism = mech;
        cfg.shift_model = sh;
        cfg.missingness_theta = th;
        const auto ds = generate_trial(cfg, 3);
        ASSERT_NO_THROW(ds.validate());
        for (const auto& p : ds.patients) {
          int npat = 0;
          for (int j = 1; j <= kPostVisits; ++j) {
            npat += p.ie_pattern(j);
            if (j > 1 && p.ie_status(j - 1)) {
              EXPECT_TRUE(p.ie_status(j));
            }
            if (p.ie_status(j)) {
              EXPECT_EQ(npat, 1);
            }
          }
          EXPECT_LE(npat, 1);
          EXPECT_FALSE(p.ie_status(0));
        }
      }
}

TEST(GenerateTrial, CommonPatientsAcrossThetaAndShift) {
  auto a = pioneer1_defaults();
  auto b = a;
  b.missingness_theta = 0.6;
  b.shift_model = ShiftModel::Gradual;
  const auto da = generate_trial(a, 9);
  const auto db = generate_trial(b, 9);
  for (int i = 0; i < da.size(); ++i) {
    EXPECT_EQ(da.patients[i].y_on, db.patients[i].y_on);
    EXPECT_EQ(da.patients[i].ie_visit, db.patients[i].ie_visit);
    // a higher hazard only ever adds dropout
    for (int j = 0; j < kPostVisits; ++j)
      if (da.patients[i].missing[j]) {
        EXPECT_TRUE(db.patients[i].missing[j]);
      }
  }
}

TEST(Validate, CatchesBrokenInvariants) {
  TrialDataset ds;
  PatientRecord p;
  p.missing[2] = true;
  ds.patients.push_back(p);
  EXPECT_THROW(ds.validate(), InvalidParameter);
  ds.patients[0].ie_visit = 2;
  ds.patients[0].missing = {false, false, true, false, true};
  EXPECT_THROW(ds.validate(), InvalidParameter);
  ds.patients[0].missing = {false, false, true, true, true};
  EXPECT_NO_THROW(ds.validate());
  ds.patients[0].y_tilde[1] = 1.0;
  EXPECT_THROW(ds.validate(), InvalidParameter);
}

TEST(Config, ValidateRejects) {
  auto cfg = pioneer1_defaults();
  EXPECT_NO_THROW(cfg.validate());
  cfg.missingness_theta = 0.7;
  EXPECT_THROW(cfg.validate(), InvalidParameter);
  cfg.allow_offgrid = true;
  EXPECT_NO_THROW(cfg.validate());
  cfg = pioneer1_defaults();
  cfg.control.dar.current = cfg.control.dnar.current;
  EXPECT_THROW(cfg.validate(), InvalidParameter);
  cfg = pioneer1_defaults();
  cfg.treatment.dnar.current.reset();
  EXPECT_THROW(cfg.validate(), InvalidParameter);
}

TEST(Config, LogitScaleHazard) {
  auto cfg = pioneer1_defaults();
  cfg.missingness_scale = MissingnessScale::Logit;
  EXPECT_NEAR(cfg.missingness_hazard(), 0.52498, 5e-6);
  cfg.missingness_scale = MissingnessScale::Probability;
  EXPECT_EQ(cfg.missingness_hazard(), 0.1);
}

TEST(Config, JsonRoundTrip) {
  auto cfg = pioneer1_defaults();
  cfg.mechanism = IeMechanism::Dnar;
  cfg.missingness_theta = 0.4;
  const auto back = config_from_json(config_to_json(cfg));
  EXPECT_EQ(config_to_json(back), config_to_json(cfg));
  EXPECT_EQ(back.treatment.means, cfg.treatment.means);
  EXPECT_EQ(*back.control.dnar.current, *cfg.control.dnar.current);
  EXPECT_FALSE(back.control.dar.current.has_value());
}

TEST(Config, BundledFileMatchesDefaults) {
  const auto cfg = load_config(std::string(TPSIM_SOURCE_DIR) + "/config/pioneer1_defaults.json");
  EXPECT_EQ(config_to_json(cfg), config_to_json(pioneer1_defaults()));
}

TEST(Config, MalformedJson) {
  EXPECT_THROW(config_from_json("{"), InvalidParameter);
  EXPECT_THROW(config_from_json(R"({"visit_weeks": [0, 4]})"), InvalidParameter);
  EXPECT_THROW(config_from_json(R"({"mechanism": "mar"})"), InvalidParameter);
}

TEST(Truth, NullIsZero) {
  auto cfg = pioneer1_defaults();
  cfg.null_mode = true;
  const auto t = true_estimand(cfg, 100000);
  EXPECT_LT(std::abs(t.delta), 4 * t.mcse);
}

TEST(Truth, NoEventsClosedForm) {
  auto cfg = pioneer1_defaults();
  for (auto* a : {&cfg.control, &cfg.treatment}) a->dar.intercept.fill(-50);
  const auto t = true_estimand(cfg, 100000);
  EXPECT_NEAR(t.delta, -0.73, 4 * t.mcse);
}

TEST(Truth, Deterministic) {
  const auto cfg = pioneer1_defaults();
  EXPECT_EQ(true_estimand(cfg, 20000).delta, true_estimand(cfg, 20000).delta);
}

TEST(Csv, DatasetExport) {
  auto cfg = pioneer1_defaults();
  cfg.n_per_arm = 3;
  const auto ds = generate_trial(cfg, 0);
  std::ostringstream os;
  write_dataset_csv(os, ds);
  std::istringstream is(os.str());
  std::string line;
  std::getline(is, line);
  EXPECT_EQ(line, "patient_id,arm,visit,week,baseline,y,change,ie_status,ie_pattern,missing");
  int rows = 0;
  while (std::getline(is, line)) ++rows;
  EXPECT_EQ(rows, 6 * 6);
}
