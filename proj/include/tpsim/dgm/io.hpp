#pragma once

#include <cstdio>
#include <fstream>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "tpsim/dgm/config.hpp"
#include "tpsim/dgm/trial.hpp"
#include "tpsim/error.hpp"

namespace tpsim {

namespace detail {

using Json = nlohmann::ordered_json;

template <class T, std::size_t N>
std::array<T, N> json_array(const Json& j, const char* key) {
  if (!j.contains(key)) throw InvalidParameter(std::string("config is missing '") + key + "'");
  const auto& a = j.at(key);
  if (!a.is_array() || a.size() != N)
    throw InvalidParameter(std::string("config '") + key + "' must be an array of length " + std::to_string(N));
  std::array<T, N> out{};
  for (std::size_t i = 0; i < N; ++i) out[i] = a[i].get<T>();
  return out;
}

inline Json ie_to_json(const IeCoefficients& c) {
  Json j;
  j["intercept"] = c.intercept;
  j["baseline"] = c.baseline;
  j["previous"] = c.previous;
  if (c.current) j["current"] = *c.current;
  return j;
}

inline IeCoefficients ie_from_json(const Json& j) {
  IeCoefficients c;
  c.intercept = json_array<double, kPostVisits>(j, "intercept");
  c.baseline = json_array<double, kPostVisits>(j, "baseline");
  c.previous = json_array<double, kPostVisits>(j, "previous");
  if (j.contains("current")) c.current = json_array<double, kPostVisits>(j, "current");
  return c;
}

inline Json arm_to_json(const ArmParameters& a) {
  Json j;
  j["means"] = a.means;
  j["variances"] = a.variances;
  j["dar"] = ie_to_json(a.dar);
  j["dnar"] = ie_to_json(a.dnar);
  j["shift"] = {{"instant", a.shift.instant}, {"gradual_a", a.shift.gradual_a}, {"gradual_b", a.shift.gradual_b}};
  return j;
}

inline ArmParameters arm_from_json(const Json& j) {
  ArmParameters a;
  a.means = json_array<double, kVisits>(j, "means");
  a.variances = json_array<double, kVisits>(j, "variances");
  a.dar = ie_from_json(j.at("dar"));
  a.dnar = ie_from_json(j.at("dnar"));
  const auto& s = j.at("shift");
  a.shift.instant = s.at("instant").get<double>();
  a.shift.gradual_a = s.at("gradual_a").get<double>();
  a.shift.gradual_b = s.value("gradual_b", 3.0);
  return a;
}

}  // namespace detail

inline IeMechanism parse_mechanism(const std::string& s) {
  if (s == "dar" || s == "DAR") return IeMechanism::Dar;
  if (s == "dnar" || s == "DNAR") return IeMechanism::Dnar;
  throw InvalidParameter("unknown IE mechanism '" + s + "' (expected dar or dnar)");
}

inline ShiftModel parse_shift(const std::string& s) {
  if (s == "instant" || s == "Instant") return ShiftModel::Instant;
  if (s == "gradual" || s == "Gradual") return ShiftModel::Gradual;
  throw InvalidParameter("unknown shift model '" + s + "' (expected instant or gradual)");
}

inline MissingnessScale parse_missingness_scale(const std::string& s) {
  if (s == "probability") return MissingnessScale::Probability;
  if (s == "logit") return MissingnessScale::Logit;
  throw InvalidParameter("unknown missingness scale '" + s + "' (expected probability or logit)");
}

inline std::string config_to_json(const ScenarioConfig& cfg) {
  detail::Json j;
  j["n_per_arm"] = cfg.n_per_arm;
  j["visit_weeks"] = cfg.visit_weeks;
  j["rho"] = cfg.rho;
  j["mechanism"] = to_string(cfg.mechanism) == "DAR" ? "dar" : "dnar";
  j["shift_model"] = cfg.shift_model == ShiftModel::Instant ? "instant" : "gradual";
  j["missingness_theta"] = cfg.missingness_theta;
  j["missingness_scale"] = std::string(to_string(cfg.missingness_scale));
  j["allow_offgrid"] = cfg.allow_offgrid;
  j["root_seed"] = cfg.root_seed;
  j["null_mode"] = cfg.null_mode;
  j["arms"]["control"] = detail::arm_to_json(cfg.control);
  j["arms"]["treatment"] = detail::arm_to_json(cfg.treatment);
  return j.dump(2) + "\n";
}

/// Parses a scenario config. Keys other than `arms` are optional and default
/// to the bundled values.
inline ScenarioConfig config_from_json(const std::string& text) {
  detail::Json j;
  try {
    j = detail::Json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw InvalidParameter(std::string("config is not valid JSON: ") + e.what());
  }
  try {
    ScenarioConfig cfg = pioneer1_defaults();
    cfg.n_per_arm = j.value("n_per_arm", cfg.n_per_arm);
    if (j.contains("visit_weeks")) cfg.visit_weeks = detail::json_array<double, kVisits>(j, "visit_weeks");
    cfg.rho = j.value("rho", cfg.rho);
    if (j.contains("mechanism")) cfg.mechanism = parse_mechanism(j.at("mechanism").get<std::string>());
    if (j.contains("shift_model")) cfg.shift_model = parse_shift(j.at("shift_model").get<std::string>());
    cfg.missingness_theta = j.value("missingness_theta", cfg.missingness_theta);
    if (j.contains("missingness_scale"))
      cfg.missingness_scale = parse_missingness_scale(j.at("missingness_scale").get<std::string>());
    cfg.allow_offgrid = j.value("allow_offgrid", cfg.allow_offgrid);
    cfg.root_seed = j.value("root_seed", cfg.root_seed);
    cfg.null_mode = j.value("null_mode", cfg.null_mode);
    if (j.contains("arms")) {
      const auto& arms = j.at("arms");
      if (arms.contains("control")) cfg.control = detail::arm_from_json(arms.at("control"));
      if (arms.contains("treatment")) cfg.treatment = detail::arm_from_json(arms.at("treatment"));
    }
    return cfg;
  } catch (const nlohmann::json::exception& e) {
    throw InvalidParameter(std::string("config has a malformed field: ") + e.what());
  }
}

inline ScenarioConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open config file " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return config_from_json(ss.str());
}

/// Round-trip-exact decimal for doubles.
inline std::string format_double(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

/// One row per patient-visit. `imputed` (optional) adds the completed value
/// and a provenance column.
inline void write_dataset_csv(std::ostream& out, const TrialDataset& ds,
                              const std::vector<std::array<double, kPostVisits>>* imputed = nullptr) {
  out << "patient_id,arm,visit,week,baseline,y,change,ie_status,ie_pattern,missing";
  if (imputed) out << ",completed_change,imputed";
  out << '\n';
  for (std::size_t i = 0; i < ds.patients.size(); ++i) {
    const auto& p = ds.patients[i];
    for (int v = 0; v < kVisits; ++v) {
      const bool obs = p.observed(v);
      out << i + 1 << ',' << to_string(p.arm) << ',' << v << ',' << format_double(ds.visit_weeks[v]) << ','
          << format_double(p.baseline()) << ',' << (obs ? format_double(p.y_tilde[v]) : "NA") << ','
          << (obs ? format_double(p.change(v)) : "NA") << ',' << int(p.ie_status(v)) << ',' << int(p.ie_pattern(v)) << ','
          << int(!obs);
      if (imputed) {
        const double c = v == 0 ? 0.0 : (*imputed)[i][v - 1];
        out << ',' << format_double(c) << ',' << int(!obs);
      }
      out << '\n';
    }
  }
}

}  // namespace tpsim
