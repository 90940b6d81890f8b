#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <istream>
#include <limits>
#include <map>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "tpsim/dgm/io.hpp"
#include "tpsim/harness/run.hpp"

namespace tpsim {

inline constexpr std::string_view kResultsHeader =
    "scenario_id,mechanism,shift_model,theta,method,n_reps,n_failed,bias,bias_mcse,sd,mean_se,power,power_mcse,"
    "type1,type1_mcse,coverage,coverage_mcse,rmse,collapse_level_counts";
inline constexpr std::string_view kReplicatesHeader =
    "scenario_id,replicate,method,estimate,se,df,ci_lo,ci_hi,p_zero,p_margin,collapse_level,seconds";

namespace detail {

inline std::string csv_number(double x) { return std::isnan(x) ? "NA" : format_double(x); }

inline double parse_number(const std::string& s) {
  if (s == "NA") return std::numeric_limits<double>::quiet_NaN();
  if (s == "inf") return std::numeric_limits<double>::infinity();
  if (s == "-inf") return -std::numeric_limits<double>::infinity();
  std::size_t used = 0;
  const double x = std::stod(s, &used);
  if (used != s.size()) throw InvalidParameter("not a number: '" + s + "'");
  return x;
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

}  // namespace detail

inline void write_results_csv(std::ostream& out, const std::vector<ScenarioResult>& results) {
  out << kResultsHeader << '\n';
  for (const auto& r : results)
    for (const auto& s : r.summaries) {
      const auto& oc = s.oc;
      out << r.scenario.id() << ',' << to_string(r.scenario.mechanism) << ',' << to_string(r.scenario.shift) << ','
          << format_double(r.scenario.theta) << ',' << to_string(s.method) << ',' << oc.n_reps + oc.n_failed << ','
          << oc.n_failed;
      for (double x : {oc.bias, oc.bias_mcse, oc.sd, oc.mean_se, oc.power, oc.power_mcse, oc.type1, oc.type1_mcse,
                       oc.coverage, oc.coverage_mcse, oc.rmse})
        out << ',' << detail::csv_number(x);
      out << ',' << encode_collapse_counts(oc.collapse_counts) << '\n';
    }
}

inline void write_replicates_csv(std::ostream& out, const std::vector<ScenarioResult>& results) {
  out << kReplicatesHeader << '\n';
  for (const auto& r : results) {
    const std::string id = r.scenario.id();
    for (const auto& rec : r.records) {
      out << id << ',' << rec.replicate << ',' << to_string(rec.method);
      const auto& e = rec.result;
      for (double x : {e.estimate, e.se, e.df, e.ci_lo, e.ci_hi, e.p_zero, e.p_margin})
        out << ',' << (rec.failed ? "NA" : detail::csv_number(x));
      out << ',' << (rec.failed || e.collapse_level == 0 ? "NA" : std::to_string(e.collapse_level)) << ','
          << format_double(rec.seconds) << '\n';
    }
  }
}

/// results.csv and replicates.csv under `dir`, created if needed. Nothing is
/// written when a scenario has no methods.
inline void write_results(const std::filesystem::path& dir, const std::vector<ScenarioResult>& results) {
  if (results.empty()) throw InvalidParameter("no scenario results to write");
  for (const auto& r : results)
    if (r.summaries.empty()) throw InvalidParameter("scenario " + r.scenario.id() + " has no methods");
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw Error("cannot create output directory " + dir.string() + ": " + ec.message());
  auto write = [&](const char* name, auto&& fn) {
    const auto path = dir / name;
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot open " + path.string() + " for writing");
    fn(out, results);
    out.flush();
    if (!out) throw Error("write failed for " + path.string());
  };
  write("results.csv", write_results_csv);
  write("replicates.csv", write_replicates_csv);
}

/// Records per scenario id from a replicates.csv stream, in file order.
inline std::map<std::string, std::vector<ReplicateRecord>> read_replicates_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != kReplicatesHeader) throw InvalidParameter("unexpected replicates.csv header");
  std::map<std::string, std::vector<ReplicateRecord>> out;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto f = detail::split_csv_line(line);
    if (f.size() != 12) throw InvalidParameter("replicates.csv line " + std::to_string(lineno) + ": expected 12 fields");
    ReplicateRecord rec;
    rec.replicate = std::stoi(f[1]);
    rec.method = parse_method(f[2]);
    rec.failed = f[3] == "NA";
    auto& e = rec.result;
    e.method = f[2];
    if (!rec.failed) {
      e.estimate = detail::parse_number(f[3]);
      e.se = detail::parse_number(f[4]);
      e.df = detail::parse_number(f[5]);
      e.ci_lo = detail::parse_number(f[6]);
      e.ci_hi = detail::parse_number(f[7]);
      e.p_zero = detail::parse_number(f[8]);
      e.p_margin = detail::parse_number(f[9]);
      e.collapse_level = f[10] == "NA" ? 0 : std::stoi(f[10]);
    }
    rec.seconds = detail::parse_number(f[11]);
    out[f[0]].push_back(std::move(rec));
  }
  return out;
}

}  // namespace tpsim
