#include <CLI11.hpp>

#include <charconv>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "tpsim/dgm/io.hpp"
#include "tpsim/dgm/simulate.hpp"
#include "tpsim/harness/harness.hpp"

using namespace tpsim;

namespace {

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Options {
  std::string config;
  std::string mechanism;
  std::string shift;
  std::string theta;
  std::string methods;
  int nsims = 500;
  int imputations = 50;
  std::optional<std::uint64_t> seed;
  std::string out;
  int truth_n = 200000;
  std::string df = "kr";
  std::string power_rule = "ci";
  std::string pool_df = "barnard-rubin";
  bool null_mode = false;
  bool allow_offgrid = false;
  int threads = 0;
  bool timing = false;
  int replicate = 1;
};

std::string shortest(double x) {
  char buf[32];
  const auto r = std::to_chars(buf, buf + sizeof buf, x);
  return {buf, r.ptr};
}

double parse_theta(const std::string& s) {
  try {
    std::size_t used = 0;
    const double t = std::stod(s, &used);
    if (used == s.size()) return t;
  } catch (const std::exception&) {
  }
  throw UsageError("--theta expects a number or 'all', got '" + s + "'");
}

/// Config from --config (or built-in defaults) with command-line overrides.
ScenarioConfig resolve_config(const Options& o) {
  ScenarioConfig cfg = o.config.empty() ? pioneer1_defaults() : load_config(o.config);
  try {
    if (!o.mechanism.empty()) cfg.mechanism = parse_mechanism(o.mechanism);
    if (!o.shift.empty()) cfg.shift_model = parse_shift(o.shift);
  } catch (const InvalidParameter& e) {
    throw UsageError(e.what());
  }
  if (!o.theta.empty() && o.theta != "all") cfg.missingness_theta = parse_theta(o.theta);
  if (o.seed) cfg.root_seed = *o.seed;
  if (o.null_mode) cfg.null_mode = true;
  if (o.allow_offgrid) cfg.allow_offgrid = true;
  try {
    cfg.validate();
  } catch (const InvalidParameter& e) {
    throw UsageError(e.what());
  }
  return cfg;
}

void print_row(std::ostream& out, const std::string& name, const auto& values) {
  out << name;
  for (double v : values) out << ' ' << shortest(v);
  out << '\n';
}

void print_ie(std::ostream& out, const std::string& prefix, const IeCoefficients& c) {
  print_row(out, prefix + ".intercept", c.intercept);
  print_row(out, prefix + ".baseline", c.baseline);
  print_row(out, prefix + ".previous", c.previous);
  if (c.current) print_row(out, prefix + ".current", *c.current);
}

int cmd_validate(const Options& o) {
  const ScenarioConfig cfg = resolve_config(o);
  auto& out = std::cout;
  const std::string name = o.config.empty() ? "built-in" : std::filesystem::path(o.config).filename().string();
  out << "config " << name << " valid\n";
  out << "n_per_arm " << cfg.n_per_arm << '\n';
  print_row(out, "visit_weeks", cfg.visit_weeks);
  out << "rho " << shortest(cfg.rho) << '\n';
  out << "mechanism " << to_string(cfg.mechanism) << '\n';
  out << "shift_model " << to_string(cfg.shift_model) << '\n';
  out << "missingness_theta " << shortest(cfg.missingness_theta) << " (" << to_string(cfg.missingness_scale)
      << " scale, hazard " << shortest(cfg.missingness_hazard()) << ")\n";
  out << "root_seed " << cfg.root_seed << '\n';
  out << "null_mode " << (cfg.null_mode ? "true" : "false") << '\n';
  for (Arm a : kArms) {
    const ArmParameters& p = a == Arm::Control ? cfg.control : cfg.treatment;
    const std::string arm = a == Arm::Control ? "control" : "treatment";
    out << "\n[" << arm << "]\n";
    print_row(out, "means", p.means);
    print_row(out, "variances", p.variances);
    print_ie(out, "dar", p.dar);
    print_ie(out, "dnar", p.dnar);
    out << "shift.instant " << shortest(p.shift.instant) << '\n';
    out << "shift.gradual_a " << shortest(p.shift.gradual_a) << '\n';
    out << "shift.gradual_b " << shortest(p.shift.gradual_b) << '\n';
  }
  for (Arm a : kArms) {
    out << "\n[" << (a == Arm::Control ? "control" : "treatment") << " covariance]\n";
    const Matrix s = cfg.covariance(a).matrix();
    for (Eigen::Index i = 0; i < s.rows(); ++i) {
      char buf[16];
      for (Eigen::Index j = 0; j < s.cols(); ++j) {
        std::snprintf(buf, sizeof buf, "%.4f", s(i, j));
        out << (j ? " " : "") << buf;
      }
      out << '\n';
    }
  }
  return 0;
}

int cmd_truth(const Options& o) {
  const ScenarioConfig cfg = resolve_config(o);
  if (o.truth_n < 2) throw UsageError("--truth-n must be at least 2");
  TruthCache cache;
  const TrueEstimand t = cache.get(cfg, o.truth_n);
  std::cout << "delta_true " << format_double(t.delta) << " mcse " << format_double(t.mcse) << '\n';
  return 0;
}

int cmd_dump(const Options& o) {
  const ScenarioConfig cfg = resolve_config(o);
  if (o.replicate < 1) throw UsageError("--replicate must be positive");
  const TrialDataset ds = generate_trial(cfg, static_cast<std::uint64_t>(o.replicate));
  if (o.out.empty()) {
    write_dataset_csv(std::cout, ds);
  } else {
    std::ofstream f(o.out, std::ios::binary);
    if (!f) throw Error("cannot open " + o.out + " for writing");
    write_dataset_csv(f, ds);
    if (!f.flush()) throw Error("write failed for " + o.out);
  }
  return 0;
}

int cmd_run(const Options& o) {
  RunPlan plan;
  plan.base = resolve_config(o);
  if (!o.methods.empty()) {
    try {
      plan.methods = parse_methods(o.methods);
    } catch (const InvalidParameter& e) {
      throw UsageError(e.what());
    }
  }
  if (o.theta == "all") {
    std::optional<ShiftModel> shift;
    if (!o.shift.empty()) shift = plan.base.shift_model;
    plan.scenarios = scenario_grid(plan.base.mechanism, shift);
  } else {
    plan.scenarios = {{plan.base.mechanism, plan.base.shift_model, plan.base.missingness_theta}};
  }
  plan.n_reps = o.nsims;
  plan.m_imputations = o.imputations;
  plan.truth_n = o.truth_n;
  plan.df = o.df == "kr" ? DfMethod::KenwardRoger : DfMethod::Satterthwaite;
  plan.power_rule = o.power_rule == "ci" ? PowerRule::Ci : PowerRule::TTest;
  plan.pool_df = o.pool_df == "barnard-rubin" ? PoolDf::BarnardRubin : PoolDf::Rubin1987;
  plan.threads = o.threads;
  plan.timing = o.timing;
  try {
    plan.validate();
  } catch (const InvalidParameter& e) {
    throw UsageError(e.what());
  }
  std::string out = o.out;
  if (out.empty()) {
    const char* env = std::getenv("TPSIM_OUT_DIR");
    out = env && *env ? env : "results";
  }

  TruthCache truth;
  std::vector<ScenarioResult> results;
  for (const auto& s : plan.scenarios) {
    results.push_back(run_scenario(plan, s, &truth));
    const auto& r = results.back();
    int failed = 0;
    for (const auto& m : r.summaries) failed += m.oc.n_failed;
    std::cerr << r.scenario.id() << ": " << plan.n_reps << " replicates, delta_true " << shortest(r.delta_true)
              << ", " << failed << " method failures\n";
    for (const auto& m : r.summaries)
      if (!m.error.empty()) std::cerr << "  " << to_string(m.method) << ": " << m.error << '\n';
  }
  write_results(out, results);
  std::cerr << "wrote " << (std::filesystem::path(out) / "results.csv").string() << " and replicates.csv\n";
  return 0;
}

void add_scenario_options(CLI::App* app, Options& o) {
  app->add_option("--config", o.config, "scenario config file (JSON)")->check(CLI::ExistingFile);
  app->add_option("--mechanism", o.mechanism, "IE mechanism")->check(CLI::IsMember({"dar", "dnar"}));
  app->add_option("--shift", o.shift, "post-IE shift model")->check(CLI::IsMember({"instant", "gradual"}));
  app->add_option("--seed", o.seed, "root seed");
  app->add_flag("--null", o.null_mode, "null DGM: both arms use control parameters");
  app->add_flag("--allow-offgrid", o.allow_offgrid, "accept a theta outside the standard grid");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"tpsim: treatment-policy estimator simulation"};
  app.require_subcommand(1);
  Options o;

  auto* run = app.add_subcommand("run", "simulate replicates and write results.csv / replicates.csv");
  add_scenario_options(run, o);
  run->add_option("--theta", o.theta, "missingness theta on the grid 0.1..0.6, or 'all'");
  run->add_option("--methods", o.methods, "comma list of FULL,MMRM1,MMRM2,MMRM3,MI1,MI2,MI3,J2R,CIR,CR");
  run->add_option("--nsims", o.nsims, "replicates per scenario")->check(CLI::PositiveNumber);
  run->add_option("--imputations", o.imputations, "imputations per replicate")->check(CLI::PositiveNumber);
  run->add_option("--out", o.out, "output directory (default $TPSIM_OUT_DIR or ./results)");
  run->add_option("--truth-n", o.truth_n, "patients per arm for the truth oracle")->check(CLI::PositiveNumber);
  run->add_option("--df", o.df, "MMRM degrees of freedom")->check(CLI::IsMember({"kr", "satterthwaite"}));
  run->add_option("--power-rule", o.power_rule, "power criterion")->check(CLI::IsMember({"ci", "ttest"}));
  run->add_option("--pool-df", o.pool_df, "Rubin's rules df")->check(CLI::IsMember({"barnard-rubin", "rubin1987"}));
  run->add_option("--threads", o.threads, "worker threads (0: all cores)")->check(CLI::NonNegativeNumber);
  run->add_flag("--timing", o.timing, "record per-method wall time in replicates.csv");

  auto* truth = app.add_subcommand("truth", "print the true treatment-policy effect and its MC SE");
  add_scenario_options(truth, o);
  truth->add_option("--truth-n", o.truth_n, "patients per arm")->check(CLI::PositiveNumber);

  auto* validate = app.add_subcommand("validate-config", "check a config and print the resolved parameters");
  add_scenario_options(validate, o);
  validate->add_option("--theta", o.theta, "missingness theta");

  auto* dump = app.add_subcommand("dump-dataset", "write one generated trial as CSV");
  add_scenario_options(dump, o);
  dump->add_option("--theta", o.theta, "missingness theta");
  dump->add_option("--replicate", o.replicate, "replicate index");
  dump->add_option("--out", o.out, "output file (default stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }
  try {
    if (run->parsed()) return cmd_run(o);
    if (truth->parsed()) return cmd_truth(o);
    if (validate->parsed()) return cmd_validate(o);
    return cmd_dump(o);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}
