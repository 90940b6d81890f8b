#pragma once

#include <algorithm>
#include <array>
#include <atomic>
#include <chrono>
#include <cstdio>
#include <exception>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include "tpsim/dgm/io.hpp"
#include "tpsim/dgm/simulate.hpp"
#include "tpsim/harness/aggregate.hpp"
#include "tpsim/mi/impute.hpp"
#include "tpsim/mmrm/estimate.hpp"
#include "tpsim/rbi/rbi.hpp"

namespace tpsim {

enum class Method : int { Full, Mmrm1, Mmrm2, Mmrm3, Mi1, Mi2, Mi3, J2R, Cir, Cr };

inline constexpr std::array<Method, 10> kAllMethods{Method::Full, Method::Mmrm1, Method::Mmrm2, Method::Mmrm3,
                                                    Method::Mi1,  Method::Mi2,   Method::Mi3,   Method::J2R,
                                                    Method::Cir,  Method::Cr};

inline std::string_view to_string(Method m) {
  static constexpr std::array<std::string_view, 10> names{"FULL", "MMRM1", "MMRM2", "MMRM3", "MI1",
                                                          "MI2",  "MI3",   "J2R",   "CIR",   "CR"};
  return names[static_cast<std::size_t>(m)];
}

inline Method parse_method(std::string_view s) {
  for (Method m : kAllMethods)
    if (to_string(m) == s) return m;
  throw InvalidParameter("unknown method '" + std::string(s) +
                         "' (expected FULL, MMRM1, MMRM2, MMRM3, MI1, MI2, MI3, J2R, CIR or CR)");
}

/// Comma-separated list, duplicates dropped, order kept.
inline std::vector<Method> parse_methods(std::string_view list) {
  std::vector<Method> out;
  std::size_t pos = 0;
  while (pos <= list.size()) {
    const auto comma = std::min(list.find(',', pos), list.size());
    const auto item = list.substr(pos, comma - pos);
    if (!item.empty()) {
      const Method m = parse_method(item);
      if (std::find(out.begin(), out.end(), m) == out.end()) out.push_back(m);
    }
    pos = comma + 1;
  }
  return out;
}

inline bool is_rbi(Method m) { return m == Method::J2R || m == Method::Cir || m == Method::Cr; }

struct Scenario {
  IeMechanism mechanism = IeMechanism::Dar;
  ShiftModel shift = ShiftModel::Instant;
  double theta = 0.1;

  /// e.g. "DAR-Instant-3" on the grid, "DAR-Instant-0.25" off it
  [[nodiscard]] std::string id() const {
    const int k = theta_grid_index(theta);
    char buf[32];
    if (k > 0) {
      std::snprintf(buf, sizeof buf, "%d", k);
    } else {
      std::snprintf(buf, sizeof buf, "%g", theta);
    }
    return std::string(to_string(mechanism)) + '-' + std::string(to_string(shift)) + '-' + buf;
  }
};

/// Both shifts x the six thetas for one mechanism.
inline std::vector<Scenario> scenario_grid(IeMechanism mech, std::optional<ShiftModel> shift = std::nullopt) {
  std::vector<Scenario> out;
  for (ShiftModel s : {ShiftModel::Instant, ShiftModel::Gradual}) {
    if (shift && *shift != s) continue;
    for (double t : kThetaGrid) out.push_back({mech, s, t});
  }
  return out;
}

struct RunPlan {
  ScenarioConfig base = pioneer1_defaults();
  std::vector<Scenario> scenarios{Scenario{}};
  std::vector<Method> methods{kAllMethods.begin(), kAllMethods.end()};
  int n_reps = 500;
  int m_imputations = 50;
  double margin = kDefaultMargin;
  double alpha = kDefaultAlpha;
  int truth_n = 200000;
  DfMethod df = DfMethod::KenwardRoger;
  PoolDf pool_df = PoolDf::BarnardRubin;
  PowerRule power_rule = PowerRule::Ci;
  int rbi_burn_in = 200;
  int rbi_thin = 10;
  int threads = 0;  ///< 0: hardware concurrency
  bool timing = false;

  [[nodiscard]] ScenarioConfig config(const Scenario& s) const {
    ScenarioConfig cfg = base;
    cfg.mechanism = s.mechanism;
    cfg.shift_model = s.shift;
    cfg.missingness_theta = s.theta;
    return cfg;
  }

  void validate() const {
    if (methods.empty()) throw InvalidParameter("run plan has no methods");
    if (scenarios.empty()) throw InvalidParameter("run plan has no scenarios");
    if (!(margin < 0)) throw InvalidParameter("non-inferiority margin must be negative");
    if (!(alpha > 0 && alpha < 1)) throw InvalidParameter("alpha must lie in (0, 1)");
    if (n_reps < 2) throw InvalidParameter("need at least two replicates");
    if (m_imputations < 2) throw InvalidParameter("need at least two imputations");
    if (truth_n < 2) throw InvalidParameter("truth sample size must be at least 2");
    if (rbi_burn_in < 0 || rbi_thin < 1) throw InvalidParameter("invalid sampler burn-in or thinning");
    if (threads < 0) throw InvalidParameter("threads must be non-negative");
    for (const auto& s : scenarios) config(s).validate();
  }
};

struct ReplicateRecord {
  int replicate = 0;  ///< 1..M
  Method method = Method::Full;
  bool failed = false;
  std::string error;
  EstimateResult result;
  double seconds = 0;
};

struct MethodSummary {
  Method method = Method::Full;
  OperatingCharacteristics oc;
  std::string error;  ///< set when fewer than two replicates succeeded
};

struct ScenarioResult {
  Scenario scenario;
  double delta_true = 0;
  bool null_mode = false;
  std::vector<ReplicateRecord> records;  ///< replicate-major, plan method order
  std::vector<MethodSummary> summaries;  ///< plan method order
};

/// Truth per (config, shift, mechanism, null flag, n); theta does not enter the
/// estimand. The null DGM has equal arms, so its truth is exactly 0.
class TruthCache {
 public:
  TrueEstimand get(const ScenarioConfig& cfg, int n) {
    if (cfg.null_mode) return {0.0, 0.0};
    ScenarioConfig key_cfg = cfg;
    key_cfg.missingness_theta = kThetaGrid[0];
    key_cfg.allow_offgrid = false;
    const std::string key = config_to_json(key_cfg) + '#' + std::to_string(n);
    std::lock_guard lock(mu_);
    if (auto it = cache_.find(key); it != cache_.end()) return it->second;
    const TrueEstimand t = true_estimand(cfg, n);
    cache_.emplace(key, t);
    return t;
  }

 private:
  std::mutex mu_;
  std::map<std::string, TrueEstimand> cache_;
};

namespace detail {

inline RngStream analysis_stream(const ScenarioConfig& cfg, int replicate, std::uint64_t method_id) {
  return replicate_stream(cfg, static_cast<std::uint64_t>(replicate))
      .child({static_cast<std::uint64_t>(Stage::Analysis), method_id});
}

inline constexpr std::uint64_t kRbiStreamId = 100;

/// All requested methods on replicate `rep`, in plan order; failures are captured.
inline std::vector<ReplicateRecord> run_replicate(const RunPlan& plan, const ScenarioConfig& cfg, int rep) {
  using Clock = std::chrono::steady_clock;
  std::vector<ReplicateRecord> out;
  std::optional<TrialDataset> ds;
  std::string gen_error;
  try {
    ds = generate_trial(cfg, static_cast<std::uint64_t>(rep));
  } catch (const std::exception& e) {
    gen_error = std::string("data generation: ") + e.what();
  }
  const MmrmOptions mmrm_opt{plan.df, plan.margin, plan.alpha, {}};
  const MiOptions mi_opt{plan.m_imputations, plan.pool_df, plan.margin, plan.alpha};
  RbiOptions rbi_opt;
  rbi_opt.m = plan.m_imputations;
  rbi_opt.burn_in = plan.rbi_burn_in;
  rbi_opt.thin = plan.rbi_thin;
  rbi_opt.pool_df = plan.pool_df;
  rbi_opt.margin = plan.margin;
  rbi_opt.alpha = plan.alpha;

  std::optional<RbiResults> rbi;
  std::string rbi_error;
  double rbi_seconds = 0;
  for (Method m : plan.methods) {
    ReplicateRecord rec;
    rec.replicate = rep;
    rec.method = m;
    const auto start = Clock::now();
    try {
      if (!ds) throw Error(gen_error);
      const auto id = static_cast<std::uint64_t>(m);
      switch (m) {
        case Method::Full: {
          const TrialDataset full = ds->without_missingness();
          std::vector<double> y5;
          y5.reserve(full.patients.size());
          for (const auto& p : full.patients) y5.push_back(p.change(kPostVisits));
          const AncovaResult a = ancova(full, y5);
          rec.result = make_result("FULL", a.estimate, a.se, a.df, plan.margin, plan.alpha);
          break;
        }
        case Method::Mmrm1:
        case Method::Mmrm2:
        case Method::Mmrm3:
          rec.result = estimate_mmrm(*ds, static_cast<int>(m), mmrm_opt);
          break;
        case Method::Mi1:
        case Method::Mi2:
        case Method::Mi3:
          rec.result = estimate_mi(*ds, static_cast<int>(m) - 3, analysis_stream(cfg, rep, id), mi_opt);
          break;
        case Method::J2R:
        case Method::Cir:
        case Method::Cr: {
          if (!rbi && rbi_error.empty()) {
            try {
              rbi = estimate_rbi_all(*ds, analysis_stream(cfg, rep, kRbiStreamId), rbi_opt);
            } catch (const std::exception& e) {
              rbi_error = e.what();
            }
            rbi_seconds = std::chrono::duration<double>(Clock::now() - start).count();
          }
          if (!rbi) throw Error(rbi_error);
          rec.result = rbi->results[static_cast<std::size_t>(m) - static_cast<std::size_t>(Method::J2R)];
          break;
        }
      }
    } catch (const std::exception& e) {
      rec.failed = true;
      rec.error = e.what();
      rec.result = EstimateResult{};
      rec.result.method = std::string(to_string(m));
    }
    if (plan.timing) rec.seconds = is_rbi(m) ? rbi_seconds : std::chrono::duration<double>(Clock::now() - start).count();
    out.push_back(std::move(rec));
  }
  return out;
}

inline std::vector<MethodSummary> summarise(const std::vector<Method>& methods, const std::vector<ReplicateRecord>& records,
                                            double delta_true, const AggregateOptions& opt) {
  std::vector<MethodSummary> out;
  for (Method m : methods) {
    MethodSummary s;
    s.method = m;
    std::vector<EstimateResult> ok;
    int failed = 0;
    for (const auto& r : records) {
      if (r.method != m) continue;
      if (r.failed) {
        ++failed;
      } else {
        ok.push_back(r.result);
      }
    }
    try {
      s.oc = aggregate(ok, delta_true, opt, failed);
    } catch (const InvalidParameter& e) {
      const double nan = std::numeric_limits<double>::quiet_NaN();
      s.oc = OperatingCharacteristics{};
      s.oc.n_reps = static_cast<int>(ok.size());
      s.oc.n_failed = failed;
      for (double* f : {&s.oc.bias, &s.oc.bias_mcse, &s.oc.sd, &s.oc.mean_se, &s.oc.power, &s.oc.power_mcse,
                        &s.oc.coverage, &s.oc.coverage_mcse, &s.oc.rmse})
        *f = nan;
      s.error = e.what();
    }
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace detail

inline AggregateOptions aggregate_options(const RunPlan& plan, bool null_mode) {
  return {plan.margin, plan.alpha, plan.power_rule, null_mode};
}

/// M replicates of one scenario on a pool of worker threads. Each replicate
/// draws from its own counter-based stream, so results do not depend on the
/// thread count or completion order.
inline ScenarioResult run_scenario(const RunPlan& plan, const Scenario& scenario, TruthCache* truth_cache = nullptr) {
  plan.validate();
  const ScenarioConfig cfg = plan.config(scenario);
  ScenarioResult res;
  res.scenario = scenario;
  res.null_mode = cfg.null_mode;
  TruthCache local;
  res.delta_true = (truth_cache ? *truth_cache : local).get(cfg, plan.truth_n).delta;

  std::vector<std::vector<ReplicateRecord>> per_rep(static_cast<std::size_t>(plan.n_reps));
  std::atomic<int> next{0};
  auto worker = [&] {
    for (int i = next++; i < plan.n_reps; i = next++) per_rep[i] = detail::run_replicate(plan, cfg, i + 1);
  };
  const int n_threads =
      std::max(1, std::min(plan.n_reps, plan.threads > 0 ? plan.threads : static_cast<int>(std::thread::hardware_concurrency())));
  if (n_threads == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (int t = 0; t < n_threads; ++t) pool.emplace_back(worker);
  }
  for (auto& r : per_rep)
    for (auto& rec : r) res.records.push_back(std::move(rec));
  res.summaries = detail::summarise(plan.methods, res.records, res.delta_true, aggregate_options(plan, cfg.null_mode));
  return res;
}

}  // namespace tpsim
