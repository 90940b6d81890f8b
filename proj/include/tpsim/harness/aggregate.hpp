#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "tpsim/error.hpp"
#include "tpsim/estimate.hpp"

namespace tpsim {

/// Power counts a replicate as a success when the upper CI bound is below the
/// margin (`Ci`) or when the one-sided margin test rejects at alpha/2 (`TTest`).
enum class PowerRule { Ci, TTest };

inline std::string_view to_string(PowerRule r) { return r == PowerRule::Ci ? "ci" : "ttest"; }

struct AggregateOptions {
  double margin = kDefaultMargin;
  double alpha = kDefaultAlpha;
  PowerRule power_rule = PowerRule::Ci;
  bool null_mode = false;
};

/// Metrics over the successful replicates of one method. Rates carry binomial
/// MC SEs; `type1` and its MC SE are NaN outside null mode.
struct OperatingCharacteristics {
  int n_reps = 0;  ///< successful replicates used
  int n_failed = 0;
  double bias = 0;
  double bias_mcse = 0;
  double sd = 0;
  double mean_se = 0;
  double power = 0;
  double power_mcse = 0;
  double type1 = std::numeric_limits<double>::quiet_NaN();
  double type1_mcse = std::numeric_limits<double>::quiet_NaN();
  double coverage = 0;
  double coverage_mcse = 0;
  double rmse = 0;
  std::map<int, int, std::greater<>> collapse_counts;
};

inline double binomial_mcse(double rate, int n) { return std::sqrt(rate * (1 - rate) / n); }

/// "6:408|5:88", highest level first; empty when no result carries a level.
inline std::string encode_collapse_counts(const std::map<int, int, std::greater<>>& counts) {
  std::string s;
  for (const auto& [level, n] : counts) {
    if (!s.empty()) s += '|';
    s += std::to_string(level) + ':' + std::to_string(n);
  }
  return s;
}

inline bool power_success(const EstimateResult& r, const AggregateOptions& opt) {
  return opt.power_rule == PowerRule::Ci ? r.ci_hi < opt.margin : r.p_margin < opt.alpha / 2;
}

inline OperatingCharacteristics aggregate(const std::vector<EstimateResult>& records, double delta_true,
                                          const AggregateOptions& opt = {}, int n_failed = 0) {
  const int n = static_cast<int>(records.size());
  if (n < 2) throw InvalidParameter("aggregate needs at least two successful replicates, got " + std::to_string(n));
  OperatingCharacteristics oc;
  oc.n_reps = n;
  oc.n_failed = n_failed;
  double mean = 0, mse = 0, se = 0;
  int power = 0, reject = 0, cover = 0;
  for (const auto& r : records) {
    mean += r.estimate;
    mse += (r.estimate - delta_true) * (r.estimate - delta_true);
    se += r.se;
    power += power_success(r, opt);
    reject += r.p_zero < opt.alpha;
    cover += r.ci_lo <= delta_true && delta_true <= r.ci_hi;
    if (r.collapse_level > 0) ++oc.collapse_counts[r.collapse_level];
  }
  mean /= n;
  if (std::all_of(records.begin(), records.end(), [&](const auto& r) { return r.estimate == records[0].estimate; }))
    mean = records[0].estimate;
  double ss = 0;
  for (const auto& r : records) ss += (r.estimate - mean) * (r.estimate - mean);
  oc.bias = mean - delta_true;
  oc.sd = std::sqrt(ss / (n - 1));
  oc.bias_mcse = oc.sd / std::sqrt(n);
  oc.mean_se = se / n;
  oc.power = static_cast<double>(power) / n;
  oc.power_mcse = binomial_mcse(oc.power, n);
  if (opt.null_mode) {
    oc.type1 = static_cast<double>(reject) / n;
    oc.type1_mcse = binomial_mcse(oc.type1, n);
  }
  oc.coverage = static_cast<double>(cover) / n;
  oc.coverage_mcse = binomial_mcse(oc.coverage, n);
  oc.rmse = std::sqrt(mse / n);
  return oc;
}

}  // namespace tpsim
