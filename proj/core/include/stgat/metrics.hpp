#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace stgat::eval {

// Locked temporal split over dense quarter indices: every train quarter
// precedes every validation quarter precedes every test quarter.
struct SplitSpec {
  std::vector<int> train_quarters;
  std::vector<int> val_quarters;
  std::vector<int> test_quarters;

  void validate() const;  // ordering + disjointness, throws DataError
};

// Mirrors the 48/4/6 proportions of the reference split when the panel is
// shorter than the full 58 quarters.
SplitSpec proportional_split(std::size_t n_quarters);

struct MetricReport {
  double auroc = 0.0;
  double auprc = 0.0;
  double f1 = 0.0;
  double mcc = 0.0;
  double auroc_ci_low = 0.0;
  double auroc_ci_high = 0.0;
  std::size_t n = 0;
  std::size_t n_positive = 0;
  double threshold = 0.5;
};

// Rank-statistic AUROC; ties between scores contribute 0.5. Requires at
// least one positive and one negative.
double auroc(const std::vector<double>& scores,
             const std::vector<std::uint8_t>& labels);

// Average precision. Ties are broken pessimistically: within a tied score
// group, negatives are ranked ahead of positives.
double auprc(const std::vector<double>& scores,
             const std::vector<std::uint8_t>& labels);

// Confusion metrics at `threshold` (score >= threshold is a positive call);
// zero denominators map to 0 by convention.
std::pair<double, double> f1_mcc(const std::vector<double>& scores,
                                 const std::vector<std::uint8_t>& labels,
                                 double threshold = 0.5);

// Percentile bootstrap [2.5%, 97.5%] of `metric`. Resamples that lose one of
// the classes are redrawn up to 10 times, then skipped; more than half
// skipped is an error.
using MetricFn = std::function<double(const std::vector<double>&,
                                      const std::vector<std::uint8_t>&)>;
std::pair<double, double> bootstrap_ci(const std::vector<double>& scores,
                                       const std::vector<std::uint8_t>& labels,
                                       const MetricFn& metric,
                                       std::size_t n_resamples,
                                       std::uint64_t seed);

enum class AlertTier { NORMAL, ELEVATED, HIGH_ALERT, CRITICAL };

// Tier boundaries: NORMAL < 0.30 <= ELEVATED < 0.50 <= HIGH_ALERT < 0.65
// <= CRITICAL. Scores outside [0,1] are an error.
AlertTier alert_tier(double risk_score);
const char* alert_tier_name(AlertTier tier);

MetricReport compute_report(const std::vector<double>& scores,
                            const std::vector<std::uint8_t>& labels,
                            std::size_t bootstrap_resamples,
                            std::uint64_t bootstrap_seed,
                            double threshold = 0.5);

}  // namespace stgat::eval
