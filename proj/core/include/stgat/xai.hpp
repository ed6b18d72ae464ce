#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "stgat/model.hpp"

namespace stgat::xai {

// Layer 1: the temporal attention audit trail, exactly as computed during
// prediction (no re-normalization).
struct TemporalAttribution {
  std::string cert;
  int quarter = 0;
  std::vector<std::pair<int, double>> weights;  // (history quarter, beta)
};

TemporalAttribution extract_temporal_attention(
    const std::vector<model::QuarterPredictions>& predictions,
    const std::string& cert, int quarter);

// Layer 2: permutation feature importance as AUROC reduction.
struct FeatureImportance {
  struct Row {
    std::string feature;
    double delta_auroc = 0.0;
  };
  std::vector<Row> ranked;  // descending delta, all 13 features
  std::size_t n_repeats = 0;
  std::uint64_t seed = 0;
  double baseline_auroc = 0.0;
};

// Baseline AUROC over the pooled test quarters, then per feature: shuffle
// that column within every quarter (snapshots are copied, never modified),
// re-predict, and average the AUROC drop over `n_repeats` shuffles.
FeatureImportance permutation_importance(
    model::ModelParams& params,
    const std::vector<model::GraphSnapshot>& snapshots,
    const std::vector<int>& test_quarters, const model::TrainConfig& cfg,
    std::size_t n_repeats, std::uint64_t seed);

struct RiskReportOptions {
  std::string out_dir;
  bool plots = true;
  std::size_t trajectory_count = 5;  // highest-risk institutions to chart
};

// Report bundle: per institution-quarter rows (sorted by quarter then
// descending score), quarter-level tier counts, feature importance CSV,
// and optional SVG charts.
void write_risk_report(const std::vector<model::QuarterPredictions>& predictions,
                       const FeatureImportance& importance,
                       const std::vector<std::string>& quarter_tags,
                       const RiskReportOptions& opts);

void write_importance_csv(const std::string& path,
                          const FeatureImportance& importance);

}  // namespace stgat::xai
