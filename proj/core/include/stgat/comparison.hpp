#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "stgat/metrics.hpp"
#include "stgat/model.hpp"

namespace stgat::eval {

// Pooled test-quarter evaluation of a trained model.
MetricReport evaluate_on_test(model::ModelParams& params,
                              const std::vector<model::GraphSnapshot>& snapshots,
                              const SplitSpec& split,
                              const model::TrainConfig& cfg,
                              std::size_t bootstrap_resamples,
                              std::uint64_t bootstrap_seed);

struct RunCell {
  std::string config_name;
  std::uint64_t seed = 0;
  MetricReport report;
  std::size_t best_epoch = 0;
  std::size_t epochs_run = 0;
};

struct AggregateRow {
  std::string config_name;
  std::size_t n_runs = 0;
  double auroc_mean = 0.0, auroc_std = 0.0;
  double auprc_mean = 0.0, auprc_std = 0.0;
  double f1_mean = 0.0, f1_std = 0.0;
  double mcc_mean = 0.0, mcc_std = 0.0;
  double auroc_ci_low_median = 0.0, auroc_ci_high_median = 0.0;
  double delta_auprc_vs_full = 0.0;  // this config's mean AUPRC minus FULL's
};

struct ComparisonOptions {
  std::size_t bootstrap_resamples = 1000;
  std::size_t max_parallel = 2;  // (config, seed) cells run concurrently
  bool include_lr_baseline = true;
};

struct ComparisonResult {
  std::vector<RunCell> cells;          // ordered by (config, seed)
  std::vector<AggregateRow> aggregates;
};

// Trains and evaluates every (config, seed) cell plus the deterministic
// logistic-regression anchor, then aggregates mean/std across seeds and the
// AUPRC delta against the FULL row (when present).
ComparisonResult run_comparison(
    const std::vector<model::GraphSnapshot>& snapshots, const SplitSpec& split,
    const std::vector<model::TrainConfig>& configs,
    const std::vector<std::uint64_t>& seeds, const ComparisonOptions& opts);

// Logistic regression on the standardized node features plus the macro
// state; no graph, no history. IRLS with a small ridge, fully deterministic.
MetricReport logistic_baseline(const std::vector<model::GraphSnapshot>& snapshots,
                               const SplitSpec& split,
                               std::size_t bootstrap_resamples,
                               std::uint64_t bootstrap_seed);

void write_results_csv(const std::string& path,
                       const std::vector<RunCell>& cells);
void write_aggregate_csv(const std::string& path,
                         const std::vector<AggregateRow>& rows);

}  // namespace stgat::eval
