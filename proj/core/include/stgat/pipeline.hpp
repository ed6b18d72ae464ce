#pragma once

#include <string>
#include <vector>

#include "stgat/metrics.hpp"
#include "stgat/model.hpp"
#include "stgat/panel.hpp"

namespace stgat::pipeline {

struct PipelineOptions {
  std::size_t top_k = 200;       // dynamic subsample size per quarter
  double ras_tol = 1e-8;
  std::size_t ras_max_iter = 10000;
  double prune_threshold = 0.001;
};

struct RasLogEntry {
  int quarter = 0;
  std::string quarter_tag;
  std::size_t n = 0;
  std::size_t iterations = 0;
  double residual = 0.0;
  double column_rescale = 1.0;  // factor applied to balance marginal totals
  std::size_t edges_kept = 0;
};

struct SnapshotBuild {
  std::vector<model::GraphSnapshot> snapshots;  // one per quarter, in order
  std::vector<std::string> quarter_tags;
  std::vector<RasLogEntry> ras_log;
  std::vector<std::string> warnings;
};

// Full per-quarter assembly: top-k subsample by total assets, decile-median
// imputation, within-quarter standardization (statistics taken over the
// pre-imputation values), RAS reconstruction on the subsample marginals,
// LGD normalization and pruning, labels. Macro states must cover every
// panel quarter.
SnapshotBuild build_snapshots(
    const std::vector<panel::InstitutionQuarter>& records,
    const std::vector<panel::MacroState>& macro, const PipelineOptions& opts);

// Split from calendar tags: train <= train_end < val <= val_end < test.
eval::SplitSpec split_from_tags(const std::vector<std::string>& quarter_tags,
                                const std::string& train_end,
                                const std::string& val_end);

}  // namespace stgat::pipeline
