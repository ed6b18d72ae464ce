#include "stgat/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "stgat/errors.hpp"
#include "stgat/netrecon.hpp"

namespace stgat::pipeline {

SnapshotBuild build_snapshots(
    const std::vector<panel::InstitutionQuarter>& records,
    const std::vector<panel::MacroState>& macro, const PipelineOptions& opts) {
  SnapshotBuild out;
  if (records.empty()) throw DataError("build_snapshots: empty panel");

  std::map<std::string, const panel::MacroState*> macro_by_tag;
  for (const auto& m : macro) macro_by_tag[m.quarter_tag] = &m;

  int max_quarter = 0;
  for (const auto& r : records) max_quarter = std::max(max_quarter, r.quarter);
  std::vector<std::vector<const panel::InstitutionQuarter*>> by_quarter(
      max_quarter + 1);
  std::map<int, std::string> tag_of;
  for (const auto& r : records) {
    by_quarter[r.quarter].push_back(&r);
    tag_of[r.quarter] = r.quarter_tag;
  }

  for (int q = 0; q <= max_quarter; ++q) {
    auto& recs = by_quarter[q];
    if (recs.empty()) {
      throw DataError("build_snapshots: no records for quarter index " +
                      std::to_string(q));
    }
    const std::string tag = tag_of[q];
    auto mit = macro_by_tag.find(tag);
    if (mit == macro_by_tag.end()) {
      throw DataError("build_snapshots: macro series has no row for " + tag);
    }

    // graph-construction invariants: positive assets and tier1 capital
    std::size_t dropped = 0;
    std::vector<const panel::InstitutionQuarter*> eligible;
    for (const auto* r : recs) {
      if (r->total_assets > 0.0 && r->tier1_capital > 0.0) {
        eligible.push_back(r);
      } else {
        ++dropped;
      }
    }
    if (dropped > 0) {
      out.warnings.push_back(tag + ": dropped " + std::to_string(dropped) +
                             " records with non-positive assets or tier1");
    }
    if (eligible.size() < 2) {
      throw DataError("build_snapshots: fewer than 2 eligible records in " +
                      tag);
    }

    // dynamic top-k by total assets, cert as the deterministic tiebreak
    std::sort(eligible.begin(), eligible.end(),
              [](const auto* a, const auto* b) {
                if (a->total_assets != b->total_assets)
                  return a->total_assets > b->total_assets;
                return a->cert < b->cert;
              });
    const std::size_t k = std::min(opts.top_k, eligible.size());
    std::vector<panel::InstitutionQuarter> subsample;
    subsample.reserve(k);
    for (std::size_t i = 0; i < k; ++i) subsample.push_back(*eligible[i]);

    // standardization statistics come from the pre-imputation values
    std::vector<const panel::InstitutionQuarter*> views;
    views.reserve(k);
    for (const auto& r : subsample) views.push_back(&r);
    panel::FeatureStats stats = panel::feature_stats(views);

    std::vector<panel::InstitutionQuarter*> mut;
    mut.reserve(k);
    for (auto& r : subsample) mut.push_back(&r);
    panel::impute(mut);

    model::GraphSnapshot snap;
    snap.quarter = q;
    snap.quarter_tag = tag;
    snap.x = panel::apply_standardization(views, stats);
    snap.z = mit->second->z;
    snap.certs.reserve(k);
    snap.labels.reserve(k);
    std::vector<double> rows(k), cols(k), tier1(k);
    for (std::size_t i = 0; i < k; ++i) {
      snap.certs.push_back(subsample[i].cert);
      snap.labels.push_back(panel::label(subsample[i]).distressed ? 1 : 0);
      rows[i] = subsample[i].interbank_assets;
      cols[i] = subsample[i].interbank_liabilities;
      tier1[i] = subsample[i].tier1_capital;
    }

    RasLogEntry log;
    log.quarter = q;
    log.quarter_tag = tag;
    log.n = k;
    log.column_rescale = net::rescale_columns(rows, cols);
    if (std::abs(log.column_rescale - 1.0) > 1e-6) {
      out.warnings.push_back(tag + ": rescaled column marginals by " +
                             std::to_string(log.column_rescale));
    }
    net::ExposureMatrix mat =
        net::ras_reconstruct(rows, cols, opts.ras_tol, opts.ras_max_iter);
    log.iterations = mat.iterations;
    log.residual = mat.residual;
    snap.edges = net::normalize_edges(mat, tier1, opts.prune_threshold);
    log.edges_kept = snap.edges.edges.size();

    out.ras_log.push_back(log);
    out.quarter_tags.push_back(tag);
    out.snapshots.push_back(std::move(snap));
  }
  return out;
}

eval::SplitSpec split_from_tags(const std::vector<std::string>& quarter_tags,
                                const std::string& train_end,
                                const std::string& val_end) {
  const int train_key = panel::quarter_key(train_end);
  const int val_key = panel::quarter_key(val_end);
  if (val_key <= train_key) {
    throw DataError("split: val end must come after train end");
  }
  eval::SplitSpec s;
  for (std::size_t i = 0; i < quarter_tags.size(); ++i) {
    const int key = panel::quarter_key(quarter_tags[i]);
    if (key <= train_key) {
      s.train_quarters.push_back(static_cast<int>(i));
    } else if (key <= val_key) {
      s.val_quarters.push_back(static_cast<int>(i));
    } else {
      s.test_quarters.push_back(static_cast<int>(i));
    }
  }
  s.validate();
  return s;
}

}  // namespace stgat::pipeline
