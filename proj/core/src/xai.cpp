#include "stgat/xai.hpp"

#include <algorithm>
#include <filesystem>
#include <map>

#include "stgat/csv.hpp"
#include "stgat/errors.hpp"
#include "stgat/rng.hpp"
#include "stgat/svg.hpp"

namespace stgat::xai {

TemporalAttribution extract_temporal_attention(
    const std::vector<model::QuarterPredictions>& predictions,
    const std::string& cert, int quarter) {
  for (const auto& qp : predictions) {
    if (qp.quarter != quarter) continue;
    for (const auto& n : qp.nodes) {
      if (n.cert == cert) {
        return {cert, quarter, n.beta};
      }
    }
  }
  throw DataError("extract_temporal_attention: cert " + cert +
                  " was not scored in quarter " + std::to_string(quarter));
}

namespace {

std::pair<std::vector<double>, std::vector<std::uint8_t>> pooled_scores(
    model::ModelParams& params,
    const std::vector<model::GraphSnapshot>& snapshots,
    const std::vector<int>& test_quarters, const model::TrainConfig& cfg) {
  std::vector<double> scores;
  std::vector<std::uint8_t> labels;
  for (int q : test_quarters) {
    auto preds = model::predict(params, snapshots, q, cfg, false);
    for (const auto& n : preds.nodes) {
      scores.push_back(n.score);
      labels.push_back(n.label);
    }
  }
  return {std::move(scores), std::move(labels)};
}

}  // namespace

FeatureImportance permutation_importance(
    model::ModelParams& params,
    const std::vector<model::GraphSnapshot>& snapshots,
    const std::vector<int>& test_quarters, const model::TrainConfig& cfg,
    std::size_t n_repeats, std::uint64_t seed) {
  if (n_repeats == 0) throw DataError("permutation_importance: n_repeats == 0");

  FeatureImportance out;
  out.n_repeats = n_repeats;
  out.seed = seed;
  auto [base_scores, base_labels] =
      pooled_scores(params, snapshots, test_quarters, cfg);
  out.baseline_auroc = eval::auroc(base_scores, base_labels);

  for (std::size_t f = 0; f < panel::kFeatureCount; ++f) {
    double drop_sum = 0.0;
    for (std::size_t rep = 0; rep < n_repeats; ++rep) {
      std::vector<model::GraphSnapshot> shuffled = snapshots;
      for (auto& snap : shuffled) {
        const std::size_t n = snap.n();
        std::vector<double> col(n);
        for (std::size_t i = 0; i < n; ++i) col[i] = snap.x(i, f);
        Rng rng(mix_seed(seed, f, rep,
                         static_cast<std::uint64_t>(snap.quarter)));
        rng.shuffle(col);
        for (std::size_t i = 0; i < n; ++i) snap.x(i, f) = col[i];
      }
      auto [scores, labels] =
          pooled_scores(params, shuffled, test_quarters, cfg);
      drop_sum += out.baseline_auroc - eval::auroc(scores, labels);
    }
    out.ranked.push_back(
        {panel::kFeatureNames[f], drop_sum / static_cast<double>(n_repeats)});
  }
  std::stable_sort(out.ranked.begin(), out.ranked.end(),
                   [](const FeatureImportance::Row& a,
                      const FeatureImportance::Row& b) {
                     return a.delta_auroc > b.delta_auroc;
                   });
  return out;
}

void write_importance_csv(const std::string& path,
                          const FeatureImportance& importance) {
  csv::Writer w(path);
  w.write_row({"feature", "delta_auroc", "rank"});
  for (std::size_t i = 0; i < importance.ranked.size(); ++i) {
    w.write_row({importance.ranked[i].feature,
                 csv::fmt(importance.ranked[i].delta_auroc),
                 std::to_string(i + 1)});
  }
  w.close();
}

void write_risk_report(const std::vector<model::QuarterPredictions>& predictions,
                       const FeatureImportance& importance,
                       const std::vector<std::string>& quarter_tags,
                       const RiskReportOptions& opts) {
  namespace fs = std::filesystem;
  fs::create_directories(opts.out_dir);

  const std::string top1 =
      importance.ranked.empty() ? "" : importance.ranked[0].feature;
  const std::string top2 =
      importance.ranked.size() < 2 ? "" : importance.ranked[1].feature;

  // rows sorted by (quarter, descending risk score)
  std::vector<const model::NodePrediction*> rows;
  for (const auto& qp : predictions) {
    for (const auto& n : qp.nodes) rows.push_back(&n);
  }
  std::sort(rows.begin(), rows.end(),
            [](const model::NodePrediction* a, const model::NodePrediction* b) {
              if (a->quarter != b->quarter) return a->quarter < b->quarter;
              if (a->score != b->score) return a->score > b->score;
              return a->cert < b->cert;
            });

  csv::Writer report(opts.out_dir + "/report.csv");
  std::vector<std::string> header = {"cert",       "quarter", "risk_score",
                                     "alert_tier", "label",   "top_feature_1",
                                     "top_feature_2"};
  for (int k = 1; k <= 8; ++k) header.push_back("beta_q" + std::to_string(k));
  report.write_row(header);
  for (const auto* n : rows) {
    std::vector<std::string> cells = {
        n->cert,
        quarter_tags.at(static_cast<std::size_t>(n->quarter)),
        csv::fmt(n->score),
        eval::alert_tier_name(eval::alert_tier(n->score)),
        n->label ? "1" : "0",
        top1,
        top2};
    // slot k (1..8) holds history quarter t-8+k; earliest first
    std::array<std::string, 8> beta_cells;
    for (const auto& [q, b] : n->beta) {
      const int slot = q - n->quarter + 8;
      if (slot >= 1 && slot <= 8) beta_cells[slot - 1] = csv::fmt(b);
    }
    for (auto& c : beta_cells) cells.push_back(std::move(c));
    report.write_row(cells);
  }
  report.close();

  // quarter-level tier counts
  csv::Writer summary(opts.out_dir + "/summary.csv");
  summary.write_row(
      {"quarter", "n", "normal", "elevated", "high_alert", "critical"});
  for (const auto& qp : predictions) {
    std::size_t counts[4] = {0, 0, 0, 0};
    for (const auto& n : qp.nodes) {
      counts[static_cast<int>(eval::alert_tier(n.score))]++;
    }
    summary.write_row({qp.quarter_tag, std::to_string(qp.nodes.size()),
                       std::to_string(counts[0]), std::to_string(counts[1]),
                       std::to_string(counts[2]), std::to_string(counts[3])});
  }
  summary.close();

  write_importance_csv(opts.out_dir + "/importance.csv", importance);

  if (!opts.plots || predictions.empty()) return;
  fs::create_directories(opts.out_dir + "/plots");

  // risk trajectories of the institutions with the highest peak scores
  std::map<std::string, double> peak;
  std::map<std::string, std::vector<std::pair<double, double>>> traj;
  for (const auto& qp : predictions) {
    for (const auto& n : qp.nodes) {
      peak[n.cert] = std::max(peak[n.cert], n.score);
      traj[n.cert].emplace_back(static_cast<double>(n.quarter), n.score);
    }
  }
  std::vector<std::pair<double, std::string>> by_peak;
  for (const auto& [cert, p] : peak) by_peak.emplace_back(p, cert);
  std::sort(by_peak.rbegin(), by_peak.rend());
  std::vector<svg::Series> series;
  for (std::size_t i = 0; i < by_peak.size() && i < opts.trajectory_count;
       ++i) {
    series.push_back({by_peak[i].second, traj[by_peak[i].second]});
  }
  svg::write_line_plot(opts.out_dir + "/plots/risk_trajectories.svg",
                       "Highest-risk institutions", "quarter index",
                       "risk score", series);

  // temporal attention decay of the top-risk institution, latest quarter
  if (!by_peak.empty()) {
    const std::string& cert = by_peak.front().second;
    for (auto it = predictions.rbegin(); it != predictions.rend(); ++it) {
      const model::QuarterPredictions& qp = *it;
      auto n = std::find_if(qp.nodes.begin(), qp.nodes.end(),
                            [&](const auto& x) { return x.cert == cert; });
      if (n == qp.nodes.end() || n->beta.empty()) continue;
      svg::Series s{cert, {}};
      for (const auto& [q, b] : n->beta) {
        s.points.emplace_back(static_cast<double>(q), b);
      }
      svg::write_line_plot(opts.out_dir + "/plots/beta_decay.svg",
                           "Temporal attention, " + cert + " at " +
                               qp.quarter_tag,
                           "history quarter index", "beta", {s});
      break;
    }
  }

  // precision-recall curve over the pooled predictions
  {
    std::vector<std::pair<double, std::uint8_t>> sl;
    for (const auto& qp : predictions) {
      for (const auto& n : qp.nodes) sl.emplace_back(n.score, n.label);
    }
    std::stable_sort(sl.begin(), sl.end(), [](const auto& a, const auto& b) {
      if (a.first != b.first) return a.first > b.first;
      return a.second < b.second;
    });
    std::size_t n_pos = 0;
    for (const auto& [s, y] : sl) n_pos += y ? 1 : 0;
    if (n_pos > 0) {
      svg::Series curve{"PR", {}};
      std::size_t tp = 0;
      for (std::size_t k = 0; k < sl.size(); ++k) {
        if (sl[k].second) {
          ++tp;
          curve.points.emplace_back(
              static_cast<double>(tp) / static_cast<double>(n_pos),
              static_cast<double>(tp) / static_cast<double>(k + 1));
        }
      }
      svg::write_line_plot(opts.out_dir + "/plots/pr_curve.svg",
                           "Precision-recall", "recall", "precision", {curve});
    }
  }
}

}  // namespace stgat::xai
