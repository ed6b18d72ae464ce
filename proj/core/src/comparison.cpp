#include "stgat/comparison.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <thread>

#include "stgat/csv.hpp"
#include "stgat/errors.hpp"

namespace stgat::eval {

MetricReport evaluate_on_test(model::ModelParams& params,
                              const std::vector<model::GraphSnapshot>& snapshots,
                              const SplitSpec& split,
                              const model::TrainConfig& cfg,
                              std::size_t bootstrap_resamples,
                              std::uint64_t bootstrap_seed) {
  std::vector<double> scores;
  std::vector<std::uint8_t> labels;
  for (int q : split.test_quarters) {
    auto preds = model::predict(params, snapshots, q, cfg, false);
    for (const auto& n : preds.nodes) {
      scores.push_back(n.score);
      labels.push_back(n.label);
    }
  }
  return compute_report(scores, labels, bootstrap_resamples, bootstrap_seed);
}

MetricReport logistic_baseline(const std::vector<model::GraphSnapshot>& snapshots,
                               const SplitSpec& split,
                               std::size_t bootstrap_resamples,
                               std::uint64_t bootstrap_seed) {
  const std::size_t fdim = panel::kFeatureCount + panel::kMacroDim + 1;
  auto design_row = [&](const model::GraphSnapshot& s, std::size_t i,
                        Eigen::VectorXd& row) {
    for (std::size_t f = 0; f < panel::kFeatureCount; ++f) {
      row(static_cast<Eigen::Index>(f)) = s.x(i, f);
    }
    for (std::size_t j = 0; j < panel::kMacroDim; ++j) {
      row(static_cast<Eigen::Index>(panel::kFeatureCount + j)) = s.z[j];
    }
    row(static_cast<Eigen::Index>(fdim - 1)) = 1.0;  // intercept
  };

  std::size_t n_train = 0;
  for (int q : split.train_quarters) n_train += snapshots[q].n();
  Eigen::MatrixXd x(n_train, fdim);
  Eigen::VectorXd y(n_train);
  std::size_t r = 0;
  for (int q : split.train_quarters) {
    const auto& s = snapshots[q];
    for (std::size_t i = 0; i < s.n(); ++i, ++r) {
      Eigen::VectorXd row(fdim);
      design_row(s, i, row);
      x.row(static_cast<Eigen::Index>(r)) = row;
      y(static_cast<Eigen::Index>(r)) = s.labels[i] ? 1.0 : 0.0;
    }
  }

  // IRLS with a small ridge for separable data
  const double ridge = 1e-4;
  Eigen::VectorXd theta = Eigen::VectorXd::Zero(fdim);
  for (int iter = 0; iter < 100; ++iter) {
    Eigen::VectorXd eta = x * theta;
    Eigen::VectorXd p = (1.0 / (1.0 + (-eta.array()).exp())).matrix();
    Eigen::VectorXd w = (p.array() * (1.0 - p.array())).cwiseMax(1e-9).matrix();
    Eigen::MatrixXd xtw = x.transpose() * w.asDiagonal();
    Eigen::MatrixXd h = xtw * x;
    h.diagonal().array() += ridge;
    Eigen::VectorXd grad = x.transpose() * (y - p) - ridge * theta;
    Eigen::VectorXd delta = h.ldlt().solve(grad);
    theta += delta;
    if (delta.cwiseAbs().maxCoeff() < 1e-10) break;
  }

  std::vector<double> scores;
  std::vector<std::uint8_t> labels;
  for (int q : split.test_quarters) {
    const auto& s = snapshots[q];
    for (std::size_t i = 0; i < s.n(); ++i) {
      Eigen::VectorXd row(fdim);
      design_row(s, i, row);
      scores.push_back(1.0 / (1.0 + std::exp(-row.dot(theta))));
      labels.push_back(s.labels[i]);
    }
  }
  return compute_report(scores, labels, bootstrap_resamples, bootstrap_seed);
}

namespace {

double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

double sample_std(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double mu = mean_of(v);
  double ss = 0.0;
  for (double x : v) ss += (x - mu) * (x - mu);
  return std::sqrt(ss / static_cast<double>(v.size() - 1));
}

double median_of(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

ComparisonResult run_comparison(
    const std::vector<model::GraphSnapshot>& snapshots, const SplitSpec& split,
    const std::vector<model::TrainConfig>& configs,
    const std::vector<std::uint64_t>& seeds, const ComparisonOptions& opts) {
  if (configs.empty() || seeds.empty()) {
    throw DataError("run_comparison: need at least one config and one seed");
  }
  split.validate();

  struct Job {
    std::size_t config_idx;
    std::uint64_t seed;
  };
  std::vector<Job> jobs;
  for (std::size_t c = 0; c < configs.size(); ++c) {
    for (auto s : seeds) jobs.push_back({c, s});
  }

  ComparisonResult out;
  out.cells.resize(jobs.size());

  std::atomic<std::size_t> next{0};
  auto worker = [&]() {
    while (true) {
      const std::size_t j = next.fetch_add(1);
      if (j >= jobs.size()) return;
      const Job& job = jobs[j];
      const model::TrainConfig& cfg = configs[job.config_idx];
      model::TrainResult tr = model::train(snapshots, split, cfg, job.seed);
      RunCell cell;
      cell.config_name = model::ablation_name(cfg.ablation);
      cell.seed = job.seed;
      cell.best_epoch = tr.best_epoch;
      cell.epochs_run = tr.log.size();
      cell.report = evaluate_on_test(tr.params, snapshots, split, cfg,
                                     opts.bootstrap_resamples, job.seed);
      out.cells[j] = std::move(cell);
    }
  };
  const std::size_t n_threads =
      std::max<std::size_t>(1, std::min(opts.max_parallel, jobs.size()));
  if (n_threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t i = 0; i < n_threads; ++i) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }

  if (opts.include_lr_baseline) {
    RunCell lr;
    lr.config_name = "LR";
    lr.seed = 0;
    lr.report = logistic_baseline(snapshots, split, opts.bootstrap_resamples,
                                  seeds.front());
    out.cells.push_back(std::move(lr));
  }

  // aggregates per config, in first-seen cell order
  std::vector<std::string> names;
  for (const auto& c : out.cells) {
    if (std::find(names.begin(), names.end(), c.config_name) == names.end()) {
      names.push_back(c.config_name);
    }
  }
  double full_auprc_mean = 0.0;
  bool have_full = false;
  for (const auto& name : names) {
    AggregateRow row;
    row.config_name = name;
    std::vector<double> auroc_v, auprc_v, f1_v, mcc_v, lo_v, hi_v;
    for (const auto& c : out.cells) {
      if (c.config_name != name) continue;
      auroc_v.push_back(c.report.auroc);
      auprc_v.push_back(c.report.auprc);
      f1_v.push_back(c.report.f1);
      mcc_v.push_back(c.report.mcc);
      lo_v.push_back(c.report.auroc_ci_low);
      hi_v.push_back(c.report.auroc_ci_high);
    }
    row.n_runs = auroc_v.size();
    row.auroc_mean = mean_of(auroc_v);
    row.auroc_std = sample_std(auroc_v);
    row.auprc_mean = mean_of(auprc_v);
    row.auprc_std = sample_std(auprc_v);
    row.f1_mean = mean_of(f1_v);
    row.f1_std = sample_std(f1_v);
    row.mcc_mean = mean_of(mcc_v);
    row.mcc_std = sample_std(mcc_v);
    row.auroc_ci_low_median = median_of(lo_v);
    row.auroc_ci_high_median = median_of(hi_v);
    if (name == "FULL") {
      full_auprc_mean = row.auprc_mean;
      have_full = true;
    }
    out.aggregates.push_back(std::move(row));
  }
  if (have_full) {
    for (auto& row : out.aggregates) {
      row.delta_auprc_vs_full = row.auprc_mean - full_auprc_mean;
    }
  }
  return out;
}

void write_results_csv(const std::string& path,
                       const std::vector<RunCell>& cells) {
  csv::Writer w(path);
  w.write_row({"config", "seed", "auroc", "auprc", "f1", "mcc",
               "auroc_ci_low", "auroc_ci_high", "n_test", "n_positive"});
  for (const auto& c : cells) {
    w.write_row({c.config_name, std::to_string(c.seed),
                 csv::fmt(c.report.auroc), csv::fmt(c.report.auprc),
                 csv::fmt(c.report.f1), csv::fmt(c.report.mcc),
                 csv::fmt(c.report.auroc_ci_low),
                 csv::fmt(c.report.auroc_ci_high), std::to_string(c.report.n),
                 std::to_string(c.report.n_positive)});
  }
  w.close();
}

void write_aggregate_csv(const std::string& path,
                         const std::vector<AggregateRow>& rows) {
  csv::Writer w(path);
  w.write_row({"config", "n_runs", "auroc_mean", "auroc_std", "auprc_mean",
               "auprc_std", "f1_mean", "f1_std", "mcc_mean", "mcc_std",
               "auroc_ci_low_median", "auroc_ci_high_median",
               "delta_auprc_vs_full"});
  for (const auto& r : rows) {
    w.write_row({r.config_name, std::to_string(r.n_runs),
                 csv::fmt(r.auroc_mean), csv::fmt(r.auroc_std),
                 csv::fmt(r.auprc_mean), csv::fmt(r.auprc_std),
                 csv::fmt(r.f1_mean), csv::fmt(r.f1_std), csv::fmt(r.mcc_mean),
                 csv::fmt(r.mcc_std), csv::fmt(r.auroc_ci_low_median),
                 csv::fmt(r.auroc_ci_high_median),
                 csv::fmt(r.delta_auprc_vs_full)});
  }
  w.close();
}

}  // namespace stgat::eval
