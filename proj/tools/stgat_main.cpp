// stgat — interbank distress surveillance pipeline.
//
// Subcommands: synth | reconstruct | train | evaluate | ablate | explain |
// report. Every run writes a manifest (resolved options + input digests)
// so outputs can be reproduced byte for byte.

#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <thread>

#include "stgat/comparison.hpp"
#include "stgat/csv.hpp"
#include "stgat/errors.hpp"
#include "stgat/metrics.hpp"
#include "stgat/model.hpp"
#include "stgat/panel.hpp"
#include "stgat/pipeline.hpp"
#include "stgat/rng.hpp"
#include "stgat/synth.hpp"
#include "stgat/xai.hpp"

namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace {

struct Options {
  std::string panel_path;
  std::string macro_path;
  std::string out_dir = "out";
  std::uint64_t seed = 42;
  std::vector<std::uint64_t> seeds = {42, 123, 456, 789, 1024};
  std::string ablation = "FULL";
  double tol = 1e-8;
  std::size_t max_iter = 10000;
  double prune = 0.001;
  std::size_t history_window = 8;
  std::size_t epochs = 200;
  std::string train_end;  // calendar split; proportional when empty
  std::string val_end;
  std::size_t n_institutions = 200;
  std::size_t n_quarters = 20;
  double rate = 0.09;
  std::size_t n_repeats = 10;
  std::size_t jobs = 2;
  bool no_plots = false;
};

std::string file_digest(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw stgat::DataError("cannot read input for digest: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  const std::string bytes = ss.str();
  char buf[24];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(
                    stgat::fnv1a64(bytes.data(), bytes.size())));
  return buf;
}

void write_manifest(const Options& o, const std::string& subcommand) {
  ordered_json doc;
  doc["tool"] = "stgat";
  doc["subcommand"] = subcommand;
  ordered_json opts;
  opts["panel"] = o.panel_path;
  opts["macro"] = o.macro_path;
  opts["out"] = o.out_dir;
  opts["seed"] = o.seed;
  opts["seeds"] = o.seeds;
  opts["ablation"] = o.ablation;
  opts["tol"] = o.tol;
  opts["max_iter"] = o.max_iter;
  opts["prune"] = o.prune;
  opts["history_window"] = o.history_window;
  opts["epochs"] = o.epochs;
  opts["train_end"] = o.train_end;
  opts["val_end"] = o.val_end;
  opts["n_institutions"] = o.n_institutions;
  opts["n_quarters"] = o.n_quarters;
  opts["rate"] = o.rate;
  opts["n_repeats"] = o.n_repeats;
  doc["options"] = std::move(opts);
  ordered_json inputs;
  if (!o.panel_path.empty() && fs::exists(o.panel_path)) {
    inputs["panel"] = file_digest(o.panel_path);
  }
  if (!o.macro_path.empty() && fs::exists(o.macro_path)) {
    inputs["macro"] = file_digest(o.macro_path);
  }
  doc["inputs"] = std::move(inputs);
  std::ofstream out(o.out_dir + "/manifest.json");
  if (!out) throw stgat::DataError("cannot write manifest in " + o.out_dir);
  out << doc.dump(1) << '\n';
}

stgat::pipeline::SnapshotBuild load_snapshots(const Options& o) {
  if (o.panel_path.empty() || o.macro_path.empty()) {
    throw stgat::UsageError("--panel and --macro are required here");
  }
  auto panel = stgat::panel::ingest_panel(o.panel_path);
  if (panel.rejected_rows > 0) {
    std::cerr << "warning: rejected " << panel.rejected_rows
              << " rows with non-positive total_assets\n";
  }
  auto macro = stgat::panel::ingest_macro(o.macro_path);
  stgat::pipeline::PipelineOptions popts;
  popts.ras_tol = o.tol;
  popts.ras_max_iter = o.max_iter;
  popts.prune_threshold = o.prune;
  auto build = stgat::pipeline::build_snapshots(panel.records, macro, popts);
  for (const auto& w : build.warnings) std::cerr << "warning: " << w << '\n';
  return build;
}

stgat::eval::SplitSpec make_split(const Options& o,
                                  const std::vector<std::string>& tags) {
  if (!o.train_end.empty() || !o.val_end.empty()) {
    if (o.train_end.empty() || o.val_end.empty()) {
      throw stgat::UsageError("--train-end and --val-end must be given together");
    }
    return stgat::pipeline::split_from_tags(tags, o.train_end, o.val_end);
  }
  return stgat::eval::proportional_split(tags.size());
}

stgat::model::TrainConfig make_train_config(const Options& o) {
  stgat::model::TrainConfig cfg;
  cfg.ablation = stgat::model::ablation_from_name(o.ablation);
  cfg.history_window = o.history_window;
  cfg.max_epochs = o.epochs;
  return cfg;
}

std::string ckpt_path(const Options& o, std::uint64_t seed) {
  return o.out_dir + "/checkpoints/ckpt_seed" + std::to_string(seed) + ".json";
}

// ---- subcommands ------------------------------------------------------------

int cmd_synth(const Options& o) {
  stgat::panel::SynthConfig cfg;
  cfg.n_institutions = o.n_institutions;
  cfg.n_quarters = o.n_quarters;
  cfg.target_rate = o.rate;
  auto result = stgat::panel::synthesize_panel(cfg, o.seed);
  fs::create_directories(o.out_dir);
  stgat::panel::write_panel_csv(o.out_dir + "/panel.csv", result.records);
  stgat::panel::write_macro_csv(o.out_dir + "/macro.csv", result.macro);
  write_manifest(o, "synth");
  std::cout << "synth: " << result.records.size() << " records, "
            << result.quarter_tags.size() << " quarters, distress rate "
            << stgat::csv::fmt(result.realized_rate, 4) << '\n';
  return 0;
}

int cmd_reconstruct(const Options& o) {
  auto build = load_snapshots(o);
  fs::create_directories(o.out_dir + "/edges");
  for (const auto& snap : build.snapshots) {
    stgat::csv::Writer w(o.out_dir + "/edges/edges_" + snap.quarter_tag +
                         ".csv");
    w.write_row({"quarter", "src_cert", "dst_cert", "weight"});
    for (const auto& e : snap.edges.edges) {
      w.write_row({snap.quarter_tag, snap.certs[e.src], snap.certs[e.dst],
                   stgat::csv::fmt_exact(e.weight)});
    }
    w.close();
  }
  stgat::csv::Writer log(o.out_dir + "/ras_residuals.csv");
  log.write_row({"quarter", "n", "iterations", "residual", "column_rescale",
                 "edges_kept"});
  for (const auto& entry : build.ras_log) {
    log.write_row({entry.quarter_tag, std::to_string(entry.n),
                   std::to_string(entry.iterations),
                   stgat::csv::fmt_exact(entry.residual),
                   stgat::csv::fmt_exact(entry.column_rescale),
                   std::to_string(entry.edges_kept)});
  }
  log.close();
  write_manifest(o, "reconstruct");
  std::cout << "reconstruct: " << build.snapshots.size() << " quarters\n";
  return 0;
}

int cmd_train(const Options& o) {
  auto build = load_snapshots(o);
  auto split = make_split(o, build.quarter_tags);
  auto cfg = make_train_config(o);
  fs::create_directories(o.out_dir + "/checkpoints");
  fs::create_directories(o.out_dir + "/runs");

  std::vector<stgat::model::TrainResult> results(o.seeds.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&]() {
    while (true) {
      const std::size_t i = next.fetch_add(1);
      if (i >= o.seeds.size()) return;
      results[i] =
          stgat::model::train(build.snapshots, split, cfg, o.seeds[i]);
    }
  };
  const std::size_t n_threads = std::max<std::size_t>(
      1, std::min(o.jobs, o.seeds.size()));
  std::vector<std::thread> pool;
  for (std::size_t i = 0; i < n_threads; ++i) pool.emplace_back(worker);
  for (auto& th : pool) th.join();

  for (std::size_t i = 0; i < o.seeds.size(); ++i) {
    const auto seed = o.seeds[i];
    const auto& tr = results[i];
    stgat::ad::save_checkpoint(ckpt_path(o, seed), tr.params.to_checkpoint());
    ordered_json run;
    run["seed"] = seed;
    run["ablation"] = o.ablation;
    run["history_window"] = o.history_window;
    run["max_epochs"] = o.epochs;
    run["best_epoch"] = tr.best_epoch;
    run["best_val_auprc"] = tr.best_val_auprc;
    ordered_json log = ordered_json::array();
    for (const auto& e : tr.log) {
      log.push_back({{"epoch", e.epoch},
                     {"train_loss", e.train_loss},
                     {"val_auprc", e.val_auprc}});
    }
    run["log"] = std::move(log);
    std::ofstream rf(o.out_dir + "/runs/run_seed" + std::to_string(seed) +
                     ".json");
    rf << run.dump(1) << '\n';
    std::cout << "train: seed " << seed << " stopped at epoch "
              << tr.log.size() << ", best epoch " << tr.best_epoch
              << ", val AUPRC " << stgat::csv::fmt(tr.best_val_auprc, 4)
              << '\n';
  }
  write_manifest(o, "train");
  return 0;
}

int cmd_evaluate(const Options& o) {
  auto build = load_snapshots(o);
  auto split = make_split(o, build.quarter_tags);
  auto cfg = make_train_config(o);

  std::vector<stgat::eval::RunCell> cells;
  for (const auto seed : o.seeds) {
    const std::string path = ckpt_path(o, seed);
    if (!fs::exists(path)) {
      throw stgat::DataError("missing checkpoint: " + path +
                             " (run `stgat train` first)");
    }
    auto params = stgat::model::ModelParams::from_checkpoint(
        stgat::ad::load_checkpoint(path));
    stgat::eval::RunCell cell;
    cell.config_name = stgat::model::ablation_name(params.ablation);
    cell.seed = seed;
    cell.report = stgat::eval::evaluate_on_test(params, build.snapshots, split,
                                                cfg, 1000, seed);
    cells.push_back(std::move(cell));
  }
  stgat::eval::RunCell lr;
  lr.config_name = "LR";
  lr.seed = 0;
  lr.report = stgat::eval::logistic_baseline(build.snapshots, split, 1000,
                                             o.seeds.front());
  cells.push_back(std::move(lr));

  fs::create_directories(o.out_dir + "/results");
  stgat::eval::write_results_csv(o.out_dir + "/results/results.csv", cells);
  write_manifest(o, "evaluate");
  for (const auto& c : cells) {
    std::cout << "evaluate: " << c.config_name << " seed " << c.seed
              << " AUPRC " << stgat::csv::fmt(c.report.auprc, 4) << " AUROC "
              << stgat::csv::fmt(c.report.auroc, 4) << '\n';
  }
  return 0;
}

int cmd_ablate(const Options& o) {
  auto build = load_snapshots(o);
  auto split = make_split(o, build.quarter_tags);

  std::vector<stgat::model::TrainConfig> configs;
  for (auto a : {stgat::model::Ablation::FULL, stgat::model::Ablation::NO_MACRO,
                 stgat::model::Ablation::NO_TEMPORAL,
                 stgat::model::Ablation::NO_ATTENTION,
                 stgat::model::Ablation::PERM_EDGE}) {
    auto cfg = make_train_config(o);
    cfg.ablation = a;
    configs.push_back(cfg);
  }
  stgat::eval::ComparisonOptions copts;
  copts.max_parallel = o.jobs;
  auto result = stgat::eval::run_comparison(build.snapshots, split, configs,
                                            o.seeds, copts);
  fs::create_directories(o.out_dir + "/results");
  stgat::eval::write_results_csv(o.out_dir + "/results/ablation.csv",
                                 result.cells);
  stgat::eval::write_aggregate_csv(
      o.out_dir + "/results/ablation_aggregate.csv", result.aggregates);
  write_manifest(o, "ablate");
  for (const auto& row : result.aggregates) {
    std::cout << "ablate: " << row.config_name << " AUPRC "
              << stgat::csv::fmt(row.auprc_mean, 4) << " +/- "
              << stgat::csv::fmt(row.auprc_std, 4) << " (delta vs FULL "
              << stgat::csv::fmt(row.delta_auprc_vs_full, 4) << ")\n";
  }
  return 0;
}

struct ExplainData {
  std::vector<stgat::model::QuarterPredictions> predictions;
  stgat::xai::FeatureImportance importance;
  std::vector<std::string> quarter_tags;
};

ExplainData run_explain(const Options& o) {
  auto build = load_snapshots(o);
  auto split = make_split(o, build.quarter_tags);
  auto cfg = make_train_config(o);
  const std::string path = ckpt_path(o, o.seed);
  if (!fs::exists(path)) {
    throw stgat::DataError("missing checkpoint: " + path +
                           " (run `stgat train` first)");
  }
  auto params = stgat::model::ModelParams::from_checkpoint(
      stgat::ad::load_checkpoint(path));
  ExplainData out;
  out.quarter_tags = build.quarter_tags;
  for (int q : split.test_quarters) {
    out.predictions.push_back(
        stgat::model::predict(params, build.snapshots, q, cfg, true));
  }
  out.importance = stgat::xai::permutation_importance(
      params, build.snapshots, split.test_quarters, cfg, o.n_repeats, o.seed);
  return out;
}

int cmd_explain(const Options& o) {
  auto data = run_explain(o);
  fs::create_directories(o.out_dir + "/xai");
  stgat::csv::Writer w(o.out_dir + "/xai/attention.csv");
  w.write_row({"cert", "quarter", "history_quarter", "beta"});
  for (const auto& qp : data.predictions) {
    for (const auto& n : qp.nodes) {
      for (const auto& [q, b] : n.beta) {
        w.write_row({n.cert, qp.quarter_tag,
                     data.quarter_tags.at(static_cast<std::size_t>(q)),
                     stgat::csv::fmt(b)});
      }
    }
  }
  w.close();
  stgat::xai::write_importance_csv(o.out_dir + "/xai/importance.csv",
                                   data.importance);
  write_manifest(o, "explain");
  std::cout << "explain: baseline AUROC "
            << stgat::csv::fmt(data.importance.baseline_auroc, 4)
            << ", top feature " << data.importance.ranked.front().feature
            << '\n';
  return 0;
}

int cmd_report(const Options& o) {
  auto data = run_explain(o);
  stgat::xai::RiskReportOptions ropts;
  ropts.out_dir = o.out_dir + "/report";
  ropts.plots = !o.no_plots;
  stgat::xai::write_risk_report(data.predictions, data.importance,
                                data.quarter_tags, ropts);
  write_manifest(o, "report");
  std::cout << "report: wrote " << ropts.out_dir << "/report.csv\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Interbank contagion surveillance: reconstruction, ST-GAT "
               "training, evaluation, explanation"};
  app.require_subcommand(1);
  Options o;

  app.set_config("--config", "", "key=value config file; flags override it");
  app.add_option("--panel", o.panel_path, "panel CSV path");
  app.add_option("--macro", o.macro_path, "macro CSV path");
  app.add_option("--out", o.out_dir, "output directory");
  app.add_option("--seed", o.seed, "seed for single-seed subcommands");
  app.add_option("--seeds", o.seeds, "seed list for multi-seed subcommands")
      ->delimiter(',');
  app.add_option("--ablation", o.ablation,
                 "FULL | NO_MACRO | NO_TEMPORAL | NO_ATTENTION | PERM_EDGE");
  app.add_option("--tol", o.tol, "RAS convergence tolerance");
  app.add_option("--max-iter", o.max_iter, "RAS iteration cap");
  app.add_option("--prune", o.prune, "edge prune threshold (LGD fraction)");
  app.add_option("--history-window", o.history_window, "quarters of history");
  app.add_option("--epochs", o.epochs, "max training epochs");
  app.add_option("--train-end", o.train_end, "last train quarter, e.g. 2021Q4");
  app.add_option("--val-end", o.val_end, "last validation quarter");
  app.add_option("--jobs", o.jobs, "parallel (config, seed) cells");
  app.add_option("--n-institutions", o.n_institutions, "synth: institutions");
  app.add_option("--n-quarters", o.n_quarters, "synth: quarters");
  app.add_option("--rate", o.rate, "synth: target distress rate");
  app.add_option("--n-repeats", o.n_repeats, "permutation importance repeats");
  app.add_flag("--no-plots", o.no_plots, "skip SVG plot output");

  auto* synth = app.add_subcommand("synth", "generate a synthetic panel");
  auto* reconstruct =
      app.add_subcommand("reconstruct", "RAS exposure networks per quarter");
  auto* train = app.add_subcommand("train", "train the ST-GAT per seed");
  auto* evaluate = app.add_subcommand("evaluate", "test-set metrics");
  auto* ablate = app.add_subcommand("ablate", "all ablations x seeds");
  auto* explain = app.add_subcommand("explain", "attention + importance CSVs");
  auto* report = app.add_subcommand("report", "full risk report bundle");
  for (auto* sub : {synth, reconstruct, train, evaluate, ablate, explain,
                    report}) {
    sub->fallthrough();  // global flags may follow the subcommand name
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: usage: " << e.what() << '\n';
    return static_cast<int>(stgat::ExitCode::Usage);
  }

  try {
    fs::create_directories(o.out_dir);
    if (synth->parsed()) return cmd_synth(o);
    if (reconstruct->parsed()) return cmd_reconstruct(o);
    if (train->parsed()) return cmd_train(o);
    if (evaluate->parsed()) return cmd_evaluate(o);
    if (ablate->parsed()) return cmd_ablate(o);
    if (explain->parsed()) return cmd_explain(o);
    if (report->parsed()) return cmd_report(o);
    throw stgat::UsageError("no subcommand given");
  } catch (const stgat::UsageError& e) {
    std::cerr << "error: usage: " << e.what() << '\n';
    return static_cast<int>(e.code());
  } catch (const stgat::DataError& e) {
    std::cerr << "error: data: " << e.what() << '\n';
    return static_cast<int>(e.code());
  } catch (const stgat::ConvergenceError& e) {
    std::cerr << "error: convergence: " << e.what() << '\n';
    return static_cast<int>(e.code());
  } catch (const stgat::Error& e) {
    std::cerr << "error: internal: " << e.what() << '\n';
    return static_cast<int>(e.code());
  } catch (const std::exception& e) {
    std::cerr << "error: internal: " << e.what() << '\n';
    return static_cast<int>(stgat::ExitCode::Internal);
  }
}
