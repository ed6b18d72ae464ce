#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "stgat/errors.hpp"
#include "stgat/pipeline.hpp"
#include "stgat/synth.hpp"
#include "stgat/xai.hpp"

using namespace stgat;

namespace {

std::string slurp(const std::string& path) {
  std::ifstream in(path);
  REQUIRE(in);
  return std::string((std::istreambuf_iterator<char>(in)),
                     std::istreambuf_iterator<char>());
}

model::QuarterPredictions fake_quarter(int q, const std::string& tag,
                                       std::vector<model::NodePrediction> n) {
  model::QuarterPredictions p;
  p.quarter = q;
  p.quarter_tag = tag;
  p.nodes = std::move(n);
  return p;
}

}  // namespace

TEST_CASE("extract_temporal_attention") {
  std::vector<model::QuarterPredictions> preds;
  preds.push_back(fake_quarter(
      4, "2011Q1",
      {{"A", 4, 0.9, 1, {{1, 0.4}, {2, 0.35}, {3, 0.15}, {4, 0.1}}},
       {"B", 4, 0.2, 0, {{4, 1.0}}}}));

  SUBCASE("returns the weights exactly as computed") {
    auto att = xai::extract_temporal_attention(preds, "A", 4);
    CHECK(att.cert == "A");
    REQUIRE(att.weights.size() == 4);
    CHECK(att.weights[0] == std::pair{1, 0.4});
    CHECK(att.weights[3] == std::pair{4, 0.1});
  }
  SUBCASE("single-quarter history gives weight 1.0") {
    auto att = xai::extract_temporal_attention(preds, "B", 4);
    REQUIRE(att.weights.size() == 1);
    CHECK(att.weights[0].second == 1.0);
  }
  SUBCASE("unscored cert is an error") {
    CHECK_THROWS_WITH_AS(xai::extract_temporal_attention(preds, "Z", 4),
                         doctest::Contains("Z"), DataError);
  }
}

TEST_CASE("permutation_importance") {
  panel::SynthConfig scfg;
  scfg.n_institutions = 24;
  scfg.n_quarters = 12;
  scfg.target_rate = 0.12;
  scfg.missing_prob = 0.0;
  auto data = panel::synthesize_panel(scfg, 17);
  pipeline::PipelineOptions popts;
  popts.top_k = 24;
  auto build = pipeline::build_snapshots(data.records, data.macro, popts);
  auto split = eval::proportional_split(build.snapshots.size());

  model::TrainConfig cfg;
  cfg.dims.gat_heads = 2;
  cfg.dims.gat_head_dim = 3;
  cfg.dims.lstm_hidden = 4;
  cfg.dims.attn_dim = 3;
  cfg.dims.head_hidden = 5;
  cfg.history_window = 4;
  cfg.max_epochs = 4;
  auto tr = model::train(build.snapshots, split, cfg, 42);

  SUBCASE("a constant column has exactly zero importance") {
    auto snaps = build.snapshots;
    for (auto& s : snaps) {
      for (std::size_t i = 0; i < s.n(); ++i) {
        s.x(i, panel::kLeverageRatio) = 0.0;  // constant across institutions
      }
    }
    auto imp = xai::permutation_importance(tr.params, snaps,
                                           split.test_quarters, cfg, 2, 9);
    bool found = false;
    for (const auto& row : imp.ranked) {
      if (row.feature == std::string("leverage_ratio")) {
        CHECK(row.delta_auroc == 0.0);
        found = true;
      }
    }
    CHECK(found);
    CHECK(imp.ranked.size() == panel::kFeatureCount);
  }
  SUBCASE("inputs are left unmodified") {
    auto before = build.snapshots;
    (void)xai::permutation_importance(tr.params, build.snapshots,
                                      split.test_quarters, cfg, 2, 9);
    for (std::size_t q = 0; q < before.size(); ++q) {
      CHECK(before[q].x == build.snapshots[q].x);
    }
  }
  SUBCASE("deterministic per seed") {
    auto a = xai::permutation_importance(tr.params, build.snapshots,
                                         split.test_quarters, cfg, 2, 9);
    auto b = xai::permutation_importance(tr.params, build.snapshots,
                                         split.test_quarters, cfg, 2, 9);
    REQUIRE(a.ranked.size() == b.ranked.size());
    for (std::size_t i = 0; i < a.ranked.size(); ++i) {
      CHECK(a.ranked[i].feature == b.ranked[i].feature);
      CHECK(a.ranked[i].delta_auroc == b.ranked[i].delta_auroc);
    }
  }
  SUBCASE("repeat means converge for a seeded stream") {
    auto one = xai::permutation_importance(tr.params, build.snapshots,
                                           split.test_quarters, cfg, 1, 9);
    auto ten = xai::permutation_importance(tr.params, build.snapshots,
                                           split.test_quarters, cfg, 6, 9);
    // same baseline, and the top feature of the 6-repeat run is stable
    CHECK(one.baseline_auroc == ten.baseline_auroc);
    CHECK(ten.n_repeats == 6);
  }
}

TEST_CASE("write_risk_report") {
  const std::string dir = "/tmp/stgat_report_test";
  std::filesystem::remove_all(dir);

  xai::FeatureImportance imp;
  imp.n_repeats = 2;
  imp.baseline_auroc = 0.9;
  for (std::size_t f = 0; f < panel::kFeatureCount; ++f) {
    imp.ranked.push_back({panel::kFeatureNames[f],
                          0.3 - 0.02 * static_cast<double>(f)});
  }

  std::vector<std::string> tags;
  for (int q = 0; q < 10; ++q) {
    tags.push_back("201" + std::to_string(q / 4) + "Q" +
                   std::to_string(1 + q % 4));
  }

  SUBCASE("six CRITICAL quarters make six CRITICAL rows, sorted") {
    std::vector<model::QuarterPredictions> preds;
    for (int q = 4; q < 10; ++q) {
      preds.push_back(fake_quarter(
          q, tags[q],
          {{"RISKY", q, 0.9892, 1, {{q - 1, 0.6}, {q, 0.4}}},
           {"SAFE", q, 0.05, 0, {{q - 1, 0.5}, {q, 0.5}}}}));
    }
    xai::RiskReportOptions opts;
    opts.out_dir = dir;
    xai::write_risk_report(preds, imp, tags, opts);

    auto body = slurp(dir + "/report.csv");
    std::size_t critical_rows = 0, pos = 0;
    while ((pos = body.find("CRITICAL", pos)) != std::string::npos) {
      ++critical_rows;
      pos += 8;
    }
    CHECK(critical_rows == 6);
    // rows sorted by quarter then descending score: RISKY precedes SAFE
    CHECK(body.find("RISKY") < body.find("SAFE"));
    // summary counts one critical and one normal per quarter
    auto summary = slurp(dir + "/summary.csv");
    CHECK(summary.find("2011Q1,2,1,0,0,1") != std::string::npos);
    // plots got written
    CHECK(std::filesystem::exists(dir + "/plots/risk_trajectories.svg"));
    CHECK(std::filesystem::exists(dir + "/plots/beta_decay.svg"));
    CHECK(std::filesystem::exists(dir + "/plots/pr_curve.svg"));
  }
  SUBCASE("empty predictions produce a header-only report") {
    xai::RiskReportOptions opts;
    opts.out_dir = dir;
    opts.plots = false;
    xai::write_risk_report({}, imp, tags, opts);
    auto body = slurp(dir + "/report.csv");
    CHECK(body.find("cert,quarter,risk_score") == 0);
    CHECK(std::count(body.begin(), body.end(), '\n') == 1);
  }
  SUBCASE("regeneration is byte-identical") {
    std::vector<model::QuarterPredictions> preds;
    preds.push_back(fake_quarter(
        8, tags[8],
        {{"A", 8, 0.7, 1, {{7, 0.45}, {8, 0.55}}},
         {"B", 8, 0.3, 0, {{7, 0.5}, {8, 0.5}}}}));
    xai::RiskReportOptions opts;
    opts.out_dir = dir;
    xai::write_risk_report(preds, imp, tags, opts);
    auto first = slurp(dir + "/report.csv");
    auto first_plot = slurp(dir + "/plots/risk_trajectories.svg");
    xai::write_risk_report(preds, imp, tags, opts);
    CHECK(slurp(dir + "/report.csv") == first);
    CHECK(slurp(dir + "/plots/risk_trajectories.svg") == first_plot);
  }
  SUBCASE("tier column always equals alert_tier(score)") {
    std::vector<model::QuarterPredictions> preds;
    preds.push_back(fake_quarter(
        2, tags[2],
        {{"A", 2, 0.29, 0, {}}, {"B", 2, 0.31, 0, {}},
         {"C", 2, 0.55, 0, {}}, {"D", 2, 0.66, 1, {}}}));
    xai::RiskReportOptions opts;
    opts.out_dir = dir;
    opts.plots = false;
    xai::write_risk_report(preds, imp, tags, opts);
    auto body = slurp(dir + "/report.csv");
    CHECK(body.find("A,2010Q3,0.290000,NORMAL") != std::string::npos);
    CHECK(body.find("B,2010Q3,0.310000,ELEVATED") != std::string::npos);
    CHECK(body.find("C,2010Q3,0.550000,HIGH_ALERT") != std::string::npos);
    CHECK(body.find("D,2010Q3,0.660000,CRITICAL") != std::string::npos);
  }
  std::filesystem::remove_all(dir);
}
