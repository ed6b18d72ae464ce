#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "stgat/errors.hpp"
#include "stgat/panel.hpp"
#include "stgat/rng.hpp"

using namespace stgat;
using panel::InstitutionQuarter;

namespace {

InstitutionQuarter make_record(double tier1, double npl, double roa,
                               bool failed = false) {
  InstitutionQuarter r;
  r.cert = "1";
  r.quarter_tag = "2020Q1";
  for (auto& f : r.features) f = 1.0;
  r.features[panel::kTier1CapitalRatio] = tier1;
  r.features[panel::kNplRatio] = npl;
  r.features[panel::kRoa] = roa;
  r.failed_within_4q = failed;
  r.total_assets = 1e9;
  r.tier1_capital = 1e8;
  return r;
}

std::string write_temp(const std::string& name, const std::string& body) {
  const std::string path = "/tmp/stgat_panel_" + name;
  std::ofstream out(path);
  out << body;
  return path;
}

const char* kPanelHeader =
    "cert,quarter,tier1_capital_ratio,total_capital_ratio,leverage_ratio,"
    "npl_ratio,provision_coverage_ratio,cre_concentration_ratio,"
    "liquidity_stress_ratio,uninsured_deposit_share,wholesale_funding_ratio,"
    "loan_to_deposit_ratio,roa,net_interest_margin,fair_value_loss_ratio,"
    "total_assets,interbank_assets,interbank_liabilities,tier1_capital,"
    "failed_within_4q\n";

std::string panel_row(const std::string& cert, const std::string& quarter,
                      const std::string& roa = "1.1") {
  return cert + "," + quarter + ",12,14,9,1.5,110,150,12,35,15,80," + roa +
         ",3.2,2.0,1000000,40000,40000,90000,0\n";
}

}  // namespace

TEST_CASE("composite distress label") {
  SUBCASE("tier1 below 6 fires alone") {
    auto l = panel::label(make_record(5.9, 1.0, 1.0));
    CHECK(l.distressed);
    CHECK(l.has(panel::Trigger::TIER1_LT_6));
    CHECK_FALSE(l.has(panel::Trigger::NPL_GT_5));
    CHECK_FALSE(l.has(panel::Trigger::ROA_LT_NEG1));
    CHECK_FALSE(l.has(panel::Trigger::FAILED));
  }
  SUBCASE("healthy record is clean") {
    auto l = panel::label(make_record(12.0, 2.0, 1.2));
    CHECK_FALSE(l.distressed);
    CHECK(l.triggers == 0);
  }
  SUBCASE("thresholds are strict: boundary values are not distressed") {
    auto l = panel::label(make_record(6.0, 5.0, -1.0));
    CHECK_FALSE(l.distressed);
  }
  SUBCASE("failure flag fires regardless of ratios") {
    auto l = panel::label(make_record(12.0, 1.0, 1.0, true));
    CHECK(l.distressed);
    CHECK(l.has(panel::Trigger::FAILED));
  }
  SUBCASE("missing component cannot fire its trigger") {
    auto r = make_record(12.0, 1.0, -5.0);
    r.features[panel::kRoa].reset();
    CHECK_FALSE(panel::label(r).distressed);
  }
  SUBCASE("label is monotone in roa, tier1 and npl") {
    Rng rng(404);
    for (int trial = 0; trial < 500; ++trial) {
      const double tier1 = rng.uniform(3.0, 14.0);
      const double npl = rng.uniform(0.0, 8.0);
      const double roa = rng.uniform(-3.0, 3.0);
      const bool base = panel::label(make_record(tier1, npl, roa)).distressed;
      // worsen each component; distressed must never flip off
      if (base) {
        CHECK(panel::label(make_record(tier1 - 1.0, npl, roa)).distressed);
        CHECK(panel::label(make_record(tier1, npl + 1.0, roa)).distressed);
        CHECK(panel::label(make_record(tier1, npl, roa - 1.0)).distressed);
      } else {
        // improving never turns a clean record distressed
        CHECK_FALSE(
            panel::label(make_record(tier1 + 1.0, npl, roa)).distressed);
        CHECK_FALSE(
            panel::label(make_record(tier1, npl - 1.0, roa)).distressed);
        CHECK_FALSE(
            panel::label(make_record(tier1, npl, roa + 1.0)).distressed);
      }
    }
  }
}

TEST_CASE("ingest_panel") {
  SUBCASE("well-formed two-row file yields two records") {
    auto path = write_temp("ok.csv", std::string(kPanelHeader) +
                                         panel_row("A", "2020Q1") +
                                         panel_row("B", "2020Q1"));
    auto in = panel::ingest_panel(path);
    CHECK(in.records.size() == 2);
    CHECK(in.rejected_rows == 0);
    CHECK(in.quarter_tags == std::vector<std::string>{"2020Q1"});
    CHECK(in.records[0].features[panel::kRoa] == 1.1);
  }
  SUBCASE("empty cell stays missing") {
    auto path = write_temp("missing.csv", std::string(kPanelHeader) +
                                              panel_row("A", "2020Q1", ""));
    auto in = panel::ingest_panel(path);
    REQUIRE(in.records.size() == 1);
    CHECK_FALSE(in.records[0].features[panel::kRoa].has_value());
  }
  SUBCASE("duplicate (cert, quarter) is an error") {
    auto path = write_temp("dup.csv", std::string(kPanelHeader) +
                                          panel_row("A", "2020Q1") +
                                          panel_row("A", "2020Q1"));
    CHECK_THROWS_WITH_AS(panel::ingest_panel(path), doctest::Contains("dup"),
                         DataError);
  }
  SUBCASE("malformed cell names row and column") {
    auto path =
        write_temp("bad.csv", std::string(kPanelHeader) +
                                  panel_row("A", "2020Q1", "not_a_number"));
    CHECK_THROWS_WITH_AS(panel::ingest_panel(path), doctest::Contains("roa"),
                         DataError);
  }
  SUBCASE("non-positive total assets are rejected and counted") {
    std::string row = panel_row("B", "2020Q1");
    const auto pos = row.find("1000000");
    row.replace(pos, 7, "0");
    auto path = write_temp("zta.csv",
                           std::string(kPanelHeader) + panel_row("A", "2020Q1") + row);
    auto in = panel::ingest_panel(path);
    CHECK(in.records.size() == 1);
    CHECK(in.rejected_rows == 1);
  }
  SUBCASE("quarters index chronologically") {
    auto path = write_temp("order.csv", std::string(kPanelHeader) +
                                            panel_row("A", "2021Q2") +
                                            panel_row("A", "2020Q4"));
    auto in = panel::ingest_panel(path);
    CHECK(in.quarter_tags ==
          std::vector<std::string>{"2020Q4", "2021Q2"});
    for (const auto& r : in.records) {
      CHECK(in.quarter_tags[r.quarter] == r.quarter_tag);
    }
  }
}

TEST_CASE("ingest_macro") {
  const std::string header =
      "quarter,vix,yield_spread_10y2y,fed_funds_rate,gdp_growth,m2_growth,"
      "credit_spread,unemployment_rate\n";
  SUBCASE("complete rows pass through") {
    std::string body = header;
    for (int i = 0; i < 58; ++i) {
      const int year = 2010 + i / 4;
      const int q = 1 + i % 4;
      body += std::to_string(year) + "Q" + std::to_string(q) +
              ",18,1.2,0.5,2.1,6.0,1.8,5.5\n";
    }
    auto path = write_temp("macro_ok.csv", body);
    auto macro = panel::ingest_macro(path);
    CHECK(macro.size() == 58);
    CHECK(macro.front().quarter_tag == "2010Q1");
    CHECK(macro.back().quarter_tag == "2024Q2");
  }
  SUBCASE("mid-series gap forward-fills from the prior quarter") {
    auto path = write_temp("macro_gap.csv",
                           header + "2020Q1,18,1.2,0.5,2.1,6.0,1.8,5.5\n" +
                               "2020Q2,,1.3,0.5,2.0,6.1,1.9,5.6\n");
    auto macro = panel::ingest_macro(path);
    REQUIRE(macro.size() == 2);
    CHECK(macro[1].z[0] == 18.0);  // vix carried forward
    CHECK(macro[1].z[1] == 1.3);
  }
  SUBCASE("leading gap is an error") {
    auto path = write_temp("macro_lead.csv",
                           header + "2020Q1,18,1.2,0.5,,6.0,1.8,5.5\n");
    CHECK_THROWS_WITH_AS(panel::ingest_macro(path),
                         doctest::Contains("gdp_growth"), DataError);
  }
}

TEST_CASE("standardize_quarter") {
  auto with_roa = [](const char* cert, double roa) {
    auto r = make_record(12, 1.5, roa);
    r.cert = cert;
    return r;
  };
  SUBCASE("population scaling of [1,2,3]") {
    auto a = with_roa("a", 1.0), b = with_roa("b", 2.0), c = with_roa("c", 3.0);
    std::vector<const InstitutionQuarter*> recs = {&a, &b, &c};
    auto x = panel::standardize_quarter(recs);
    // oracle: mean 2, population std sqrt(2/3)
    const double s = std::sqrt(2.0 / 3.0);
    CHECK(x(0, panel::kRoa) == doctest::Approx((1.0 - 2.0) / s).epsilon(1e-12));
    CHECK(x(1, panel::kRoa) == doctest::Approx(0.0));
    CHECK(x(2, panel::kRoa) == doctest::Approx((3.0 - 2.0) / s).epsilon(1e-12));
    CHECK(x(0, panel::kRoa) == doctest::Approx(-1.224744871391589).epsilon(1e-12));
  }
  SUBCASE("constant columns map to zero") {
    auto a = with_roa("a", 5.0), b = with_roa("b", 5.0), c = with_roa("c", 5.0);
    std::vector<const InstitutionQuarter*> recs = {&a, &b, &c};
    auto x = panel::standardize_quarter(recs);
    for (std::size_t i = 0; i < 3; ++i) CHECK(x(i, panel::kRoa) == 0.0);
  }
  SUBCASE("idempotent on already-standardized input") {
    const double s = std::sqrt(2.0 / 3.0);
    auto a = with_roa("a", -1.0 / s), b = with_roa("b", 0.0),
         c = with_roa("c", 1.0 / s);
    std::vector<const InstitutionQuarter*> recs = {&a, &b, &c};
    auto x = panel::standardize_quarter(recs);
    CHECK(std::abs(x(0, panel::kRoa) - (-1.0 / s)) < 1e-12);
    CHECK(std::abs(x(2, panel::kRoa) - 1.0 / s) < 1e-12);
  }
  SUBCASE("mean and variance invariants on random data") {
    Rng rng(909);
    std::vector<InstitutionQuarter> recs;
    for (int i = 0; i < 37; ++i) {
      auto r = make_record(rng.uniform(6, 15), rng.uniform(0, 6),
                           rng.uniform(-2, 2));
      r.cert = std::to_string(i);
      recs.push_back(r);
    }
    std::vector<const InstitutionQuarter*> views;
    for (auto& r : recs) views.push_back(&r);
    auto x = panel::standardize_quarter(views);
    for (std::size_t f : {panel::kTier1CapitalRatio, panel::kNplRatio,
                          panel::kRoa}) {
      double mu = 0.0, var = 0.0;
      for (std::size_t i = 0; i < views.size(); ++i) mu += x(i, f);
      mu /= static_cast<double>(views.size());
      for (std::size_t i = 0; i < views.size(); ++i) {
        var += (x(i, f) - mu) * (x(i, f) - mu);
      }
      var /= static_cast<double>(views.size());
      CHECK(std::abs(mu) < 1e-10);
      CHECK(std::abs(var - 1.0) < 1e-8);
    }
  }
  SUBCASE("fewer than two records is an error") {
    auto a = with_roa("a", 1.0);
    std::vector<const InstitutionQuarter*> recs = {&a};
    CHECK_THROWS_AS(panel::standardize_quarter(recs), DataError);
  }
}

TEST_CASE("impute") {
  auto rec = [](const char* cert, double assets,
                std::optional<double> roa) {
    auto r = make_record(12, 1.5, 1.0);
    r.cert = cert;
    r.total_assets = assets;
    if (roa) {
      r.features[panel::kRoa] = *roa;
    } else {
      r.features[panel::kRoa].reset();
    }
    return r;
  };
  SUBCASE("decile median of two fills the gap") {
    // 3 records land in distinct deciles of a 3-record quarter; same decile
    // needs >= 10 records, so craft 30 with three asset tiers
    std::vector<InstitutionQuarter> recs;
    for (int i = 0; i < 30; ++i) {
      const double assets = 1e6 * (1 + i);
      recs.push_back(rec(("c" + std::to_string(i)).c_str(), assets, 1.0));
    }
    // bottom decile = 3 smallest-asset records: give them 1.0, 3.0, missing
    recs[0].features[panel::kRoa] = 1.0;
    recs[1].features[panel::kRoa] = 3.0;
    recs[2].features[panel::kRoa].reset();
    std::vector<InstitutionQuarter*> mut;
    for (auto& r : recs) mut.push_back(&r);
    panel::impute(mut);
    CHECK(recs[2].features[panel::kRoa] == 2.0);
  }
  SUBCASE("no missing values leaves records unchanged") {
    std::vector<InstitutionQuarter> recs;
    for (int i = 0; i < 12; ++i) {
      recs.push_back(rec(("c" + std::to_string(i)).c_str(), 1e6 * (1 + i),
                         0.1 * i));
    }
    auto before = recs;
    std::vector<InstitutionQuarter*> mut;
    for (auto& r : recs) mut.push_back(&r);
    panel::impute(mut);
    for (int i = 0; i < 12; ++i) {
      CHECK(recs[i].features[panel::kRoa] == before[i].features[panel::kRoa]);
    }
  }
  SUBCASE("empty decile falls back to the quarter-wide median") {
    std::vector<InstitutionQuarter> recs;
    for (int i = 0; i < 20; ++i) {
      recs.push_back(rec(("c" + std::to_string(i)).c_str(), 1e6 * (1 + i),
                         4.0));
    }
    // both records of the bottom decile are missing
    recs[0].features[panel::kRoa].reset();
    recs[1].features[panel::kRoa].reset();
    std::vector<InstitutionQuarter*> mut;
    for (auto& r : recs) mut.push_back(&r);
    panel::impute(mut);
    CHECK(recs[0].features[panel::kRoa] == 4.0);
    CHECK(recs[1].features[panel::kRoa] == 4.0);
  }
  SUBCASE("feature missing for the whole quarter is an error") {
    std::vector<InstitutionQuarter> recs;
    for (int i = 0; i < 10; ++i) {
      recs.push_back(rec(("c" + std::to_string(i)).c_str(), 1e6 * (1 + i),
                         std::nullopt));
    }
    std::vector<InstitutionQuarter*> mut;
    for (auto& r : recs) mut.push_back(&r);
    CHECK_THROWS_WITH_AS(panel::impute(mut), doctest::Contains("roa"),
                         DataError);
  }
  SUBCASE("never alters non-missing values") {
    Rng rng(321);
    std::vector<InstitutionQuarter> recs;
    for (int i = 0; i < 40; ++i) {
      auto r = rec(("c" + std::to_string(i)).c_str(),
                   1e6 * rng.uniform(1, 100), rng.uniform(-2, 2));
      if (rng.next_double() < 0.2) r.features[panel::kNplRatio].reset();
      recs.push_back(r);
    }
    auto before = recs;
    std::vector<InstitutionQuarter*> mut;
    for (auto& r : recs) mut.push_back(&r);
    panel::impute(mut);
    for (int i = 0; i < 40; ++i) {
      for (std::size_t f = 0; f < panel::kFeatureCount; ++f) {
        if (before[i].features[f]) {
          CHECK(recs[i].features[f] == before[i].features[f]);
        } else {
          CHECK(recs[i].features[f].has_value());
        }
      }
    }
  }
}
