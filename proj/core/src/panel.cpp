#include "stgat/panel.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <set>

#include "stgat/csv.hpp"
#include "stgat/errors.hpp"

namespace stgat::panel {

const std::array<const char*, kFeatureCount> kFeatureNames = {
    "tier1_capital_ratio",
    "total_capital_ratio",
    "leverage_ratio",
    "npl_ratio",
    "provision_coverage_ratio",
    "cre_concentration_ratio",
    "liquidity_stress_ratio",
    "uninsured_deposit_share",
    "wholesale_funding_ratio",
    "loan_to_deposit_ratio",
    "roa",
    "net_interest_margin",
    "fair_value_loss_ratio",
};

const std::array<const char*, kMacroDim> kMacroNames = {
    "vix",          "yield_spread_10y2y", "fed_funds_rate", "gdp_growth",
    "m2_growth",    "credit_spread",      "unemployment_rate",
};

DistressLabel label(const InstitutionQuarter& rec) {
  DistressLabel out;
  auto fire = [&out](Trigger t) {
    out.triggers |= static_cast<std::uint8_t>(t);
  };
  if (rec.failed_within_4q) fire(Trigger::FAILED);
  const auto& t1 = rec.features[kTier1CapitalRatio];
  const auto& npl = rec.features[kNplRatio];
  const auto& roa = rec.features[kRoa];
  if (t1 && *t1 < 6.0) fire(Trigger::TIER1_LT_6);
  if (npl && *npl > 5.0) fire(Trigger::NPL_GT_5);
  if (roa && *roa < -1.0) fire(Trigger::ROA_LT_NEG1);
  out.distressed = out.triggers != 0;
  return out;
}

std::pair<int, int> parse_quarter_tag(const std::string& tag) {
  int year = 0, q = 0;
  char qc = 0;
  if (std::sscanf(tag.c_str(), "%d%c%d", &year, &qc, &q) != 3 ||
      (qc != 'Q' && qc != 'q') || q < 1 || q > 4 || year < 1900 ||
      year > 9999) {
    throw DataError("bad quarter tag '" + tag + "', expected YYYYQn");
  }
  return {year, q};
}

int quarter_key(const std::string& tag) {
  auto [y, q] = parse_quarter_tag(tag);
  return y * 4 + (q - 1);
}

PanelIngest ingest_panel(const std::string& path) {
  csv::Table t = csv::read_file(path);

  std::vector<std::string> expect = {"cert", "quarter"};
  for (auto* n : kFeatureNames) expect.push_back(n);
  for (auto* n : {"total_assets", "interbank_assets", "interbank_liabilities",
                  "tier1_capital", "failed_within_4q"}) {
    expect.push_back(n);
  }
  if (t.header != expect) {
    throw DataError(path + ": panel header does not match the expected schema");
  }

  PanelIngest out;
  std::set<std::pair<std::string, std::string>> seen;
  std::set<std::string> tags;
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const auto& row = t.rows[r];
    const std::size_t row_no = r + 2;  // 1-based, after header
    InstitutionQuarter rec;
    rec.cert = row[0];
    rec.quarter_tag = row[1];
    parse_quarter_tag(rec.quarter_tag);  // validates
    if (rec.cert.empty()) {
      throw DataError(path + ": empty cert at row " + std::to_string(row_no));
    }
    if (!seen.insert({rec.cert, rec.quarter_tag}).second) {
      throw DataError(path + ": duplicate (cert, quarter) = (" + rec.cert +
                      ", " + rec.quarter_tag + ") at row " +
                      std::to_string(row_no));
    }
    std::size_t col = 2;
    for (std::size_t f = 0; f < kFeatureCount; ++f, ++col) {
      rec.features[f] = csv::parse_cell(row[col], row_no, kFeatureNames[f]);
    }
    auto required = [&](const char* name) {
      auto v = csv::parse_cell(row[col], row_no, name);
      ++col;
      if (!v) {
        throw DataError(path + ": missing required " + std::string(name) +
                        " at row " + std::to_string(row_no));
      }
      return *v;
    };
    rec.total_assets = required("total_assets");
    rec.interbank_assets = required("interbank_assets");
    rec.interbank_liabilities = required("interbank_liabilities");
    rec.tier1_capital = required("tier1_capital");
    const std::string& failed = row[col];
    if (failed == "1") {
      rec.failed_within_4q = true;
    } else if (failed == "0" || failed.empty()) {
      rec.failed_within_4q = false;  // missing flag defaults to false
    } else {
      throw DataError(path + ": failed_within_4q must be 0 or 1 at row " +
                      std::to_string(row_no));
    }
    if (rec.interbank_assets < 0.0 || rec.interbank_liabilities < 0.0) {
      throw DataError(path + ": negative interbank marginal at row " +
                      std::to_string(row_no));
    }
    if (rec.total_assets <= 0.0) {
      ++out.rejected_rows;
      continue;
    }
    tags.insert(rec.quarter_tag);
    out.records.push_back(std::move(rec));
  }

  out.quarter_tags.assign(tags.begin(), tags.end());
  std::sort(out.quarter_tags.begin(), out.quarter_tags.end(),
            [](const std::string& a, const std::string& b) {
              return quarter_key(a) < quarter_key(b);
            });
  std::map<std::string, int> index;
  for (std::size_t i = 0; i < out.quarter_tags.size(); ++i) {
    index[out.quarter_tags[i]] = static_cast<int>(i);
  }
  for (auto& rec : out.records) rec.quarter = index[rec.quarter_tag];
  return out;
}

std::vector<MacroState> ingest_macro(const std::string& path) {
  csv::Table t = csv::read_file(path);
  std::vector<std::string> expect = {"quarter"};
  for (auto* n : kMacroNames) expect.push_back(n);
  if (t.header != expect) {
    throw DataError(path + ": macro header does not match the expected schema");
  }

  struct Row {
    std::string tag;
    std::array<std::optional<double>, kMacroDim> z;
  };
  std::vector<Row> rows;
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    Row row;
    row.tag = t.rows[r][0];
    parse_quarter_tag(row.tag);
    for (std::size_t j = 0; j < kMacroDim; ++j) {
      row.z[j] = csv::parse_cell(t.rows[r][j + 1], r + 2, kMacroNames[j]);
    }
    rows.push_back(std::move(row));
  }
  std::sort(rows.begin(), rows.end(), [](const Row& a, const Row& b) {
    return quarter_key(a.tag) < quarter_key(b.tag);
  });

  std::vector<MacroState> out;
  for (std::size_t r = 0; r < rows.size(); ++r) {
    MacroState st;
    st.quarter = static_cast<int>(r);
    st.quarter_tag = rows[r].tag;
    for (std::size_t j = 0; j < kMacroDim; ++j) {
      if (rows[r].z[j]) {
        st.z[j] = *rows[r].z[j];
      } else if (r == 0) {
        throw DataError(path + ": " + kMacroNames[j] +
                        " missing in the first quarter, nothing to fill from");
      } else {
        st.z[j] = out[r - 1].z[j];  // forward fill
      }
    }
    out.push_back(std::move(st));
  }
  return out;
}

FeatureStats feature_stats(const std::vector<const InstitutionQuarter*>& recs) {
  FeatureStats s;
  for (std::size_t f = 0; f < kFeatureCount; ++f) {
    double sum = 0.0;
    std::size_t n = 0;
    for (const auto* r : recs) {
      if (r->features[f]) {
        sum += *r->features[f];
        ++n;
      }
    }
    s.count[f] = n;
    if (n == 0) continue;
    const double mu = sum / static_cast<double>(n);
    double ss = 0.0;
    for (const auto* r : recs) {
      if (r->features[f]) {
        const double d = *r->features[f] - mu;
        ss += d * d;
      }
    }
    s.mean[f] = mu;
    s.stddev[f] = std::sqrt(ss / static_cast<double>(n));  // population
  }
  return s;
}

Matrix apply_standardization(const std::vector<const InstitutionQuarter*>& recs,
                             const FeatureStats& stats) {
  Matrix x(recs.size(), kFeatureCount);
  for (std::size_t i = 0; i < recs.size(); ++i) {
    for (std::size_t f = 0; f < kFeatureCount; ++f) {
      if (!recs[i]->features[f]) {
        throw InternalError("apply_standardization: missing feature " +
                            std::string(kFeatureNames[f]) + " for cert " +
                            recs[i]->cert + " (impute first)");
      }
      if (stats.stddev[f] > 0.0) {
        x(i, f) = (*recs[i]->features[f] - stats.mean[f]) / stats.stddev[f];
      } else {
        x(i, f) = 0.0;  // constant feature
      }
    }
  }
  return x;
}

Matrix standardize_quarter(const std::vector<const InstitutionQuarter*>& recs) {
  if (recs.size() < 2) {
    throw DataError("standardize_quarter: need at least 2 records, got " +
                    std::to_string(recs.size()));
  }
  return apply_standardization(recs, feature_stats(recs));
}

namespace {

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

void impute(std::vector<InstitutionQuarter*>& quarter_records) {
  const std::size_t n = quarter_records.size();
  if (n == 0) return;

  // rank-based decile cut on total_assets, ties broken by cert
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    const auto* ra = quarter_records[a];
    const auto* rb = quarter_records[b];
    if (ra->total_assets != rb->total_assets)
      return ra->total_assets < rb->total_assets;
    return ra->cert < rb->cert;
  });
  std::vector<std::size_t> decile(n);
  for (std::size_t rank = 0; rank < n; ++rank) {
    decile[order[rank]] = rank * 10 / n;
  }

  for (std::size_t f = 0; f < kFeatureCount; ++f) {
    std::array<std::vector<double>, 10> by_decile;
    std::vector<double> quarter_values;
    for (std::size_t i = 0; i < n; ++i) {
      if (quarter_records[i]->features[f]) {
        by_decile[decile[i]].push_back(*quarter_records[i]->features[f]);
        quarter_values.push_back(*quarter_records[i]->features[f]);
      }
    }
    bool any_missing = quarter_values.size() < n;
    if (!any_missing) continue;
    if (quarter_values.empty()) {
      throw DataError("impute: feature " + std::string(kFeatureNames[f]) +
                      " missing for the entire quarter " +
                      quarter_records[0]->quarter_tag);
    }
    const double quarter_median = median(quarter_values);
    std::array<std::optional<double>, 10> decile_median;
    for (std::size_t d = 0; d < 10; ++d) {
      if (!by_decile[d].empty()) decile_median[d] = median(by_decile[d]);
    }
    for (std::size_t i = 0; i < n; ++i) {
      if (!quarter_records[i]->features[f]) {
        const auto& dm = decile_median[decile[i]];
        quarter_records[i]->features[f] = dm ? *dm : quarter_median;
      }
    }
  }
}

}  // namespace stgat::panel
