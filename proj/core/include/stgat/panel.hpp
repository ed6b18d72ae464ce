#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "stgat/matrix.hpp"

namespace stgat::panel {

// The 13 node features, fixed order. Indices are used everywhere a feature
// column is addressed, so keep this in sync with kFeatureNames.
enum Feature : std::size_t {
  kTier1CapitalRatio = 0,
  kTotalCapitalRatio,
  kLeverageRatio,
  kNplRatio,
  kProvisionCoverageRatio,
  kCreConcentrationRatio,
  kLiquidityStressRatio,
  kUninsuredDepositShare,
  kWholesaleFundingRatio,
  kLoanToDepositRatio,
  kRoa,
  kNetInterestMargin,
  kFairValueLossRatio,
  kFeatureCount,
};

extern const std::array<const char*, kFeatureCount> kFeatureNames;

// Macro state columns, fixed order.
inline constexpr std::size_t kMacroDim = 7;
extern const std::array<const char*, kMacroDim> kMacroNames;

// One bank-quarter record. Feature slots may be missing until imputation.
struct InstitutionQuarter {
  std::string cert;
  int quarter = 0;          // dense index 0..T-1
  std::string quarter_tag;  // e.g. "2023Q1"
  std::array<std::optional<double>, kFeatureCount> features;
  double total_assets = 0.0;
  double interbank_assets = 0.0;       // row marginal
  double interbank_liabilities = 0.0;  // column marginal
  double tier1_capital = 0.0;
  bool failed_within_4q = false;
};

struct MacroState {
  int quarter = 0;
  std::string quarter_tag;
  std::array<double, kMacroDim> z{};
};

enum class Trigger : std::uint8_t {
  FAILED = 1 << 0,
  TIER1_LT_6 = 1 << 1,
  NPL_GT_5 = 1 << 2,
  ROA_LT_NEG1 = 1 << 3,
};

struct DistressLabel {
  bool distressed = false;
  std::uint8_t triggers = 0;

  bool has(Trigger t) const {
    return (triggers & static_cast<std::uint8_t>(t)) != 0;
  }
};

// Composite distress label (strict inequalities; a missing component simply
// cannot fire its trigger).
DistressLabel label(const InstitutionQuarter& rec);

// "2023Q1" -> (2023, 1); throws DataError on junk.
std::pair<int, int> parse_quarter_tag(const std::string& tag);
// sortable key: year*4 + (q-1)
int quarter_key(const std::string& tag);

struct PanelIngest {
  std::vector<InstitutionQuarter> records;
  std::vector<std::string> quarter_tags;  // chronological, indexes `quarter`
  std::size_t rejected_rows = 0;          // non-positive total_assets
};

// Reads the panel CSV (schema in the README). Missing numeric cells stay
// missing; duplicate (cert, quarter) is an error; rows with non-positive
// total_assets are dropped and counted.
PanelIngest ingest_panel(const std::string& path);

// Reads the macro CSV; interior gaps are forward-filled from the previous
// quarter, a gap in the first row is an error.
std::vector<MacroState> ingest_macro(const std::string& path);

struct FeatureStats {
  std::array<double, kFeatureCount> mean{};
  std::array<double, kFeatureCount> stddev{};  // population, 0 for constant
  std::array<std::size_t, kFeatureCount> count{};
};

// Per-feature mean and population std over the non-missing values of one
// quarter's records.
FeatureStats feature_stats(const std::vector<const InstitutionQuarter*>& recs);

// (x - mean) / std per feature; zero-variance features map to all zeros.
// Requires fully imputed records.
Matrix apply_standardization(const std::vector<const InstitutionQuarter*>& recs,
                             const FeatureStats& stats);

// stats + apply in one go, over the records as given (>= 2 required).
Matrix standardize_quarter(const std::vector<const InstitutionQuarter*>& recs);

// Fills every missing feature slot with the median of the record's asset-size
// decile (quarter-wide median if the decile has no observed value; error if
// the whole quarter is missing the feature). Non-missing values untouched.
void impute(std::vector<InstitutionQuarter*>& quarter_records);

}  // namespace stgat::panel
