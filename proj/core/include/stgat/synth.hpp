#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "stgat/panel.hpp"

namespace stgat::panel {

// Synthetic institution-quarter panel with planted distress episodes.
//
// Distress enters two ways, both driven by a latent AR(1) health process:
//   - breach episodes: roa / npl_ratio are dragged across their label
//     thresholds over >= 3 consecutive quarters and held there;
//   - failure episodes: >= 3 quarters of deterioration that stays just short
//     of the thresholds, then failed_within_4q marks the following four
//     quarters while the visible ratios recover.
// Failure episodes are what give sequence models an edge: the labeled
// quarters are only identifiable from the preceding trajectory. Healthy
// "distractor" institutions take one-quarter dips into the same ambiguous
// ratio range without ever being labeled.
struct SynthConfig {
  std::size_t n_institutions = 200;
  std::size_t n_quarters = 20;
  double target_rate = 0.09;  // distressed share of institution-quarters

  // episode mix
  double breach_share = 0.55;     // rest are failure episodes
  double distractor_prob = 0.35;  // per healthy institution
  double missing_prob = 0.005;    // missing cells in the non-label features
  std::string first_quarter = "2010Q1";
};

struct SynthResult {
  std::vector<InstitutionQuarter> records;  // sorted by (quarter, cert)
  std::vector<MacroState> macro;
  std::vector<std::string> quarter_tags;
  double realized_rate = 0.0;
};

// Deterministic for a fixed seed. Throws DataError for target_rate >= 0.5
// or panels too short to host an episode (n_quarters < 12).
SynthResult synthesize_panel(const SynthConfig& config, std::uint64_t seed);

// Writers for the CSV schemas consumed by ingest_panel / ingest_macro.
void write_panel_csv(const std::string& path,
                     const std::vector<InstitutionQuarter>& records);
void write_macro_csv(const std::string& path,
                     const std::vector<MacroState>& macro);

}  // namespace stgat::panel
