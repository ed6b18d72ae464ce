#include "stgat/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "stgat/csv.hpp"
#include "stgat/errors.hpp"
#include "stgat/rng.hpp"

namespace stgat::panel {

namespace {

enum class EpisodeKind { None, BreachRoa, BreachNpl, BreachBoth, Failure };

struct Episode {
  EpisodeKind kind = EpisodeKind::None;
  std::size_t onset = 0;        // first deterioration quarter
  std::size_t ramp = 3;         // deterioration quarters before the event
  std::size_t labeled = 4;      // labeled quarters starting at onset + ramp
};

std::string next_tag(const std::string& tag) {
  auto [y, q] = parse_quarter_tag(tag);
  ++q;
  if (q == 5) {
    q = 1;
    ++y;
  }
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%04dQ%d", y, q);
  return buf;
}

double lerp(double a, double b, double t) { return a + (b - a) * t; }

}  // namespace

SynthResult synthesize_panel(const SynthConfig& cfg, std::uint64_t seed) {
  if (cfg.target_rate >= 0.5) {
    throw DataError("synthesize_panel: target distress rate " +
                    std::to_string(cfg.target_rate) + " is infeasible (>= 0.5)");
  }
  if (cfg.target_rate < 0.0) {
    throw DataError("synthesize_panel: negative target rate");
  }
  if (cfg.n_quarters < 12) {
    throw DataError("synthesize_panel: need at least 12 quarters to host "
                    "deterioration episodes");
  }
  if (cfg.n_institutions < 10) {
    throw DataError("synthesize_panel: need at least 10 institutions");
  }

  const std::size_t n = cfg.n_institutions;
  const std::size_t T = cfg.n_quarters;

  SynthResult out;
  out.quarter_tags.resize(T);
  out.quarter_tags[0] = cfg.first_quarter;
  parse_quarter_tag(cfg.first_quarter);
  for (std::size_t t = 1; t < T; ++t) {
    out.quarter_tags[t] = next_tag(out.quarter_tags[t - 1]);
  }

  // ---- episode schedule: plant until the labeled count reaches target ----
  std::vector<std::size_t> plant_order(n);
  for (std::size_t i = 0; i < n; ++i) plant_order[i] = i;
  Rng schedule_rng(mix_seed(seed, 0x5c4edu));
  schedule_rng.shuffle(plant_order);

  std::vector<Episode> episodes(n);
  const std::size_t target_labeled = static_cast<std::size_t>(
      std::llround(cfg.target_rate * static_cast<double>(n * T)));
  std::size_t planted = 0;
  for (std::size_t k = 0; k < n && planted < target_labeled; ++k) {
    const std::size_t i = plant_order[k];
    Rng rng(mix_seed(seed, 0xe415u, i));
    Episode ep;
    const bool breach = rng.next_double() < cfg.breach_share;
    if (breach) {
      const double sub = rng.next_double();
      ep.kind = sub < 0.60   ? EpisodeKind::BreachRoa
                : sub < 0.85 ? EpisodeKind::BreachNpl
                             : EpisodeKind::BreachBoth;
      ep.ramp = 3;
      ep.labeled = 3 + rng.below(3);  // 3..5
    } else {
      ep.kind = EpisodeKind::Failure;
      ep.ramp = 4;
      ep.labeled = 4;
    }
    // labeled quarters may run right up to the panel end (recovery quarters
    // are simply cut off there); onset is uniform over the feasible range
    const std::size_t span = ep.ramp + ep.labeled;
    const std::size_t latest = T - span;  // inclusive upper bound for onset
    ep.onset = 3 + rng.below(latest - 3 + 1);
    episodes[i] = ep;
    planted += ep.labeled;
  }

  // ---- macro series: slowly varying, low variance by default ----
  Rng macro_rng(mix_seed(seed, 0x3acee0u));
  out.macro.resize(T);
  for (std::size_t t = 0; t < T; ++t) {
    MacroState st;
    st.quarter = static_cast<int>(t);
    st.quarter_tag = out.quarter_tags[t];
    const double ft = static_cast<double>(t);
    st.z = {
        18.0 + 2.0 * std::sin(ft / 4.0) + 0.4 * macro_rng.normal(),   // vix
        1.2 - 0.02 * ft + 0.08 * macro_rng.normal(),  // yield spread
        1.5 + 0.05 * ft + 0.05 * macro_rng.normal(),  // fed funds
        2.2 + 0.25 * macro_rng.normal(),              // gdp growth
        6.0 + 0.20 * macro_rng.normal(),              // m2 growth
        1.8 + 0.10 * macro_rng.normal(),              // credit spread
        5.0 - 0.01 * ft + 0.08 * macro_rng.normal(),  // unemployment
    };
    out.macro[t] = std::move(st);
  }

  // ---- institution series ----
  std::size_t labeled_count = 0;
  for (std::size_t i = 0; i < n; ++i) {
    Rng rng(mix_seed(seed, 0x1275e5u, i));
    char cert_buf[32];
    std::snprintf(cert_buf, sizeof(cert_buf), "%05zu", 10000 + i);
    const std::string cert = cert_buf;

    const double log_ta = 19.5 + 1.9 * rng.normal();
    const double ta_base = std::exp(log_ta);
    const double ib_asset_frac = rng.uniform(0.015, 0.05);
    const double ib_liab_frac = rng.uniform(0.015, 0.05);
    const double ta_drift = rng.uniform(-0.002, 0.006);

    const Episode& ep = episodes[i];
    const bool is_distractor =
        ep.kind == EpisodeKind::None && rng.next_double() < cfg.distractor_prob;
    std::size_t dip_quarter = 0;
    double dip_roa = 0.0, dip_npl = 0.0;
    if (is_distractor) {
      dip_quarter = 2 + rng.below(T - 3);
      dip_roa = rng.uniform(-0.65, -0.30);
      dip_npl = rng.uniform(3.6, 4.6);
    }

    double health = rng.normal() * 0.4;
    for (std::size_t t = 0; t < T; ++t) {
      health = 0.85 * health + 0.20 * rng.normal();  // latent AR(1)

      InstitutionQuarter rec;
      rec.cert = cert;
      rec.quarter = static_cast<int>(t);
      rec.quarter_tag = out.quarter_tags[t];
      rec.total_assets = ta_base * (1.0 + ta_drift * static_cast<double>(t));
      rec.interbank_assets = ib_asset_frac * rec.total_assets;
      rec.interbank_liabilities = ib_liab_frac * rec.total_assets;

      // healthy baselines; roa/npl carry the health signal, the rest are noise
      double roa = 1.0 + 0.30 * health + 0.08 * rng.normal();
      double npl = std::max(0.2, 1.6 - 0.40 * health + 0.15 * rng.normal());
      double tier1 = std::max(8.5, 11.5 + 1.2 * health + 0.4 * rng.normal());
      roa = std::max(roa, -0.30);  // healthy floor, clear of the dip range
      npl = std::min(npl, 3.5);

      bool failed_flag = false;
      if (ep.kind != EpisodeKind::None) {
        const std::size_t event = ep.onset + ep.ramp;  // first labeled quarter
        const std::size_t end = event + ep.labeled;    // one past labeled
        if (t >= ep.onset && t < event) {
          // deterioration ramp, strictly short of both thresholds
          const double u = static_cast<double>(t - ep.onset + 1) /
                           static_cast<double>(ep.ramp);
          if (ep.kind == EpisodeKind::Failure) {
            // convex decline: shallow at first, deep trough right before
            // the failure event — the shape sequence models key on
            roa = lerp(0.7, rng.uniform(-0.98, -0.88), u * u);
            npl = lerp(1.8, rng.uniform(4.5, 4.9), u * u);
          } else {
            roa = lerp(0.6, -0.70, u) + rng.uniform(-0.05, 0.05);
            npl = lerp(2.0, 4.30, u) + rng.uniform(-0.2, 0.2);
          }
        } else if (t >= event && t < end) {
          switch (ep.kind) {
            case EpisodeKind::BreachRoa:
              roa = rng.uniform(-2.2, -1.10);
              npl = rng.uniform(3.0, 4.6);
              tier1 = std::max(7.0, tier1 - 1.5);
              break;
            case EpisodeKind::BreachNpl:
              npl = rng.uniform(5.30, 7.8);
              roa = rng.uniform(-0.80, -0.10);
              tier1 = std::max(7.0, tier1 - 1.5);
              break;
            case EpisodeKind::BreachBoth:
              roa = rng.uniform(-2.5, -1.15);
              npl = rng.uniform(5.30, 8.2);
              tier1 = std::max(7.0, tier1 - 1.5);
              break;
            case EpisodeKind::Failure:
              // resolved institution: the quarter-t balance sheet looks
              // healthy again, only the failure flag carries the label —
              // detectable solely from the preceding trajectory
              failed_flag = true;
              break;
            case EpisodeKind::None:
              break;
          }
        } else if (ep.kind != EpisodeKind::Failure && t >= end &&
                   t < end + 2) {
          roa = rng.uniform(-0.40, 0.30);  // recovery, unlabeled
          npl = rng.uniform(2.5, 3.8);
        }
      } else if (is_distractor &&
                 (t == dip_quarter ||
                  (t == dip_quarter + 1 && dip_roa < -0.7))) {
        // one- or two-quarter dip into the ambiguous range, never labeled
        roa = dip_roa + rng.uniform(-0.04, 0.04);
        npl = dip_npl + rng.uniform(-0.1, 0.1);
      }

      rec.failed_within_4q = failed_flag;
      rec.features[kTier1CapitalRatio] = tier1;
      rec.features[kTotalCapitalRatio] = tier1 + rng.uniform(1.5, 3.0);
      rec.features[kLeverageRatio] = 9.0 + 1.0 * rng.normal();
      rec.features[kNplRatio] = npl;
      rec.features[kProvisionCoverageRatio] = 110.0 + 25.0 * rng.normal();
      rec.features[kCreConcentrationRatio] = 180.0 + 60.0 * rng.normal();
      rec.features[kLiquidityStressRatio] = 14.0 + 3.0 * rng.normal();
      rec.features[kUninsuredDepositShare] = 38.0 + 10.0 * rng.normal();
      rec.features[kWholesaleFundingRatio] = 16.0 + 5.0 * rng.normal();
      rec.features[kLoanToDepositRatio] = 82.0 + 8.0 * rng.normal();
      rec.features[kRoa] = roa;
      rec.features[kNetInterestMargin] = 3.2 + 0.5 * rng.normal();
      rec.features[kFairValueLossRatio] = 2.0 + 1.2 * rng.normal();
      rec.tier1_capital = 0.01 * tier1 * 0.7 * rec.total_assets;

      // sparse missingness in the non-label features only
      static constexpr std::size_t kMaskable[] = {
          kTotalCapitalRatio,    kLeverageRatio,        kProvisionCoverageRatio,
          kCreConcentrationRatio, kLiquidityStressRatio, kUninsuredDepositShare,
          kWholesaleFundingRatio, kLoanToDepositRatio,   kNetInterestMargin,
          kFairValueLossRatio};
      for (std::size_t f : kMaskable) {
        if (rng.next_double() < cfg.missing_prob) rec.features[f].reset();
      }

      if (label(rec).distressed) ++labeled_count;
      out.records.push_back(std::move(rec));
    }
  }

  // per-quarter rescale so interbank liabilities total the assets exactly
  for (std::size_t t = 0; t < T; ++t) {
    double sum_a = 0.0, sum_l = 0.0;
    for (auto& r : out.records) {
      if (r.quarter == static_cast<int>(t)) {
        sum_a += r.interbank_assets;
        sum_l += r.interbank_liabilities;
      }
    }
    const double scale = sum_a / sum_l;
    for (auto& r : out.records) {
      if (r.quarter == static_cast<int>(t)) r.interbank_liabilities *= scale;
    }
  }

  std::sort(out.records.begin(), out.records.end(),
            [](const InstitutionQuarter& a, const InstitutionQuarter& b) {
              if (a.quarter != b.quarter) return a.quarter < b.quarter;
              return a.cert < b.cert;
            });

  out.realized_rate =
      static_cast<double>(labeled_count) / static_cast<double>(n * T);
  if (std::abs(out.realized_rate - cfg.target_rate) > 0.02) {
    throw InternalError("synthesize_panel: realized distress rate " +
                        std::to_string(out.realized_rate) +
                        " missed target " + std::to_string(cfg.target_rate));
  }
  return out;
}

void write_panel_csv(const std::string& path,
                     const std::vector<InstitutionQuarter>& records) {
  csv::Writer w(path);
  std::vector<std::string> header = {"cert", "quarter"};
  for (auto* n : kFeatureNames) header.emplace_back(n);
  for (auto* n : {"total_assets", "interbank_assets", "interbank_liabilities",
                  "tier1_capital", "failed_within_4q"}) {
    header.emplace_back(n);
  }
  w.write_row(header);
  for (const auto& r : records) {
    std::vector<std::string> row = {r.cert, r.quarter_tag};
    for (const auto& f : r.features) {
      row.push_back(f ? csv::fmt_exact(*f) : "");
    }
    row.push_back(csv::fmt_exact(r.total_assets));
    row.push_back(csv::fmt_exact(r.interbank_assets));
    row.push_back(csv::fmt_exact(r.interbank_liabilities));
    row.push_back(csv::fmt_exact(r.tier1_capital));
    row.push_back(r.failed_within_4q ? "1" : "0");
    w.write_row(row);
  }
  w.close();
}

void write_macro_csv(const std::string& path,
                     const std::vector<MacroState>& macro) {
  csv::Writer w(path);
  std::vector<std::string> header = {"quarter"};
  for (auto* n : kMacroNames) header.emplace_back(n);
  w.write_row(header);
  for (const auto& m : macro) {
    std::vector<std::string> row = {m.quarter_tag};
    for (double v : m.z) row.push_back(csv::fmt_exact(v));
    w.write_row(row);
  }
  w.close();
}

}  // namespace stgat::panel
