#include "stgat/metrics.hpp"

#include <algorithm>
#include <cmath>

#include "stgat/errors.hpp"
#include "stgat/rng.hpp"

namespace stgat::eval {

void SplitSpec::validate() const {
  auto ordered = [](const std::vector<int>& q) {
    return std::is_sorted(q.begin(), q.end());
  };
  if (!ordered(train_quarters) || !ordered(val_quarters) ||
      !ordered(test_quarters)) {
    throw DataError("split: quarter ranges must be sorted");
  }
  if (train_quarters.empty() || val_quarters.empty() || test_quarters.empty()) {
    throw DataError("split: every range needs at least one quarter");
  }
  if (train_quarters.back() >= val_quarters.front() ||
      val_quarters.back() >= test_quarters.front()) {
    throw DataError("split: ranges must satisfy train < val < test");
  }
}

SplitSpec proportional_split(std::size_t n_quarters) {
  if (n_quarters < 3) throw DataError("split: need at least 3 quarters");
  const double t = static_cast<double>(n_quarters);
  std::size_t n_val = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::llround(t * 4.0 / 58.0)));
  std::size_t n_test = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::llround(t * 6.0 / 58.0)));
  if (n_val + n_test >= n_quarters) {
    n_val = 1;
    n_test = 1;
  }
  const std::size_t n_train = n_quarters - n_val - n_test;
  SplitSpec s;
  for (std::size_t q = 0; q < n_quarters; ++q) {
    if (q < n_train) {
      s.train_quarters.push_back(static_cast<int>(q));
    } else if (q < n_train + n_val) {
      s.val_quarters.push_back(static_cast<int>(q));
    } else {
      s.test_quarters.push_back(static_cast<int>(q));
    }
  }
  return s;
}

namespace {

void check_sizes(const std::vector<double>& scores,
                 const std::vector<std::uint8_t>& labels) {
  if (scores.size() != labels.size()) {
    throw InternalError("metric: scores/labels size mismatch");
  }
  if (scores.empty()) throw DataError("metric: empty input");
}

}  // namespace

double auroc(const std::vector<double>& scores,
             const std::vector<std::uint8_t>& labels) {
  check_sizes(scores, labels);
  const std::size_t n = scores.size();
  std::size_t n_pos = 0;
  for (auto y : labels) n_pos += y ? 1 : 0;
  const std::size_t n_neg = n - n_pos;
  if (n_pos == 0 || n_neg == 0) {
    throw DataError("auroc: needs at least one positive and one negative");
  }
  // average ranks, ties shared
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return scores[a] < scores[b];
  });
  double rank_sum_pos = 0.0;
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    const double avg_rank = 0.5 * static_cast<double>(i + 1 + j);  // 1-based
    for (std::size_t k = i; k < j; ++k) {
      if (labels[order[k]]) rank_sum_pos += avg_rank;
    }
    i = j;
  }
  const double u = rank_sum_pos - static_cast<double>(n_pos) *
                                      static_cast<double>(n_pos + 1) / 2.0;
  return u / (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

double auprc(const std::vector<double>& scores,
             const std::vector<std::uint8_t>& labels) {
  check_sizes(scores, labels);
  const std::size_t n = scores.size();
  std::size_t n_pos = 0;
  for (auto y : labels) n_pos += y ? 1 : 0;
  if (n_pos == 0) throw DataError("auprc: no positives");
  // descending score; within a tie group negatives first (pessimistic)
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) {
                     if (scores[a] != scores[b]) return scores[a] > scores[b];
                     return labels[a] < labels[b];
                   });
  double ap = 0.0;
  std::size_t tp = 0;
  for (std::size_t k = 0; k < n; ++k) {
    if (labels[order[k]]) {
      ++tp;
      ap += static_cast<double>(tp) / static_cast<double>(k + 1);
    }
  }
  return ap / static_cast<double>(n_pos);
}

std::pair<double, double> f1_mcc(const std::vector<double>& scores,
                                 const std::vector<std::uint8_t>& labels,
                                 double threshold) {
  check_sizes(scores, labels);
  double tp = 0, fp = 0, fn = 0, tn = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const bool call = scores[i] >= threshold;
    if (call && labels[i]) ++tp;
    else if (call && !labels[i]) ++fp;
    else if (!call && labels[i]) ++fn;
    else ++tn;
  }
  const double f1_den = 2.0 * tp + fp + fn;
  const double f1 = f1_den > 0.0 ? 2.0 * tp / f1_den : 0.0;
  const double mcc_den =
      std::sqrt((tp + fp) * (tp + fn) * (tn + fp) * (tn + fn));
  const double mcc = mcc_den > 0.0 ? (tp * tn - fp * fn) / mcc_den : 0.0;
  return {f1, mcc};
}

std::pair<double, double> bootstrap_ci(const std::vector<double>& scores,
                                       const std::vector<std::uint8_t>& labels,
                                       const MetricFn& metric,
                                       std::size_t n_resamples,
                                       std::uint64_t seed) {
  check_sizes(scores, labels);
  const std::size_t n = scores.size();
  Rng rng(mix_seed(seed, 0xb0075u));
  std::vector<double> draws;
  draws.reserve(n_resamples);
  std::size_t skipped = 0;
  std::vector<double> s(n);
  std::vector<std::uint8_t> y(n);
  for (std::size_t r = 0; r < n_resamples; ++r) {
    bool ok = false;
    for (int attempt = 0; attempt < 10 && !ok; ++attempt) {
      bool any_pos = false, any_neg = false;
      for (std::size_t i = 0; i < n; ++i) {
        const std::size_t j = static_cast<std::size_t>(rng.below(n));
        s[i] = scores[j];
        y[i] = labels[j];
        (y[i] ? any_pos : any_neg) = true;
      }
      ok = any_pos && any_neg;
    }
    if (!ok) {
      ++skipped;
      continue;
    }
    draws.push_back(metric(s, y));
  }
  if (skipped * 2 > n_resamples) {
    throw DataError("bootstrap_ci: more than half the resamples degenerate");
  }
  if (draws.empty()) throw DataError("bootstrap_ci: no usable resamples");
  std::sort(draws.begin(), draws.end());
  auto quantile = [&](double q) {
    const double pos = q * static_cast<double>(draws.size() - 1);
    const std::size_t lo = static_cast<std::size_t>(pos);
    const std::size_t hi = std::min(lo + 1, draws.size() - 1);
    const double frac = pos - static_cast<double>(lo);
    return draws[lo] + frac * (draws[hi] - draws[lo]);
  };
  return {quantile(0.025), quantile(0.975)};
}

AlertTier alert_tier(double r) {
  if (!(r >= 0.0 && r <= 1.0)) {
    throw DataError("alert_tier: risk score " + std::to_string(r) +
                    " outside [0,1]");
  }
  if (r < 0.30) return AlertTier::NORMAL;
  if (r < 0.50) return AlertTier::ELEVATED;
  if (r < 0.65) return AlertTier::HIGH_ALERT;
  return AlertTier::CRITICAL;
}

const char* alert_tier_name(AlertTier tier) {
  switch (tier) {
    case AlertTier::NORMAL: return "NORMAL";
    case AlertTier::ELEVATED: return "ELEVATED";
    case AlertTier::HIGH_ALERT: return "HIGH_ALERT";
    case AlertTier::CRITICAL: return "CRITICAL";
  }
  throw InternalError("alert_tier_name: bad tier");
}

MetricReport compute_report(const std::vector<double>& scores,
                            const std::vector<std::uint8_t>& labels,
                            std::size_t bootstrap_resamples,
                            std::uint64_t bootstrap_seed, double threshold) {
  MetricReport rep;
  rep.n = scores.size();
  for (auto y : labels) rep.n_positive += y ? 1 : 0;
  rep.threshold = threshold;
  rep.auroc = auroc(scores, labels);
  rep.auprc = auprc(scores, labels);
  std::tie(rep.f1, rep.mcc) = f1_mcc(scores, labels, threshold);
  if (bootstrap_resamples > 0) {
    std::tie(rep.auroc_ci_low, rep.auroc_ci_high) = bootstrap_ci(
        scores, labels, [](const auto& s, const auto& y) { return auroc(s, y); },
        bootstrap_resamples, bootstrap_seed);
  }
  return rep;
}

}  // namespace stgat::eval
