#include "tra/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "tra/errors.hpp"
#include "tra/numerics.hpp"

namespace tra {

RankingMetrics ranking_metrics(std::vector<ScoredSample> rows) {
  RankingMetrics out;
  if (rows.empty()) return out;
  std::sort(rows.begin(), rows.end(), [](const ScoredSample& a, const ScoredSample& b) {
    return a.day != b.day ? a.day < b.day : a.stock < b.stock;
  });

  double se = 0.0, ae = 0.0;
  for (const auto& r : rows) {
    const double d = r.pred - r.label;
    se += d * d;
    ae += std::abs(d);
  }
  out.mse = se / static_cast<double>(rows.size());
  out.mae = ae / static_cast<double>(rows.size());

  Vec preds, labels;
  for (std::size_t i = 0; i < rows.size();) {
    std::size_t j = i;
    preds.clear();
    labels.clear();
    while (j < rows.size() && rows[j].day == rows[i].day) {
      preds.push_back(rows[j].pred);
      labels.push_back(rows[j].label);
      ++j;
    }
    if (preds.size() < 3) {
      ++out.excluded_days;
    } else {
      const double ic = pearson(preds, labels);
      if (std::isnan(ic)) {
        ++out.excluded_days;  // zero variance that day
      } else {
        out.daily_ic.emplace_back(rows[i].day, ic);
      }
    }
    i = j;
  }

  if (!out.daily_ic.empty()) {
    Vec ics;
    ics.reserve(out.daily_ic.size());
    for (const auto& [day, ic] : out.daily_ic) ics.push_back(ic);
    out.ic_mean = mean(ics);
    const double sd = sample_std(ics);
    out.icir = sd > 0.0 ? out.ic_mean / sd : 0.0;
  }
  return out;
}

ReturnSeries simulate_long_short(std::vector<TradeRow> rows, double decile) {
  if (!(decile > 0.0 && decile <= 0.5)) {
    throw InvalidArgumentError("decile must be in (0, 0.5]");
  }
  std::sort(rows.begin(), rows.end(), [](const TradeRow& a, const TradeRow& b) {
    return a.day != b.day ? a.day < b.day : a.stock_id < b.stock_id;
  });

  ReturnSeries series;
  std::vector<const TradeRow*> day_rows;
  for (std::size_t i = 0; i < rows.size();) {
    std::size_t j = i;
    day_rows.clear();
    while (j < rows.size() && rows[j].day == rows[i].day) day_rows.push_back(&rows[j++]);
    const std::size_t n = day_rows.size();
    // small negative guard keeps exact multiples from ceiling up one slot
    const std::size_t m = std::max<std::size_t>(
        1, static_cast<std::size_t>(std::ceil(decile * static_cast<double>(n) - 1e-9)));
    if (n < 2 * m) {
      series.skipped_days.push_back(rows[i].day);
      i = j;
      continue;
    }
    auto leg_return = [](const TradeRow* r) {
      return std::isfinite(r->realized) ? r->realized : 0.0;  // non-trade day rule
    };
    // each leg prefers lexically earlier stocks among prediction ties
    std::sort(day_rows.begin(), day_rows.end(), [](const TradeRow* a, const TradeRow* b) {
      if (a->pred != b->pred) return a->pred > b->pred;
      return a->stock_id < b->stock_id;
    });
    double long_sum = 0.0;
    for (std::size_t t = 0; t < m; ++t) long_sum += leg_return(day_rows[t]);
    std::sort(day_rows.begin(), day_rows.end(), [](const TradeRow* a, const TradeRow* b) {
      if (a->pred != b->pred) return a->pred < b->pred;
      return a->stock_id < b->stock_id;
    });
    double short_sum = 0.0;
    for (std::size_t t = 0; t < m; ++t) short_sum += leg_return(day_rows[t]);
    series.days.push_back(rows[i].day);
    series.returns.push_back(long_sum / static_cast<double>(m) -
                             short_sum / static_cast<double>(m));
    i = j;
  }
  return series;
}

PortfolioMetrics portfolio_metrics(const ReturnSeries& series) {
  const Vec& r = series.returns;
  if (r.size() < 2) {
    throw InvalidArgumentError("portfolio metrics need at least 2 daily returns");
  }
  for (double v : r) {
    if (!std::isfinite(v)) throw InvalidArgumentError("return series contains non-finite entry");
  }
  PortfolioMetrics out;
  out.ar = mean(r) * (365.0 * 100.0);
  out.av = sample_std(r) * std::sqrt(365.0) * 100.0;
  if (out.av > 0.0) out.sr = out.ar / out.av;

  // additive cumulative returns; drawdown = running peak minus current level
  double cum = 0.0;
  double peak = -std::numeric_limits<double>::infinity();
  double mdd = 0.0;
  for (double v : r) {
    cum += v;
    peak = std::max(peak, cum);
    mdd = std::max(mdd, peak - cum);
  }
  out.mdd = mdd;
  return out;
}

namespace {

double best_permutation_agreement(const std::vector<std::vector<std::size_t>>& confusion,
                                  std::size_t total) {
  const std::size_t n = confusion.size();
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  std::size_t best = 0;
  do {
    std::size_t agree = 0;
    for (std::size_t p = 0; p < n; ++p) agree += confusion[p][perm[p]];
    best = std::max(best, agree);
  } while (std::next_permutation(perm.begin(), perm.end()));
  return static_cast<double>(best) / static_cast<double>(total);
}

}  // namespace

RegimeDiagnostics regime_diagnostics(std::span<const SelectionRow> selections,
                                     const std::unordered_map<int, int>& regime_by_date,
                                     const Panel& panel, std::size_t k, int period_len) {
  if (period_len < 1) throw InvalidArgumentError("period_len must be >= 1");
  if (k > 6) throw SizeError("assignment accuracy uses a K! permutation search; K <= 6 required");

  RegimeDiagnostics out;

  // permutation-matched assignment accuracy (needs ground truth)
  if (!regime_by_date.empty() && !selections.empty()) {
    std::vector<int> regime_labels;
    std::vector<std::pair<int, int>> matched;  // (chosen, regime)
    for (const auto& s : selections) {
      if (s.day < 0 || static_cast<std::size_t>(s.day) >= panel.data.calendar.size()) {
        throw InvalidArgumentError("selection day index out of range");
      }
      const auto it = regime_by_date.find(panel.data.calendar[static_cast<std::size_t>(s.day)]);
      if (it == regime_by_date.end()) continue;
      matched.emplace_back(s.chosen, it->second);
      regime_labels.push_back(it->second);
    }
    if (!matched.empty()) {
      std::sort(regime_labels.begin(), regime_labels.end());
      regime_labels.erase(std::unique(regime_labels.begin(), regime_labels.end()),
                          regime_labels.end());
      if (regime_labels.size() > 6) {
        throw SizeError("assignment accuracy limited to at most 6 regimes");
      }
      const std::size_t n = std::max(k, regime_labels.size());
      std::vector<std::vector<std::size_t>> confusion(n, std::vector<std::size_t>(n, 0));
      for (const auto& [chosen, regime] : matched) {
        const auto pos = std::lower_bound(regime_labels.begin(), regime_labels.end(), regime) -
                         regime_labels.begin();
        if (chosen < 0 || static_cast<std::size_t>(chosen) >= k) {
          throw InvalidArgumentError("selection index out of range");
        }
        ++confusion[static_cast<std::size_t>(chosen)][static_cast<std::size_t>(pos)];
      }
      out.assignment_accuracy = best_permutation_agreement(confusion, matched.size());
    }
  }

  // per-period OLS of labels on rank features
  const std::size_t n_days = panel.data.n_days();
  for (std::size_t first = 0; first < n_days; first += static_cast<std::size_t>(period_len)) {
    const std::size_t last = std::min(n_days, first + static_cast<std::size_t>(period_len)) - 1;
    PeriodFit fit;
    fit.first_day = static_cast<int>(first);
    fit.last_day = static_cast<int>(last);
    std::vector<Vec> x;
    Vec y;
    for (std::size_t d = first; d <= last; ++d) {
      for (int rec : panel.data.by_day[d]) {
        const double label = panel.labels[static_cast<std::size_t>(rec)];
        if (std::isnan(label)) continue;
        x.push_back(panel.rank_features[static_cast<std::size_t>(rec)]);
        y.push_back(label);
      }
    }
    if (x.size() >= panel.data.feature_dim + 2) {
      try {
        fit.coef = ols_fit(x, y);
        fit.ok = true;
      } catch (const NumericError&) {
        fit.ok = false;
      }
    }
    out.period_fits.push_back(std::move(fit));
  }
  return out;
}

}  // namespace tra
