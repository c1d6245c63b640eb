#pragma once

#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "tra/dataprep.hpp"
#include "tra/matrix.hpp"

namespace tra {

// --- ranking metrics ----------------------------------------------------------

struct ScoredSample {
  int day = 0;  // calendar index (any grouping key works)
  int stock = 0;
  double pred = 0.0;
  double label = 0.0;
};

struct RankingMetrics {
  double mse = 0.0;
  double mae = 0.0;
  double ic_mean = 0.0;
  double icir = 0.0;  // ic_mean / sample std of daily IC; 0 when undefined
  std::vector<std::pair<int, double>> daily_ic;  // (day, IC), evaluable days only
  std::size_t excluded_days = 0;  // < 3 stocks or zero variance
};

// Per-day Pearson IC averaged over days; MSE/MAE over all samples. Days with
// fewer than 3 stocks or zero variance on either side are recorded as
// excluded, never silently averaged.
RankingMetrics ranking_metrics(std::vector<ScoredSample> rows);

// --- long-short portfolio simulation -------------------------------------------

struct TradeRow {
  int day = 0;  // civil date
  std::string stock_id;
  double pred = 0.0;
  double realized = 0.0;  // NaN = no trade (contributes 0 per the return rule)
};

struct ReturnSeries {
  std::vector<int> days;  // civil dates
  Vec returns;
  std::vector<int> skipped_days;  // too few stocks for both legs
};

// Daily long top ceil(decile*n) by prediction, short bottom ceil(decile*n);
// R_d = mean long return - mean short return. Equal-weight legs, no
// transaction costs, prediction ties broken by stock_id lexical order.
ReturnSeries simulate_long_short(std::vector<TradeRow> rows, double decile);

struct PortfolioMetrics {
  double ar = 0.0;  // mean(R) * 365 * 100 (percent)
  double av = 0.0;  // sample std(R) * sqrt(365) * 100 (percent)
  std::optional<double> sr;  // ar/av, missing when av == 0
  double mdd = 0.0;  // peak-to-trough loss of the additive cumulative sum
};

PortfolioMetrics portfolio_metrics(const ReturnSeries& series);

// --- regime diagnostics -----------------------------------------------------------

struct SelectionRow {
  int day = 0;  // calendar index into the panel
  int chosen = 0;
};

struct PeriodFit {
  int first_day = 0;  // calendar indices, inclusive
  int last_day = 0;
  Vec coef;  // [intercept, per-feature slopes]
  bool ok = false;
};

struct RegimeDiagnostics {
  std::optional<double> assignment_accuracy;  // permutation-matched; missing without truth
  std::vector<PeriodFit> period_fits;
};

// assignment_accuracy = max over predictor->regime relabelings of agreement
// between the router's selections and the ground-truth regimes (K <= 6).
// period_fits = per-period OLS of labels on rank features over contiguous
// period_len-day chunks of the panel calendar.
RegimeDiagnostics regime_diagnostics(std::span<const SelectionRow> selections,
                                     const std::unordered_map<int, int>& regime_by_date,
                                     const Panel& panel, std::size_t k, int period_len);

}  // namespace tra
