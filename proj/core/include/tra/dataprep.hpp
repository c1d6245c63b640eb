#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "tra/matrix.hpp"

namespace tra {

// --- calendar dates --------------------------------------------------------

// "YYYY-MM-DD" <-> days since 1970-01-01.
int parse_date(const std::string& s);
std::string format_date(int days);

// --- raw records and the indexed dataset -----------------------------------

struct SampleRecord {
  std::string stock_id;
  int date = 0;        // civil day number
  Vec features;
  double raw_return = 0.0;  // realized return over the label horizon; NaN = unavailable
};

// Records indexed by the trading calendar (the sorted set of dates present).
// Days with fewer than two stocks are dropped: cross-sectional ranks are
// undefined there.
struct Dataset {
  std::vector<SampleRecord> records;  // sorted by (date, stock_id)
  std::vector<std::string> stocks;    // sorted unique
  std::vector<int> calendar;          // sorted unique dates
  std::unordered_map<std::string, int> stock_index;
  std::unordered_map<int, int> date_index;
  std::vector<std::vector<int>> by_day;  // record indices per calendar day
  std::vector<int> record_stock;         // per record
  std::vector<int> record_day;           // per record
  std::size_t feature_dim = 0;
  int horizon = 1;  // label horizon in trading days
  std::size_t dropped_thin_days = 0;

  static Dataset build(std::vector<SampleRecord> records, int horizon);

  std::size_t n_days() const { return calendar.size(); }
  std::size_t n_stocks() const { return stocks.size(); }
};

// CSV schema (exact): header `date,stock_id,f1,...,fF,return_<H>d`,
// ISO-8601 dates, '.' decimal point, UTF-8. `nan` or an empty field in the
// return column marks an unavailable return.
Dataset load_dataset(const std::string& path);
void write_dataset_csv(const Dataset& data, const std::string& path);

// --- cross-sectional transforms ---------------------------------------------

// Average-rank over ties, mapped to (rank-1)/(n-1) in [0,1]. Requires n >= 2.
Vec cross_sectional_rank(std::span<const double> values);

// Per-record label: percentile of raw_return within the record's day.
// NaN where the return is unavailable or fewer than two returns exist that
// day. Records with non-finite returns are excluded from the day's ranking.
Vec make_labels(const Dataset& data);

// Per-record features replaced by their within-day percentile ranks.
std::vector<Vec> rank_transform_features(const Dataset& data);

// Model-ready view: rank features plus labels, same indexing as data.records.
struct Panel {
  Dataset data;
  std::vector<Vec> rank_features;
  Vec labels;
};
Panel build_panel(Dataset data);

// --- feature windows ---------------------------------------------------------

// One (stock, day) observation. The feature window is stored as record
// indices into the panel (windows overlap heavily; materialize on demand).
struct SampleWindow {
  int stock = 0;  // index into data.stocks
  int day = 0;    // index into data.calendar
  std::vector<int> row_records;  // window_len record indices, oldest first
  double label = std::numeric_limits<double>::quiet_NaN();

  bool has_label() const { return !std::isnan(label); }
};

// Windows for every (stock, t) whose stock has records on all of the last
// window_len trading days; gaps are dropped, never imputed.
std::vector<SampleWindow> build_windows(const Panel& panel, std::size_t window_len);

// window_len x F rank-feature matrix, oldest row first.
Matrix materialize_window(const Panel& panel, const SampleWindow& w);
void materialize_window_into(const Panel& panel, const SampleWindow& w, Matrix& out);

// --- temporal splits ----------------------------------------------------------

struct DateRange {
  int first = 0;  // civil dates, inclusive
  int last = 0;
};

struct SplitSpec {
  DateRange train, valid, test;
  int gap_days = 0;  // declared minimum inter-range gap in trading days
};

struct SplitWindows {
  std::vector<SampleWindow> train, valid, test;
};

// Assigns windows by date; a window whose feature lookback or label horizon
// crosses its range boundary is dropped. Validates that inter-range trading
// day gaps are at least max(gap_days, window_len + horizon).
SplitWindows temporal_split(const std::vector<SampleWindow>& windows, const SplitSpec& spec,
                            const Panel& panel, std::size_t window_len);

// --- synthetic regime-switching generator -------------------------------------

struct RegimeSpan {
  int first_day = 0;  // day offsets into the generated range, inclusive
  int last_day = 0;
  int regime = 0;
};

struct SyntheticSpec {
  std::size_t n_stocks = 100;
  std::size_t n_days = 1000;
  std::size_t n_features = 16;
  std::size_t n_regimes = 3;
  std::vector<Vec> regime_weights;   // empty -> default_regime_weights
  std::vector<RegimeSpan> schedule;  // empty -> round-robin blocks of regime_block days
  std::size_t regime_block = 125;
  double noise_std = 0.05;
  int start_date = 14613;  // 2010-01-04
  int horizon = 5;         // label horizon the simulated returns represent
  std::uint64_t seed = 7;
};

struct SyntheticData {
  std::vector<SampleRecord> records;
  std::vector<int> regime_by_day;  // per generated day offset
  int horizon = 0;
};

// Features i.i.d. uniform [0,1]; raw_return = w_{regime(t)} . features +
// gaussian(0, noise_std). Deterministic given the seed.
SyntheticData generate_synthetic(const SyntheticSpec& spec);

// Conflicting linear patterns: a sign flip on the lead feature between the
// first two regimes, further regimes rotate to other features.
std::vector<Vec> default_regime_weights(std::size_t n_regimes, std::size_t n_features);

// Sidecar CSV `date,stock_id,regime` (diagnostics only, never model input).
void write_sidecar_csv(const SyntheticData& synth, const SyntheticSpec& spec,
                       const std::string& path);
// date -> regime. Throws DataError on conflicting rows.
std::unordered_map<int, int> load_sidecar(const std::string& path);

}  // namespace tra
