#include "tra/dataprep.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

#include "tra/errors.hpp"
#include "tra/numerics.hpp"
#include "tra/rng.hpp"

namespace tra {

namespace {

bool all_digits(std::string_view s) {
  return !s.empty() && std::all_of(s.begin(), s.end(), [](char c) { return c >= '0' && c <= '9'; });
}

// days since 1970-01-01 from a civil date (Howard Hinnant's algorithm)
int days_from_civil(int y, int m, int d) {
  y -= m <= 2;
  const int era = (y >= 0 ? y : y - 399) / 400;
  const unsigned yoe = static_cast<unsigned>(y - era * 400);
  const unsigned doy = (153u * static_cast<unsigned>(m + (m > 2 ? -3 : 9)) + 2u) / 5u +
                       static_cast<unsigned>(d) - 1u;
  const unsigned doe = yoe * 365u + yoe / 4u - yoe / 100u + doy;
  return era * 146097 + static_cast<int>(doe) - 719468;
}

void civil_from_days(int z, int& y, int& m, int& d) {
  z += 719468;
  const int era = (z >= 0 ? z : z - 146096) / 146097;
  const unsigned doe = static_cast<unsigned>(z - era * 146097);
  const unsigned yoe = (doe - doe / 1460 + doe / 36524 - doe / 146096) / 365;
  const int yr = static_cast<int>(yoe) + era * 400;
  const unsigned doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
  const unsigned mp = (5 * doy + 2) / 153;
  d = static_cast<int>(doy - (153 * mp + 2) / 5 + 1);
  m = static_cast<int>(mp + (mp < 10 ? 3 : -9));
  y = yr + (m <= 2);
}

std::vector<std::string_view> split_csv_line(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = line.find(',', start);
    if (pos == std::string_view::npos) {
      out.push_back(line.substr(start));
      break;
    }
    out.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
  return out;
}

double parse_double_field(std::string_view field, std::size_t line_no, const char* what) {
  if (field.empty() || field == "nan") {
    return std::numeric_limits<double>::quiet_NaN();
  }
  double value = 0.0;
  const auto* end = field.data() + field.size();
  const auto res = std::from_chars(field.data(), end, value);
  if (res.ec != std::errc() || res.ptr != end) {
    throw ParseError("line " + std::to_string(line_no) + ": cannot parse " + what + " value '" +
                     std::string(field) + "'");
  }
  return value;
}

std::string format_double(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

}  // namespace

int parse_date(const std::string& s) {
  if (s.size() != 10 || s[4] != '-' || s[7] != '-' || !all_digits(s.substr(0, 4)) ||
      !all_digits(s.substr(5, 2)) || !all_digits(s.substr(8, 2))) {
    throw ParseError("invalid ISO-8601 date '" + s + "' (expected YYYY-MM-DD)");
  }
  const int y = std::stoi(s.substr(0, 4));
  const int m = std::stoi(s.substr(5, 2));
  const int d = std::stoi(s.substr(8, 2));
  if (m < 1 || m > 12 || d < 1 || d > 31) {
    throw ParseError("invalid calendar date '" + s + "'");
  }
  return days_from_civil(y, m, d);
}

std::string format_date(int days) {
  int y, m, d;
  civil_from_days(days, y, m, d);
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%04d-%02d-%02d", y, m, d);
  return buf;
}

Dataset Dataset::build(std::vector<SampleRecord> recs, int horizon) {
  if (horizon < 1) throw InvalidArgumentError("label horizon must be >= 1");
  Dataset ds;
  ds.horizon = horizon;
  std::sort(recs.begin(), recs.end(), [](const SampleRecord& a, const SampleRecord& b) {
    return a.date != b.date ? a.date < b.date : a.stock_id < b.stock_id;
  });
  for (std::size_t i = 1; i < recs.size(); ++i) {
    if (recs[i].date == recs[i - 1].date && recs[i].stock_id == recs[i - 1].stock_id) {
      throw DataError("duplicate (stock, date) key: " + recs[i].stock_id + " on " +
                      format_date(recs[i].date));
    }
  }
  if (!recs.empty()) {
    ds.feature_dim = recs.front().features.size();
    for (const auto& r : recs) {
      if (r.features.size() != ds.feature_dim) {
        throw DataError("inconsistent feature count for " + r.stock_id + " on " +
                        format_date(r.date));
      }
      for (double f : r.features) {
        if (!std::isfinite(f)) {
          throw DataError("non-finite feature for " + r.stock_id + " on " + format_date(r.date));
        }
      }
    }
  }

  // drop days that cannot be cross-sectionally ranked
  std::vector<SampleRecord> kept;
  kept.reserve(recs.size());
  for (std::size_t i = 0; i < recs.size();) {
    std::size_t j = i;
    while (j < recs.size() && recs[j].date == recs[i].date) ++j;
    if (j - i >= 2) {
      for (std::size_t k = i; k < j; ++k) kept.push_back(std::move(recs[k]));
    } else {
      ++ds.dropped_thin_days;
    }
    i = j;
  }
  ds.records = std::move(kept);

  for (const auto& r : ds.records) {
    if (ds.stock_index.emplace(r.stock_id, 0).second) ds.stocks.push_back(r.stock_id);
    if (ds.date_index.emplace(r.date, 0).second) ds.calendar.push_back(r.date);
  }
  std::sort(ds.stocks.begin(), ds.stocks.end());
  std::sort(ds.calendar.begin(), ds.calendar.end());
  for (std::size_t i = 0; i < ds.stocks.size(); ++i) ds.stock_index[ds.stocks[i]] = static_cast<int>(i);
  for (std::size_t i = 0; i < ds.calendar.size(); ++i) ds.date_index[ds.calendar[i]] = static_cast<int>(i);

  ds.by_day.assign(ds.calendar.size(), {});
  ds.record_stock.resize(ds.records.size());
  ds.record_day.resize(ds.records.size());
  for (std::size_t i = 0; i < ds.records.size(); ++i) {
    ds.record_stock[i] = ds.stock_index.at(ds.records[i].stock_id);
    ds.record_day[i] = ds.date_index.at(ds.records[i].date);
    ds.by_day[static_cast<std::size_t>(ds.record_day[i])].push_back(static_cast<int>(i));
  }
  return ds;
}

Dataset load_dataset(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open dataset file '" + path + "'");
  std::string line;
  if (!std::getline(in, line)) throw ParseError("empty dataset file '" + path + "'");
  if (!line.empty() && line.back() == '\r') line.pop_back();

  const auto header = split_csv_line(line);
  if (header.size() < 4 || header[0] != "date" || header[1] != "stock_id") {
    throw ParseError("header must start with 'date,stock_id' (got '" + line + "')");
  }
  const std::size_t f_count = header.size() - 3;
  for (std::size_t j = 0; j < f_count; ++j) {
    const std::string expect = "f" + std::to_string(j + 1);
    if (header[2 + j] != expect) {
      throw ParseError("missing feature column '" + expect + "' (found '" +
                       std::string(header[2 + j]) + "')");
    }
  }
  const std::string_view ret_col = header.back();
  int horizon = 0;
  if (ret_col.size() > 8 && ret_col.substr(0, 7) == "return_" && ret_col.back() == 'd' &&
      all_digits(ret_col.substr(7, ret_col.size() - 8))) {
    horizon = std::stoi(std::string(ret_col.substr(7, ret_col.size() - 8)));
  } else {
    throw ParseError("missing return column 'return_<horizon>d' (found '" +
                     std::string(ret_col) + "')");
  }

  std::vector<SampleRecord> records;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto cells = split_csv_line(line);
    if (cells.size() != header.size()) {
      throw ParseError("line " + std::to_string(line_no) + ": expected " +
                       std::to_string(header.size()) + " columns, got " +
                       std::to_string(cells.size()));
    }
    SampleRecord r;
    r.date = parse_date(std::string(cells[0]));
    r.stock_id = std::string(cells[1]);
    if (r.stock_id.empty()) {
      throw ParseError("line " + std::to_string(line_no) + ": empty stock_id");
    }
    r.features.resize(f_count);
    for (std::size_t j = 0; j < f_count; ++j) {
      r.features[j] = parse_double_field(cells[2 + j], line_no, "feature");
      if (!std::isfinite(r.features[j])) {
        throw ParseError("line " + std::to_string(line_no) + ": non-finite feature f" +
                         std::to_string(j + 1));
      }
    }
    r.raw_return = parse_double_field(cells.back(), line_no, "return");
    records.push_back(std::move(r));
  }
  return Dataset::build(std::move(records), horizon);
}

void write_dataset_csv(const Dataset& data, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write dataset file '" + path + "'");
  out << "date,stock_id";
  for (std::size_t j = 1; j <= data.feature_dim; ++j) out << ",f" << j;
  out << ",return_" << data.horizon << "d\n";
  for (const auto& r : data.records) {
    out << format_date(r.date) << ',' << r.stock_id;
    for (double f : r.features) out << ',' << format_double(f);
    out << ',' << format_double(r.raw_return) << '\n';
  }
}

Vec cross_sectional_rank(std::span<const double> values) {
  const std::size_t n = values.size();
  if (n < 2) {
    throw InvalidArgumentError("cross-sectional rank needs at least two observations");
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
  Vec ranks(n, 0.0);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j < n && values[order[j]] == values[order[i]]) ++j;
    // 1-based average rank over the tie group
    const double avg = (static_cast<double>(i + 1) + static_cast<double>(j)) / 2.0;
    for (std::size_t k = i; k < j; ++k) ranks[order[k]] = avg;
    i = j;
  }
  const double denom = static_cast<double>(n - 1);
  for (double& r : ranks) r = (r - 1.0) / denom;
  return ranks;
}

Vec make_labels(const Dataset& data) {
  Vec labels(data.records.size(), std::numeric_limits<double>::quiet_NaN());
  Vec returns;
  std::vector<int> who;
  for (const auto& day : data.by_day) {
    returns.clear();
    who.clear();
    for (int rec : day) {
      const double r = data.records[static_cast<std::size_t>(rec)].raw_return;
      if (std::isfinite(r)) {
        returns.push_back(r);
        who.push_back(rec);
      }
    }
    if (returns.size() < 2) continue;  // day lacks rankable return data
    const Vec pct = cross_sectional_rank(returns);
    for (std::size_t i = 0; i < who.size(); ++i) {
      labels[static_cast<std::size_t>(who[i])] = pct[i];
    }
  }
  return labels;
}

std::vector<Vec> rank_transform_features(const Dataset& data) {
  std::vector<Vec> out(data.records.size(), Vec(data.feature_dim, 0.0));
  Vec column;
  for (const auto& day : data.by_day) {
    for (std::size_t j = 0; j < data.feature_dim; ++j) {
      column.clear();
      for (int rec : day) column.push_back(data.records[static_cast<std::size_t>(rec)].features[j]);
      const Vec pct = cross_sectional_rank(column);
      for (std::size_t i = 0; i < day.size(); ++i) {
        out[static_cast<std::size_t>(day[i])][j] = pct[i];
      }
    }
  }
  return out;
}

Panel build_panel(Dataset data) {
  Panel p;
  p.rank_features = rank_transform_features(data);
  p.labels = make_labels(data);
  p.data = std::move(data);
  return p;
}

std::vector<SampleWindow> build_windows(const Panel& panel, std::size_t window_len) {
  if (window_len == 0) throw InvalidArgumentError("window_len must be >= 1");
  const Dataset& ds = panel.data;
  // per stock: record index at each day, -1 = missing
  std::vector<std::vector<int>> grid(ds.n_stocks(), std::vector<int>(ds.n_days(), -1));
  for (std::size_t i = 0; i < ds.records.size(); ++i) {
    grid[static_cast<std::size_t>(ds.record_stock[i])][static_cast<std::size_t>(ds.record_day[i])] =
        static_cast<int>(i);
  }
  std::vector<SampleWindow> out;
  for (std::size_t s = 0; s < ds.n_stocks(); ++s) {
    const auto& row = grid[s];
    std::size_t run = 0;  // consecutive present days ending here
    for (std::size_t t = 0; t < ds.n_days(); ++t) {
      run = row[t] >= 0 ? run + 1 : 0;
      if (run < window_len) continue;
      SampleWindow w;
      w.stock = static_cast<int>(s);
      w.day = static_cast<int>(t);
      w.row_records.reserve(window_len);
      for (std::size_t b = t + 1 - window_len; b <= t; ++b) w.row_records.push_back(row[b]);
      w.label = panel.labels[static_cast<std::size_t>(row[t])];
      out.push_back(std::move(w));
    }
  }
  std::sort(out.begin(), out.end(), [](const SampleWindow& a, const SampleWindow& b) {
    return a.day != b.day ? a.day < b.day : a.stock < b.stock;
  });
  return out;
}

Matrix materialize_window(const Panel& panel, const SampleWindow& w) {
  Matrix m(w.row_records.size(), panel.data.feature_dim);
  materialize_window_into(panel, w, m);
  return m;
}

void materialize_window_into(const Panel& panel, const SampleWindow& w, Matrix& out) {
  for (std::size_t r = 0; r < w.row_records.size(); ++r) {
    const Vec& src = panel.rank_features[static_cast<std::size_t>(w.row_records[r])];
    std::copy(src.begin(), src.end(), out.row(r).begin());
  }
}

namespace {

struct RangeIdx {
  int first = 0, last = -1;  // calendar indices, inclusive; empty when last < first
  bool empty() const { return last < first; }
};

RangeIdx resolve_range(const std::vector<int>& calendar, const DateRange& r) {
  RangeIdx out;
  const auto lo = std::lower_bound(calendar.begin(), calendar.end(), r.first);
  const auto hi = std::upper_bound(calendar.begin(), calendar.end(), r.last);
  out.first = static_cast<int>(lo - calendar.begin());
  out.last = static_cast<int>(hi - calendar.begin()) - 1;
  return out;
}

}  // namespace

SplitWindows temporal_split(const std::vector<SampleWindow>& windows, const SplitSpec& spec,
                            const Panel& panel, std::size_t window_len) {
  const Dataset& ds = panel.data;
  const RangeIdx train = resolve_range(ds.calendar, spec.train);
  const RangeIdx valid = resolve_range(ds.calendar, spec.valid);
  const RangeIdx test = resolve_range(ds.calendar, spec.test);
  if (train.empty()) throw ConfigError("train range contains no trading days");
  if (valid.empty()) throw ConfigError("valid range contains no trading days");
  if (test.empty()) throw ConfigError("test range contains no trading days");
  if (!(train.last < valid.first && valid.last < test.first)) {
    throw ConfigError("split ranges must be ordered train < valid < test and disjoint");
  }

  const int required = static_cast<int>(window_len) + ds.horizon;
  const int min_gap = std::max(required, spec.gap_days);
  const int gap_tv = valid.first - train.last - 1;
  const int gap_vt = test.first - valid.last - 1;
  if (gap_tv < min_gap || gap_vt < min_gap) {
    throw ConfigError("insufficient split gap: need >= " + std::to_string(min_gap) +
                      " trading days (window_len + horizon = " + std::to_string(required) +
                      "), got train->valid " + std::to_string(gap_tv) + ", valid->test " +
                      std::to_string(gap_vt));
  }

  SplitWindows out;
  const int w_back = static_cast<int>(window_len) - 1;
  auto place = [&](const RangeIdx& range, std::vector<SampleWindow>& dst, const SampleWindow& w) {
    if (w.day < range.first || w.day > range.last) return false;
    // drop windows whose lookback or label interval crosses the range boundary
    if (w.day - w_back < range.first) return true;
    if (w.day + ds.horizon > range.last) return true;
    dst.push_back(w);
    return true;
  };
  for (const auto& w : windows) {
    if (place(train, out.train, w)) continue;
    if (place(valid, out.valid, w)) continue;
    place(test, out.test, w);  // windows in gaps fall through unassigned
  }
  return out;
}

std::vector<Vec> default_regime_weights(std::size_t n_regimes, std::size_t n_features) {
  if (n_features < 3) throw ConfigError("default regime weights need at least 3 features");
  std::vector<Vec> w(n_regimes, Vec(n_features, 0.0));
  for (std::size_t k = 0; k < n_regimes; ++k) {
    switch (k) {
      case 0:
        w[k][0] = 1.0;
        w[k][1] = 0.25;
        break;
      case 1:  // momentum flip: opposite sign on the lead feature
        w[k][0] = -1.0;
        w[k][1] = 0.25;
        break;
      case 2:
        w[k][1] = -1.0;
        w[k][2] = 0.5;
        break;
      default: {
        const std::size_t j = k % n_features;
        w[k][j] = (k % 2 == 0) ? 1.0 : -1.0;
        w[k][(j + 1) % n_features] = 0.5;
        break;
      }
    }
  }
  return w;
}

SyntheticData generate_synthetic(const SyntheticSpec& spec) {
  if (spec.n_stocks < 2) throw ConfigError("synthetic data needs at least 2 stocks");
  if (spec.n_days == 0) throw ConfigError("synthetic data needs at least 1 day");
  if (spec.n_features == 0) throw ConfigError("synthetic data needs at least 1 feature");
  if (spec.noise_std < 0.0) throw ConfigError("noise_std must be >= 0");
  if (spec.horizon < 1) throw ConfigError("synthetic horizon must be >= 1");

  std::vector<Vec> weights = spec.regime_weights;
  if (weights.empty()) {
    weights = default_regime_weights(spec.n_regimes, spec.n_features);
  }
  if (weights.size() != spec.n_regimes) {
    throw ConfigError("regime_weights count does not match n_regimes");
  }
  for (const auto& w : weights) {
    if (w.size() != spec.n_features) {
      throw ConfigError("regime weight vector length does not match n_features");
    }
  }

  std::vector<RegimeSpan> schedule = spec.schedule;
  if (schedule.empty()) {
    if (spec.regime_block == 0) throw ConfigError("regime_block must be >= 1");
    for (std::size_t d = 0; d < spec.n_days; d += spec.regime_block) {
      RegimeSpan span;
      span.first_day = static_cast<int>(d);
      span.last_day = static_cast<int>(std::min(d + spec.regime_block, spec.n_days) - 1);
      span.regime = static_cast<int>((d / spec.regime_block) % spec.n_regimes);
      schedule.push_back(span);
    }
  }
  std::sort(schedule.begin(), schedule.end(),
            [](const RegimeSpan& a, const RegimeSpan& b) { return a.first_day < b.first_day; });
  std::vector<int> regime_by_day(spec.n_days, -1);
  for (const auto& span : schedule) {
    if (span.first_day < 0 || span.last_day >= static_cast<int>(spec.n_days) ||
        span.first_day > span.last_day || span.regime < 0 ||
        span.regime >= static_cast<int>(spec.n_regimes)) {
      throw ConfigError("regime schedule span out of bounds");
    }
    for (int d = span.first_day; d <= span.last_day; ++d) {
      if (regime_by_day[static_cast<std::size_t>(d)] != -1) {
        throw ConfigError("regime schedule overlaps on day offset " + std::to_string(d));
      }
      regime_by_day[static_cast<std::size_t>(d)] = span.regime;
    }
  }
  for (std::size_t d = 0; d < spec.n_days; ++d) {
    if (regime_by_day[d] == -1) {
      throw ConfigError("regime schedule leaves day offset " + std::to_string(d) + " uncovered");
    }
  }

  int id_width = 1;
  for (std::size_t v = spec.n_stocks - 1; v >= 10; v /= 10) ++id_width;
  auto stock_name = [&](std::size_t s) {
    char buf[24];
    std::snprintf(buf, sizeof(buf), "S%0*zu", id_width, s);
    return std::string(buf);
  };

  SeededRng features_rng = SeededRng(spec.seed).derive("synthetic-features");
  SeededRng noise_rng = SeededRng(spec.seed).derive("synthetic-noise");

  SyntheticData out;
  out.regime_by_day = regime_by_day;
  out.horizon = spec.horizon;
  out.records.reserve(spec.n_stocks * spec.n_days);
  for (std::size_t d = 0; d < spec.n_days; ++d) {
    const Vec& w = weights[static_cast<std::size_t>(regime_by_day[d])];
    for (std::size_t s = 0; s < spec.n_stocks; ++s) {
      SampleRecord r;
      r.stock_id = stock_name(s);
      r.date = spec.start_date + static_cast<int>(d);
      r.features.resize(spec.n_features);
      for (double& f : r.features) f = features_rng.uniform();
      r.raw_return = dot(w, r.features) + spec.noise_std * noise_rng.gaussian();
      out.records.push_back(std::move(r));
    }
  }
  return out;
}

void write_sidecar_csv(const SyntheticData& synth, const SyntheticSpec& spec,
                       const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write sidecar file '" + path + "'");
  out << "date,stock_id,regime\n";
  for (const auto& r : synth.records) {
    const int offset = r.date - spec.start_date;
    out << format_date(r.date) << ',' << r.stock_id << ','
        << synth.regime_by_day[static_cast<std::size_t>(offset)] << '\n';
  }
}

std::unordered_map<int, int> load_sidecar(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open sidecar file '" + path + "'");
  std::string line;
  if (!std::getline(in, line)) throw ParseError("empty sidecar file");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != "date,stock_id,regime") {
    throw ParseError("sidecar header must be 'date,stock_id,regime'");
  }
  std::unordered_map<int, int> by_date;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto cells = split_csv_line(line);
    if (cells.size() != 3) {
      throw ParseError("sidecar line " + std::to_string(line_no) + ": expected 3 columns");
    }
    const int date = parse_date(std::string(cells[0]));
    int regime = 0;
    const auto res = std::from_chars(cells[2].data(), cells[2].data() + cells[2].size(), regime);
    if (res.ec != std::errc() || res.ptr != cells[2].data() + cells[2].size()) {
      throw ParseError("sidecar line " + std::to_string(line_no) + ": bad regime value");
    }
    const auto [it, inserted] = by_date.emplace(date, regime);
    if (!inserted && it->second != regime) {
      throw DataError("sidecar has conflicting regimes for " + std::string(cells[0]));
    }
  }
  return by_date;
}

}  // namespace tra
