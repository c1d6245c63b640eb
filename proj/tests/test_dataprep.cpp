#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <unistd.h>
#include <filesystem>
#include <fstream>
#include <numeric>

#include "tra/dataprep.hpp"
#include "tra/errors.hpp"
#include "tra/numerics.hpp"

using namespace tra;

namespace {

namespace fs = std::filesystem;

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() / ("tra_dataprep_" + std::to_string(::getpid()));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

std::string write_file(const fs::path& p, const std::string& body) {
  std::ofstream out(p);
  out << body;
  return p.string();
}

SampleRecord rec(const std::string& stock, const std::string& date, Vec features, double ret) {
  return {stock, parse_date(date), std::move(features), ret};
}

}  // namespace

TEST_CASE("date parsing round trips") {
  CHECK(format_date(parse_date("2010-01-04")) == "2010-01-04");
  CHECK(format_date(parse_date("1999-12-31")) == "1999-12-31");
  CHECK(parse_date("2010-01-05") == parse_date("2010-01-04") + 1);
  CHECK_THROWS_AS(parse_date("2010/01/04"), ParseError);
  CHECK_THROWS_AS(parse_date("2010-13-04"), ParseError);
  CHECK_THROWS_AS(parse_date("20-01-04"), ParseError);
}

TEST_CASE("csv loading") {
  TempDir tmp;
  const std::string good = write_file(tmp.path / "good.csv",
                                      "date,stock_id,f1,f2,return_5d\n"
                                      "2020-01-02,B,0.1,0.2,0.01\n"
                                      "2020-01-01,A,0.3,0.4,0.02\n"
                                      "2020-01-01,B,0.5,0.6,nan\n"
                                      "2020-01-02,A,0.7,0.8,-0.01\n");
  const Dataset ds = load_dataset(good);
  CHECK(ds.records.size() == 4);
  CHECK(ds.horizon == 5);
  CHECK(ds.feature_dim == 2);
  // unordered input is re-sorted by (date, stock)
  CHECK(ds.records[0].stock_id == "A");
  CHECK(format_date(ds.records[0].date) == "2020-01-01");
  CHECK(std::isnan(ds.records[1].raw_return));

  const std::string missing_col = write_file(tmp.path / "missing.csv",
                                             "date,stock_id,f1,f3,return_5d\n");
  CHECK_THROWS_WITH_AS(static_cast<void>(load_dataset(missing_col)),
                       doctest::Contains("f2"), ParseError);

  const std::string bad_ret = write_file(tmp.path / "badret.csv",
                                         "date,stock_id,f1,f2,monthly\n");
  CHECK_THROWS_AS(static_cast<void>(load_dataset(bad_ret)), ParseError);

  const std::string dup = write_file(tmp.path / "dup.csv",
                                     "date,stock_id,f1,f2,return_5d\n"
                                     "2020-01-01,A,0.1,0.2,0.0\n"
                                     "2020-01-01,B,0.1,0.2,0.0\n"
                                     "2020-01-01,A,0.3,0.4,0.0\n");
  CHECK_THROWS_AS(static_cast<void>(load_dataset(dup)), DataError);

  const std::string short_row = write_file(tmp.path / "short.csv",
                                           "date,stock_id,f1,f2,return_5d\n"
                                           "2020-01-01,A,0.1,0.2\n");
  CHECK_THROWS_WITH_AS(static_cast<void>(load_dataset(short_row)), doctest::Contains("line 2"),
                       ParseError);
}

TEST_CASE("dataset round trips through csv") {
  SyntheticSpec spec;
  spec.n_stocks = 5;
  spec.n_days = 30;
  spec.n_features = 3;
  spec.n_regimes = 2;
  spec.regime_block = 10;
  const SyntheticData synth = generate_synthetic(spec);
  const Dataset ds = Dataset::build(synth.records, spec.horizon);

  TempDir tmp;
  const std::string path = (tmp.path / "round.csv").string();
  write_dataset_csv(ds, path);
  const Dataset back = load_dataset(path);
  REQUIRE(back.records.size() == ds.records.size());
  for (std::size_t i = 0; i < ds.records.size(); ++i) {
    CHECK(back.records[i].stock_id == ds.records[i].stock_id);
    CHECK(back.records[i].date == ds.records[i].date);
    CHECK(back.records[i].raw_return == ds.records[i].raw_return);  // exact round trip
    CHECK(back.records[i].features == ds.records[i].features);
  }
}

TEST_CASE("cross-sectional rank") {
  const Vec r = cross_sectional_rank(Vec{3.2, 1.1, 5.0});
  CHECK(r[0] == 0.5);
  CHECK(r[1] == 0.0);
  CHECK(r[2] == 1.0);

  const Vec tied = cross_sectional_rank(Vec{7.0, 7.0});
  CHECK(tied[0] == 0.5);
  CHECK(tied[1] == 0.5);

  CHECK_THROWS_AS(cross_sectional_rank(Vec{1.0}), InvalidArgumentError);

  // oracle: independent sort-based percentile (no ties in uniform draws)
  SeededRng rng(17);
  Vec values(1000);
  for (double& v : values) v = rng.uniform();
  const Vec ranks = cross_sectional_rank(values);
  std::vector<std::size_t> order(values.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
  for (std::size_t pos = 0; pos < order.size(); ++pos) {
    const double expect = static_cast<double>(pos) / static_cast<double>(values.size() - 1);
    CHECK(ranks[order[pos]] == doctest::Approx(expect).epsilon(1e-12));
  }

  // invariance under a strictly increasing transform
  Vec transformed(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) transformed[i] = std::exp(3.0 * values[i]) + 1.0;
  CHECK(cross_sectional_rank(transformed) == ranks);
}

TEST_CASE("labels are per-day return percentiles") {
  std::vector<SampleRecord> records;
  records.push_back(rec("a", "2020-01-01", {0.0}, 0.05));
  records.push_back(rec("b", "2020-01-01", {0.0}, -0.02));
  records.push_back(rec("c", "2020-01-01", {0.0}, 0.01));
  records.push_back(rec("a", "2020-01-02", {0.0}, 0.03));
  records.push_back(rec("b", "2020-01-02", {0.0}, 0.03));
  const Dataset ds = Dataset::build(records, 1);
  const Vec labels = make_labels(ds);
  // day 1 sorted by stock: a, b, c with returns 0.05, -0.02, 0.01
  CHECK(labels[0] == 1.0);
  CHECK(labels[1] == 0.0);
  CHECK(labels[2] == 0.5);
  // all-equal returns tie to 0.5
  CHECK(labels[3] == 0.5);
  CHECK(labels[4] == 0.5);
}

TEST_CASE("per-day label mean is one half") {
  SyntheticSpec spec;
  spec.n_stocks = 20;
  spec.n_days = 40;
  spec.n_features = 4;
  spec.n_regimes = 2;
  spec.regime_block = 20;
  spec.seed = 99;
  const SyntheticData synth = generate_synthetic(spec);
  const Panel panel = build_panel(Dataset::build(synth.records, spec.horizon));
  for (const auto& day : panel.data.by_day) {
    double total = 0.0;
    std::size_t n = 0;
    for (int r : day) {
      const double l = panel.labels[static_cast<std::size_t>(r)];
      if (!std::isnan(l)) {
        total += l;
        ++n;
      }
    }
    if (n >= 2) CHECK(std::abs(total / static_cast<double>(n) - 0.5) <= 1e-9);
  }
}

TEST_CASE("synthetic spot check against hand-computed percentiles") {
  SyntheticSpec spec;
  spec.n_stocks = 7;
  spec.n_days = 25;
  spec.n_features = 3;
  spec.n_regimes = 1;
  spec.regime_weights = {Vec{1.0, 0.0, 0.0}};
  spec.noise_std = 0.02;
  spec.seed = 5;
  const SyntheticData synth = generate_synthetic(spec);
  const Dataset ds = Dataset::build(synth.records, spec.horizon);
  const Vec labels = make_labels(ds);
  for (const std::size_t day : {0ul, 6ul, 12ul, 18ul, 24ul}) {
    const auto& recs = ds.by_day[day];
    for (int i : recs) {
      std::size_t below = 0;
      for (int j : recs) {
        if (ds.records[static_cast<std::size_t>(j)].raw_return <
            ds.records[static_cast<std::size_t>(i)].raw_return) {
          ++below;
        }
      }
      const double expect = static_cast<double>(below) / static_cast<double>(recs.size() - 1);
      CHECK(labels[static_cast<std::size_t>(i)] == doctest::Approx(expect).epsilon(1e-12));
    }
  }
}

TEST_CASE("noise-free single-regime labels follow the lead feature") {
  SyntheticSpec spec;
  spec.n_stocks = 9;
  spec.n_days = 10;
  spec.n_features = 4;
  spec.n_regimes = 1;
  spec.regime_weights = {Vec{1.0, 0.0, 0.0, 0.0}};
  spec.noise_std = 0.0;
  const SyntheticData synth = generate_synthetic(spec);
  const Dataset ds = Dataset::build(synth.records, spec.horizon);
  const Vec labels = make_labels(ds);
  for (const auto& day : ds.by_day) {
    Vec f0;
    for (int r : day) f0.push_back(ds.records[static_cast<std::size_t>(r)].features[0]);
    const Vec expect = cross_sectional_rank(f0);
    for (std::size_t i = 0; i < day.size(); ++i) {
      CHECK(labels[static_cast<std::size_t>(day[i])] == expect[i]);
    }
  }
}

TEST_CASE("synthetic generation is deterministic and validated") {
  SyntheticSpec spec;
  spec.n_stocks = 4;
  spec.n_days = 12;
  spec.n_features = 3;
  spec.n_regimes = 2;
  spec.regime_block = 6;
  const SyntheticData a = generate_synthetic(spec);
  const SyntheticData b = generate_synthetic(spec);
  REQUIRE(a.records.size() == b.records.size());
  for (std::size_t i = 0; i < a.records.size(); ++i) {
    CHECK(a.records[i].features == b.records[i].features);
    CHECK(a.records[i].raw_return == b.records[i].raw_return);
  }
  SyntheticSpec other = spec;
  other.seed = spec.seed + 1;
  const SyntheticData c = generate_synthetic(other);
  CHECK(a.records[0].raw_return != c.records[0].raw_return);

  SyntheticSpec overlap = spec;
  overlap.schedule = {{0, 6, 0}, {5, 11, 1}};
  CHECK_THROWS_AS(static_cast<void>(generate_synthetic(overlap)), ConfigError);
  SyntheticSpec gap = spec;
  gap.schedule = {{0, 4, 0}, {6, 11, 1}};
  CHECK_THROWS_AS(static_cast<void>(generate_synthetic(gap)), ConfigError);
}

TEST_CASE("sidecar round trip") {
  SyntheticSpec spec;
  spec.n_stocks = 3;
  spec.n_days = 9;
  spec.n_features = 3;
  spec.n_regimes = 3;
  spec.regime_block = 3;
  const SyntheticData synth = generate_synthetic(spec);
  TempDir tmp;
  const std::string path = (tmp.path / "regimes.csv").string();
  write_sidecar_csv(synth, spec, path);
  const auto by_date = load_sidecar(path);
  CHECK(by_date.size() == 9);
  CHECK(by_date.at(spec.start_date) == 0);
  CHECK(by_date.at(spec.start_date + 4) == 1);
  CHECK(by_date.at(spec.start_date + 8) == 2);
}

TEST_CASE("windows require full history") {
  std::vector<SampleRecord> records;
  for (int d = 0; d < 6; ++d) {
    for (const char* s : {"a", "b", "c"}) {
      if (d == 3 && std::string(s) == "b") continue;  // b misses one day
      SampleRecord r;
      r.stock_id = s;
      r.date = parse_date("2020-01-01") + d;
      r.features = {static_cast<double>(d) + (s[0] - 'a')};
      r.raw_return = 0.01 * d + 0.001 * (s[0] - 'a');
      records.push_back(r);
    }
  }
  const Panel panel = build_panel(Dataset::build(records, 1));
  const auto windows = build_windows(panel, 3);
  // a and c: days 2..5 qualify; b: day 2 only (the gap at 3 kills 3,4,5)
  std::size_t a_count = 0, b_count = 0;
  for (const auto& w : windows) {
    if (panel.data.stocks[static_cast<std::size_t>(w.stock)] == "b") ++b_count;
    else ++a_count;
    // rows oldest to newest
    const Matrix m = materialize_window(panel, w);
    CHECK(m.rows() == 3);
  }
  CHECK(a_count == 8);
  CHECK(b_count == 1);
}

TEST_CASE("temporal split validates gaps and drops boundary crossers") {
  SyntheticSpec spec;
  spec.n_stocks = 6;
  spec.n_days = 120;
  spec.n_features = 3;
  spec.n_regimes = 2;
  spec.regime_block = 60;
  spec.horizon = 3;
  const SyntheticData synth = generate_synthetic(spec);
  const Panel panel = build_panel(Dataset::build(synth.records, spec.horizon));
  const std::size_t window_len = 5;
  const auto windows = build_windows(panel, window_len);
  const auto& cal = panel.data.calendar;

  SplitSpec ok;
  ok.train = {cal[0], cal[59]};
  ok.valid = {cal[70], cal[89]};
  ok.test = {cal[100], cal[119]};
  ok.gap_days = 8;  // window 5 + horizon 3
  const SplitWindows splits = temporal_split(windows, ok, panel, window_len);
  CHECK(!splits.train.empty());
  CHECK(!splits.valid.empty());
  CHECK(!splits.test.empty());

  // exhaustive boundary check: lookback and label interval inside the range
  const auto check_contained = [&](const std::vector<SampleWindow>& ws, int lo, int hi) {
    for (const auto& w : ws) {
      CHECK(w.day - static_cast<int>(window_len) + 1 >= lo);
      CHECK(w.day + spec.horizon <= hi);
    }
  };
  check_contained(splits.train, 0, 59);
  check_contained(splits.valid, 70, 89);
  check_contained(splits.test, 100, 119);

  // max train day + gap < min valid day
  int max_train = 0, min_valid = 1000;
  for (const auto& w : splits.train) max_train = std::max(max_train, w.day);
  for (const auto& w : splits.valid) min_valid = std::min(min_valid, w.day);
  CHECK(max_train + ok.gap_days < min_valid);

  SplitSpec tight = ok;
  tight.valid = {cal[64], cal[89]};  // only 4 trading days of gap
  CHECK_THROWS_WITH_AS(static_cast<void>(temporal_split(windows, tight, panel, window_len)),
                       doctest::Contains("8"), ConfigError);

  SplitSpec empty = ok;
  empty.valid = {cal[60] + 10000, cal[60] + 10001};
  CHECK_THROWS_AS(static_cast<void>(temporal_split(windows, empty, panel, window_len)),
                  ConfigError);
}

TEST_CASE("momentum flip is visible in per-period linear fits") {
  // two regimes with opposite signs on the lead feature
  SyntheticSpec spec;
  spec.n_stocks = 40;
  spec.n_days = 120;
  spec.n_features = 3;
  spec.n_regimes = 2;
  spec.regime_weights = {Vec{1.0, 0.2, 0.0}, Vec{-1.0, 0.2, 0.0}};
  spec.regime_block = 60;
  spec.noise_std = 0.02;
  const SyntheticData synth = generate_synthetic(spec);
  const Panel panel = build_panel(Dataset::build(synth.records, spec.horizon));

  // least-squares oracle per period
  for (int period = 0; period < 2; ++period) {
    std::vector<Vec> x;
    Vec y;
    for (int d = period * 60; d < (period + 1) * 60; ++d) {
      for (int r : panel.data.by_day[static_cast<std::size_t>(d)]) {
        if (std::isnan(panel.labels[static_cast<std::size_t>(r)])) continue;
        x.push_back(panel.rank_features[static_cast<std::size_t>(r)]);
        y.push_back(panel.labels[static_cast<std::size_t>(r)]);
      }
    }
    const Vec beta = ols_fit(x, y);
    if (period == 0) CHECK(beta[1] > 0.5);
    else CHECK(beta[1] < -0.5);
  }
}
