#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "tra/dataprep.hpp"
#include "tra/errors.hpp"
#include "tra/evaluation.hpp"
#include "tra/numerics.hpp"
#include "tra/rng.hpp"

using namespace tra;

namespace {

std::vector<ScoredSample> one_day(const Vec& preds, const Vec& labels, int day = 0) {
  std::vector<ScoredSample> rows;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    rows.push_back({day, static_cast<int>(i), preds[i], labels[i]});
  }
  return rows;
}

}  // namespace

TEST_CASE("information coefficient closed forms") {
  // perfect correlation
  std::vector<ScoredSample> rows;
  for (int day = 0; day < 3; ++day) {
    const Vec labels{0.1, 0.5, 0.9, 0.3};
    const auto d = one_day(labels, labels, day);
    rows.insert(rows.end(), d.begin(), d.end());
  }
  CHECK(ranking_metrics(rows).ic_mean == doctest::Approx(1.0).epsilon(1e-12));

  // perfect reversal
  std::vector<ScoredSample> rev;
  for (int day = 0; day < 3; ++day) {
    const Vec labels{0.1, 0.5, 0.9, 0.3};
    Vec preds;
    for (double l : labels) preds.push_back(1.0 - l);
    const auto d = one_day(preds, labels, day);
    rev.insert(rev.end(), d.begin(), d.end());
  }
  CHECK(ranking_metrics(rev).ic_mean == doctest::Approx(-1.0).epsilon(1e-12));

  // direct Pearson oracle: corr([1,2,3],[1,3,2]) = 0.5
  const auto mixed = ranking_metrics(one_day(Vec{1.0, 2.0, 3.0}, Vec{1.0, 3.0, 2.0}));
  CHECK(std::abs(mixed.ic_mean - 0.5) <= 1e-12);
  // and via the standalone pearson as a second route
  CHECK(std::abs(pearson(Vec{1.0, 2.0, 3.0}, Vec{1.0, 3.0, 2.0}) - 0.5) <= 1e-12);
}

TEST_CASE("ic is invariant under positive affine transforms of predictions") {
  SeededRng rng(4);
  std::vector<ScoredSample> rows, scaled;
  for (int day = 0; day < 5; ++day) {
    for (int s = 0; s < 10; ++s) {
      const double pred = rng.uniform();
      const double label = rng.uniform();
      rows.push_back({day, s, pred, label});
      scaled.push_back({day, s, 3.7 * pred + 11.0, label});
    }
  }
  const auto a = ranking_metrics(rows);
  const auto b = ranking_metrics(scaled);
  CHECK(a.ic_mean == doctest::Approx(b.ic_mean).epsilon(1e-12));
  CHECK(a.icir == doctest::Approx(b.icir).epsilon(1e-9));
}

TEST_CASE("degenerate days are excluded, never averaged") {
  // day 0: constant predictions (zero variance); day 1: fine; day 2: 2 stocks
  std::vector<ScoredSample> rows;
  const auto d0 = one_day(Vec{0.5, 0.5, 0.5}, Vec{0.1, 0.2, 0.3}, 0);
  const auto d1 = one_day(Vec{1.0, 2.0, 3.0}, Vec{1.0, 3.0, 2.0}, 1);
  const auto d2 = one_day(Vec{1.0, 2.0}, Vec{0.0, 1.0}, 2);
  rows.insert(rows.end(), d0.begin(), d0.end());
  rows.insert(rows.end(), d1.begin(), d1.end());
  rows.insert(rows.end(), d2.begin(), d2.end());
  const auto m = ranking_metrics(rows);
  CHECK(m.daily_ic.size() == 1);
  CHECK(m.excluded_days == 2);
  CHECK(m.ic_mean == doctest::Approx(0.5).epsilon(1e-12));
  // mse/mae still cover every sample
  CHECK(m.mse > 0.0);
}

TEST_CASE("long-short return formula") {
  // four stocks, decile 0.5 -> 2 long, 2 short
  std::vector<TradeRow> rows{
      {0, "a", 0.9, 0.02}, {0, "b", 0.8, 0.04}, {0, "c", 0.2, 0.01}, {0, "d", 0.1, 0.01}};
  const ReturnSeries series = simulate_long_short(rows, 0.5);
  REQUIRE(series.returns.size() == 1);
  CHECK(series.returns[0] == doctest::Approx(0.03 - 0.01).epsilon(1e-15));
}

TEST_CASE("ceiling rule sizes the legs") {
  // n = 20, decile 0.1 -> ceil(2) = 2 per leg
  std::vector<TradeRow> rows;
  for (int s = 0; s < 20; ++s) {
    rows.push_back({0, std::string("s") + char('a' + s), static_cast<double>(s), 0.0});
  }
  rows[19].realized = 0.10;  // top two by prediction: s19 (r=.10), s18 (r=.06)
  rows[18].realized = 0.06;
  rows[17].realized = 99.0;  // must not enter the long leg
  rows[0].realized = -0.02;  // bottom two: s0 (-0.02), s1 (0.0)
  const ReturnSeries series = simulate_long_short(rows, 0.1);
  REQUIRE(series.returns.size() == 1);
  CHECK(series.returns[0] == doctest::Approx(0.08 - (-0.01)).epsilon(1e-12));
}

TEST_CASE("prediction ties break by stock id") {
  std::vector<TradeRow> rows{
      {0, "b", 1.0, 0.10}, {0, "a", 1.0, 0.20}, {0, "c", 0.0, 0.0}, {0, "d", 0.0, -0.1}};
  // decile 0.25 -> one per leg; tie at pred 1.0 goes to "a"; tie at 0.0 to "c"
  const ReturnSeries series = simulate_long_short(rows, 0.25);
  REQUIRE(series.returns.size() == 1);
  CHECK(series.returns[0] == doctest::Approx(0.20 - 0.0).epsilon(1e-15));
}

TEST_CASE("days too thin for both legs are skipped with a log entry") {
  std::vector<TradeRow> rows{{0, "a", 1.0, 0.1}, {1, "a", 1.0, 0.1}, {1, "b", 0.5, 0.0},
                             {1, "c", 0.2, 0.0}, {1, "d", 0.1, 0.0}};
  const ReturnSeries series = simulate_long_short(rows, 0.5);
  CHECK(series.returns.size() == 1);
  REQUIRE(series.skipped_days.size() == 1);
  CHECK(series.skipped_days[0] == 0);
}

TEST_CASE("missing realized returns count as zero") {
  std::vector<TradeRow> rows{{0, "a", 0.9, std::numeric_limits<double>::quiet_NaN()},
                             {0, "b", 0.1, 0.04}};
  const ReturnSeries series = simulate_long_short(rows, 0.5);
  REQUIRE(series.returns.size() == 1);
  CHECK(series.returns[0] == doctest::Approx(0.0 - 0.04).epsilon(1e-15));
}

TEST_CASE("perfect foresight never loses") {
  SeededRng rng(9);
  std::vector<TradeRow> rows;
  for (int day = 0; day < 30; ++day) {
    for (int s = 0; s < 25; ++s) {
      const double r = rng.gaussian() * 0.05;
      rows.push_back({day, std::string("s") + std::to_string(s), r, r});
    }
  }
  const ReturnSeries series = simulate_long_short(rows, 0.1);
  CHECK(series.returns.size() == 30);
  for (double r : series.returns) CHECK(r >= 0.0);
}

TEST_CASE("portfolio metrics closed forms") {
  // constant series: AR exactly 36.5%, AV zero, SR missing
  ReturnSeries flat;
  flat.days = {0, 1};
  flat.returns = {0.001, 0.001};
  const PortfolioMetrics pm = portfolio_metrics(flat);
  CHECK(pm.ar == 36.5);
  CHECK(pm.av == 0.0);
  CHECK_FALSE(pm.sr.has_value());
  CHECK(pm.mdd == 0.0);

  // cumulative [0.1, -0.1, -0.05]: drawdown peaks at 0.2 exactly
  ReturnSeries dd;
  dd.days = {0, 1, 2};
  dd.returns = {0.1, -0.2, 0.05};
  const PortfolioMetrics pm2 = portfolio_metrics(dd);
  CHECK(pm2.mdd == 0.2);
  CHECK(pm2.sr.has_value());

  // oracle: enumerate every peak-trough pair
  SeededRng rng(12);
  ReturnSeries random;
  for (int i = 0; i < 50; ++i) {
    random.days.push_back(i);
    random.returns.push_back(rng.gaussian() * 0.02);
  }
  const PortfolioMetrics pm3 = portfolio_metrics(random);
  Vec cum(random.returns.size());
  double acc = 0.0;
  for (std::size_t i = 0; i < cum.size(); ++i) {
    acc += random.returns[i];
    cum[i] = acc;
  }
  double expect = 0.0;
  for (std::size_t d = 0; d < cum.size(); ++d) {
    for (std::size_t t = 0; t <= d; ++t) expect = std::max(expect, cum[t] - cum[d]);
  }
  CHECK(pm3.mdd == doctest::Approx(expect).epsilon(1e-15));
  CHECK(pm3.mdd >= 0.0);

  // strictly increasing cumulative sum has zero drawdown
  ReturnSeries up;
  for (int i = 0; i < 10; ++i) {
    up.days.push_back(i);
    up.returns.push_back(0.01);
  }
  CHECK(portfolio_metrics(up).mdd == 0.0);

  ReturnSeries tiny;
  tiny.days = {0};
  tiny.returns = {0.1};
  CHECK_THROWS_AS(static_cast<void>(portfolio_metrics(tiny)), InvalidArgumentError);
}

TEST_CASE("regime diagnostics accuracy is permutation matched") {
  SyntheticSpec spec;
  spec.n_stocks = 6;
  spec.n_days = 60;
  spec.n_features = 3;
  spec.n_regimes = 3;
  spec.regime_block = 20;
  const SyntheticData synth = generate_synthetic(spec);
  const Panel panel = build_panel(Dataset::build(synth.records, spec.horizon));
  std::unordered_map<int, int> truth;
  for (std::size_t d = 0; d < spec.n_days; ++d) {
    truth[panel.data.calendar[d]] = synth.regime_by_day[d];
  }

  std::vector<SelectionRow> exact, relabeled;
  for (std::size_t d = 0; d < spec.n_days; ++d) {
    const int regime = synth.regime_by_day[d];
    exact.push_back({static_cast<int>(d), regime});
    relabeled.push_back({static_cast<int>(d), (regime + 1) % 3});  // fixed relabeling
  }
  const auto a = regime_diagnostics(exact, truth, panel, 3, 20);
  REQUIRE(a.assignment_accuracy.has_value());
  CHECK(*a.assignment_accuracy == 1.0);
  const auto b = regime_diagnostics(relabeled, truth, panel, 3, 20);
  REQUIRE(b.assignment_accuracy.has_value());
  CHECK(*b.assignment_accuracy == 1.0);

  // no ground truth -> accuracy unavailable, fits still produced
  const auto c = regime_diagnostics(exact, {}, panel, 3, 20);
  CHECK_FALSE(c.assignment_accuracy.has_value());
  CHECK(c.period_fits.size() == 3);

  CHECK_THROWS_AS(static_cast<void>(regime_diagnostics(exact, truth, panel, 7, 20)), SizeError);
}

TEST_CASE("per-period fits recover the momentum flip") {
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

  const auto diag = regime_diagnostics({}, {}, panel, 2, 60);
  REQUIRE(diag.period_fits.size() == 2);
  REQUIRE(diag.period_fits[0].ok);
  REQUIRE(diag.period_fits[1].ok);
  CHECK(diag.period_fits[0].coef[1] > 0.5);   // slope on the lead feature
  CHECK(diag.period_fits[1].coef[1] < -0.5);  // flips sign in the second period
}
