#include "tra/cli.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <json.hpp>

#include "tra/checkpoint.hpp"
#include "tra/config.hpp"
#include "tra/dataprep.hpp"
#include "tra/errors.hpp"
#include "tra/evaluation.hpp"
#include "tra/numerics.hpp"
#include "tra/trainer.hpp"

namespace tra {

namespace {

namespace fs = std::filesystem;
using Json = nlohmann::ordered_json;

std::string format_real(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

Json finite_or_null(double v) {
  if (std::isfinite(v)) return Json(v);
  return Json(nullptr);
}

// --- shared pipeline assembly -------------------------------------------------

struct PipelineData {
  Panel panel;
  SplitWindows splits;
};

SplitSpec resolve_split_spec(const RunConfig& cfg, const Panel& panel) {
  SplitSpec spec;
  const int gap = cfg.gap_days > 0
                      ? cfg.gap_days
                      : static_cast<int>(cfg.window_len) + cfg.horizon;
  spec.gap_days = gap;
  if (cfg.explicit_ranges) {
    spec.train = cfg.train_range;
    spec.valid = cfg.valid_range;
    spec.test = cfg.test_range;
    return spec;
  }
  const auto& cal = panel.data.calendar;
  const std::size_t n = cal.size();
  const std::size_t t_len = std::max<std::size_t>(1, static_cast<std::size_t>(
                                                         cfg.train_frac * static_cast<double>(n)));
  const std::size_t v_len = std::max<std::size_t>(1, static_cast<std::size_t>(
                                                         cfg.valid_frac * static_cast<double>(n)));
  const std::size_t g = static_cast<std::size_t>(gap);
  const std::size_t v_lo = t_len + g;
  const std::size_t s_lo = v_lo + v_len + g;
  if (s_lo >= n) {
    throw ConfigError("calendar too short for the fractional split: need more than " +
                      std::to_string(s_lo) + " trading days, have " + std::to_string(n));
  }
  spec.train = {cal.front(), cal[t_len - 1]};
  spec.valid = {cal[v_lo], cal[v_lo + v_len - 1]};
  spec.test = {cal[s_lo], cal.back()};
  return spec;
}

PipelineData load_pipeline(RunConfig& cfg) {
  if (cfg.csv.empty()) {
    throw ConfigError("key 'data.csv': a dataset path is required for this command");
  }
  Dataset ds = load_dataset(cfg.csv);
  if (ds.horizon != cfg.horizon) {
    throw ConfigError("key 'data.horizon': config says " + std::to_string(cfg.horizon) +
                      " but the file column is return_" + std::to_string(ds.horizon) + "d");
  }
  PipelineData out;
  out.panel = build_panel(std::move(ds));
  cfg.train.backbone.feature_dim = out.panel.data.feature_dim;
  const auto windows = build_windows(out.panel, cfg.window_len);
  out.splits = temporal_split(windows, resolve_split_spec(cfg, out.panel), out.panel,
                              cfg.window_len);
  return out;
}

std::string resolve_out_dir(const RunConfig& cfg, const std::string& cli_out) {
  if (!cli_out.empty()) return cli_out;
  if (const char* env = std::getenv("TRA_OUTPUT_DIR"); env && *env) return env;
  return cfg.out_dir;
}

// Crash-safe provenance: the resolved config (with seeds) lands on disk
// before any real work starts.
void prepare_out_dir(RunConfig& cfg, const std::string& dir) {
  fs::create_directories(dir);
  cfg.out_dir = dir;
  write_config(cfg, (fs::path(dir) / "resolved_config.ini").string());
}

// --- artifact writers ------------------------------------------------------------

void write_predictions_csv(const std::string& path, const Panel& panel,
                           std::span<const PredictionRow> rows) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write predictions '" + path + "'");
  out << "date,stock_id,prediction,chosen_predictor\n";
  for (const auto& r : rows) {
    out << format_date(panel.data.calendar[static_cast<std::size_t>(r.day)]) << ','
        << panel.data.stocks[static_cast<std::size_t>(r.stock)] << ',' << format_real(r.pred)
        << ',' << r.chosen << '\n';
  }
}

struct PredictionFileRow {
  int date = 0;
  std::string stock_id;
  double pred = 0.0;
  int chosen = -1;
};

std::vector<PredictionFileRow> read_predictions_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open predictions '" + path + "'");
  std::string line;
  if (!std::getline(in, line)) throw ParseError("empty predictions file");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != "date,stock_id,prediction,chosen_predictor") {
    throw ParseError("predictions header must be 'date,stock_id,prediction,chosen_predictor'");
  }
  std::vector<PredictionFileRow> rows;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::array<std::string, 4> cells;
    std::size_t start = 0, idx = 0;
    for (; idx < 3; ++idx) {
      const std::size_t pos = line.find(',', start);
      if (pos == std::string::npos) break;
      cells[idx] = line.substr(start, pos - start);
      start = pos + 1;
    }
    cells[3] = line.substr(start);
    if (idx != 3) {
      throw ParseError("predictions line " + std::to_string(line_no) + ": expected 4 columns");
    }
    PredictionFileRow r;
    r.date = parse_date(cells[0]);
    r.stock_id = cells[1];
    try {
      r.pred = std::stod(cells[2]);
      r.chosen = std::stoi(cells[3]);
    } catch (const std::exception&) {
      throw ParseError("predictions line " + std::to_string(line_no) + ": bad numeric value");
    }
    rows.push_back(std::move(r));
  }
  return rows;
}

void write_series_csv(const std::string& path, std::span<const int> dates,
                      std::span<const double> values) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write series '" + path + "'");
  out << "date,value\n";
  for (std::size_t i = 0; i < dates.size(); ++i) {
    out << format_date(dates[i]) << ',' << format_real(values[i]) << '\n';
  }
}

void write_json(const std::string& path, const Json& j) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write '" + path + "'");
  out << j.dump(1) << '\n';
}

Json report_json(const TrainReport& report) {
  Json j;
  Json epochs = Json::array();
  for (const auto& e : report.epochs) {
    Json je;
    je["train_loss"] = e.train_loss;
    je["reg_value"] = e.reg_value;
    je["valid_mse"] = e.valid_mse;
    je["valid_ic"] = e.valid_ic;
    je["lambda"] = e.lambda;
    je["shares"] = e.shares;
    epochs.push_back(je);
  }
  j["epochs"] = epochs;
  j["best_epoch"] = report.best_epoch;
  j["best_valid_ic"] = finite_or_null(report.best_valid_ic);
  j["sinkhorn_warnings"] = report.sinkhorn_warnings;
  return j;
}

// --- shared experiment steps ---------------------------------------------------------

std::vector<PredictionRow> tra_test_predictions(const ModelState& state, const RunConfig& cfg,
                                                const PipelineData& data) {
  ErrorMemory memory = make_memory(data.panel, state.heads.k());
  refresh_memory(state, data.panel, data.splits.train, memory);
  refresh_memory(state, data.panel, data.splits.valid, memory);
  return sequential_inference(state, data.panel, memory, data.splits.test);
}

std::vector<ScoredSample> join_with_labels(const Panel& panel,
                                           std::span<const PredictionRow> rows,
                                           std::span<const SampleWindow> windows) {
  std::vector<ScoredSample> scored;
  scored.reserve(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (!windows[i].has_label()) continue;
    scored.push_back({rows[i].day, rows[i].stock, rows[i].pred, windows[i].label});
  }
  return scored;
}

struct RunMetrics {
  double mse = std::numeric_limits<double>::quiet_NaN();
  double mae = std::numeric_limits<double>::quiet_NaN();
  double ic_mean = std::numeric_limits<double>::quiet_NaN();
  double icir = std::numeric_limits<double>::quiet_NaN();
  double max_share = std::numeric_limits<double>::quiet_NaN();
  double accuracy = std::numeric_limits<double>::quiet_NaN();
};

double accuracy_if_available(const RunConfig& cfg, const PipelineData& data,
                             std::span<const PredictionRow> rows, std::size_t k) {
  if (cfg.sidecar.empty()) return std::numeric_limits<double>::quiet_NaN();
  const auto regimes = load_sidecar(cfg.sidecar);
  std::vector<SelectionRow> selections;
  selections.reserve(rows.size());
  for (const auto& r : rows) selections.push_back({r.day, r.chosen});
  const RegimeDiagnostics diag =
      regime_diagnostics(selections, regimes, data.panel, k, cfg.period_len);
  return diag.assignment_accuracy ? *diag.assignment_accuracy
                                  : std::numeric_limits<double>::quiet_NaN();
}

// One full TRA experiment on pre-built data: train, walk the test range,
// score. Used by the ablation grid and reusable from tests.
RunMetrics run_tra_experiment(const RunConfig& cfg, const PipelineData& data) {
  const TrainResult res = run_training(cfg.train, data.panel, data.splits);
  const auto rows = tra_test_predictions(res.state, cfg, data);
  const RankingMetrics rm = ranking_metrics(join_with_labels(data.panel, rows, data.splits.test));
  RunMetrics out;
  out.mse = rm.mse;
  out.mae = rm.mae;
  out.ic_mean = rm.ic_mean;
  out.icir = rm.icir;
  if (!res.report.epochs.empty()) {
    const Vec& shares = res.report.epochs.back().shares;
    out.max_share = *std::max_element(shares.begin(), shares.end());
  }
  out.accuracy = accuracy_if_available(cfg, data, rows, cfg.train.k);
  return out;
}

// --- subcommands ----------------------------------------------------------------------

int cmd_synth(RunConfig cfg, const std::string& out_dir) {
  RunConfig echo = cfg;
  const fs::path dir(out_dir);
  echo.csv = (dir / "dataset.csv").string();
  echo.sidecar = (dir / "regimes.csv").string();
  prepare_out_dir(echo, out_dir);

  const SyntheticData synth = generate_synthetic(cfg.synth);
  const Dataset ds = Dataset::build(synth.records, cfg.horizon);
  write_dataset_csv(ds, echo.csv);
  write_sidecar_csv(synth, cfg.synth, echo.sidecar);
  std::cout << "wrote " << echo.csv << " (" << ds.records.size() << " rows, "
            << ds.n_stocks() << " stocks, " << ds.n_days() << " days)\n";
  return 0;
}

// Diagnostic dump of one batch-level transport plan under the given state:
// stock, date, loss and plan mass per predictor.
void dump_plan_csv(const std::string& path, const RunConfig& cfg, const PipelineData& data,
                   const ModelState& state) {
  std::vector<SampleWindow> batch;
  for (const auto& w : data.splits.train) {
    if (!w.has_label()) continue;
    batch.push_back(w);
    if (batch.size() == cfg.train.batch_size) break;
  }
  if (batch.size() < cfg.train.k) throw InvalidArgumentError("not enough samples for a plan dump");
  ErrorMemory memory = make_memory(data.panel, cfg.train.k);
  refresh_memory(state, data.panel, batch, memory);
  const SeededRng rng(cfg.train.seed);
  Matrix heads_out(batch.size(), cfg.train.k);
  Vec labels(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const RoutedPrediction out =
        tra_forward(state, data.panel, batch[i], memory, rng, RouteMode::Infer);
    std::copy(out.y_all.begin(), out.y_all.end(), heads_out.row(i).begin());
    labels[i] = batch[i].label;
  }
  const Matrix loss = build_loss_matrix(heads_out, labels);
  SinkhornConfig sk;
  sk.epsilon = std::max(cfg.train.sinkhorn_epsilon_scale * mean(loss.flat()), 1e-12);
  sk.max_iters = cfg.train.sinkhorn_max_iters;
  sk.tol = cfg.train.sinkhorn_tol;
  const TransportPlan plan = sinkhorn_plan(loss, Vec(cfg.train.k, 1.0 / cfg.train.k), sk);

  std::ofstream out(path);
  if (!out) throw IoError("cannot write plan dump '" + path + "'");
  out << "stock_id,date";
  for (std::size_t k = 1; k <= cfg.train.k; ++k) out << ",loss" << k;
  for (std::size_t k = 1; k <= cfg.train.k; ++k) out << ",p" << k;
  out << "\n";
  for (std::size_t i = 0; i < batch.size(); ++i) {
    out << data.panel.data.stocks[static_cast<std::size_t>(batch[i].stock)] << ','
        << format_date(data.panel.data.calendar[static_cast<std::size_t>(batch[i].day)]);
    for (std::size_t k = 0; k < cfg.train.k; ++k) out << ',' << format_real(loss(i, k));
    for (std::size_t k = 0; k < cfg.train.k; ++k) out << ',' << format_real(plan.p(i, k));
    out << '\n';
  }
}

int cmd_train(RunConfig cfg, const std::string& out_dir, const std::string& resume_path,
              const std::string& dump_plan_path) {
  prepare_out_dir(cfg, out_dir);
  PipelineData data = load_pipeline(cfg);
  const fs::path dir(out_dir);

  if (cfg.period_ensemble >= 2) {
    const auto rows = train_period_ensemble(cfg.train, data.panel, data.splits,
                                            cfg.period_ensemble);
    write_predictions_csv((dir / "ensemble_predictions.csv").string(), data.panel, rows);
    Json j;
    j["mode"] = "period-ensemble";
    j["n_periods"] = cfg.period_ensemble;
    j["n_test_predictions"] = rows.size();
    write_json((dir / "train_report.json").string(), j);
    std::cout << "wrote " << (dir / "ensemble_predictions.csv").string() << "\n";
    return 0;
  }

  ResumePoint resume;
  const ResumePoint* resume_ptr = nullptr;
  if (!resume_path.empty()) {
    Checkpoint ck = load_checkpoint(resume_path);
    resume = std::move(ck.point);
    resume_ptr = &resume;
  }
  const std::string ck_path = (dir / "checkpoint.json").string();
  const TrainResult res = run_training(
      cfg.train, data.panel, data.splits, resume_ptr,
      [&](const ResumePoint& rp) { save_checkpoint(ck_path, cfg.train, cfg.horizon, rp); });
  save_checkpoint(ck_path, cfg.train, cfg.horizon, res.last);
  write_json((dir / "train_report.json").string(), report_json(res.report));
  if (!dump_plan_path.empty()) {
    dump_plan_csv(dump_plan_path, cfg, data, res.state);
  }
  std::cout << "best epoch " << res.report.best_epoch << ", valid IC "
            << format_real(res.report.best_valid_ic) << "; wrote " << ck_path << "\n";
  return 0;
}

int cmd_predict(RunConfig cfg, const std::string& out_dir, const std::string& checkpoint_path) {
  prepare_out_dir(cfg, out_dir);
  PipelineData data = load_pipeline(cfg);
  const Checkpoint ck = load_checkpoint(checkpoint_path);
  const auto rows = tra_test_predictions(ck.point.best_state, cfg, data);
  const std::string path = (fs::path(out_dir) / "predictions.csv").string();
  write_predictions_csv(path, data.panel, rows);
  std::cout << "wrote " << path << " (" << rows.size() << " rows)\n";
  return 0;
}

int cmd_evaluate(RunConfig cfg, const std::string& out_dir, const std::string& predictions_path,
                 const std::string& checkpoint_path) {
  prepare_out_dir(cfg, out_dir);
  PipelineData data = load_pipeline(cfg);
  const fs::path dir(out_dir);

  // (stock, day) -> record lookup for joining against the panel
  std::unordered_map<std::int64_t, int> rec_by_key;
  rec_by_key.reserve(data.panel.data.records.size());
  for (std::size_t i = 0; i < data.panel.data.records.size(); ++i) {
    const std::int64_t key =
        (static_cast<std::int64_t>(data.panel.data.record_stock[i]) << 32) |
        static_cast<std::uint32_t>(data.panel.data.record_day[i]);
    rec_by_key.emplace(key, static_cast<int>(i));
  }

  std::vector<ScoredSample> scored;
  std::vector<SelectionRow> selections;
  std::size_t k_guess = 1;
  auto ingest = [&](int day_idx, int stock_idx, double pred, int chosen) {
    const std::int64_t key = (static_cast<std::int64_t>(stock_idx) << 32) |
                             static_cast<std::uint32_t>(day_idx);
    const auto it = rec_by_key.find(key);
    if (it == rec_by_key.end()) return;
    selections.push_back({day_idx, chosen});
    if (chosen >= 0) k_guess = std::max(k_guess, static_cast<std::size_t>(chosen) + 1);
    const double label = data.panel.labels[static_cast<std::size_t>(it->second)];
    if (std::isnan(label)) return;
    scored.push_back({day_idx, stock_idx, pred, label});
  };

  if (!predictions_path.empty()) {
    for (const auto& r : read_predictions_csv(predictions_path)) {
      const auto day_it = data.panel.data.date_index.find(r.date);
      const auto stock_it = data.panel.data.stock_index.find(r.stock_id);
      if (day_it == data.panel.data.date_index.end() ||
          stock_it == data.panel.data.stock_index.end()) {
        throw DataError("prediction row references unknown (stock, date): " + r.stock_id + " " +
                        format_date(r.date));
      }
      ingest(day_it->second, stock_it->second, r.pred, r.chosen);
    }
  } else {
    const Checkpoint ck = load_checkpoint(checkpoint_path);
    const auto rows = tra_test_predictions(ck.point.best_state, cfg, data);
    write_predictions_csv((dir / "predictions.csv").string(), data.panel, rows);
    k_guess = ck.config.k;
    for (const auto& r : rows) ingest(r.day, r.stock, r.pred, r.chosen);
  }

  const RankingMetrics rm = ranking_metrics(scored);
  Json j;
  j["mse"] = finite_or_null(rm.mse);
  j["mae"] = finite_or_null(rm.mae);
  j["ic_mean"] = finite_or_null(rm.ic_mean);
  j["icir"] = finite_or_null(rm.icir);
  j["n_samples"] = scored.size();
  j["n_days"] = rm.daily_ic.size();
  j["excluded_days"] = rm.excluded_days;

  if (!cfg.sidecar.empty()) {
    const auto regimes = load_sidecar(cfg.sidecar);
    const RegimeDiagnostics diag =
        regime_diagnostics(selections, regimes, data.panel, k_guess, cfg.period_len);
    j["assignment_accuracy"] =
        diag.assignment_accuracy ? Json(*diag.assignment_accuracy) : Json(nullptr);
    Json fits = Json::array();
    for (const auto& f : diag.period_fits) {
      if (!f.ok) continue;
      Json jf;
      jf["first_date"] = format_date(data.panel.data.calendar[static_cast<std::size_t>(f.first_day)]);
      jf["last_date"] = format_date(data.panel.data.calendar[static_cast<std::size_t>(f.last_day)]);
      jf["intercept"] = f.coef[0];
      jf["coef"] = Vec(f.coef.begin() + 1, f.coef.end());
      fits.push_back(jf);
    }
    j["period_coefficients"] = fits;
  }
  write_json((dir / "metrics.json").string(), j);

  std::vector<int> dates;
  Vec ics;
  for (const auto& [day, ic] : rm.daily_ic) {
    dates.push_back(data.panel.data.calendar[static_cast<std::size_t>(day)]);
    ics.push_back(ic);
  }
  write_series_csv((dir / "ic_daily.csv").string(), dates, ics);
  std::cout << "ic_mean " << format_real(rm.ic_mean) << ", mse " << format_real(rm.mse)
            << "; wrote " << (dir / "metrics.json").string() << "\n";
  return 0;
}

int cmd_backtest(RunConfig cfg, const std::string& out_dir, const std::string& predictions_path) {
  prepare_out_dir(cfg, out_dir);
  PipelineData data = load_pipeline(cfg);
  const fs::path dir(out_dir);

  std::unordered_map<std::int64_t, double> returns_by_key;
  for (std::size_t i = 0; i < data.panel.data.records.size(); ++i) {
    const std::int64_t key =
        (static_cast<std::int64_t>(data.panel.data.record_stock[i]) << 32) |
        static_cast<std::uint32_t>(data.panel.data.record_day[i]);
    returns_by_key.emplace(key, data.panel.data.records[i].raw_return);
  }

  std::vector<TradeRow> trades;
  for (const auto& r : read_predictions_csv(predictions_path)) {
    const auto day_it = data.panel.data.date_index.find(r.date);
    const auto stock_it = data.panel.data.stock_index.find(r.stock_id);
    if (day_it == data.panel.data.date_index.end() ||
        stock_it == data.panel.data.stock_index.end()) {
      throw DataError("prediction row references unknown (stock, date): " + r.stock_id + " " +
                      format_date(r.date));
    }
    const std::int64_t key = (static_cast<std::int64_t>(stock_it->second) << 32) |
                             static_cast<std::uint32_t>(day_it->second);
    const auto rit = returns_by_key.find(key);
    const double realized =
        rit == returns_by_key.end() ? std::numeric_limits<double>::quiet_NaN() : rit->second;
    trades.push_back({r.date, r.stock_id, r.pred, realized});
  }

  const ReturnSeries series = simulate_long_short(std::move(trades), cfg.decile);
  write_series_csv((dir / "returns.csv").string(), series.days, series.returns);
  const PortfolioMetrics pm = portfolio_metrics(series);
  Json j;
  j["ar"] = pm.ar;
  j["av"] = pm.av;
  j["sr"] = pm.sr ? Json(*pm.sr) : Json(nullptr);
  j["mdd"] = pm.mdd;
  j["n_days"] = series.returns.size();
  Json skipped = Json::array();
  for (int d : series.skipped_days) skipped.push_back(format_date(d));
  j["skipped_days"] = skipped;
  write_json((dir / "portfolio.json").string(), j);
  std::cout << "ar " << format_real(pm.ar) << "%, sr "
            << (pm.sr ? format_real(*pm.sr) : std::string("missing")) << "; wrote "
            << (dir / "portfolio.json").string() << "\n";
  return 0;
}

struct AblationRow {
  std::string study, variant;
  std::size_t seed_index = 0;
  RunMetrics metrics;
};

int cmd_ablate(RunConfig cfg, const std::string& out_dir) {
  prepare_out_dir(cfg, out_dir);
  PipelineData data = load_pipeline(cfg);
  const fs::path dir(out_dir);

  const SeededRng seed_root(cfg.train.seed);
  std::vector<std::uint64_t> seeds;
  for (std::size_t i = 0; i < cfg.ablate_seeds; ++i) {
    seeds.push_back(seed_root.derive("ablate-seed", i).seed());
  }

  std::vector<AblationRow> rows;
  auto run_variant = [&](const std::string& study, const std::string& variant,
                         std::size_t seed_index, RunConfig variant_cfg) {
    variant_cfg.train.seed = seeds[seed_index];
    const fs::path run_dir = dir / "runs" / (study + "_" + variant + "_s" +
                                             std::to_string(seed_index));
    fs::create_directories(run_dir);
    RunConfig echo = variant_cfg;
    echo.out_dir = run_dir.string();
    write_config(echo, (run_dir / "resolved_config.ini").string());
    AblationRow row;
    row.study = study;
    row.variant = variant;
    row.seed_index = seed_index;
    row.metrics = run_tra_experiment(variant_cfg, data);
    rows.push_back(std::move(row));
  };

  for (const auto& study : cfg.studies) {
    if (study == "rq2") {
      for (const auto mode : {RouterInputMode::Random, RouterInputMode::LR, RouterInputMode::TPE,
                              RouterInputMode::LRTPE}) {
        for (std::size_t s = 0; s < seeds.size(); ++s) {
          RunConfig c = cfg;
          c.train.input_mode = mode;
          run_variant(study, to_string(mode), s, std::move(c));
        }
      }
    } else if (study == "rq3") {
      const double lambda_on = cfg.train.lambda > 0.0 ? cfg.train.lambda : 2.0;
      for (std::size_t s = 0; s < seeds.size(); ++s) {
        RunConfig c = cfg;
        c.train.lambda = lambda_on;
        run_variant(study, "ot", s, std::move(c));
      }
      for (std::size_t s = 0; s < seeds.size(); ++s) {
        RunConfig c = cfg;
        c.train.lambda = 0.0;
        run_variant(study, "no-ot", s, std::move(c));
      }
    } else if (study == "rq4") {
      for (const std::size_t k : cfg.k_sweep) {
        for (std::size_t s = 0; s < seeds.size(); ++s) {
          RunConfig c = cfg;
          c.train.k = k;
          run_variant(study, "K" + std::to_string(k), s, std::move(c));
        }
      }
    } else if (study == "ts") {
      if (cfg.ts_periods < 2) {
        throw ConfigError("key 'ablate.ts_periods': the ts study needs >= 2 periods");
      }
      for (std::size_t s = 0; s < seeds.size(); ++s) {
        RunConfig c = cfg;
        run_variant(study, "tra", s, std::move(c));
      }
      for (std::size_t s = 0; s < seeds.size(); ++s) {
        RunConfig c = cfg;
        c.train.seed = seeds[s];
        const auto preds = train_period_ensemble(c.train, data.panel, data.splits,
                                                 cfg.ts_periods);
        const RankingMetrics rm =
            ranking_metrics(join_with_labels(data.panel, preds, data.splits.test));
        AblationRow row;
        row.study = study;
        row.variant = "ts" + std::to_string(cfg.ts_periods);
        row.seed_index = s;
        row.metrics.mse = rm.mse;
        row.metrics.mae = rm.mae;
        row.metrics.ic_mean = rm.ic_mean;
        row.metrics.icir = rm.icir;
        rows.push_back(std::move(row));
      }
    }
  }

  std::sort(rows.begin(), rows.end(), [](const AblationRow& a, const AblationRow& b) {
    if (a.study != b.study) return a.study < b.study;
    if (a.variant != b.variant) return a.variant < b.variant;
    return a.seed_index < b.seed_index;
  });

  const std::string table_path = (dir / "ablation.csv").string();
  std::ofstream out(table_path);
  if (!out) throw IoError("cannot write '" + table_path + "'");
  out << "study,variant,seed,mse,mae,ic_mean,icir,max_share,accuracy\n";
  for (const auto& r : rows) {
    out << r.study << ',' << r.variant << ',' << r.seed_index << ','
        << format_real(r.metrics.mse) << ',' << format_real(r.metrics.mae) << ','
        << format_real(r.metrics.ic_mean) << ',' << format_real(r.metrics.icir) << ','
        << format_real(r.metrics.max_share) << ',' << format_real(r.metrics.accuracy) << '\n';
  }
  std::cout << "wrote " << table_path << " (" << rows.size() << " rows)\n";
  return 0;
}

}  // namespace

int run_command(const std::vector<std::string>& args) {
  std::vector<std::string> argv_storage;
  argv_storage.reserve(args.size() + 1);
  argv_storage.push_back("tra");
  argv_storage.insert(argv_storage.end(), args.begin(), args.end());
  std::vector<char*> argv;
  argv.reserve(argv_storage.size());
  for (auto& s : argv_storage) argv.push_back(s.data());
  return run_command(static_cast<int>(argv.size()), argv.data());
}

int run_command(int argc, char** argv) {
  CLI::App app{"Temporal routing adaptor: multi-pattern stock prediction experiments"};
  app.require_subcommand(1);

  std::string config_path, out_override, checkpoint_path, predictions_path, resume_path;
  std::string dump_plan_path;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "experiment config file")->required();
    sub->add_option("--out", out_override, "output directory override");
  };

  auto* synth = app.add_subcommand("synth", "generate a synthetic regime-switching dataset");
  add_common(synth);
  auto* train = app.add_subcommand("train", "train on the configured dataset");
  add_common(train);
  train->add_option("--resume", resume_path, "checkpoint to resume from");
  train->add_option("--dump-plan", dump_plan_path,
                    "write one batch transport plan to this csv (diagnostics)");
  auto* predict = app.add_subcommand("predict", "sequential test-range inference");
  add_common(predict);
  predict->add_option("--checkpoint", checkpoint_path, "trained checkpoint")->required();
  auto* evaluate = app.add_subcommand("evaluate", "ranking metrics for predictions");
  add_common(evaluate);
  evaluate->add_option("--predictions", predictions_path, "predictions csv");
  evaluate->add_option("--checkpoint", checkpoint_path, "checkpoint (predict first)");
  auto* backtest = app.add_subcommand("backtest", "long-short portfolio simulation");
  add_common(backtest);
  backtest->add_option("--predictions", predictions_path, "predictions csv")->required();
  auto* ablate = app.add_subcommand("ablate", "router-input / OT / K ablation grid");
  add_common(ablate);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: usage: " << e.what() << "\n" << app.help() << std::flush;
    return 2;
  }

  try {
    RunConfig cfg = load_config(config_path);
    const std::string out_dir = resolve_out_dir(cfg, out_override);
    if (synth->parsed()) return cmd_synth(std::move(cfg), out_dir);
    if (train->parsed()) {
      return cmd_train(std::move(cfg), out_dir, resume_path, dump_plan_path);
    }
    if (predict->parsed()) return cmd_predict(std::move(cfg), out_dir, checkpoint_path);
    if (evaluate->parsed()) {
      if (predictions_path.empty() && checkpoint_path.empty()) {
        throw ConfigError("evaluate needs --predictions or --checkpoint");
      }
      return cmd_evaluate(std::move(cfg), out_dir, predictions_path, checkpoint_path);
    }
    if (backtest->parsed()) return cmd_backtest(std::move(cfg), out_dir, predictions_path);
    if (ablate->parsed()) return cmd_ablate(std::move(cfg), out_dir);
    std::cerr << "error: usage: no subcommand\n" << app.help() << std::flush;
    return 2;
  } catch (const Error& e) {
    std::cerr << "error: " << e.category() << ": " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: internal: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace tra
