#pragma once

#include <string>
#include <vector>

#include "tra/dataprep.hpp"
#include "tra/trainer.hpp"

namespace tra {

// Full experiment configuration: plain-text key-value file with nested
// sections. Unknown sections or keys are rejected; every value has a
// default, so a minimal file may name nothing but the data path.
struct RunConfig {
  // [data]
  std::string csv;      // dataset path (written by `synth`, read by the rest)
  std::string sidecar;  // optional regime ground truth for diagnostics
  int horizon = 5;
  std::size_t window_len = 10;

  // [synthetic]
  SyntheticSpec synth;  // horizon mirrors [data] horizon

  // [split] — explicit date ranges, or fractional defaults over the calendar
  bool explicit_ranges = false;
  DateRange train_range, valid_range, test_range;
  double train_frac = 0.40;
  double valid_frac = 0.27;
  int gap_days = 0;  // 0 -> window_len + horizon

  // [backbone] [router] [memory] [train] [sinkhorn]
  TrainConfig train;
  std::size_t period_ensemble = 0;  // >= 2 switches `train` to the period-split baseline

  // [eval]
  double decile = 0.1;
  int period_len = 125;

  // [ablate]
  std::size_t ablate_seeds = 1;
  std::vector<std::size_t> k_sweep = {1, 3, 5};
  std::vector<std::string> studies = {"rq2", "rq3", "rq4"};
  std::size_t ts_periods = 0;  // >= 2 adds the period-split baseline study

  // [output]
  std::string out_dir = "runs/out";
};

RunConfig default_config();

// Parses and validates; throws ConfigError naming the offending key.
RunConfig load_config(const std::string& path);

// Deterministic resolved-config echo (same format load_config reads).
void write_config(const RunConfig& cfg, const std::string& path);
std::string render_config(const RunConfig& cfg);

}  // namespace tra
