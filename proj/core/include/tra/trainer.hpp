#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "tra/dataprep.hpp"
#include "tra/ot.hpp"
#include "tra/tra_model.hpp"

namespace tra {

enum class OptimizerKind { PlainGradient, AdaptiveMoments };

OptimizerKind optimizer_kind_from_string(const std::string& s);
std::string to_string(OptimizerKind k);

struct TrainConfig {
  std::size_t k = 3;
  double lambda = 2.0;       // initial regularization weight
  double rho = 0.999;        // per-batch decay rate, in (0,1]
  std::size_t epochs = 40;
  // First epochs train backbone + heads with the router frozen. Under the
  // transport-regularized schedule (lambda > 0) samples are assigned to
  // heads by contiguous time period, seeding the balanced assignment the
  // transport term then maintains; with lambda = 0 the warmup only
  // bootstraps the backbone through the head mean.
  std::size_t warmup_epochs = 5;
  std::size_t batch_size = 512;
  double learning_rate = 5e-3;
  OptimizerKind optimizer = OptimizerKind::AdaptiveMoments;
  std::size_t early_stop_patience = 20;
  std::uint64_t seed = 1;

  double tau = 1.0;
  int lookback = 30;  // T
  int gap = 8;        // h, must exceed the label horizon
  RouterInputMode input_mode = RouterInputMode::LRTPE;
  SummarizerKind summarizer = SummarizerKind::Rnn;
  std::size_t state_dim = 8;
  double ema_decay = 0.9;
  bool soft_inference = false;

  BackboneConfig backbone;

  double sinkhorn_epsilon_scale = 0.05;  // epsilon = scale * mean(L) per batch
  std::size_t sinkhorn_max_iters = 200;
  double sinkhorn_tol = 1e-4;

  // Throws ConfigError; label_horizon enforces the no-lookahead rule gap > horizon.
  void validate(int label_horizon) const;

  RouterParams router_shape() const;
};

// lambda after m decayed batches; the loop uses this closed form so resumed
// runs agree bit-for-bit with uninterrupted ones.
double lambda_after(double lambda0, double rho, std::uint64_t batches);

struct EpochStats {
  double train_loss = 0.0;   // mean total loss over batches
  double reg_value = 0.0;    // mean cross-entropy regularizer value
  double valid_mse = 0.0;
  double valid_ic = 0.0;
  double lambda = 0.0;       // value after the epoch's last batch
  Vec shares;                // per-predictor routed share, sums to 1
};

struct TrainReport {
  std::vector<EpochStats> epochs;
  std::size_t best_epoch = 0;
  double best_valid_ic = 0.0;
  std::size_t sinkhorn_warnings = 0;
};

ModelState init_model(const TrainConfig& cfg, int label_horizon);

ErrorMemory make_memory(const Panel& panel, std::size_t k);

// Algorithm step 1: memory row of every sample = squared errors of all K
// heads under the current parameters.
void refresh_memory(const ModelState& state, const Panel& panel,
                    std::span<const SampleWindow> samples, ErrorMemory& memory);

struct StepResult {
  double base_loss = 0.0;
  double reg_value = 0.0;
  double total_loss = 0.0;
  bool sinkhorn_warning = false;
  std::vector<std::size_t> chosen_counts;  // argmax(q) histogram over the batch
};

// One optimization step: soft forward, per-batch Sinkhorn plan (uniform
// shares, treated as a constant target), loss
//   base - lambda * mean_i sum_k P_ik log(q_ik + 1e-12),
// one optimizer update, then batch memory rows rewritten under the updated
// parameters.
StepResult train_step(ModelState& state, const Panel& panel,
                      std::span<const SampleWindow> batch, ErrorMemory& memory, double lambda,
                      const SeededRng& rng, const TrainConfig& cfg);

// Warmup optimization step, router frozen. With by_period, each sample
// trains the head of its time period (head_of_day maps calendar index ->
// head); otherwise the head mean carries the objective so the backbone
// bootstraps while head diversity is preserved.
StepResult warmup_step(ModelState& state, const Panel& panel,
                       std::span<const SampleWindow> batch, ErrorMemory& memory,
                       const TrainConfig& cfg, std::span<const int> head_of_day,
                       bool by_period);

// Loss + analytic gradients with the transport plan held fixed; exposed for
// gradient verification against finite differences.
double batch_loss_with_fixed_plan(const ModelState& state, const Panel& panel,
                                  std::span<const SampleWindow> batch, const ErrorMemory& memory,
                                  const Matrix& plan, double lambda, const SeededRng& rng,
                                  ModelGrads* grads);

struct ResumePoint {
  ModelState state;       // last state (resume continues from here)
  ModelState best_state;  // best-validation checkpoint so far
  double best_valid_ic = 0.0;
  std::size_t best_epoch = 0;
  std::size_t bad_epochs = 0;
  std::uint64_t batches_done = 0;
  std::size_t epochs_done = 0;
  TrainReport report;
};

struct TrainResult {
  ModelState state;  // best-validation checkpoint
  TrainReport report;
  ResumePoint last;  // for checkpoint/resume
};

using EpochCallback = std::function<void(const ResumePoint&)>;

// Full training loop: per epoch a whole-memory refresh, shuffled batches
// with per-batch lambda decay, and a no-lookahead sequential validation
// pass; early-stops on validation IC. Returns the best checkpoint.
TrainResult run_training(const TrainConfig& cfg, const Panel& panel, const SplitWindows& splits,
                         const ResumePoint* resume = nullptr,
                         const EpochCallback& on_epoch = {});

struct PredictionRow {
  int stock = 0;
  int day = 0;
  double pred = 0.0;
  int chosen = -1;  // -1 = no router involved
};

// Walks test days in ascending order, predicting in hard infer mode; a
// sample's realized per-head losses enter memory only once its label horizon
// has elapsed, so routing never sees post-(t-gap) information.
std::vector<PredictionRow> sequential_inference(const ModelState& state, const Panel& panel,
                                                ErrorMemory& memory,
                                                std::span<const SampleWindow> test_sorted,
                                                ErrorMemory::ReadLog* read_log = nullptr);

// --- plain backbone + single head (no router, no memory, no transport) -------

struct PlainModel {
  BackboneParams backbone;
  PredictorHeads head;  // K = 1
  AdamState opt;
};

struct PlainResult {
  PlainModel model;
  TrainReport report;
};

PlainResult train_plain(const TrainConfig& cfg, const Panel& panel, const SplitWindows& splits);

std::vector<PredictionRow> plain_predict(const PlainModel& model, const Panel& panel,
                                         std::span<const SampleWindow> samples);

// Period-split baseline: the training range is cut into n_periods contiguous
// spans, one plain model per span, test predictions averaged over members.
std::vector<PredictionRow> train_period_ensemble(const TrainConfig& cfg, const Panel& panel,
                                                 const SplitWindows& splits,
                                                 std::size_t n_periods);

}  // namespace tra
