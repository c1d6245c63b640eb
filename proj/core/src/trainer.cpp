#include "tra/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "tra/errors.hpp"
#include "tra/evaluation.hpp"
#include "tra/numerics.hpp"

namespace tra {

namespace {

constexpr double kLogGuard = 1e-12;

// Per-head squared errors for one sample under the current parameters.
Vec head_losses(const BackboneParams& backbone, const PredictorHeads& heads, const Panel& panel,
                const SampleWindow& w, Matrix& scratch) {
  materialize_window_into(panel, w, scratch);
  const Vec h = backbone_forward(backbone, scratch);
  Vec y = head_predict(heads, h);
  for (double& v : y) {
    const double d = v - w.label;
    v = d * d;
  }
  return y;
}

void optimizer_update(Vec& params, const Vec& grads, AdamState& opt, const TrainConfig& cfg) {
  if (cfg.optimizer == OptimizerKind::PlainGradient) {
    for (std::size_t i = 0; i < params.size(); ++i) params[i] -= cfg.learning_rate * grads[i];
    return;
  }
  constexpr double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  ++opt.t;
  const double c1 = 1.0 - std::pow(beta1, static_cast<double>(opt.t));
  const double c2 = 1.0 - std::pow(beta2, static_cast<double>(opt.t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    opt.m[i] = beta1 * opt.m[i] + (1.0 - beta1) * grads[i];
    opt.v[i] = beta2 * opt.v[i] + (1.0 - beta2) * grads[i] * grads[i];
    const double mhat = opt.m[i] / c1;
    const double vhat = opt.v[i] / c2;
    params[i] -= cfg.learning_rate * mhat / (std::sqrt(vhat) + eps);
  }
}

std::vector<std::size_t> shuffled_indices(std::size_t n, SeededRng rng) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  for (std::size_t i = n; i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng.next_u64() % i);
    std::swap(idx[i - 1], idx[j]);
  }
  return idx;
}

std::vector<SampleWindow> labeled_only(std::span<const SampleWindow> windows) {
  std::vector<SampleWindow> out;
  out.reserve(windows.size());
  for (const auto& w : windows) {
    if (w.has_label()) out.push_back(w);
  }
  return out;
}

struct ValidScore {
  double mse = 0.0;
  double ic = 0.0;
};

// No-lookahead validation: sequential inference over a scratch copy of the
// memory, scored on labeled samples.
ValidScore score_validation(const ModelState& state, const Panel& panel,
                            std::span<const SampleWindow> valid, const ErrorMemory& memory) {
  ErrorMemory scratch = memory;
  std::vector<PredictionRow> rows = sequential_inference(state, panel, scratch, valid);
  std::vector<ScoredSample> scored;
  scored.reserve(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (!valid[i].has_label()) continue;
    scored.push_back({rows[i].day, rows[i].stock, rows[i].pred, valid[i].label});
  }
  const RankingMetrics m = ranking_metrics(std::move(scored));
  return {m.mse, m.ic_mean};
}

}  // namespace

OptimizerKind optimizer_kind_from_string(const std::string& s) {
  if (s == "plain-gradient") return OptimizerKind::PlainGradient;
  if (s == "adaptive-moments") return OptimizerKind::AdaptiveMoments;
  throw ConfigError("unknown optimizer '" + s + "' (plain-gradient | adaptive-moments)");
}

std::string to_string(OptimizerKind k) {
  return k == OptimizerKind::PlainGradient ? "plain-gradient" : "adaptive-moments";
}

void TrainConfig::validate(int label_horizon) const {
  backbone.validate();
  if (k == 0) throw ConfigError("predictor count K must be >= 1 (key train.predictors)");
  if (lambda < 0.0) throw ConfigError("lambda must be >= 0 (key train.lambda)");
  if (!(rho > 0.0 && rho <= 1.0)) throw ConfigError("rho must be in (0,1] (key train.rho)");
  if (epochs == 0) throw ConfigError("epochs must be >= 1 (key train.epochs)");
  if (warmup_epochs >= epochs) {
    throw ConfigError("warmup_epochs must be below epochs (key train.warmup_epochs)");
  }
  if (batch_size == 0) throw ConfigError("batch_size must be >= 1 (key train.batch_size)");
  if (lambda > 0.0 && batch_size < k) {
    throw ConfigError("batch_size must be >= K when lambda > 0 (key train.batch_size)");
  }
  if (!(learning_rate > 0.0)) {
    throw ConfigError("learning_rate must be > 0 (key train.learning_rate)");
  }
  if (!(tau > 0.0)) throw ConfigError("tau must be > 0 (key router.tau)");
  if (gap <= label_horizon) {
    throw ConfigError("memory gap must exceed the label horizon to avoid lookahead: gap=" +
                      std::to_string(gap) + ", horizon=" + std::to_string(label_horizon) +
                      " (key memory.gap)");
  }
  if (lookback < gap) throw ConfigError("memory lookback T must be >= gap (key memory.lookback)");
  if (!(sinkhorn_epsilon_scale > 0.0)) {
    throw ConfigError("sinkhorn epsilon scale must be > 0 (key sinkhorn.epsilon_scale)");
  }
  if (!(sinkhorn_tol > 0.0)) throw ConfigError("sinkhorn tol must be > 0 (key sinkhorn.tol)");
  if (sinkhorn_max_iters == 0) {
    throw ConfigError("sinkhorn max_iters must be >= 1 (key sinkhorn.max_iters)");
  }
}

RouterParams TrainConfig::router_shape() const {
  RouterParams shape;
  shape.input_mode = input_mode;
  shape.summarizer = summarizer;
  shape.k = k;
  shape.latent_dim = backbone.latent_dim;
  shape.state_dim = state_dim;
  shape.tau = tau;
  shape.ema_decay = ema_decay;
  shape.lookback = lookback;
  shape.gap = gap;
  shape.soft_inference = soft_inference;
  return shape;
}

double lambda_after(double lambda0, double rho, std::uint64_t batches) {
  return lambda0 * std::pow(rho, static_cast<double>(batches));
}

ModelState init_model(const TrainConfig& cfg, int label_horizon) {
  cfg.validate(label_horizon);
  const SeededRng master(cfg.seed);
  ModelState state;
  SeededRng backbone_rng = master.derive("init-backbone");
  state.backbone = init_backbone(cfg.backbone, backbone_rng);
  SeededRng heads_rng = master.derive("init-heads");
  state.heads = init_heads(cfg.k, cfg.backbone.latent_dim, heads_rng);
  SeededRng router_rng = master.derive("init-router");
  state.router = init_router(cfg.router_shape(), router_rng);
  state.opt.m.assign(state.param_count(), 0.0);
  state.opt.v.assign(state.param_count(), 0.0);
  state.opt.t = 0;
  return state;
}

ErrorMemory make_memory(const Panel& panel, std::size_t k) {
  return ErrorMemory(panel.data.n_stocks(), k, 0.0);
}

void refresh_memory(const ModelState& state, const Panel& panel,
                    std::span<const SampleWindow> samples, ErrorMemory& memory) {
  Matrix scratch(state.backbone.config.window_len, state.backbone.config.feature_dim);
  for (const auto& w : samples) {
    if (!w.has_label()) continue;
    const Vec losses = head_losses(state.backbone, state.heads, panel, w, scratch);
    memory.write(w.stock, w.day, losses);
  }
}

double batch_loss_with_fixed_plan(const ModelState& state, const Panel& panel,
                                  std::span<const SampleWindow> batch, const ErrorMemory& memory,
                                  const Matrix& plan, double lambda, const SeededRng& rng,
                                  ModelGrads* grads) {
  const std::size_t n = batch.size();
  if (n == 0) throw InvalidArgumentError("empty batch");
  const std::size_t k = state.heads.k();
  if (plan.rows() != n || plan.cols() != k) {
    throw InvalidArgumentError("transport plan shape does not match the batch");
  }

  const double inv_n = 1.0 / static_cast<double>(n);
  double base = 0.0;
  double reg = 0.0;
  TraForwardCache cache;
  Vec dq(k), dy(k), grad_h;
  for (std::size_t i = 0; i < n; ++i) {
    const SampleWindow& w = batch[i];
    if (!w.has_label()) throw InvalidArgumentError("training batch contains unlabeled sample");
    const RoutedPrediction out =
        tra_forward(state, panel, w, memory, rng, RouteMode::Train, &cache);
    const double err = out.p_hat - w.label;
    base += err * err * inv_n;
    double ce = 0.0;
    for (std::size_t c = 0; c < k; ++c) {
      ce -= plan(i, c) * std::log(out.q[c] + kLogGuard);
    }
    reg += ce * inv_n;

    if (!grads) continue;
    const double dp = 2.0 * err * inv_n;
    for (std::size_t c = 0; c < k; ++c) {
      dq[c] = dp * out.y_all[c] - lambda * inv_n * plan(i, c) / (out.q[c] + kLogGuard);
      dy[c] = dp * out.q[c];
    }
    grad_h.assign(state.backbone.config.latent_dim, 0.0);
    route_backward(state.router, cache.err_window, cache.route, dq, grads->router, grad_h);
    add_outer(grads->heads.w, dy, cache.h);
    axpy(1.0, dy, grads->heads.b);
    axpy(1.0, matvec_transposed(state.heads.w, dy), grad_h);
    backbone_backward(state.backbone, cache.window, cache.backbone, grad_h, grads->backbone);
  }
  return base + lambda * reg;
}

StepResult train_step(ModelState& state, const Panel& panel,
                      std::span<const SampleWindow> batch, ErrorMemory& memory, double lambda,
                      const SeededRng& rng, const TrainConfig& cfg) {
  const std::size_t n = batch.size();
  if (n == 0) throw InvalidArgumentError("empty batch");
  if (lambda < 0.0) throw InvalidArgumentError("lambda must be >= 0");
  const std::size_t k = state.heads.k();

  // soft forward pass, collecting what the plan and the gradients need
  Matrix heads_out(n, k);
  Vec labels(n);
  std::vector<TraForwardCache> caches(n);
  std::vector<RoutedPrediction> outs(n);
  StepResult res;
  res.chosen_counts.assign(k, 0);
  for (std::size_t i = 0; i < n; ++i) {
    const SampleWindow& w = batch[i];
    if (!w.has_label()) throw InvalidArgumentError("training batch contains unlabeled sample");
    outs[i] = tra_forward(state, panel, w, memory, rng, RouteMode::Train, &caches[i]);
    std::copy(outs[i].y_all.begin(), outs[i].y_all.end(), heads_out.row(i).begin());
    labels[i] = w.label;
    ++res.chosen_counts[static_cast<std::size_t>(outs[i].chosen)];
  }

  // per-batch transport plan, a constant target for the cross-entropy term
  const Matrix loss_matrix = build_loss_matrix(heads_out, labels);
  const Vec shares(k, 1.0 / static_cast<double>(k));
  SinkhornConfig sk;
  sk.epsilon = std::max(cfg.sinkhorn_epsilon_scale * mean(loss_matrix.flat()), 1e-12);
  sk.max_iters = cfg.sinkhorn_max_iters;
  sk.tol = cfg.sinkhorn_tol;
  const TransportPlan plan = sinkhorn_plan(loss_matrix, shares, sk);
  res.sinkhorn_warning = plan.warning;

  // loss and gradients from the cached forward intermediates
  const double inv_n = 1.0 / static_cast<double>(n);
  ModelGrads grads = zero_grads(state);
  Vec dq(k), dy(k), grad_h;
  for (std::size_t i = 0; i < n; ++i) {
    const double err = outs[i].p_hat - labels[i];
    res.base_loss += err * err * inv_n;
    double ce = 0.0;
    for (std::size_t c = 0; c < k; ++c) ce -= plan.p(i, c) * std::log(outs[i].q[c] + kLogGuard);
    res.reg_value += ce * inv_n;

    const double dp = 2.0 * err * inv_n;
    for (std::size_t c = 0; c < k; ++c) {
      dq[c] = dp * outs[i].y_all[c] - lambda * inv_n * plan.p(i, c) / (outs[i].q[c] + kLogGuard);
      dy[c] = dp * outs[i].q[c];
    }
    grad_h.assign(state.backbone.config.latent_dim, 0.0);
    route_backward(state.router, caches[i].err_window, caches[i].route, dq, grads.router, grad_h);
    add_outer(grads.heads.w, dy, caches[i].h);
    axpy(1.0, dy, grads.heads.b);
    axpy(1.0, matvec_transposed(state.heads.w, dy), grad_h);
    backbone_backward(state.backbone, caches[i].window, caches[i].backbone, grad_h,
                      grads.backbone);
  }
  res.total_loss = res.base_loss + lambda * res.reg_value;
  if (!std::isfinite(res.total_loss)) {
    throw NumericError("non-finite training loss");
  }

  Vec flat = state.flatten();
  optimizer_update(flat, grads.flatten(), state.opt, cfg);
  state.unflatten(flat);

  // Algorithm line order: memory rows for this batch reflect the updated
  // parameters.
  Matrix scratch(state.backbone.config.window_len, state.backbone.config.feature_dim);
  for (const auto& w : batch) {
    const Vec losses = head_losses(state.backbone, state.heads, panel, w, scratch);
    memory.write(w.stock, w.day, losses);
  }
  return res;
}

StepResult warmup_step(ModelState& state, const Panel& panel,
                       std::span<const SampleWindow> batch, ErrorMemory& memory,
                       const TrainConfig& cfg, std::span<const int> head_of_day,
                       bool by_period) {
  const std::size_t n = batch.size();
  if (n == 0) throw InvalidArgumentError("empty batch");
  const std::size_t k = state.heads.k();
  const double inv_n = 1.0 / static_cast<double>(n);
  const double inv_k = 1.0 / static_cast<double>(k);

  ModelGrads grads = zero_grads(state);
  StepResult res;
  res.chosen_counts.assign(k, 0);
  Matrix scratch(state.backbone.config.window_len, state.backbone.config.feature_dim);
  BackboneCache cache;
  Vec dy(k);
  for (const auto& w : batch) {
    if (!w.has_label()) throw InvalidArgumentError("training batch contains unlabeled sample");
    materialize_window_into(panel, w, scratch);
    const Vec h = backbone_forward(state.backbone, scratch, &cache);
    const Vec y = head_predict(state.heads, h);
    double dp;
    if (by_period) {
      const int head = head_of_day[static_cast<std::size_t>(w.day)];
      if (head < 0 || static_cast<std::size_t>(head) >= k) {
        throw InvalidArgumentError("warmup sample day has no period assignment");
      }
      ++res.chosen_counts[static_cast<std::size_t>(head)];
      const double err = y[static_cast<std::size_t>(head)] - w.label;
      res.base_loss += err * err * inv_n;
      dp = 2.0 * err * inv_n;
      std::fill(dy.begin(), dy.end(), 0.0);
      dy[static_cast<std::size_t>(head)] = dp;
    } else {
      // neutral backbone bootstrap: the head mean carries the objective, so
      // every head receives the same gradient and initial diversity survives
      ++res.chosen_counts[0];
      const double err = mean(y) - w.label;
      res.base_loss += err * err * inv_n;
      dp = 2.0 * err * inv_n;
      std::fill(dy.begin(), dy.end(), dp * inv_k);
    }
    add_outer(grads.heads.w, dy, h);
    axpy(1.0, dy, grads.heads.b);
    const Vec grad_h = matvec_transposed(state.heads.w, dy);
    backbone_backward(state.backbone, scratch, cache, grad_h, grads.backbone);
  }
  res.total_loss = res.base_loss;
  if (!std::isfinite(res.total_loss)) {
    throw NumericError("non-finite warmup loss");
  }

  Vec flat = state.flatten();
  optimizer_update(flat, grads.flatten(), state.opt, cfg);
  state.unflatten(flat);

  for (const auto& w : batch) {
    const Vec losses = head_losses(state.backbone, state.heads, panel, w, scratch);
    memory.write(w.stock, w.day, losses);
  }
  return res;
}

TrainResult run_training(const TrainConfig& cfg, const Panel& panel, const SplitWindows& splits,
                         const ResumePoint* resume, const EpochCallback& on_epoch) {
  cfg.validate(panel.data.horizon);
  const std::vector<SampleWindow> train = labeled_only(splits.train);
  if (train.empty()) throw InvalidArgumentError("training split is empty");
  if (splits.valid.empty()) throw InvalidArgumentError("validation split is empty");

  const SeededRng master(cfg.seed);
  ResumePoint rp;
  if (resume) {
    rp = *resume;
  } else {
    rp.state = init_model(cfg, panel.data.horizon);
    rp.best_state = rp.state;
    rp.best_valid_ic = -std::numeric_limits<double>::infinity();
  }

  ErrorMemory memory = make_memory(panel, cfg.k);

  // warmup period assignment: the train-day range cut into K contiguous
  // spans, one head per span (the period-split construction)
  std::vector<int> head_of_day(panel.data.n_days(), -1);
  {
    std::vector<int> days;
    days.reserve(train.size());
    for (const auto& w : train) days.push_back(w.day);
    std::sort(days.begin(), days.end());
    days.erase(std::unique(days.begin(), days.end()), days.end());
    for (std::size_t p = 0; p < cfg.k; ++p) {
      const std::size_t lo = p * days.size() / cfg.k;
      const std::size_t hi = (p + 1) * days.size() / cfg.k;
      for (std::size_t d = lo; d < hi; ++d) {
        head_of_day[static_cast<std::size_t>(days[d])] = static_cast<int>(p);
      }
    }
  }

  for (std::size_t epoch = rp.epochs_done; epoch < cfg.epochs; ++epoch) {
    refresh_memory(rp.state, panel, train, memory);

    const bool warming = epoch < cfg.warmup_epochs;
    const auto order = shuffled_indices(train.size(), master.derive("shuffle", epoch));
    EpochStats stats;
    stats.shares.assign(cfg.k, 0.0);
    std::size_t n_batches = 0;
    std::size_t routed = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t stop = std::min(order.size(), start + cfg.batch_size);
      std::vector<SampleWindow> batch;
      batch.reserve(stop - start);
      for (std::size_t i = start; i < stop; ++i) batch.push_back(train[order[i]]);

      StepResult step;
      if (warming) {
        step = warmup_step(rp.state, panel, batch, memory, cfg, head_of_day,
                           /*by_period=*/cfg.lambda > 0.0);
        stats.lambda = lambda_after(cfg.lambda, cfg.rho, rp.batches_done);
      } else {
        ++rp.batches_done;  // decay before the step, per the algorithm
        const double lambda = lambda_after(cfg.lambda, cfg.rho, rp.batches_done);
        const SeededRng step_rng = master.derive("step", epoch, rp.batches_done);
        step = train_step(rp.state, panel, batch, memory, lambda, step_rng, cfg);
        stats.lambda = lambda;
      }

      stats.train_loss += step.total_loss;
      stats.reg_value += step.reg_value;
      if (step.sinkhorn_warning) ++rp.report.sinkhorn_warnings;
      for (std::size_t c = 0; c < cfg.k; ++c) {
        stats.shares[c] += static_cast<double>(step.chosen_counts[c]);
      }
      routed += batch.size();
      ++n_batches;
    }
    stats.train_loss /= static_cast<double>(n_batches);
    stats.reg_value /= static_cast<double>(n_batches);
    for (double& s : stats.shares) s /= static_cast<double>(routed);

    const ValidScore vs = score_validation(rp.state, panel, splits.valid, memory);
    stats.valid_mse = vs.mse;
    stats.valid_ic = vs.ic;
    rp.report.epochs.push_back(stats);

    // model selection only considers routed epochs; warmup states have an
    // untrained router
    if (epoch >= cfg.warmup_epochs) {
      if (vs.ic > rp.best_valid_ic) {
        rp.best_valid_ic = vs.ic;
        rp.best_epoch = epoch;
        rp.best_state = rp.state;
        rp.bad_epochs = 0;
      } else {
        ++rp.bad_epochs;
      }
    } else {
      rp.best_state = rp.state;  // placeholder until the routed phase starts
    }
    rp.epochs_done = epoch + 1;
    rp.report.best_epoch = rp.best_epoch;
    rp.report.best_valid_ic = rp.best_valid_ic;
    if (on_epoch) on_epoch(rp);
    if (epoch >= cfg.warmup_epochs && rp.bad_epochs >= cfg.early_stop_patience) break;
  }

  TrainResult result;
  result.state = rp.best_state;
  result.report = rp.report;
  result.last = std::move(rp);
  return result;
}

std::vector<PredictionRow> sequential_inference(const ModelState& state, const Panel& panel,
                                                ErrorMemory& memory,
                                                std::span<const SampleWindow> test_sorted,
                                                ErrorMemory::ReadLog* read_log) {
  for (std::size_t i = 1; i < test_sorted.size(); ++i) {
    if (test_sorted[i].day < test_sorted[i - 1].day) {
      throw InvalidArgumentError("test samples must be sorted by ascending timestamp");
    }
  }
  const int horizon = panel.data.horizon;
  const SeededRng infer_rng = SeededRng(0).derive("sequential-inference");
  Matrix scratch(state.backbone.config.window_len, state.backbone.config.feature_dim);

  std::vector<PredictionRow> rows;
  rows.reserve(test_sorted.size());
  std::size_t realize_ptr = 0;
  std::size_t i = 0;
  while (i < test_sorted.size()) {
    const int day = test_sorted[i].day;
    // labels realized by now (day d matures at d + horizon) enter the memory
    while (realize_ptr < test_sorted.size() && test_sorted[realize_ptr].day + horizon <= day) {
      const SampleWindow& w = test_sorted[realize_ptr];
      if (w.has_label()) {
        const Vec losses = head_losses(state.backbone, state.heads, panel, w, scratch);
        memory.write(w.stock, w.day, losses);
      }
      ++realize_ptr;
    }
    memory.set_read_log(read_log);
    for (; i < test_sorted.size() && test_sorted[i].day == day; ++i) {
      const RoutedPrediction out =
          tra_forward(state, panel, test_sorted[i], memory, infer_rng, RouteMode::Infer);
      rows.push_back({test_sorted[i].stock, day, out.p_hat, out.chosen});
    }
    memory.set_read_log(nullptr);
  }
  return rows;
}

// --- plain backbone + single head ------------------------------------------------

namespace {

PlainModel init_plain(const TrainConfig& cfg) {
  const SeededRng master(cfg.seed);
  PlainModel m;
  SeededRng backbone_rng = master.derive("init-backbone");
  m.backbone = init_backbone(cfg.backbone, backbone_rng);
  SeededRng heads_rng = master.derive("init-heads");
  m.head = init_heads(1, cfg.backbone.latent_dim, heads_rng);
  const std::size_t n = m.backbone.param_count() + m.head.param_count();
  m.opt.m.assign(n, 0.0);
  m.opt.v.assign(n, 0.0);
  return m;
}

Vec plain_flatten(const PlainModel& m) {
  Vec out;
  m.backbone.flatten_append(out);
  m.head.flatten_append(out);
  return out;
}

void plain_unflatten(PlainModel& m, std::span<const double> flat) {
  const std::size_t off = m.backbone.unflatten(flat, 0);
  m.head.unflatten(flat, off);
}

double plain_forward_one(const PlainModel& m, const Panel& panel, const SampleWindow& w,
                         Matrix& scratch, BackboneCache* cache, Vec* h_out) {
  materialize_window_into(panel, w, scratch);
  Vec h = backbone_forward(m.backbone, scratch, cache);
  const double pred = head_predict(m.head, h)[0];
  if (h_out) *h_out = std::move(h);
  return pred;
}

}  // namespace

PlainResult train_plain(const TrainConfig& cfg, const Panel& panel, const SplitWindows& splits) {
  cfg.validate(panel.data.horizon);
  const std::vector<SampleWindow> train = labeled_only(splits.train);
  if (train.empty()) throw InvalidArgumentError("training split is empty");
  if (splits.valid.empty()) throw InvalidArgumentError("validation split is empty");

  const SeededRng master(cfg.seed);
  PlainResult out;
  out.model = init_plain(cfg);
  PlainModel best = out.model;
  double best_ic = -std::numeric_limits<double>::infinity();
  std::size_t best_epoch = 0, bad = 0;

  Matrix scratch(cfg.backbone.window_len, cfg.backbone.feature_dim);
  BackboneCache cache;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto order = shuffled_indices(train.size(), master.derive("shuffle", epoch));
    EpochStats stats;
    stats.shares.assign(1, 1.0);
    std::size_t n_batches = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t stop = std::min(order.size(), start + cfg.batch_size);
      const double inv_n = 1.0 / static_cast<double>(stop - start);
      BackboneParams bb_grads = zero_like(out.model.backbone);
      PredictorHeads head_grads = zero_like(out.model.head);
      double loss = 0.0;
      Vec h;
      for (std::size_t bi = start; bi < stop; ++bi) {
        const SampleWindow& w = train[order[bi]];
        const double pred = plain_forward_one(out.model, panel, w, scratch, &cache, &h);
        const double err = pred - w.label;
        loss += err * err * inv_n;
        const double dp = 2.0 * err * inv_n;
        const Vec dy{dp};
        add_outer(head_grads.w, dy, h);
        head_grads.b[0] += dp;
        const Vec grad_h = matvec_transposed(out.model.head.w, dy);
        backbone_backward(out.model.backbone, scratch, cache, grad_h, bb_grads);
      }
      Vec flat = plain_flatten(out.model);
      Vec grads;
      bb_grads.flatten_append(grads);
      head_grads.flatten_append(grads);
      optimizer_update(flat, grads, out.model.opt, cfg);
      plain_unflatten(out.model, flat);
      stats.train_loss += loss;
      ++n_batches;
    }
    stats.train_loss /= static_cast<double>(n_batches);

    std::vector<ScoredSample> scored;
    for (const auto& w : splits.valid) {
      if (!w.has_label()) continue;
      const double pred = plain_forward_one(out.model, panel, w, scratch, nullptr, nullptr);
      scored.push_back({w.day, w.stock, pred, w.label});
    }
    const RankingMetrics vm = ranking_metrics(std::move(scored));
    stats.valid_mse = vm.mse;
    stats.valid_ic = vm.ic_mean;
    out.report.epochs.push_back(stats);

    if (epoch >= cfg.warmup_epochs) {
      if (vm.ic_mean > best_ic) {
        best_ic = vm.ic_mean;
        best_epoch = epoch;
        best = out.model;
        bad = 0;
      } else {
        ++bad;
      }
      if (bad >= cfg.early_stop_patience) break;
    } else {
      best = out.model;
    }
  }
  out.model = best;
  out.report.best_epoch = best_epoch;
  out.report.best_valid_ic = best_ic;
  return out;
}

std::vector<PredictionRow> plain_predict(const PlainModel& model, const Panel& panel,
                                         std::span<const SampleWindow> samples) {
  Matrix scratch(model.backbone.config.window_len, model.backbone.config.feature_dim);
  std::vector<PredictionRow> rows;
  rows.reserve(samples.size());
  for (const auto& w : samples) {
    const double pred = plain_forward_one(model, panel, w, scratch, nullptr, nullptr);
    rows.push_back({w.stock, w.day, pred, -1});
  }
  return rows;
}

std::vector<PredictionRow> train_period_ensemble(const TrainConfig& cfg, const Panel& panel,
                                                 const SplitWindows& splits,
                                                 std::size_t n_periods) {
  if (n_periods == 0) throw InvalidArgumentError("n_periods must be >= 1");
  const std::vector<SampleWindow> train = labeled_only(splits.train);
  if (train.empty()) throw InvalidArgumentError("training split is empty");

  std::vector<int> days;
  days.reserve(train.size());
  for (const auto& w : train) days.push_back(w.day);
  std::sort(days.begin(), days.end());
  days.erase(std::unique(days.begin(), days.end()), days.end());
  if (days.size() < n_periods) {
    throw InvalidArgumentError("training range has fewer days than periods");
  }

  std::vector<PredictionRow> combined;
  for (std::size_t p = 0; p < n_periods; ++p) {
    const std::size_t lo = p * days.size() / n_periods;
    const std::size_t hi = (p + 1) * days.size() / n_periods;
    const int day_lo = days[lo];
    const int day_hi = days[hi - 1];
    SplitWindows member_splits;
    for (const auto& w : train) {
      if (w.day >= day_lo && w.day <= day_hi) member_splits.train.push_back(w);
    }
    if (member_splits.train.size() < cfg.batch_size) {
      throw InvalidArgumentError("period span " + std::to_string(p) +
                                 " is shorter than one batch");
    }
    member_splits.valid = splits.valid;
    const PlainResult member = train_plain(cfg, panel, member_splits);
    const auto preds = plain_predict(member.model, panel, splits.test);
    if (combined.empty()) {
      combined = preds;
    } else {
      for (std::size_t i = 0; i < preds.size(); ++i) combined[i].pred += preds[i].pred;
    }
  }
  const double inv = 1.0 / static_cast<double>(n_periods);
  for (auto& row : combined) row.pred *= inv;
  return combined;
}

}  // namespace tra
