#include "tra/tra_model.hpp"

#include <algorithm>
#include <cmath>

#include "tra/errors.hpp"
#include "tra/numerics.hpp"

namespace tra {

namespace {

Matrix glorot_matrix(std::size_t rows, std::size_t cols, SeededRng& rng) {
  const double a = std::sqrt(6.0 / static_cast<double>(rows + cols));
  Matrix m(rows, cols);
  for (double& v : m.flat()) v = (2.0 * rng.uniform() - 1.0) * a;
  return m;
}

int argmax_lowest(std::span<const double> v) {
  return static_cast<int>(std::max_element(v.begin(), v.end()) - v.begin());
}

}  // namespace

// --- heads ---------------------------------------------------------------------

void PredictorHeads::flatten_append(Vec& out) const {
  out.insert(out.end(), w.flat().begin(), w.flat().end());
  out.insert(out.end(), b.begin(), b.end());
}

std::size_t PredictorHeads::unflatten(std::span<const double> flat, std::size_t offset) {
  std::copy(flat.begin() + offset, flat.begin() + offset + w.size(), w.flat().begin());
  offset += w.size();
  std::copy(flat.begin() + offset, flat.begin() + offset + b.size(), b.begin());
  return offset + b.size();
}

PredictorHeads init_heads(std::size_t k, std::size_t latent_dim, SeededRng& rng) {
  if (k == 0) throw ConfigError("predictor count K must be >= 1");
  PredictorHeads heads;
  heads.w = glorot_matrix(k, latent_dim, rng);
  heads.b.assign(k, 0.0);
  return heads;
}

PredictorHeads zero_like(const PredictorHeads& heads) {
  PredictorHeads z;
  z.w = Matrix(heads.w.rows(), heads.w.cols());
  z.b.assign(heads.b.size(), 0.0);
  return z;
}

Vec head_predict(const PredictorHeads& heads, std::span<const double> h) {
  if (h.size() != heads.w.cols()) {
    throw InvalidArgumentError("latent vector length does not match head width");
  }
  Vec y = matvec(heads.w, h);
  axpy(1.0, heads.b, y);
  return y;
}

// --- error memory ------------------------------------------------------------------

ErrorMemory::ErrorMemory(std::size_t n_stocks, std::size_t k, double fill_value)
    : n_stocks_(n_stocks), k_(k), fill_(fill_value), fill_row_(k, fill_value) {
  if (k_ == 0) throw InvalidArgumentError("error memory needs K >= 1");
}

void ErrorMemory::check_stock(int stock) const {
  if (stock < 0 || static_cast<std::size_t>(stock) >= n_stocks_) {
    throw MissingEntityError("unknown stock id " + std::to_string(stock));
  }
}

bool ErrorMemory::has(int stock, int day) const {
  return index_.contains(key(stock, day));
}

void ErrorMemory::write(int stock, int day, std::span<const double> losses) {
  check_stock(stock);
  if (losses.size() != k_) {
    throw InvalidArgumentError("loss vector length does not equal K");
  }
  for (double l : losses) {
    if (!std::isfinite(l)) throw InvalidArgumentError("loss vector contains a non-finite entry");
  }
  auto [it, inserted] = index_.try_emplace(key(stock, day), rows_);
  if (inserted) {
    ++rows_;
    values_.resize(rows_ * k_);
  }
  std::copy(losses.begin(), losses.end(), values_.begin() + static_cast<std::ptrdiff_t>(it->second * k_));
}

std::span<const double> ErrorMemory::row(int stock, int day) const {
  check_stock(stock);
  if (read_log_) read_log_->entries.push_back({stock, day, day});
  const auto it = index_.find(key(stock, day));
  if (it == index_.end()) return fill_row_;
  return {values_.data() + it->second * k_, k_};
}

Matrix ErrorMemory::aggregate(int stock, int day, int lookback, int gap) const {
  Matrix out;
  aggregate_into(stock, day, lookback, gap, out);
  return out;
}

void ErrorMemory::aggregate_into(int stock, int day, int lookback, int gap, Matrix& out) const {
  check_stock(stock);
  if (gap < 1) throw InvalidArgumentError("memory gap must be >= 1");
  if (lookback < gap) throw InvalidArgumentError("lookback T must be >= gap");
  const std::size_t n_rows = static_cast<std::size_t>(lookback - gap + 1);
  if (out.rows() != n_rows || out.cols() != k_) out = Matrix(n_rows, k_);
  for (std::size_t r = 0; r < n_rows; ++r) {
    const int ts = day - lookback + static_cast<int>(r);
    if (read_log_) read_log_->entries.push_back({stock, day, ts});
    const auto it = index_.find(key(stock, ts));
    const double* src = it == index_.end() ? fill_row_.data() : values_.data() + it->second * k_;
    std::copy(src, src + k_, out.row(r).begin());
  }
}

bool ErrorMemory::operator==(const ErrorMemory& other) const {
  return n_stocks_ == other.n_stocks_ && k_ == other.k_ && fill_ == other.fill_ &&
         index_ == other.index_ && values_ == other.values_;
}

// --- router --------------------------------------------------------------------------

RouterInputMode router_input_mode_from_string(const std::string& s) {
  if (s == "LR") return RouterInputMode::LR;
  if (s == "TPE") return RouterInputMode::TPE;
  if (s == "LR+TPE") return RouterInputMode::LRTPE;
  if (s == "Random") return RouterInputMode::Random;
  throw ConfigError("unknown router input mode '" + s + "' (LR | TPE | LR+TPE | Random)");
}

std::string to_string(RouterInputMode m) {
  switch (m) {
    case RouterInputMode::LR: return "LR";
    case RouterInputMode::TPE: return "TPE";
    case RouterInputMode::LRTPE: return "LR+TPE";
    case RouterInputMode::Random: return "Random";
  }
  return "?";
}

SummarizerKind summarizer_kind_from_string(const std::string& s) {
  if (s == "rnn") return SummarizerKind::Rnn;
  if (s == "ema") return SummarizerKind::Ema;
  throw ConfigError("unknown summarizer '" + s + "' (rnn | ema)");
}

std::string to_string(SummarizerKind k) {
  return k == SummarizerKind::Rnn ? "rnn" : "ema";
}

std::size_t RouterParams::gate_input_dim() const {
  switch (input_mode) {
    case RouterInputMode::LR: return latent_dim;
    case RouterInputMode::TPE: return embed_dim();
    case RouterInputMode::LRTPE:
    case RouterInputMode::Random: return latent_dim + embed_dim();
  }
  return 0;
}

std::size_t RouterParams::param_count() const {
  return summ_in.size() + summ_state.size() + summ_bias.size() + gate_w.size() + gate_b.size();
}

void RouterParams::flatten_append(Vec& out) const {
  out.insert(out.end(), summ_in.flat().begin(), summ_in.flat().end());
  out.insert(out.end(), summ_state.flat().begin(), summ_state.flat().end());
  out.insert(out.end(), summ_bias.begin(), summ_bias.end());
  out.insert(out.end(), gate_w.flat().begin(), gate_w.flat().end());
  out.insert(out.end(), gate_b.begin(), gate_b.end());
}

std::size_t RouterParams::unflatten(std::span<const double> flat, std::size_t offset) {
  auto take = [&](std::span<double> dst) {
    std::copy(flat.begin() + offset, flat.begin() + offset + dst.size(), dst.begin());
    offset += dst.size();
  };
  take(summ_in.flat());
  take(summ_state.flat());
  take(summ_bias);
  take(gate_w.flat());
  take(gate_b);
  return offset;
}

void RouterParams::validate() const {
  if (k == 0) throw ConfigError("router needs K >= 1");
  if (!(tau > 0.0)) throw ConfigError("router temperature tau must be > 0");
  if (summarizer == SummarizerKind::Rnn && state_dim == 0) {
    throw ConfigError("rnn summarizer state_dim must be >= 1");
  }
  if (summarizer == SummarizerKind::Ema && !(ema_decay > 0.0 && ema_decay < 1.0)) {
    throw ConfigError("ema_decay must be in (0,1)");
  }
  if (gap < 1) throw ConfigError("memory gap must be >= 1");
  if (lookback < gap) throw ConfigError("memory lookback T must be >= gap");
}

RouterParams init_router(RouterParams shape, SeededRng& rng) {
  shape.validate();
  if (shape.summarizer == SummarizerKind::Rnn) {
    shape.summ_in = glorot_matrix(shape.state_dim, shape.k, rng);
    shape.summ_state = glorot_matrix(shape.state_dim, shape.state_dim, rng);
    shape.summ_bias.assign(shape.state_dim, 0.0);
  } else {
    shape.summ_in = Matrix();
    shape.summ_state = Matrix();
    shape.summ_bias.clear();
  }
  shape.gate_w = glorot_matrix(shape.k, shape.gate_input_dim(), rng);
  shape.gate_b.assign(shape.k, 0.0);
  return shape;
}

RouterParams zero_like(const RouterParams& router) {
  RouterParams z = router;
  z.summ_in = Matrix(router.summ_in.rows(), router.summ_in.cols());
  z.summ_state = Matrix(router.summ_state.rows(), router.summ_state.cols());
  z.summ_bias.assign(router.summ_bias.size(), 0.0);
  z.gate_w = Matrix(router.gate_w.rows(), router.gate_w.cols());
  z.gate_b.assign(router.gate_b.size(), 0.0);
  return z;
}

namespace {

// Final state of the recurrent summarizer over the error rows (oldest first).
Vec summarize_rnn(const RouterParams& r, const Matrix& err_window, RouteCache* cache) {
  Vec state(r.state_dim, 0.0);
  if (cache) cache->summ_states.clear();
  for (std::size_t t = 0; t < err_window.rows(); ++t) {
    Vec z = matvec(r.summ_in, err_window.row(t));
    axpy(1.0, matvec(r.summ_state, state), z);
    axpy(1.0, r.summ_bias, z);
    for (std::size_t j = 0; j < z.size(); ++j) state[j] = std::tanh(z[j]);
    if (cache) cache->summ_states.push_back(state);
  }
  return state;
}

// Normalized exponential moving average, newest row heaviest.
Vec summarize_ema(const RouterParams& r, const Matrix& err_window) {
  Vec out(r.k, 0.0);
  double weight = 1.0;
  double total = 0.0;
  for (std::size_t t = err_window.rows(); t-- > 0;) {
    axpy(weight, err_window.row(t), out);
    total += weight;
    weight *= r.ema_decay;
  }
  for (double& v : out) v /= total;
  return out;
}

}  // namespace

RouteResult route(const RouterParams& router, std::span<const double> h, const Matrix& err_window,
                  SeededRng& rng, RouteMode mode, RouteCache* cache) {
  if (err_window.cols() != router.k) {
    throw InvalidArgumentError("error window columns do not equal K");
  }
  const bool wants_lr = router.input_mode == RouterInputMode::LR ||
                        router.input_mode == RouterInputMode::LRTPE;
  const bool wants_tpe = router.input_mode == RouterInputMode::TPE ||
                         router.input_mode == RouterInputMode::LRTPE;
  if (wants_lr && h.size() != router.latent_dim) {
    throw InvalidArgumentError("latent vector length does not match router latent_dim");
  }

  Vec embed;
  if (wants_tpe) {
    embed = router.summarizer == SummarizerKind::Rnn ? summarize_rnn(router, err_window, cache)
                                                     : summarize_ema(router, err_window);
  }

  Vec input;
  input.reserve(router.gate_input_dim());
  if (router.input_mode == RouterInputMode::Random) {
    input.resize(router.gate_input_dim());
    for (double& v : input) v = rng.gaussian();
  } else {
    if (wants_lr) input.insert(input.end(), h.begin(), h.end());
    if (wants_tpe) input.insert(input.end(), embed.begin(), embed.end());
  }

  Vec logits = matvec(router.gate_w, input);
  axpy(1.0, router.gate_b, logits);
  for (double a : logits) {
    if (!std::isfinite(a)) {
      throw NumericError("router produced non-finite logits (K=" + std::to_string(router.k) +
                         ", |input|=" + std::to_string(input.size()) + ")");
    }
  }

  RouteResult res;
  res.logits = logits;
  Vec scaled(logits.size());
  if (mode == RouteMode::Train) {
    Vec noise = gumbel_sample(rng, router.k);
    for (std::size_t i = 0; i < logits.size(); ++i) {
      scaled[i] = (logits[i] + noise[i]) / router.tau;
    }
    res.q = softmax(scaled);
    res.chosen = argmax_lowest(res.q);
    if (cache) cache->gumbel = std::move(noise);
  } else {
    for (std::size_t i = 0; i < logits.size(); ++i) scaled[i] = logits[i] / router.tau;
    res.q = softmax(scaled);
    res.chosen = argmax_lowest(res.logits);
  }

  if (cache) {
    cache->embed = std::move(embed);
    cache->gate_input = std::move(input);
    cache->logits = res.logits;
    cache->q = res.q;
  }
  return res;
}

void route_backward(const RouterParams& router, const Matrix& err_window, const RouteCache& cache,
                    std::span<const double> dq, RouterParams& grads, std::span<double> grad_h) {
  const Vec& q = cache.q;
  // softmax jacobian: ds = q .* (dq - <q, dq>), then d logits = ds / tau
  const double inner = dot(q, dq);
  Vec da(q.size());
  for (std::size_t i = 0; i < q.size(); ++i) {
    da[i] = q[i] * (dq[i] - inner) / router.tau;
  }

  add_outer(grads.gate_w, da, cache.gate_input);
  axpy(1.0, da, grads.gate_b);
  if (router.input_mode == RouterInputMode::Random) {
    return;  // noise inputs carry no gradient
  }
  Vec dinput = matvec_transposed(router.gate_w, da);

  const bool wants_lr = router.input_mode == RouterInputMode::LR ||
                        router.input_mode == RouterInputMode::LRTPE;
  const bool wants_tpe = router.input_mode == RouterInputMode::TPE ||
                         router.input_mode == RouterInputMode::LRTPE;
  std::size_t off = 0;
  if (wants_lr) {
    for (std::size_t j = 0; j < router.latent_dim; ++j) grad_h[j] += dinput[j];
    off = router.latent_dim;
  }
  if (!wants_tpe || router.summarizer != SummarizerKind::Rnn) {
    return;  // ema summarizer has no parameters; error rows are constants
  }

  // BPTT through the summarizer cell
  Vec dstate(dinput.begin() + static_cast<std::ptrdiff_t>(off), dinput.end());
  for (std::size_t t = err_window.rows(); t-- > 0;) {
    Vec dz(router.state_dim);
    for (std::size_t j = 0; j < router.state_dim; ++j) {
      const double s = cache.summ_states[t][j];
      dz[j] = dstate[j] * (1.0 - s * s);
    }
    add_outer(grads.summ_in, dz, err_window.row(t));
    if (t > 0) add_outer(grads.summ_state, dz, cache.summ_states[t - 1]);
    axpy(1.0, dz, grads.summ_bias);
    dstate = matvec_transposed(router.summ_state, dz);
  }
}

// --- full model -------------------------------------------------------------------------

std::size_t ModelState::param_count() const {
  return backbone.param_count() + heads.param_count() + router.param_count();
}

Vec ModelState::flatten() const {
  Vec out;
  out.reserve(param_count());
  backbone.flatten_append(out);
  heads.flatten_append(out);
  router.flatten_append(out);
  return out;
}

void ModelState::unflatten(std::span<const double> flat) {
  std::size_t off = backbone.unflatten(flat, 0);
  off = heads.unflatten(flat, off);
  off = router.unflatten(flat, off);
  if (off != flat.size()) {
    throw InvalidArgumentError("flat parameter vector length does not match model");
  }
}

Vec ModelGrads::flatten() const {
  Vec out;
  backbone.flatten_append(out);
  heads.flatten_append(out);
  router.flatten_append(out);
  return out;
}

ModelGrads zero_grads(const ModelState& state) {
  return {zero_like(state.backbone), zero_like(state.heads), zero_like(state.router)};
}

RoutedPrediction tra_forward(const ModelState& state, const Panel& panel,
                             const SampleWindow& sample, const ErrorMemory& memory,
                             const SeededRng& rng, RouteMode mode, TraForwardCache* cache) {
  TraForwardCache local;
  TraForwardCache& c = cache ? *cache : local;

  const BackboneConfig& bc = state.backbone.config;
  if (c.window.rows() != bc.window_len || c.window.cols() != bc.feature_dim) {
    c.window = Matrix(bc.window_len, bc.feature_dim);
  }
  materialize_window_into(panel, sample, c.window);
  c.h = backbone_forward(state.backbone, c.window, cache ? &c.backbone : nullptr);
  Vec y_all = head_predict(state.heads, c.h);
  memory.aggregate_into(sample.stock, sample.day, state.router.lookback, state.router.gap,
                        c.err_window);

  // per-sample stream: noise depends on (stock, day), not on batch order
  SeededRng route_rng =
      rng.derive((static_cast<std::uint64_t>(static_cast<std::uint32_t>(sample.stock)) << 32) |
                 static_cast<std::uint32_t>(sample.day));
  RouteResult r =
      route(state.router, c.h, c.err_window, route_rng, mode, cache ? &c.route : nullptr);

  RoutedPrediction out;
  out.q = std::move(r.q);
  out.chosen = r.chosen;
  const bool hard = mode == RouteMode::Infer && !state.router.soft_inference;
  out.p_hat = hard ? y_all[static_cast<std::size_t>(r.chosen)] : dot(out.q, y_all);
  out.y_all = std::move(y_all);
  return out;
}

}  // namespace tra
