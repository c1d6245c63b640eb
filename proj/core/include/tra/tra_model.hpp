#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "tra/backbone.hpp"
#include "tra/dataprep.hpp"
#include "tra/matrix.hpp"
#include "tra/rng.hpp"

namespace tra {

// --- K linear predictors -----------------------------------------------------

struct PredictorHeads {
  Matrix w;  // K x latent_dim
  Vec b;     // K

  std::size_t k() const { return b.size(); }
  std::size_t param_count() const { return w.size() + b.size(); }
  void flatten_append(Vec& out) const;
  std::size_t unflatten(std::span<const double> flat, std::size_t offset);
};

PredictorHeads init_heads(std::size_t k, std::size_t latent_dim, SeededRng& rng);
PredictorHeads zero_like(const PredictorHeads& heads);

// y_hat_k = w_k . h + b_k
Vec head_predict(const PredictorHeads& heads, std::span<const double> h);

// --- error memory --------------------------------------------------------------

// N x K cache of per-sample per-predictor losses keyed by (stock, day index).
// Rows are created lazily on first write; absent rows read as fill_value.
class ErrorMemory {
 public:
  struct ReadLog {
    struct Entry {
      int stock;
      int query_day;  // the day being routed
      int read_day;   // the timestamp probed
    };
    std::vector<Entry> entries;
  };

  ErrorMemory(std::size_t n_stocks, std::size_t k, double fill_value = 0.0);

  std::size_t k() const { return k_; }
  double fill_value() const { return fill_; }
  std::size_t n_rows() const { return rows_; }

  bool has(int stock, int day) const;
  // Throws MissingEntityError for unknown stocks.
  void write(int stock, int day, std::span<const double> losses);
  // fill_value row when (stock, day) was never written.
  std::span<const double> row(int stock, int day) const;

  // Rows [l_(s,t-T), ..., l_(s,t-gap)], oldest first: (T-gap+1) x K.
  // Requires gap >= 1 and T >= gap. Never touches timestamps above t-gap.
  Matrix aggregate(int stock, int day, int lookback, int gap) const;
  void aggregate_into(int stock, int day, int lookback, int gap, Matrix& out) const;

  // Test instrumentation: every probed timestamp is appended (not owned).
  void set_read_log(ReadLog* log) { read_log_ = log; }

  bool operator==(const ErrorMemory& other) const;

 private:
  void check_stock(int stock) const;
  static std::int64_t key(int stock, int day) {
    return (static_cast<std::int64_t>(stock) << 32) | static_cast<std::uint32_t>(day);
  }

  std::size_t n_stocks_;
  std::size_t k_;
  double fill_;
  std::size_t rows_ = 0;
  std::unordered_map<std::int64_t, std::size_t> index_;
  Vec values_;  // rows_ x k_, row-major
  Vec fill_row_;
  ReadLog* read_log_ = nullptr;
};

// --- router ----------------------------------------------------------------------

enum class RouterInputMode { LR, TPE, LRTPE, Random };
enum class SummarizerKind { Rnn, Ema };

RouterInputMode router_input_mode_from_string(const std::string& s);
std::string to_string(RouterInputMode m);
SummarizerKind summarizer_kind_from_string(const std::string& s);
std::string to_string(SummarizerKind k);

// Gating network: an error summarizer (recurrent cell over the temporal
// prediction errors, or a parameter-free EMA) feeding a single affine gate
// together with the latent representation, per input_mode. Random replaces
// both inputs with seeded Gaussian noise.
struct RouterParams {
  RouterInputMode input_mode = RouterInputMode::LRTPE;
  SummarizerKind summarizer = SummarizerKind::Rnn;
  std::size_t k = 1;
  std::size_t latent_dim = 1;
  std::size_t state_dim = 8;   // d_e (rnn summarizer)
  double tau = 1.0;
  double ema_decay = 0.9;
  int lookback = 30;  // T
  int gap = 8;        // h; config load validates gap > label horizon
  bool soft_inference = false;

  Matrix summ_in;     // d_e x K (rnn only)
  Matrix summ_state;  // d_e x d_e
  Vec summ_bias;      // d_e
  Matrix gate_w;      // K x gate_input_dim
  Vec gate_b;         // K

  std::size_t embed_dim() const { return summarizer == SummarizerKind::Rnn ? state_dim : k; }
  std::size_t gate_input_dim() const;
  std::size_t param_count() const;
  void flatten_append(Vec& out) const;
  std::size_t unflatten(std::span<const double> flat, std::size_t offset);
  void validate() const;
};

RouterParams init_router(RouterParams shape, SeededRng& rng);
RouterParams zero_like(const RouterParams& router);

enum class RouteMode { Train, Infer };

struct RouteCache {
  std::vector<Vec> summ_states;  // rnn states, one per error-window row
  Vec embed;
  Vec gate_input;
  Vec logits;
  Vec gumbel;  // noise actually used (train mode)
  Vec q;
};

struct RouteResult {
  Vec logits;
  Vec q;
  int chosen = 0;  // argmax, ties to the lowest index
};

// Train mode adds Gumbel noise to the logits before the tempered softmax;
// infer mode is noise-free with a hard argmax selection. rng feeds the
// Gumbel draws and, in Random input mode, the substitute inputs.
RouteResult route(const RouterParams& router, std::span<const double> h, const Matrix& err_window,
                  SeededRng& rng, RouteMode mode, RouteCache* cache = nullptr);

// Backward through gate + summarizer given d(loss)/d(q). Accumulates router
// gradients and, when the latent representation feeds the gate, adds its
// share into grad_h.
void route_backward(const RouterParams& router, const Matrix& err_window, const RouteCache& cache,
                    std::span<const double> dq, RouterParams& grads, std::span<double> grad_h);

// --- full model -------------------------------------------------------------------

struct AdamState {
  Vec m, v;
  std::uint64_t t = 0;
};

struct ModelState {
  BackboneParams backbone;
  PredictorHeads heads;
  RouterParams router;
  AdamState opt;

  std::size_t param_count() const;
  Vec flatten() const;
  void unflatten(std::span<const double> flat);
};

struct ModelGrads {
  BackboneParams backbone;
  PredictorHeads heads;
  RouterParams router;

  Vec flatten() const;
};

ModelGrads zero_grads(const ModelState& state);

struct RoutedPrediction {
  Vec y_all;       // predictions from all K heads
  Vec q;           // routing probabilities
  double p_hat;    // combined prediction
  int chosen;      // argmax predictor index
};

struct TraForwardCache {
  Matrix window;
  BackboneCache backbone;
  Vec h;
  Matrix err_window;
  RouteCache route;
};

// backbone -> heads -> temporal error aggregation -> route -> combine.
// Train mode: p_hat = q . y_all (soft); infer mode: p_hat = y_all[chosen]
// unless router.soft_inference is set.
RoutedPrediction tra_forward(const ModelState& state, const Panel& panel,
                             const SampleWindow& sample, const ErrorMemory& memory,
                             const SeededRng& rng, RouteMode mode,
                             TraForwardCache* cache = nullptr);

}  // namespace tra
