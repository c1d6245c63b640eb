#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "tra/errors.hpp"
#include "tra/numerics.hpp"
#include "tra/tra_model.hpp"
#include "tra/trainer.hpp"

using namespace tra;

namespace {

RouterParams make_router(std::size_t k, std::size_t latent, RouterInputMode mode,
                         SummarizerKind summ, std::uint64_t seed, double tau = 1.0) {
  RouterParams shape;
  shape.input_mode = mode;
  shape.summarizer = summ;
  shape.k = k;
  shape.latent_dim = latent;
  shape.state_dim = 4;
  shape.tau = tau;
  shape.lookback = 6;
  shape.gap = 2;
  SeededRng rng(seed);
  return init_router(shape, rng);
}

Matrix random_err_window(std::size_t rows, std::size_t k, SeededRng& rng) {
  Matrix m(rows, k);
  for (double& v : m.flat()) v = rng.uniform();
  return m;
}

// Tiny two-regime panel fixture shared by the composition tests.
Panel small_panel(std::uint64_t seed = 3) {
  SyntheticSpec spec;
  spec.n_stocks = 8;
  spec.n_days = 40;
  spec.n_features = 4;
  spec.n_regimes = 2;
  spec.regime_block = 20;
  spec.horizon = 2;
  spec.seed = seed;
  const SyntheticData synth = generate_synthetic(spec);
  return build_panel(Dataset::build(synth.records, spec.horizon));
}

}  // namespace

TEST_CASE("head predictions are affine") {
  PredictorHeads heads;
  heads.w = Matrix::from_data(2, 2, Vec{1.0, 0.0, 0.0, 1.0});
  heads.b = Vec{0.0, 0.5};
  const Vec y = head_predict(heads, Vec{1.0, 0.0});
  CHECK(y[0] == 1.0);
  CHECK(y[1] == 0.5);

  heads.w.fill(0.0);
  heads.b = Vec{0.0, 0.0};
  for (double v : head_predict(heads, Vec{0.3, -0.2})) CHECK(v == 0.0);

  CHECK_THROWS_AS(head_predict(heads, Vec{1.0}), InvalidArgumentError);
}

TEST_CASE("head gradients match finite differences") {
  SeededRng rng(12);
  const std::size_t latent = 3, k = 2;
  PredictorHeads heads = init_heads(k, latent, rng);
  Vec h(latent);
  for (double& v : h) v = rng.uniform();
  const double label = 0.4;

  // f = sum_k (y_k - label)^2; analytic: dW_k = 2 (y_k - label) h, db_k = 2 (y_k - label)
  const Vec y = head_predict(heads, h);
  PredictorHeads grads = zero_like(heads);
  for (std::size_t c = 0; c < k; ++c) {
    const double d = 2.0 * (y[c] - label);
    for (std::size_t j = 0; j < latent; ++j) grads.w(c, j) = d * h[j];
    grads.b[c] = d;
  }
  Vec analytic;
  grads.flatten_append(analytic);

  Vec x0;
  heads.flatten_append(x0);
  PredictorHeads probe = heads;
  const auto f = [&](const Vec& x) {
    probe.unflatten(x, 0);
    const Vec yy = head_predict(probe, h);
    double s = 0.0;
    for (double v : yy) s += (v - label) * (v - label);
    return s;
  };
  const Vec numeric = finite_diff_gradient(f, x0, 1e-6);
  for (std::size_t i = 0; i < numeric.size(); ++i) {
    CHECK(relative_error(analytic[i], numeric[i]) < 1e-4);
  }
}

TEST_CASE("error memory aggregation follows the lookback slice") {
  ErrorMemory memory(3, 1, 0.0);
  // losses stored at t-3, t-2, t-1 for stock 0; query with T=3, gap=1
  memory.write(0, 7, Vec{0.2});
  memory.write(0, 8, Vec{0.1});
  memory.write(0, 9, Vec{0.3});
  const Matrix rows = memory.aggregate(0, 10, 3, 1);
  REQUIRE(rows.rows() == 3);
  CHECK(rows(0, 0) == 0.2);
  CHECK(rows(1, 0) == 0.1);
  CHECK(rows(2, 0) == 0.3);

  // before any history: all fill
  const Matrix empty = memory.aggregate(1, 10, 3, 1);
  for (double v : empty.flat()) CHECK(v == 0.0);

  // partial history pads the missing rows
  memory.write(2, 9, Vec{0.3});
  const Matrix partial = memory.aggregate(2, 10, 3, 1);
  CHECK(partial(0, 0) == 0.0);
  CHECK(partial(1, 0) == 0.0);
  CHECK(partial(2, 0) == 0.3);

  CHECK_THROWS_AS(static_cast<void>(memory.aggregate(5, 10, 3, 1)), MissingEntityError);
  CHECK_THROWS_AS(static_cast<void>(memory.aggregate(0, 10, 0, 1)), InvalidArgumentError);
  CHECK_THROWS_AS(memory.write(0, 3, Vec{0.1, 0.2}), InvalidArgumentError);
}

TEST_CASE("memory writes replace a single row") {
  ErrorMemory memory(2, 2, 0.0);
  memory.write(0, 5, Vec{0.5, 0.6});
  memory.write(0, 5, Vec{0.1, 0.2});  // last write wins
  const auto row = memory.row(0, 5);
  CHECK(row[0] == 0.1);
  CHECK(row[1] == 0.2);

  // snapshot-compare: writing one batch leaves other rows bit-identical
  memory.write(1, 5, Vec{0.3, 0.4});
  memory.write(0, 6, Vec{0.7, 0.8});
  const ErrorMemory before = memory;
  memory.write(0, 5, Vec{0.9, 1.0});
  CHECK(std::equal(memory.row(1, 5).begin(), memory.row(1, 5).end(), before.row(1, 5).begin()));
  CHECK(std::equal(memory.row(0, 6).begin(), memory.row(0, 6).end(), before.row(0, 6).begin()));
  CHECK(memory.row(0, 5)[0] == 0.9);
}

TEST_CASE("memory aggregation never reads past t - gap") {
  ErrorMemory memory(1, 1, 0.0);
  for (int t = 0; t < 20; ++t) memory.write(0, t, Vec{0.1});
  ErrorMemory::ReadLog log;
  memory.set_read_log(&log);
  memory.aggregate(0, 15, 6, 3);
  memory.set_read_log(nullptr);
  REQUIRE(!log.entries.empty());
  for (const auto& e : log.entries) {
    CHECK(e.query_day == 15);
    CHECK(e.read_day <= 15 - 3);
  }
}

TEST_CASE("route infer mode closed forms") {
  // zero gate weights: logits = gate_b; craft the spec examples directly
  RouterParams r = make_router(2, 3, RouterInputMode::LR, SummarizerKind::Rnn, 1);
  r.gate_w.fill(0.0);
  r.gate_b = Vec{0.0, 0.0};
  SeededRng rng(5);
  const Matrix err = random_err_window(5, 2, rng);
  const Vec h{0.1, -0.2, 0.3};

  SeededRng route_rng(9);
  const RouteResult tie = route(r, h, err, route_rng, RouteMode::Infer);
  CHECK(tie.q[0] == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(tie.q[1] == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(tie.chosen == 0);  // ties break to the lowest index

  r.gate_b = Vec{std::log(2.0), 0.0};
  const RouteResult skew = route(r, h, err, route_rng, RouteMode::Infer);
  CHECK(skew.q[0] == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
  CHECK(skew.q[1] == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
  CHECK(skew.chosen == 0);
}

TEST_CASE("adding a constant to the logits leaves routing unchanged") {
  RouterParams r = make_router(3, 2, RouterInputMode::TPE, SummarizerKind::Rnn, 2);
  SeededRng rng(6);
  const Matrix err = random_err_window(5, 3, rng);
  const Vec h{0.0, 0.0};
  SeededRng rng_a(11), rng_b(11);
  const RouteResult a = route(r, h, err, rng_a, RouteMode::Train);
  RouterParams shifted = r;
  for (double& b : shifted.gate_b) b += 4.2;
  const RouteResult b = route(shifted, h, err, rng_b, RouteMode::Train);
  for (std::size_t i = 0; i < a.q.size(); ++i) CHECK(std::abs(a.q[i] - b.q[i]) <= 1e-12);
  CHECK(a.chosen == b.chosen);
}

TEST_CASE("train-mode routing follows the gumbel-max distribution") {
  // empirical argmax frequencies at low temperature match softmax(logits)
  RouterParams r = make_router(3, 2, RouterInputMode::LR, SummarizerKind::Rnn, 3, 0.1);
  r.gate_w.fill(0.0);
  r.gate_b = Vec{0.8, 0.0, -0.4};
  const Vec expect = softmax(r.gate_b);
  SeededRng rng(21);
  const Matrix err = random_err_window(5, 3, rng);
  const Vec h{0.0, 0.0};

  std::array<std::size_t, 3> counts{0, 0, 0};
  const std::size_t n = 100000;
  for (std::size_t i = 0; i < n; ++i) {
    SeededRng draw = rng.derive(i);
    const RouteResult res = route(r, h, err, draw, RouteMode::Train);
    ++counts[static_cast<std::size_t>(res.chosen)];
  }
  for (std::size_t c = 0; c < 3; ++c) {
    const double freq = static_cast<double>(counts[c]) / static_cast<double>(n);
    CHECK(std::abs(freq - expect[c]) < 0.02);
  }
}

TEST_CASE("routing probabilities sum to one in both modes") {
  SeededRng rng(33);
  for (std::uint64_t trial = 0; trial < 20; ++trial) {
    const std::size_t k = 1 + rng.next_u64() % 4;
    RouterParams r = make_router(k, 3, RouterInputMode::LRTPE, SummarizerKind::Rnn, trial);
    const Matrix err = random_err_window(5, k, rng);
    Vec h{0.2, -0.1, 0.4};
    SeededRng ra(trial), rb(trial);
    const RouteResult train = route(r, h, err, ra, RouteMode::Train);
    const RouteResult infer = route(r, h, err, rb, RouteMode::Infer);
    double s1 = 0.0, s2 = 0.0;
    for (double v : train.q) s1 += v;
    for (double v : infer.q) s2 += v;
    CHECK(std::abs(s1 - 1.0) <= 1e-9);
    CHECK(std::abs(s2 - 1.0) <= 1e-9);
  }
}

TEST_CASE("router gradient vanishes for a single predictor") {
  RouterParams r = make_router(1, 2, RouterInputMode::LRTPE, SummarizerKind::Rnn, 4);
  SeededRng rng(8);
  const Matrix err = random_err_window(5, 1, rng);
  const Vec h{0.3, 0.7};
  RouteCache cache;
  SeededRng route_rng(2);
  const RouteResult res = route(r, h, err, route_rng, RouteMode::Train, &cache);
  CHECK(res.q[0] == 1.0);

  RouterParams grads = zero_like(r);
  Vec grad_h(2, 0.0);
  route_backward(r, err, cache, Vec{1.7}, grads, grad_h);
  Vec flat;
  grads.flatten_append(flat);
  for (double v : flat) CHECK(v == 0.0);
  for (double v : grad_h) CHECK(v == 0.0);
}

TEST_CASE("route and summarizer gradients match finite differences") {
  for (const auto mode : {RouterInputMode::LR, RouterInputMode::TPE, RouterInputMode::LRTPE}) {
    for (const auto summ : {SummarizerKind::Rnn, SummarizerKind::Ema}) {
      for (std::uint64_t trial = 0; trial < 5; ++trial) {
        const std::size_t k = 3, latent = 2;
        RouterParams r = make_router(k, latent, mode, summ, 50 + trial);
        SeededRng rng(60 + trial);
        const Matrix err = random_err_window(5, k, rng);
        Vec h{0.4, -0.3};
        Vec v(k);
        for (double& x : v) x = 2.0 * rng.uniform() - 1.0;

        RouteCache cache;
        SeededRng route_rng(trial);
        const RouteResult res = route(r, h, err, route_rng, RouteMode::Train, &cache);
        RouterParams grads = zero_like(r);
        Vec grad_h(latent, 0.0);
        // f = <v, q>; dq = v
        route_backward(r, err, cache, v, grads, grad_h);
        Vec analytic;
        grads.flatten_append(analytic);

        Vec x0;
        r.flatten_append(x0);
        RouterParams probe = r;
        const auto f = [&](const Vec& x) {
          probe.unflatten(x, 0);
          SeededRng replay(trial);
          const RouteResult rr = route(probe, h, err, replay, RouteMode::Train);
          return dot(v, rr.q);
        };
        const Vec numeric = finite_diff_gradient(f, x0, 1e-6);
        for (std::size_t i = 0; i < numeric.size(); ++i) {
          CHECK(relative_error(analytic[i], numeric[i]) < 1e-4);
        }
      }
    }
  }
}

TEST_CASE("non-finite logits raise a numeric error") {
  RouterParams r = make_router(2, 2, RouterInputMode::LR, SummarizerKind::Rnn, 5);
  r.gate_w(0, 0) = 1e308;
  SeededRng rng(3);
  const Matrix err = random_err_window(5, 2, rng);
  SeededRng route_rng(1);
  CHECK_THROWS_AS(static_cast<void>(route(r, Vec{1e308, 0.0}, err, route_rng, RouteMode::Infer)),
                  NumericError);
}

TEST_CASE("tra_forward composes the individual operations") {
  const Panel panel = small_panel();
  TrainConfig cfg;
  cfg.k = 3;
  cfg.backbone.window_len = 4;
  cfg.backbone.feature_dim = panel.data.feature_dim;
  cfg.backbone.latent_dim = 5;
  cfg.lookback = 6;
  cfg.gap = 3;
  cfg.seed = 11;
  const ModelState state = init_model(cfg, panel.data.horizon);

  const auto windows = build_windows(panel, cfg.backbone.window_len);
  REQUIRE(!windows.empty());
  ErrorMemory memory = make_memory(panel, cfg.k);
  refresh_memory(state, panel, windows, memory);

  const SampleWindow& sample = windows[windows.size() / 2];
  SeededRng rng(77);
  const RoutedPrediction out = tra_forward(state, panel, sample, memory, rng, RouteMode::Train);

  // step-by-step recomputation through the individual operations
  const Matrix window = materialize_window(panel, sample);
  const Vec h = backbone_forward(state.backbone, window);
  const Vec y = head_predict(state.heads, h);
  const Matrix err = memory.aggregate(sample.stock, sample.day, cfg.lookback, cfg.gap);
  SeededRng route_rng = rng.derive(
      (static_cast<std::uint64_t>(static_cast<std::uint32_t>(sample.stock)) << 32) |
      static_cast<std::uint32_t>(sample.day));
  const RouteResult rr = route(state.router, h, err, route_rng, RouteMode::Train);
  CHECK(out.y_all == y);
  CHECK(out.q == rr.q);
  CHECK(out.chosen == rr.chosen);
  CHECK(out.p_hat == doctest::Approx(dot(rr.q, y)).epsilon(1e-15));

  // soft output is a convex combination of the head outputs
  CHECK(out.p_hat >= *std::min_element(y.begin(), y.end()) - 1e-12);
  CHECK(out.p_hat <= *std::max_element(y.begin(), y.end()) + 1e-12);
}

TEST_CASE("single-predictor model degenerates to the plain head") {
  const Panel panel = small_panel(9);
  TrainConfig cfg;
  cfg.k = 1;
  cfg.backbone.window_len = 4;
  cfg.backbone.feature_dim = panel.data.feature_dim;
  cfg.backbone.latent_dim = 5;
  cfg.lookback = 6;
  cfg.gap = 3;
  const ModelState state = init_model(cfg, panel.data.horizon);

  const auto windows = build_windows(panel, cfg.backbone.window_len);
  ErrorMemory memory = make_memory(panel, 1);
  SeededRng rng(5);
  for (const auto& sample : windows) {
    const RoutedPrediction train_out =
        tra_forward(state, panel, sample, memory, rng, RouteMode::Train);
    const RoutedPrediction infer_out =
        tra_forward(state, panel, sample, memory, rng, RouteMode::Infer);
    const Matrix window = materialize_window(panel, sample);
    const double direct = head_predict(state.heads, backbone_forward(state.backbone, window))[0];
    CHECK(train_out.q[0] == 1.0);
    CHECK(train_out.p_hat == direct);
    CHECK(infer_out.p_hat == direct);
  }
}

TEST_CASE("hard inference picks the argmax head") {
  const Panel panel = small_panel(13);
  TrainConfig cfg;
  cfg.k = 2;
  cfg.backbone.window_len = 4;
  cfg.backbone.feature_dim = panel.data.feature_dim;
  cfg.backbone.latent_dim = 3;
  cfg.lookback = 6;
  cfg.gap = 3;
  ModelState state = init_model(cfg, panel.data.horizon);
  // force q = [~1, ~0]
  state.router.gate_w.fill(0.0);
  state.router.gate_b = Vec{30.0, 0.0};
  state.heads.w.fill(0.0);
  state.heads.b = Vec{0.3, 0.9};

  const auto windows = build_windows(panel, cfg.backbone.window_len);
  ErrorMemory memory = make_memory(panel, 2);
  SeededRng rng(1);
  const RoutedPrediction out =
      tra_forward(state, panel, windows.front(), memory, rng, RouteMode::Infer);
  CHECK(out.chosen == 0);
  CHECK(out.p_hat == 0.3);
}
