#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <chrono>
#include <cmath>

#include "tra/errors.hpp"
#include "tra/numerics.hpp"
#include "tra/ot.hpp"
#include "tra/rng.hpp"

using namespace tra;

namespace {

Matrix random_loss(std::size_t n, std::size_t k, SeededRng& rng) {
  Matrix l(n, k);
  for (double& v : l.flat()) v = rng.uniform();
  return l;
}

// integral capacities c_k >= 1 summing to n, as shares
Vec random_integral_shares(std::size_t n, std::size_t k, SeededRng& rng) {
  std::vector<std::size_t> caps(k, 1);
  for (std::size_t r = k; r < n; ++r) ++caps[rng.next_u64() % k];
  Vec shares(k);
  for (std::size_t i = 0; i < k; ++i) {
    shares[i] = static_cast<double>(caps[i]) / static_cast<double>(n);
  }
  return shares;
}

}  // namespace

TEST_CASE("build_loss_matrix") {
  const Matrix preds = Matrix::from_data(1, 2, Vec{1.0, 0.0});
  const Matrix l = build_loss_matrix(preds, Vec{1.0});
  CHECK(l(0, 0) == 0.0);
  CHECK(l(0, 1) == 1.0);

  // identical heads give identical columns
  const Matrix same = Matrix::from_data(2, 2, Vec{0.3, 0.3, -0.1, -0.1});
  const Matrix l2 = build_loss_matrix(same, Vec{0.0, 0.5});
  CHECK(l2(0, 0) == l2(0, 1));
  CHECK(l2(1, 0) == l2(1, 1));

  SeededRng rng(1);
  const Matrix preds3 = random_loss(5, 3, rng);
  Vec labels(5);
  for (double& v : labels) v = rng.uniform();
  const Matrix l3 = build_loss_matrix(preds3, labels);
  for (std::size_t i = 0; i < 5; ++i) {
    for (std::size_t k = 0; k < 3; ++k) {
      const double d = preds3(i, k) - labels[i];
      CHECK(l3(i, k) == d * d);
    }
  }
  CHECK_THROWS_AS(build_loss_matrix(preds3, Vec{1.0}), InvalidArgumentError);
}

TEST_CASE("sinkhorn recovers the zero-cost assignment") {
  const Matrix l = Matrix::from_data(2, 2, Vec{0.0, 1.0, 1.0, 0.0});
  SinkhornConfig cfg;
  cfg.epsilon = 0.01;
  cfg.max_iters = 2000;
  cfg.tol = 1e-6;
  const TransportPlan plan = sinkhorn_plan(l, Vec{0.5, 0.5}, cfg);
  CHECK(plan.converged);
  CHECK(std::abs(plan.p(0, 0) - 1.0) < 1e-3);
  CHECK(std::abs(plan.p(0, 1) - 0.0) < 1e-3);
  CHECK(std::abs(plan.p(1, 1) - 1.0) < 1e-3);
}

TEST_CASE("sinkhorn on a constant loss is uniform") {
  const Matrix l = Matrix::from_data(2, 2, Vec{1.0, 1.0, 1.0, 1.0});
  SinkhornConfig cfg;
  cfg.epsilon = 0.05;
  const TransportPlan plan = sinkhorn_plan(l, Vec{0.5, 0.5}, cfg);
  for (double v : plan.p.flat()) CHECK(v == doctest::Approx(0.5).epsilon(1e-9));
}

TEST_CASE("sinkhorn feasibility, monotonicity and scale behavior") {
  SeededRng rng(3);
  for (int trial = 0; trial < 10; ++trial) {
    const std::size_t n = 3 + rng.next_u64() % 8;
    const std::size_t k = 2 + rng.next_u64() % 2;
    const Matrix l = random_loss(n, k, rng);
    const Vec shares = random_integral_shares(n, k, rng);
    SinkhornConfig cfg;
    cfg.epsilon = 0.05 * mean(l.flat());
    cfg.max_iters = 20000;
    cfg.tol = 1e-5;
    const TransportPlan plan = sinkhorn_plan(l, shares, cfg);
    CHECK(plan.converged);
    for (std::size_t i = 0; i < n; ++i) {
      double rs = 0.0;
      for (std::size_t c = 0; c < k; ++c) {
        CHECK(plan.p(i, c) >= 0.0);
        CHECK(plan.p(i, c) <= 1.0 + cfg.tol);
        rs += plan.p(i, c);
      }
      CHECK(std::abs(rs - 1.0) <= cfg.tol);
    }
    for (std::size_t c = 0; c < k; ++c) {
      double cs = 0.0;
      for (std::size_t i = 0; i < n; ++i) cs += plan.p(i, c);
      CHECK(std::abs(cs - shares[c] * static_cast<double>(n)) <= cfg.tol);
    }
    // violation is non-increasing, checked every 10 iterations
    for (std::size_t it = 10; it < plan.violation_history.size(); it += 10) {
      CHECK(plan.violation_history[it] <= plan.violation_history[it - 10] + 1e-12);
    }

    // scaling L and epsilon together leaves the plan unchanged
    Matrix scaled = l;
    for (double& v : scaled.flat()) v *= 7.0;
    SinkhornConfig cfg2 = cfg;
    cfg2.epsilon = cfg.epsilon * 7.0;
    const TransportPlan plan2 = sinkhorn_plan(scaled, shares, cfg2);
    for (std::size_t i = 0; i < plan.p.size(); ++i) {
      CHECK(std::abs(plan.p.flat()[i] - plan2.p.flat()[i]) <= 1e-9);
    }
  }
}

TEST_CASE("sinkhorn flags non-convergence with a warning") {
  SeededRng rng(77);
  const Matrix l = random_loss(6, 3, rng);
  SinkhornConfig cfg;
  cfg.epsilon = 0.02 * mean(l.flat());
  cfg.max_iters = 1;
  cfg.tol = 1e-10;
  const TransportPlan plan = sinkhorn_plan(l, Vec{1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0}, cfg);
  CHECK_FALSE(plan.converged);
  CHECK(plan.iterations == 1);
  CHECK(plan.final_violation > 10.0 * cfg.tol);
  CHECK(plan.warning);
}

TEST_CASE("brute force exact assignments") {
  const Matrix l = Matrix::from_data(2, 2, Vec{0.0, 1.0, 1.0, 0.0});
  const TransportPlan plan = brute_force_plan(l, Vec{0.5, 0.5});
  CHECK(plan.cost == 0.0);
  CHECK(plan.p(0, 0) == 1.0);
  CHECK(plan.p(1, 1) == 1.0);

  // enumerating all C(4,2) = 6 assignments: optimum cost 5, row 3 must take
  // predictor 2, joined by exactly one of rows {1, 2, 4}
  const Matrix l2 =
      Matrix::from_data(4, 2, Vec{0.0, 5.0, 0.0, 5.0, 5.0, 0.0, 0.0, 5.0});
  const TransportPlan plan2 = brute_force_plan(l2, Vec{0.5, 0.5});
  CHECK(plan2.cost == 5.0);
  CHECK(plan2.p(2, 1) == 1.0);
  const double col1 = plan2.p(0, 1) + plan2.p(1, 1) + plan2.p(3, 1);
  CHECK(col1 == 1.0);

  // degenerate objective: any feasible assignment, cost = N * const
  const Matrix l3 = Matrix::from_data(3, 3, Vec(9, 2.0));
  Vec shares3(3, 1.0 / 3.0);
  const TransportPlan plan3 = brute_force_plan(l3, shares3);
  CHECK(plan3.cost == 6.0);
}

TEST_CASE("brute force rejects bad instances") {
  const Matrix l = Matrix::from_data(3, 2, Vec{0.0, 1.0, 1.0, 0.0, 0.5, 0.5});
  CHECK_THROWS_AS(brute_force_plan(l, Vec{0.5, 0.5}), InvalidArgumentError);  // 1.5 capacity
  SeededRng rng(5);
  const Matrix big = random_loss(13, 2, rng);
  Vec half{0.5, 0.5};
  CHECK_THROWS_AS(brute_force_plan(big, half), SizeError);
}

TEST_CASE("transport cost") {
  const Matrix p = Matrix::from_data(2, 2, Vec{1.0, 0.0, 0.0, 1.0});
  const Matrix l = Matrix::from_data(2, 2, Vec{0.0, 1.0, 1.0, 0.0});
  CHECK(transport_cost(p, l) == 0.0);
  const Matrix u = Matrix::from_data(2, 2, Vec{0.5, 0.5, 0.5, 0.5});
  CHECK(transport_cost(u, l) == 1.0);

  SeededRng rng(6);
  const Matrix rp = random_loss(4, 3, rng);
  const Matrix rl = random_loss(4, 3, rng);
  double expect = 0.0;
  for (std::size_t i = 0; i < 4; ++i) {
    for (std::size_t k = 0; k < 3; ++k) expect += rp(i, k) * rl(i, k);
  }
  CHECK(transport_cost(rp, rl) == doctest::Approx(expect).epsilon(1e-12));
  CHECK_THROWS_AS(transport_cost(rp, l), InvalidArgumentError);
}

TEST_CASE("sinkhorn near-optimality against the brute-force oracle") {
  // 50 random instances, epsilon = 0.005 * mean(L): cost within 5% of exact
  const auto start = std::chrono::steady_clock::now();
  SeededRng rng(2024);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t k = 2 + rng.next_u64() % 2;  // K in {2,3}
    const std::size_t n = k + rng.next_u64() % (10 - k + 1);
    const Matrix l = random_loss(n, k, rng);
    const Vec shares = random_integral_shares(n, k, rng);

    SinkhornConfig cfg;
    cfg.epsilon = 0.005 * mean(l.flat());
    cfg.max_iters = 20000;
    cfg.tol = 1e-5;
    const TransportPlan approx = sinkhorn_plan(l, shares, cfg);
    const TransportPlan exact = brute_force_plan(l, shares);
    CHECK(approx.final_violation < 1e-4);
    CHECK(transport_cost(approx.p, l) <= 1.05 * exact.cost + 1e-6);
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  CHECK(secs < 5.0);
}
