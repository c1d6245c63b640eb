#include "tra/ot.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "tra/errors.hpp"
#include "tra/numerics.hpp"

namespace tra {

namespace {

void check_shares(std::span<const double> shares, std::size_t k) {
  if (shares.size() != k) {
    throw InvalidArgumentError("share vector length does not match loss matrix columns");
  }
  double total = 0.0;
  for (double s : shares) {
    if (!(s > 0.0)) throw InvalidArgumentError("shares must be positive");
    total += s;
  }
  if (std::abs(total - 1.0) > 1e-9) {
    throw InvalidArgumentError("shares must sum to 1 (got " + std::to_string(total) + ")");
  }
}

double marginal_violation(const Matrix& p, std::span<const double> col_targets) {
  double v = 0.0;
  for (std::size_t i = 0; i < p.rows(); ++i) {
    double rs = 0.0;
    for (std::size_t k = 0; k < p.cols(); ++k) rs += p(i, k);
    v = std::max(v, std::abs(rs - 1.0));
  }
  for (std::size_t k = 0; k < p.cols(); ++k) {
    double cs = 0.0;
    for (std::size_t i = 0; i < p.rows(); ++i) cs += p(i, k);
    v = std::max(v, std::abs(cs - col_targets[k]));
  }
  return v;
}

}  // namespace

Matrix build_loss_matrix(const Matrix& heads_outputs, std::span<const double> labels) {
  if (labels.size() != heads_outputs.rows()) {
    throw InvalidArgumentError("label count does not match prediction rows");
  }
  Matrix loss(heads_outputs.rows(), heads_outputs.cols());
  for (std::size_t i = 0; i < loss.rows(); ++i) {
    for (std::size_t k = 0; k < loss.cols(); ++k) {
      const double d = heads_outputs(i, k) - labels[i];
      loss(i, k) = d * d;
    }
  }
  if (!loss.all_finite()) {
    throw NumericError("loss matrix contains non-finite entries");
  }
  return loss;
}

TransportPlan sinkhorn_plan(const Matrix& loss, std::span<const double> shares,
                            const SinkhornConfig& cfg) {
  const std::size_t n = loss.rows();
  const std::size_t k = loss.cols();
  if (n == 0 || k == 0) throw InvalidArgumentError("empty loss matrix");
  check_shares(shares, k);
  if (!(cfg.epsilon > 0.0)) throw InvalidArgumentError("sinkhorn epsilon must be positive");

  Vec col_targets(k);
  for (std::size_t c = 0; c < k; ++c) col_targets[c] = shares[c] * static_cast<double>(n);

  // log kernel: M_ik = -L_ik / eps; potentials f (rows), g (cols)
  Matrix m(n, k);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t c = 0; c < k; ++c) m(i, c) = -loss(i, c) / cfg.epsilon;
  }
  Vec f(n, 0.0), g(k, 0.0);
  Vec scratch(std::max(n, k), 0.0);

  TransportPlan plan;
  plan.p = Matrix(n, k);
  plan.row_marginals.assign(n, 1.0);
  plan.col_marginals = col_targets;
  plan.mode = TransportPlan::Mode::Fractional;

  const double log_one = 0.0;
  Vec log_col_targets(k);
  for (std::size_t c = 0; c < k; ++c) log_col_targets[c] = std::log(col_targets[c]);

  auto realize_plan = [&]() {
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t c = 0; c < k; ++c) plan.p(i, c) = std::exp(m(i, c) + f[i] + g[c]);
    }
  };

  double violation = std::numeric_limits<double>::infinity();
  std::size_t it = 0;
  for (; it < cfg.max_iters; ++it) {
    // row scaling: make every row sum to 1
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t c = 0; c < k; ++c) scratch[c] = m(i, c) + g[c];
      f[i] = log_one - log_sum_exp({scratch.data(), k});
    }
    // column scaling: make column c sum to its capacity
    for (std::size_t c = 0; c < k; ++c) {
      for (std::size_t i = 0; i < n; ++i) scratch[i] = m(i, c) + f[i];
      g[c] = log_col_targets[c] - log_sum_exp({scratch.data(), n});
    }
    realize_plan();
    violation = marginal_violation(plan.p, col_targets);
    plan.violation_history.push_back(violation);
    if (violation < cfg.tol) {
      ++it;
      break;
    }
  }

  plan.iterations = it;
  plan.final_violation = violation;
  plan.converged = violation < cfg.tol;
  plan.warning = !plan.converged && violation > 10.0 * cfg.tol;
  if (!plan.p.all_finite()) {
    throw NumericError("sinkhorn produced a non-finite plan (epsilon too small?)");
  }
  return plan;
}

TransportPlan brute_force_plan(const Matrix& loss, std::span<const double> shares) {
  const std::size_t n = loss.rows();
  const std::size_t k = loss.cols();
  if (n == 0 || k == 0) throw InvalidArgumentError("empty loss matrix");
  check_shares(shares, k);
  if (n > 12 || k > 4) {
    throw SizeError("brute-force oracle limited to N <= 12, K <= 4 (got N=" +
                    std::to_string(n) + ", K=" + std::to_string(k) + ")");
  }

  std::vector<int> caps(k);
  int cap_total = 0;
  for (std::size_t c = 0; c < k; ++c) {
    const double raw = shares[c] * static_cast<double>(n);
    const double rounded = std::round(raw);
    if (std::abs(raw - rounded) > 1e-9) {
      throw InvalidArgumentError("capacity " + std::to_string(raw) + " for predictor " +
                                 std::to_string(c) + " is not integral");
    }
    caps[c] = static_cast<int>(rounded);
    cap_total += caps[c];
  }
  if (cap_total != static_cast<int>(n)) {
    throw InvalidArgumentError("capacities do not sum to the sample count");
  }

  std::vector<int> assign(n, -1), best_assign;
  double best_cost = std::numeric_limits<double>::infinity();
  std::vector<int> remaining = caps;

  // depth-first over samples with capacity pruning
  auto search = [&](auto&& self, std::size_t row, double cost) -> void {
    if (cost >= best_cost) return;
    if (row == n) {
      best_cost = cost;
      best_assign = assign;
      return;
    }
    for (std::size_t c = 0; c < k; ++c) {
      if (remaining[c] == 0) continue;
      --remaining[c];
      assign[row] = static_cast<int>(c);
      self(self, row + 1, cost + loss(row, c));
      ++remaining[c];
    }
    assign[row] = -1;
  };
  search(search, 0, 0.0);

  TransportPlan plan;
  plan.mode = TransportPlan::Mode::Hard;
  plan.p = Matrix(n, k);
  for (std::size_t i = 0; i < n; ++i) plan.p(i, static_cast<std::size_t>(best_assign[i])) = 1.0;
  plan.row_marginals.assign(n, 1.0);
  plan.col_marginals.assign(k, 0.0);
  for (std::size_t c = 0; c < k; ++c) plan.col_marginals[c] = caps[c];
  plan.cost = best_cost;
  plan.converged = true;
  plan.final_violation = 0.0;
  return plan;
}

double transport_cost(const Matrix& plan, const Matrix& loss) {
  if (plan.rows() != loss.rows() || plan.cols() != loss.cols()) {
    throw InvalidArgumentError("plan and loss matrix shapes disagree");
  }
  double s = 0.0;
  for (std::size_t i = 0; i < plan.size(); ++i) s += plan.flat()[i] * loss.flat()[i];
  return s;
}

}  // namespace tra
