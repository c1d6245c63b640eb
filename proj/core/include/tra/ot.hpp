#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "tra/matrix.hpp"

namespace tra {

struct SinkhornConfig {
  double epsilon = 0.05;     // entropic regularization (absolute)
  std::size_t max_iters = 200;
  double tol = 1e-4;         // max absolute marginal violation
};

struct TransportPlan {
  enum class Mode { Fractional, Hard };

  Matrix p;            // N x K
  Vec row_marginals;   // all 1
  Vec col_marginals;   // shares[k] * N
  Mode mode = Mode::Fractional;

  std::size_t iterations = 0;
  double final_violation = 0.0;
  bool converged = false;
  // max_iters hit with violation still above 10*tol
  bool warning = false;
  // violation after each full row+col sweep (for monotonicity checks)
  Vec violation_history;
  // exact objective value (brute-force plans only)
  double cost = 0.0;
};

// L_ik = (heads_outputs_ik - labels_i)^2.
Matrix build_loss_matrix(const Matrix& heads_outputs, std::span<const double> labels);

// Entropic OT via log-domain Sinkhorn scaling: P = diag(u) exp(-L/eps) diag(v)
// with row sums 1 and column sums shares[k]*N. shares must be positive and
// sum to 1 within 1e-9.
TransportPlan sinkhorn_plan(const Matrix& loss, std::span<const double> shares,
                            const SinkhornConfig& cfg);

// Exact minimizer of <P, L> over binary plans meeting both marginals, by
// exhaustive enumeration. Requires integral capacities shares[k]*N, N <= 12,
// K <= 4.
TransportPlan brute_force_plan(const Matrix& loss, std::span<const double> shares);

// Frobenius dot product <P, L>.
double transport_cost(const Matrix& plan, const Matrix& loss);

}  // namespace tra
