#pragma once

#include <functional>
#include <span>

#include "tra/matrix.hpp"
#include "tra/rng.hpp"

namespace tra {

// Numerically stable softmax (max-shifted). Throws InvalidArgumentError on
// empty or non-finite input. Output entries are positive and sum to 1.
Vec softmax(std::span<const double> v);

double log_sum_exp(std::span<const double> v);

// Gumbel(0,1) transform of a uniform draw; the draw must already be clamped
// away from {0,1}.
double gumbel_from_uniform(double z);

// n i.i.d. Gumbel(0,1) samples.
Vec gumbel_sample(SeededRng& rng, std::size_t n);

// Central-difference gradient estimate, one coordinate at a time.
// Throws NumericError if f evaluates to a non-finite value.
Vec finite_diff_gradient(const std::function<double(const Vec&)>& f, const Vec& x, double step);

// Relative error used by every gradient check in this repo:
// |a-b| / max(1, |a|, |b|).
double relative_error(double a, double b);

// --- small dense kernels -------------------------------------------------

double dot(std::span<const double> a, std::span<const double> b);

// y = M x
Vec matvec(const Matrix& m, std::span<const double> x);

// y = M^T x
Vec matvec_transposed(const Matrix& m, std::span<const double> x);

// M += a b^T
void add_outer(Matrix& m, std::span<const double> a, std::span<const double> b);

// y += alpha * x
void axpy(double alpha, std::span<const double> x, std::span<double> y);

// --- statistics -----------------------------------------------------------

double mean(std::span<const double> v);

// Sample standard deviation (n-1 denominator); 0 for n < 2.
double sample_std(std::span<const double> v);

// Pearson correlation; throws InvalidArgumentError on length mismatch or
// n < 2. Returns NaN when either side has zero variance.
double pearson(std::span<const double> a, std::span<const double> b);

// Solves A x = b by Gaussian elimination with partial pivoting.
// Throws NumericError when A is singular to working precision.
Vec solve_linear(Matrix a, Vec b);

// Ordinary least squares with intercept: returns [intercept, coef...].
// Throws NumericError when the normal equations are singular.
Vec ols_fit(const std::vector<Vec>& x_rows, std::span<const double> y);

}  // namespace tra
