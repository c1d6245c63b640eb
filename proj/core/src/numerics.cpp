#include "tra/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "tra/errors.hpp"

namespace tra {

Vec softmax(std::span<const double> v) {
  if (v.empty()) {
    throw InvalidArgumentError("softmax input is empty");
  }
  double hi = v[0];
  for (double x : v) {
    if (!std::isfinite(x)) {
      throw InvalidArgumentError("softmax input contains a non-finite entry");
    }
    hi = std::max(hi, x);
  }
  Vec out(v.size());
  double total = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    out[i] = std::exp(v[i] - hi);
    total += out[i];
  }
  for (double& x : out) x /= total;
  return out;
}

double log_sum_exp(std::span<const double> v) {
  if (v.empty()) {
    throw InvalidArgumentError("log_sum_exp input is empty");
  }
  double hi = *std::max_element(v.begin(), v.end());
  if (!std::isfinite(hi)) {
    // all -inf is a legitimate log-domain zero
    if (std::all_of(v.begin(), v.end(),
                    [](double x) { return x == -std::numeric_limits<double>::infinity(); })) {
      return -std::numeric_limits<double>::infinity();
    }
    throw InvalidArgumentError("log_sum_exp input contains NaN or +inf");
  }
  double total = 0.0;
  for (double x : v) total += std::exp(x - hi);
  return hi + std::log(total);
}

double gumbel_from_uniform(double z) {
  return -std::log(-std::log(z));
}

Vec gumbel_sample(SeededRng& rng, std::size_t n) {
  Vec out(n);
  for (std::size_t i = 0; i < n; ++i) {
    out[i] = gumbel_from_uniform(rng.uniform_open());
  }
  return out;
}

Vec finite_diff_gradient(const std::function<double(const Vec&)>& f, const Vec& x, double step) {
  if (step <= 0.0) {
    throw InvalidArgumentError("finite difference step must be positive");
  }
  Vec grad(x.size());
  Vec probe = x;
  for (std::size_t j = 0; j < x.size(); ++j) {
    const double orig = probe[j];
    probe[j] = orig + step;
    const double hi = f(probe);
    probe[j] = orig - step;
    const double lo = f(probe);
    probe[j] = orig;
    if (!std::isfinite(hi) || !std::isfinite(lo)) {
      throw NumericError("objective evaluated to a non-finite value at coordinate " +
                         std::to_string(j));
    }
    grad[j] = (hi - lo) / (2.0 * step);
  }
  return grad;
}

double relative_error(double a, double b) {
  return std::abs(a - b) / std::max({1.0, std::abs(a), std::abs(b)});
}

double dot(std::span<const double> a, std::span<const double> b) {
  // four fixed-order lanes so the loop vectorizes without reassociation
  const std::size_t n = a.size();
  double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    s0 += a[i] * b[i];
    s1 += a[i + 1] * b[i + 1];
    s2 += a[i + 2] * b[i + 2];
    s3 += a[i + 3] * b[i + 3];
  }
  double tail = 0.0;
  for (; i < n; ++i) tail += a[i] * b[i];
  return ((s0 + s1) + (s2 + s3)) + tail;
}

Vec matvec(const Matrix& m, std::span<const double> x) {
  Vec y(m.rows(), 0.0);
  for (std::size_t r = 0; r < m.rows(); ++r) {
    y[r] = dot(m.row(r), x);
  }
  return y;
}

Vec matvec_transposed(const Matrix& m, std::span<const double> x) {
  Vec y(m.cols(), 0.0);
  for (std::size_t r = 0; r < m.rows(); ++r) {
    axpy(x[r], m.row(r), y);
  }
  return y;
}

void add_outer(Matrix& m, std::span<const double> a, std::span<const double> b) {
  for (std::size_t r = 0; r < m.rows(); ++r) {
    axpy(a[r], b, m.row(r));
  }
}

void axpy(double alpha, std::span<const double> x, std::span<double> y) {
  for (std::size_t i = 0; i < x.size(); ++i) y[i] += alpha * x[i];
}

double mean(std::span<const double> v) {
  if (v.empty()) return 0.0;
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

double sample_std(std::span<const double> v) {
  if (v.size() < 2) return 0.0;
  const double m = mean(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size() - 1));
}

double pearson(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) {
    throw InvalidArgumentError("pearson inputs differ in length");
  }
  if (a.size() < 2) {
    throw InvalidArgumentError("pearson needs at least two observations");
  }
  const double ma = mean(a);
  const double mb = mean(b);
  double cov = 0.0, va = 0.0, vb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double da = a[i] - ma;
    const double db = b[i] - mb;
    cov += da * db;
    va += da * da;
    vb += db * db;
  }
  if (va <= 0.0 || vb <= 0.0) {
    return std::numeric_limits<double>::quiet_NaN();
  }
  return cov / std::sqrt(va * vb);
}

Vec solve_linear(Matrix a, Vec b) {
  const std::size_t n = a.rows();
  if (a.cols() != n || b.size() != n) {
    throw InvalidArgumentError("solve_linear requires a square system");
  }
  for (std::size_t col = 0; col < n; ++col) {
    std::size_t pivot = col;
    for (std::size_t r = col + 1; r < n; ++r) {
      if (std::abs(a(r, col)) > std::abs(a(pivot, col))) pivot = r;
    }
    if (std::abs(a(pivot, col)) < 1e-12) {
      throw NumericError("singular system in solve_linear");
    }
    if (pivot != col) {
      for (std::size_t c = 0; c < n; ++c) std::swap(a(col, c), a(pivot, c));
      std::swap(b[col], b[pivot]);
    }
    for (std::size_t r = col + 1; r < n; ++r) {
      const double f = a(r, col) / a(col, col);
      if (f == 0.0) continue;
      for (std::size_t c = col; c < n; ++c) a(r, c) -= f * a(col, c);
      b[r] -= f * b[col];
    }
  }
  Vec x(n, 0.0);
  for (std::size_t ri = n; ri-- > 0;) {
    double s = b[ri];
    for (std::size_t c = ri + 1; c < n; ++c) s -= a(ri, c) * x[c];
    x[ri] = s / a(ri, ri);
  }
  return x;
}

Vec ols_fit(const std::vector<Vec>& x_rows, std::span<const double> y) {
  if (x_rows.size() != y.size() || x_rows.empty()) {
    throw InvalidArgumentError("ols_fit requires matching non-empty inputs");
  }
  const std::size_t f = x_rows.front().size();
  const std::size_t d = f + 1;  // intercept first
  Matrix xtx(d, d);
  Vec xty(d, 0.0);
  Vec row(d, 0.0);
  for (std::size_t i = 0; i < x_rows.size(); ++i) {
    row[0] = 1.0;
    std::copy(x_rows[i].begin(), x_rows[i].end(), row.begin() + 1);
    for (std::size_t p = 0; p < d; ++p) {
      xty[p] += row[p] * y[i];
      for (std::size_t q = 0; q < d; ++q) xtx(p, q) += row[p] * row[q];
    }
  }
  return solve_linear(std::move(xtx), std::move(xty));
}

}  // namespace tra
