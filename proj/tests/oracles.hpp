#pragma once

// Test-only reference computations. These accumulate round by round with
// incremental multiplication, deliberately taking a different numeric path
// than the library's per-term closed forms.

#include <cmath>
#include <span>
#include <vector>

namespace oracle {

// down payment + pi_r + sum_j growth^(j-eps) * p0 (1-lambda)/d, or exactly p0
// when lambda is 1.
inline double outcome_total(double lambda, double pi_r, double p0, double eps, int d,
                            double growth) {
  if (lambda == 1.0) return p0;
  double total = lambda * p0 + pi_r;
  const double slice = p0 * (1.0 - lambda) / static_cast<double>(d);
  double factor = std::exp((1.0 - eps) * std::log(growth));
  for (int j = 1; j <= d; ++j) {
    total += factor * slice;
    factor *= growth;
  }
  return total;
}

// bonus + sum_j k * sigma^(-j) * counts[j-1] * eps.
inline double income_total(double k, double sigma, int d, double eps,
                           std::span<const double> counts, double bonus) {
  double total = bonus;
  const double inv = 1.0 / sigma;
  double factor = inv;
  for (int j = 1; j <= d; ++j) {
    total += k * factor * counts[static_cast<std::size_t>(j - 1)] * eps;
    factor *= inv;
  }
  return total;
}

}  // namespace oracle
