#pragma once
// Friedman rank test and the chi-square survival function it needs.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numeric>
#include <span>
#include <vector>

#include "usconf/error.hpp"

namespace usconf {

namespace detail {

inline constexpr double kGammaEps = 1e-16;
inline constexpr int kGammaMaxIter = 10000;

// P(a, x) by its power series; converges quickly for x < a + 1.
inline double gamma_p_series(double a, double x) {
  double ap = a, term = 1.0 / a, sum = term;
  for (int n = 0; n < kGammaMaxIter; ++n) {
    ap += 1.0;
    term *= x / ap;
    sum += term;
    if (std::abs(term) < std::abs(sum) * kGammaEps) break;
  }
  return sum * std::exp(-x + a * std::log(x) - std::lgamma(a));
}

// Q(a, x) by modified Lentz continued fraction; used for x >= a + 1.
inline double gamma_q_fraction(double a, double x) {
  constexpr double tiny = std::numeric_limits<double>::min() / std::numeric_limits<double>::epsilon();
  double b = x + 1.0 - a, c = 1.0 / tiny, d = 1.0 / b, h = d;
  for (int i = 1; i < kGammaMaxIter; ++i) {
    const double an = -i * (i - a);
    b += 2.0;
    d = an * d + b;
    if (std::abs(d) < tiny) d = tiny;
    c = b + an / c;
    if (std::abs(c) < tiny) c = tiny;
    d = 1.0 / d;
    const double delta = d * c;
    h *= delta;
    if (std::abs(delta - 1.0) < kGammaEps) break;
  }
  return std::exp(-x + a * std::log(x) - std::lgamma(a)) * h;
}

} // namespace detail

/// Regularized upper incomplete gamma Q(a, x) = 1 - P(a, x).
inline double gamma_q(double a, double x) {
  detail::require(a > 0.0 && x >= 0.0, "gamma_q: need a > 0, x >= 0");
  if (x == 0.0) return 1.0;
  if (x < a + 1.0) return 1.0 - detail::gamma_p_series(a, x);
  return detail::gamma_q_fraction(a, x);
}

/// P(X > x) for X ~ chi-square(dof).
inline double chi_square_survival(double x, double dof) { return gamma_q(0.5 * dof, 0.5 * std::max(x, 0.0)); }

/// Average ranks (1-based) of one row; ties receive the mean of their ranks.
inline std::vector<double> average_ranks(std::span<const double> row) {
  const std::size_t k = row.size();
  std::vector<std::size_t> order(k);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return row[a] < row[b]; });
  std::vector<double> ranks(k);
  for (std::size_t i = 0; i < k;) {
    std::size_t j = i;
    while (j + 1 < k && row[order[j + 1]] == row[order[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t t = i; t <= j; ++t) ranks[order[t]] = r;
    i = j + 1;
  }
  return ranks;
}

struct FriedmanResult {
  double chi2 = 0.0;
  std::size_t dof = 0;
  double p = 1.0;
};

/// Friedman test on an n x k table (rows = subjects, columns = methods),
/// stored row-major. No tie correction is applied to the statistic.
inline FriedmanResult friedman_test(std::span<const double> scores, std::size_t n, std::size_t k) {
  detail::require(n >= 2 && k >= 2, "friedman_test: need n >= 2 subjects and k >= 2 methods");
  detail::require(scores.size() == n * k, "friedman_test: table size != n*k");
  for (double v : scores) detail::require(std::isfinite(v), "friedman_test: non-finite score");

  std::vector<double> rank_sum(k, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const auto r = average_ranks(scores.subspan(i * k, k));
    for (std::size_t j = 0; j < k; ++j) rank_sum[j] += r[j];
  }
  // 12/(n k (k+1)) sum R_j^2 - 3 n (k+1), written around the mean rank sum
  // n(k+1)/2 so that complete ties give exactly 0.
  const double nd = static_cast<double>(n), kd = static_cast<double>(k);
  const double expected = nd * (kd + 1.0) / 2.0;
  double ss = 0.0;
  for (double r : rank_sum) ss += (r - expected) * (r - expected);
  FriedmanResult out;
  out.chi2 = 12.0 / (nd * kd * (kd + 1.0)) * ss;
  out.dof = k - 1;
  out.p = chi_square_survival(out.chi2, static_cast<double>(out.dof));
  return out;
}

} // namespace usconf
