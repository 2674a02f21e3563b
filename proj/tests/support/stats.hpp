#pragma once

// Test-side statistics helpers, independent of the library code they check.

#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <vector>

namespace test_stats {

// Regularized upper incomplete gamma Q(a, x), series + continued fraction.
inline double gammq(double a, double x) {
  if (x < 0.0 || a <= 0.0) throw std::invalid_argument("gammq domain");
  const double gln = std::lgamma(a);
  if (x < a + 1.0) {
    // lower series
    double ap = a, sum = 1.0 / a, del = sum;
    for (int i = 0; i < 500; ++i) {
      ap += 1.0;
      del *= x / ap;
      sum += del;
      if (std::fabs(del) < std::fabs(sum) * 1e-14) break;
    }
    const double p = sum * std::exp(-x + a * std::log(x) - gln);
    return 1.0 - p;
  }
  // continued fraction for Q
  double b = x + 1.0 - a, c = 1e300, d = 1.0 / b, h = d;
  for (int i = 1; i <= 500; ++i) {
    const double an = -static_cast<double>(i) * (i - a);
    b += 2.0;
    d = an * d + b;
    if (std::fabs(d) < 1e-300) d = 1e-300;
    c = b + an / c;
    if (std::fabs(c) < 1e-300) c = 1e-300;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::fabs(del - 1.0) < 1e-14) break;
  }
  return std::exp(-x + a * std::log(x) - gln) * h;
}

// p-value of a chi-square statistic with the given degrees of freedom.
inline double chi_square_p_value(double stat, int dof) {
  if (stat <= 0.0) return 1.0;
  return gammq(0.5 * dof, 0.5 * stat);
}

// Goodness-of-fit statistic of observed counts against probabilities.
inline double chi_square_stat(std::span<const std::size_t> counts,
                              std::span<const double> probs,
                              std::size_t total) {
  double stat = 0.0;
  for (std::size_t i = 0; i < counts.size(); ++i) {
    const double expected = probs[i] * static_cast<double>(total);
    const double diff = static_cast<double>(counts[i]) - expected;
    stat += diff * diff / expected;
  }
  return stat;
}

struct MeanVar {
  double mean = 0.0;
  double var = 0.0;  // sample variance
};

inline MeanVar mean_var(std::span<const double> xs) {
  MeanVar mv;
  const double n = static_cast<double>(xs.size());
  for (double x : xs) mv.mean += x;
  mv.mean /= n;
  for (double x : xs) mv.var += (x - mv.mean) * (x - mv.mean);
  if (xs.size() > 1) mv.var /= (n - 1.0);
  return mv;
}

inline double median(std::vector<double> xs) {
  std::sort(xs.begin(), xs.end());
  const std::size_t n = xs.size();
  return n % 2 == 1 ? xs[n / 2] : 0.5 * (xs[n / 2 - 1] + xs[n / 2]);
}

// Spearman rank correlation (average ranks for ties).
inline double spearman(std::span<const double> x, std::span<const double> y) {
  const std::size_t n = x.size();
  auto ranks = [n](std::span<const double> v) {
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    std::sort(idx.begin(), idx.end(),
              [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
    std::vector<double> r(n);
    std::size_t i = 0;
    while (i < n) {
      std::size_t j = i;
      while (j + 1 < n && v[idx[j + 1]] == v[idx[i]]) ++j;
      const double avg = 0.5 * (i + j) + 1.0;
      for (std::size_t k = i; k <= j; ++k) r[idx[k]] = avg;
      i = j + 1;
    }
    return r;
  };
  const std::vector<double> rx = ranks(x), ry = ranks(y);
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < n; ++i) {
    mx += rx[i];
    my += ry[i];
  }
  mx /= n;
  my /= n;
  double num = 0, dx = 0, dy = 0;
  for (std::size_t i = 0; i < n; ++i) {
    num += (rx[i] - mx) * (ry[i] - my);
    dx += (rx[i] - mx) * (rx[i] - mx);
    dy += (ry[i] - my) * (ry[i] - my);
  }
  if (dx == 0.0 || dy == 0.0) return 0.0;
  return num / std::sqrt(dx * dy);
}

}  // namespace test_stats
