#pragma once

// Box-plot style summary statistics with the h = (N-1)p quantile convention
// and whiskers capped at 1.5 * IQR beyond the quartiles.

#include <algorithm>
#include <stdexcept>
#include <vector>

namespace cmsim {

struct SummaryStats {
  double median = 0.0;
  double q1 = 0.0;
  double q3 = 0.0;
  double iqr = 0.0;
  double whisker_low = 0.0;   // most extreme datum within Q1 - 1.5*IQR
  double whisker_high = 0.0;  // most extreme datum within Q3 + 1.5*IQR
  std::vector<double> outliers;
};

/// Quantile by linear interpolation of order statistics: h = (N-1)p.
inline double quantile_sorted(const std::vector<double>& sorted, double p) {
  const std::size_t n = sorted.size();
  if (n == 0) throw std::invalid_argument("quantile of empty list");
  const double h = double(n - 1) * p;
  const std::size_t lo = static_cast<std::size_t>(h);
  if (lo + 1 >= n) return sorted.back();
  const double frac = h - double(lo);
  return sorted[lo] + frac * (sorted[lo + 1] - sorted[lo]);
}

inline SummaryStats summarize(const std::vector<double>& values) {
  if (values.empty()) throw std::invalid_argument("summarize: empty list");
  std::vector<double> sorted = values;
  std::sort(sorted.begin(), sorted.end());

  SummaryStats s;
  s.median = quantile_sorted(sorted, 0.5);
  s.q1 = quantile_sorted(sorted, 0.25);
  s.q3 = quantile_sorted(sorted, 0.75);
  s.iqr = s.q3 - s.q1;

  const double lo_fence = s.q1 - 1.5 * s.iqr;
  const double hi_fence = s.q3 + 1.5 * s.iqr;
  s.whisker_low = s.q3;
  s.whisker_high = s.q1;
  for (double v : sorted) {
    if (v >= lo_fence) {
      s.whisker_low = v;
      break;
    }
  }
  for (auto it = sorted.rbegin(); it != sorted.rend(); ++it) {
    if (*it <= hi_fence) {
      s.whisker_high = *it;
      break;
    }
  }
  for (double v : sorted)
    if (v < lo_fence || v > hi_fence) s.outliers.push_back(v);
  return s;
}

}  // namespace cmsim
