#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <vector>

namespace campari {

// Exact 1-Wasserstein distance between two empirical distributions given
// pre-sorted samples: the integral of |F_a - F_b| over the merged support.
// Handles unequal sample counts.
inline double w1_distance_sorted(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.empty() || b.empty()) throw std::invalid_argument("w1_distance: empty sample set");
  const double na = static_cast<double>(a.size()), nb = static_cast<double>(b.size());
  size_t ia = 0, ib = 0;
  double result = 0.0;
  double prev = std::min(a[0], b[0]);
  while (ia < a.size() || ib < b.size()) {
    double x;
    if (ia < a.size() && (ib >= b.size() || a[ia] <= b[ib]))
      x = a[ia];
    else
      x = b[ib];
    const double fa = static_cast<double>(ia) / na;
    const double fb = static_cast<double>(ib) / nb;
    result += std::fabs(fa - fb) * (x - prev);
    prev = x;
    while (ia < a.size() && a[ia] == x) ++ia;
    while (ib < b.size() && b[ib] == x) ++ib;
  }
  return result;
}

inline double w1_distance(std::vector<double> a, std::vector<double> b) {
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  return w1_distance_sorted(a, b);
}

inline double wrap_to_pi(double x) {
  double y = std::fmod(x + M_PI, 2.0 * M_PI);
  if (y < 0) y += 2.0 * M_PI;
  return y - M_PI;
}

struct CircularW1 {
  double distance = 0.0;
  double shift = 0.0;  // alignment offset applied to `a`
};

// W1 between angle samples modulo a global rotation: minimized over an
// n_shifts-point shift grid, each candidate wrapped to [-pi, pi). Shifting a
// sorted angle set and wrapping is a rotation of the sorted order, so each
// grid point costs O(n) instead of a fresh sort.
inline CircularW1 circular_w1_distance(const std::vector<double>& a, const std::vector<double>& b,
                                       int n_shifts = 360) {
  std::vector<double> a_sorted(a);
  std::vector<double> b_sorted(b);
  for (auto& v : a_sorted) v = wrap_to_pi(v);
  for (auto& v : b_sorted) v = wrap_to_pi(v);
  std::sort(a_sorted.begin(), a_sorted.end());
  std::sort(b_sorted.begin(), b_sorted.end());

  CircularW1 best;
  best.distance = std::numeric_limits<double>::infinity();
  std::vector<double> shifted(a_sorted.size());
  for (int k = 0; k < n_shifts; ++k) {
    const double delta = -M_PI + 2.0 * M_PI * static_cast<double>(k) / n_shifts;
    // values above the wrap point move, still sorted, to the front
    const double cut = M_PI - delta;
    size_t split = static_cast<size_t>(
        std::lower_bound(a_sorted.begin(), a_sorted.end(), cut) - a_sorted.begin());
    size_t at = 0;
    for (size_t i = split; i < a_sorted.size(); ++i) shifted[at++] = a_sorted[i] + delta - 2.0 * M_PI;
    for (size_t i = 0; i < split; ++i) shifted[at++] = a_sorted[i] + delta;
    const double d = w1_distance_sorted(shifted, b_sorted);
    if (d < best.distance) {
      best.distance = d;
      best.shift = delta;
    }
  }
  return best;
}

inline std::vector<int64_t> histogram(const std::vector<double>& samples, double lo, double hi, int bins) {
  std::vector<int64_t> counts(static_cast<size_t>(bins), 0);
  for (double v : samples) {
    if (v < lo || v >= hi) continue;
    int b = static_cast<int>((v - lo) / (hi - lo) * bins);
    b = std::min(b, bins - 1);
    ++counts[static_cast<size_t>(b)];
  }
  return counts;
}

// Kolmogorov-Smirnov statistic of samples against a reference CDF.
inline double ks_statistic(std::vector<double> samples, const std::function<double(double)>& cdf) {
  std::sort(samples.begin(), samples.end());
  const double n = static_cast<double>(samples.size());
  double worst = 0.0;
  for (size_t i = 0; i < samples.size(); ++i) {
    const double f = cdf(samples[i]);
    worst = std::max(worst, std::fabs(f - static_cast<double>(i) / n));
    worst = std::max(worst, std::fabs(static_cast<double>(i + 1) / n - f));
  }
  return worst;
}

inline double normal_cdf(double x, double mu, double sigma) {
  return 0.5 * (1.0 + std::erf((x - mu) / (sigma * std::sqrt(2.0))));
}

}  // namespace campari
