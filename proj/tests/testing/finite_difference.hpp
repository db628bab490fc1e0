#pragma once

// Central finite-difference gradient oracle used by the tests. The function
// under test runs in f32 like production code; the differencing arithmetic is
// done in f64. Comparisons use a relative tolerance plus an absolute floor
// covering the oracle's own rounding noise (~eps32 * |f| / h).

#include <cmath>
#include <cstdint>
#include <functional>
#include <vector>

namespace campari::testing {

// Gradient of f() w.r.t. the n floats at `param` (perturbed in place).
inline std::vector<double> fd_gradient(const std::function<double()>& f, float* param, int64_t n,
                                       double step_scale = 1e-2) {
  std::vector<double> grad(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) {
    const float orig = param[i];
    const double h = step_scale * std::max(1.0, std::fabs(static_cast<double>(orig)));
    param[i] = static_cast<float>(orig + h);
    const double fp = f();
    param[i] = static_cast<float>(orig - h);
    const double fm = f();
    param[i] = orig;
    grad[static_cast<size_t>(i)] = (fp - fm) / (2.0 * h);
  }
  return grad;
}

struct FdCompare {
  double max_rel = 0.0;
  int64_t worst_index = -1;
  bool ok = true;
};

// |ad - fd| <= rtol * max(|ad|, |fd|) + atol, with atol covering FD noise.
inline FdCompare fd_compare(const float* ad, const std::vector<double>& fd, double rtol = 1e-3,
                            double atol = 5e-5) {
  FdCompare r;
  for (size_t i = 0; i < fd.size(); ++i) {
    const double a = static_cast<double>(ad[i]);
    const double b = fd[i];
    const double denom = std::max({std::fabs(a), std::fabs(b), atol / rtol});
    const double rel = std::fabs(a - b) / denom;
    if (rel > r.max_rel) {
      r.max_rel = rel;
      r.worst_index = static_cast<int64_t>(i);
    }
    if (std::fabs(a - b) > rtol * std::max(std::fabs(a), std::fabs(b)) + atol) r.ok = false;
  }
  return r;
}

}  // namespace campari::testing
