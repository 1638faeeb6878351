#pragma once

// Central finite-difference gradient oracle shared by the model tests and the
// acceptance suite.

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "dcdr/autodiff.hpp"

namespace gradcheck {

inline constexpr double kStep = 1e-5;
inline constexpr double kRelTol = 1e-4;
// Entries whose gradient magnitude is below this are compared absolutely
// against kRelTol * kAbsFloor; FD roundoff (~1e-16 / h) dominates there.
inline constexpr double kAbsFloor = 1e-6;

struct Result {
  double max_rel_error = 0.0;
  std::string worst;
  std::size_t checked = 0;
};

inline double relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), kAbsFloor});
}

/// Compares every entry of every Param::grad (already filled by the caller)
/// against (f(x + h) - f(x - h)) / 2h.
inline Result check(const std::vector<dcdr::ad::Param*>& params, const std::function<double()>& loss) {
  Result r;
  for (auto* p : params) {
    for (Eigen::Index i = 0; i < p->value.size(); ++i) {
      const double orig = p->value(i);
      p->value(i) = orig + kStep;
      const double up = loss();
      p->value(i) = orig - kStep;
      const double down = loss();
      p->value(i) = orig;
      const double numeric = (up - down) / (2 * kStep);
      const double err = relative_error(p->grad(i), numeric);
      ++r.checked;
      if (err > r.max_rel_error) {
        r.max_rel_error = err;
        r.worst = p->name + "[" + std::to_string(i) + "] analytic=" + std::to_string(p->grad(i)) +
                  " numeric=" + std::to_string(numeric);
      }
    }
  }
  return r;
}

}  // namespace gradcheck
