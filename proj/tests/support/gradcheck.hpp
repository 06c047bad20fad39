#pragma once

// Central finite-difference gradient verification.

#include "cxrssl/backbone/params.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>

namespace gradcheck {

struct Result {
  double max_rel_error = 0.0;
  std::string worst_param;
  long worst_index = -1;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t checked = 0;
};

// Relative error |a - n| / max(|a|, |n|, floor). The floor keeps entries whose
// true gradient is below the finite-difference noise level (about 1e-11 in
// float64 with step 1e-5) from dominating the maximum.
inline double rel_error(double a, double n, double floor = 1e-6) {
  return std::abs(a - n) / std::max({std::abs(a), std::abs(n), floor});
}

// Checks every element of every parameter in `analytic` (or every
// `stride`-th element when stride > 1) against central differences of `loss`.
inline Result check(const std::function<double(const cxrssl::ParameterSet<double>&)>& loss,
                    cxrssl::ParameterSet<double> params, const cxrssl::ParameterSet<double>& analytic,
                    double step = 1e-5, long stride = 1) {
  Result r;
  for (const auto& [name, grad] : analytic) {
    cxrssl::Mat<double>& m = params.at(name);
    for (long i = 0; i < m.size(); i += stride) {
      const double orig = m.data()[i];
      m.data()[i] = orig + step;
      const double up = loss(params);
      m.data()[i] = orig - step;
      const double down = loss(params);
      m.data()[i] = orig;
      const double numeric = (up - down) / (2 * step);
      const double a = grad.data()[i];
      const double e = rel_error(a, numeric);
      ++r.checked;
      if (e > r.max_rel_error) {
        r = Result{e, name, i, a, numeric, r.checked};
      }
    }
  }
  return r;
}

}  // namespace gradcheck
