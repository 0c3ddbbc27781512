#pragma once

#include <cmath>
#include <functional>
#include <stdexcept>

namespace lhcalib {

struct ScalarResult {
  double x = 0.0;
  bool boundary = false;  // landed on (or pinned to) an interval endpoint
};

/// Golden-section minimization on [lo, hi]. Assumes unimodality; on
/// monotone objectives it converges to the better endpoint, reported
/// via the boundary flag.
inline ScalarResult golden_section_minimize(const std::function<double(double)>& f,
                                            double lo, double hi, double tol = 1e-10,
                                            int max_iter = 200) {
  if (!(lo < hi)) throw std::invalid_argument("golden_section_minimize: bad interval");
  const double invphi = (std::sqrt(5.0) - 1.0) / 2.0;
  double a = lo, b = hi;
  double c = b - invphi * (b - a);
  double d = a + invphi * (b - a);
  double fc = f(c), fd = f(d);
  for (int it = 0; it < max_iter && (b - a) > tol; ++it) {
    if (fc < fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - invphi * (b - a);
      fc = f(c);
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + invphi * (b - a);
      fd = f(d);
    }
  }
  ScalarResult r;
  r.x = (a + b) / 2.0;
  double width = hi - lo;
  r.boundary = (r.x - lo) < 1e-6 * width || (hi - r.x) < 1e-6 * width;
  return r;
}

/// Root of a scalar function on [lo, hi] by Newton steps safeguarded
/// with bisection. Requires g(lo) and g(hi) to bracket a sign change;
/// callers handle the monotone (boundary) cases beforehand.
inline double safeguarded_newton_root(const std::function<double(double)>& g,
                                      const std::function<double(double)>& dg,
                                      double lo, double hi, double tol = 1e-12,
                                      int max_iter = 200) {
  double glo = g(lo), ghi = g(hi);
  if (glo == 0.0) return lo;
  if (ghi == 0.0) return hi;
  if (glo * ghi > 0.0)
    throw std::invalid_argument("safeguarded_newton_root: no sign change on interval");
  double a = lo, b = hi;
  double x = (a + b) / 2.0;
  for (int it = 0; it < max_iter; ++it) {
    double gx = g(x);
    if (std::abs(gx) < tol) return x;
    if ((gx < 0.0) == (glo < 0.0))
      a = x;
    else
      b = x;
    double slope = dg(x);
    double next = (slope != 0.0) ? x - gx / slope : (a + b) / 2.0;
    if (!(next > a && next < b)) next = (a + b) / 2.0;
    if (std::abs(next - x) < tol * (1.0 + std::abs(x))) return next;
    x = next;
  }
  return x;
}

}  // namespace lhcalib
